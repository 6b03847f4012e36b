//! Agent states and the stochastic constant-velocity motion model.
//!
//! Angles are in degrees and live in the half-open range `[-180, 180)`.
//! One step of the model first turns the agent, then perturbs its speed and
//! finally displaces it along the *new* heading with the *new* speed:
//!
//! ```text
//! theta' = wrap(theta + u * dt + w_theta)
//! v'     = max(v + w_v, 0)
//! x'     = x + cos(theta') * dt * v' + w_x
//! y'     = y + sin(theta') * dt * v' + w_y
//! ```
//!
//! All noise terms are zero-mean Gaussians whose standard deviations are
//! per-step values (they are not scaled by `dt`).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Residuals below this magnitude count as an exact match on zero-variance
/// coordinates (meters, degrees or meters/second).
pub const DETERMINISTIC_TOLERANCE: f64 = 1e-9;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_angle(a: f64) -> f64 {
    debug_assert!(a.is_finite(), "wrap_angle called with non-finite {a}");
    if (-180.0..180.0).contains(&a) {
        return a;
    }
    let r = (a + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid may round up to exactly 360 for tiny negative arguments.
    if r >= 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Checked variant of [`wrap_angle`] for values coming from outside the crate.
pub fn try_wrap_angle(a: f64) -> Result<f64> {
    if a.is_finite() {
        Ok(wrap_angle(a))
    } else {
        Err(Error::config("angle", format!("non-finite angle {a}")))
    }
}

/// Position, heading and speed of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Heading in degrees, `[-180, 180)`.
    pub theta: f64,
    /// Speed in meters/second, never negative.
    pub v: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        AgentState {
            x,
            y,
            theta: wrap_angle(theta),
            v: v.max(0.0),
        }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Joint state of the robot (sensor array) and the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub robot: AgentState,
    pub source: AgentState,
}

/// One element of the finite command set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    /// Position of this action within its [`ActionSet`].
    pub index: usize,
    /// Commanded angular speed in degrees/second.
    pub angular_speed: f64,
    /// Stay in place for this step: no displacement, speed kept for the next step.
    pub stop: bool,
}

impl Action {
    /// The uncontrolled source command: zero angular speed.
    pub const IDLE: Action = Action {
        index: 0,
        angular_speed: 0.0,
        stop: false,
    };

    fn travel_speed(&self, v: f64) -> f64 {
        if self.stop {
            0.0
        } else {
            v
        }
    }
}

/// Ordered finite set of robot commands.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    /// Builds a set from angular speeds, optionally preceded by a stop action.
    pub fn new(angular_speeds: &[f64], with_stop: bool) -> Result<Self> {
        let mut actions = Vec::with_capacity(angular_speeds.len() + 1);
        if with_stop {
            actions.push(Action {
                index: 0,
                angular_speed: 0.0,
                stop: true,
            });
        }
        for &w in angular_speeds {
            if !w.is_finite() {
                return Err(Error::config("actions.angular_speeds", "non-finite angular speed"));
            }
            actions.push(Action {
                index: actions.len(),
                angular_speed: w,
                stop: false,
            });
        }
        if actions.is_empty() {
            return Err(Error::config("actions", "the action set is empty"));
        }
        Ok(ActionSet { actions })
    }

    /// Stop, then -45, 0 and +45 degrees/second.
    pub fn standard() -> Self {
        ActionSet::new(&[-45.0, 0.0, 45.0], true).expect("static action set")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Action {
        self.actions[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }

    /// First non-stop action with zero angular speed, if any.
    pub fn straight(&self) -> Option<Action> {
        self.actions
            .iter()
            .copied()
            .find(|a| !a.stop && a.angular_speed == 0.0)
    }
}

/// Per-step standard deviations of the motion noise of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionNoise {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_v: f64,
    pub sigma_theta: f64,
}

impl MotionNoise {
    pub const ZERO: MotionNoise = MotionNoise {
        sigma_x: 0.0,
        sigma_y: 0.0,
        sigma_v: 0.0,
        sigma_theta: 0.0,
    };

    pub fn new(sigma_x: f64, sigma_y: f64, sigma_v: f64, sigma_theta: f64) -> Result<Self> {
        let noise = MotionNoise {
            sigma_x,
            sigma_y,
            sigma_v,
            sigma_theta,
        };
        for (name, s) in [
            ("sigma_x", sigma_x),
            ("sigma_y", sigma_y),
            ("sigma_v", sigma_v),
            ("sigma_theta", sigma_theta),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {s}")));
            }
        }
        Ok(noise)
    }
}

/// Sampling interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStep(f64);

impl TimeStep {
    pub fn new(dt: f64) -> Result<Self> {
        if dt > 0.0 && dt.is_finite() {
            Ok(TimeStep(dt))
        } else {
            Err(Error::config("motion.dt", format!("must be > 0, got {dt}")))
        }
    }

    pub fn seconds(self) -> f64 {
        self.0
    }
}

/// Rectangular room `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub width: f64,
    pub height: f64,
}

impl Room {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::config("room", "width and height must be > 0"));
        }
        Ok(Room { width, height })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [(0.0, 0.0), (self.width, 0.0), (self.width, self.height), (0.0, self.height)]
    }

    /// Clamps `s` into the room, reflecting its heading off every wall it crossed.
    pub fn confine(&self, mut s: AgentState) -> AgentState {
        if s.x < 0.0 || s.x > self.width {
            s.x = s.x.clamp(0.0, self.width);
            s.theta = wrap_angle(180.0 - s.theta);
        }
        if s.y < 0.0 || s.y > self.height {
            s.y = s.y.clamp(0.0, self.height);
            s.theta = wrap_angle(-s.theta);
        }
        s
    }

    /// Mirrors `s` back into the room, reflecting its heading with every
    /// wall crossed. Unlike [`Room::confine`] this map is measure preserving,
    /// so densities of folded states follow from [`Room::preimages`].
    pub fn fold(&self, mut s: AgentState) -> AgentState {
        while s.x < 0.0 || s.x > self.width {
            s.x = if s.x < 0.0 { -s.x } else { 2.0 * self.width - s.x };
            s.theta = wrap_angle(180.0 - s.theta);
        }
        while s.y < 0.0 || s.y > self.height {
            s.y = if s.y < 0.0 { -s.y } else { 2.0 * self.height - s.y };
            s.theta = wrap_angle(-s.theta);
        }
        s
    }

    /// States outside the room that [`Room::fold`] maps onto `s`, plus `s`
    /// itself, restricted to mirror images across walls closer than `range`.
    pub fn preimages(&self, s: &AgentState, range: f64) -> Vec<AgentState> {
        let mut xs = vec![(s.x, false)];
        if s.x < range {
            xs.push((-s.x, true));
        }
        if self.width - s.x < range {
            xs.push((2.0 * self.width - s.x, true));
        }
        let mut ys = vec![(s.y, false)];
        if s.y < range {
            ys.push((-s.y, true));
        }
        if self.height - s.y < range {
            ys.push((2.0 * self.height - s.y, true));
        }
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &(x, fx) in &xs {
            for &(y, fy) in &ys {
                let mut theta = s.theta;
                if fx {
                    theta = wrap_angle(180.0 - theta);
                }
                if fy {
                    theta = wrap_angle(-theta);
                }
                out.push(AgentState { x, y, theta, v: s.v });
            }
        }
        out
    }
}

/// Draws the successor of `s` under command `u`.
///
/// Exactly four standard normals are consumed per call, in the order
/// heading, speed, x, y, whatever the noise levels are.
pub fn sample_transition<R: Rng + ?Sized>(
    s: &AgentState,
    u: &Action,
    noise: &MotionNoise,
    dt: TimeStep,
    rng: &mut R,
) -> AgentState {
    let n_theta: f64 = rng.sample(StandardNormal);
    let n_v: f64 = rng.sample(StandardNormal);
    let n_x: f64 = rng.sample(StandardNormal);
    let n_y: f64 = rng.sample(StandardNormal);
    let dt = dt.seconds();

    let theta = wrap_angle(s.theta + u.angular_speed * dt + noise.sigma_theta * n_theta);
    let v = (s.v + noise.sigma_v * n_v).max(0.0);
    let step = dt * u.travel_speed(v);
    let (sin, cos) = theta.to_radians().sin_cos();
    AgentState {
        x: s.x + cos * step + noise.sigma_x * n_x,
        y: s.y + sin * step + noise.sigma_y * n_y,
        theta,
        v,
    }
}

/// Noise-free image of `s` under `u`.
pub fn deterministic_transition(s: &AgentState, u: &Action, dt: TimeStep) -> AgentState {
    let dt = dt.seconds();
    let theta = wrap_angle(s.theta + u.angular_speed * dt);
    let step = dt * u.travel_speed(s.v);
    let (sin, cos) = theta.to_radians().sin_cos();
    AgentState {
        x: s.x + cos * step,
        y: s.y + sin * step,
        theta,
        v: s.v,
    }
}

/// Log-density contribution of one coordinate residual.
#[derive(Debug, Clone, Copy)]
struct CoordinateDensity {
    inv_sigma: f64,
    log_norm: f64,
    deterministic: bool,
}

impl CoordinateDensity {
    fn new(sigma: f64) -> Self {
        if sigma > 0.0 {
            CoordinateDensity {
                inv_sigma: 1.0 / sigma,
                log_norm: -sigma.ln() - HALF_LN_2PI,
                deterministic: false,
            }
        } else {
            CoordinateDensity {
                inv_sigma: 0.0,
                log_norm: 0.0,
                deterministic: true,
            }
        }
    }

    /// Largest value [`CoordinateDensity::log_density`] can return.
    fn max_log_density(&self) -> f64 {
        self.log_norm
    }

    #[inline]
    fn log_density(&self, residual: f64) -> f64 {
        if self.deterministic {
            if residual.abs() <= DETERMINISTIC_TOLERANCE {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            let r = residual * self.inv_sigma;
            self.log_norm - 0.5 * r * r
        }
    }
}

/// Transition density of one agent under fixed command and noise, prepared
/// for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TransitionDensity {
    turn: f64,
    stop: bool,
    dt: f64,
    theta: CoordinateDensity,
    v: CoordinateDensity,
    x: CoordinateDensity,
    y: CoordinateDensity,
}

/// Quantities of a successor state that do not depend on the predecessor.
#[derive(Debug, Clone, Copy)]
pub struct PreparedSuccessor {
    theta: f64,
    v: f64,
    /// Successor position minus the displacement of the last step.
    origin_x: f64,
    origin_y: f64,
}

impl TransitionDensity {
    pub fn new(u: &Action, noise: &MotionNoise, dt: TimeStep) -> Self {
        TransitionDensity {
            turn: u.angular_speed * dt.seconds(),
            stop: u.stop,
            dt: dt.seconds(),
            theta: CoordinateDensity::new(noise.sigma_theta),
            v: CoordinateDensity::new(noise.sigma_v),
            x: CoordinateDensity::new(noise.sigma_x),
            y: CoordinateDensity::new(noise.sigma_y),
        }
    }

    pub fn prepare(&self, next: &AgentState) -> PreparedSuccessor {
        let step = if self.stop { 0.0 } else { self.dt * next.v };
        let (sin, cos) = next.theta.to_radians().sin_cos();
        PreparedSuccessor {
            theta: next.theta,
            v: next.v,
            origin_x: next.x - cos * step,
            origin_y: next.y - sin * step,
        }
    }

    /// `log p(next | prev)` with `next` given in prepared form.
    #[inline]
    pub fn log_density(&self, next: &PreparedSuccessor, prev: &AgentState) -> f64 {
        let mut d_theta = next.theta - prev.theta - self.turn;
        // Both headings are already wrapped, so at most a couple of turns off.
        while d_theta >= 180.0 {
            d_theta -= 360.0;
        }
        while d_theta < -180.0 {
            d_theta += 360.0;
        }
        self.theta.log_density(d_theta)
            + self.v.log_density(next.v - prev.v)
            + self.x.log_density(next.origin_x - prev.x)
            + self.y.log_density(next.origin_y - prev.y)
    }
}

/// Closed form of a transition density with noise on every coordinate:
/// `log p = log_norm - (a_x r_x^2 + a_y r_y^2 + a_v r_v^2 + a_theta r_theta^2) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianForm {
    pub log_norm: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub a_v: f64,
    pub a_theta: f64,
    /// Commanded heading change per step, wrapped (degrees).
    pub turn: f64,
}

impl GaussianForm {
    /// Heading residual on its nearest branch, for headings in `[-180, 180)`.
    #[inline]
    pub fn heading_residual(&self, next: f64, prev: f64) -> f64 {
        let mut d = next - prev - self.turn;
        d -= if d >= 180.0 { 360.0 } else { 0.0 };
        d += if d < -180.0 { 360.0 } else { 0.0 };
        d -= if d >= 180.0 { 360.0 } else { 0.0 };
        d += if d < -180.0 { 360.0 } else { 0.0 };
        d
    }
}

impl PreparedSuccessor {
    /// Predecessor position implied by a noise-free step.
    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn v(&self) -> f64 {
        self.v
    }
}

impl TransitionDensity {
    /// The density in closed form; `None` if some coordinate is noise free.
    pub fn gaussian_form(&self) -> Option<GaussianForm> {
        let coords = [self.x, self.y, self.v, self.theta];
        if coords.iter().any(|c| c.deterministic) {
            return None;
        }
        Some(GaussianForm {
            log_norm: coords.iter().map(|c| c.log_norm).sum(),
            a_x: self.x.inv_sigma * self.x.inv_sigma,
            a_y: self.y.inv_sigma * self.y.inv_sigma,
            a_v: self.v.inv_sigma * self.v.inv_sigma,
            a_theta: self.theta.inv_sigma * self.theta.inv_sigma,
            turn: wrap_angle(self.turn),
        })
    }

    /// Like [`TransitionDensity::log_density`], but may return `-inf` as soon
    /// as the result is known to lie below `floor`.
    #[inline]
    pub fn log_density_above(&self, next: &PreparedSuccessor, prev: &AgentState, floor: f64) -> f64 {
        let position = self.x.log_density(next.origin_x - prev.x) + self.y.log_density(next.origin_y - prev.y);
        if position + self.v.max_log_density() + self.theta.max_log_density() < floor {
            return f64::NEG_INFINITY;
        }
        let mut d_theta = next.theta - prev.theta - self.turn;
        while d_theta >= 180.0 {
            d_theta -= 360.0;
        }
        while d_theta < -180.0 {
            d_theta += 360.0;
        }
        position + self.v.log_density(next.v - prev.v) + self.theta.log_density(d_theta)
    }
}

/// Log-density (nats) of moving from `prev` to `next` under `u`.
///
/// Zero-variance coordinates contribute 0 when their residual is within
/// [`DETERMINISTIC_TOLERANCE`] and `-inf` otherwise. Speed clamping at zero
/// is ignored, i.e. the speed term is a plain Gaussian.
pub fn transition_log_density(
    next: &AgentState,
    prev: &AgentState,
    u: &Action,
    noise: &MotionNoise,
    dt: TimeStep,
) -> f64 {
    let density = TransitionDensity::new(u, noise, dt);
    density.log_density(&density.prepare(next), prev)
}
