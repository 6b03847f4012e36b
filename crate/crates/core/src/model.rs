//! The tracking state-space model: motion of robot and source plus the AoA
//! measurement, packaged for the particle filter.

use rand::Rng;

use crate::belief::StateModel;
use crate::kinematics::{sample_transition, Action, ActionSet, AgentState, GaussianForm, MotionNoise, PreparedSuccessor, Room, TimeStep, TransitionDensity, WorldState};
use crate::observation::{Observation, SensorModel, LIKELIHOOD_FLOOR};

/// Everything the filter and the planner know about the world.
#[derive(Debug, Clone)]
pub struct TrackingModel {
    pub dt: TimeStep,
    pub robot_noise: MotionNoise,
    pub source_noise: MotionNoise,
    pub sensor: SensorModel,
    pub actions: ActionSet,
    /// Known enclosure. Sampled states are folded back into it; `None`
    /// leaves the plane unbounded.
    pub room: Option<Room>,
}

/// Mirror images across walls farther than this (meters) are ignored when
/// evaluating transition densities of folded states.
pub const WALL_IMAGE_RANGE: f64 = 1.5;

impl TrackingModel {
    /// Samples the joint successor of `w` when the robot executes `u`.
    ///
    /// The robot draws first, then the source.
    pub fn sample_world<R: Rng + ?Sized>(&self, w: &WorldState, u: &Action, rng: &mut R) -> WorldState {
        let robot = sample_transition(&w.robot, u, &self.robot_noise, self.dt, rng);
        let source = sample_transition(&w.source, &Action::IDLE, &self.source_noise, self.dt, rng);
        match &self.room {
            Some(room) => WorldState {
                robot: room.fold(robot),
                source: room.fold(source),
            },
            None => WorldState { robot, source },
        }
    }

    fn prepared_images(&self, density: &TransitionDensity, s: &AgentState) -> Vec<PreparedSuccessor> {
        match &self.room {
            Some(room) => room
                .preimages(s, WALL_IMAGE_RANGE)
                .iter()
                .map(|p| density.prepare(p))
                .collect(),
            None => vec![density.prepare(s)],
        }
    }

    /// Filter model for one step under command `u`.
    pub fn step(&self, u: Action, robot: RobotMotion) -> TrackingStep<'_> {
        TrackingStep {
            model: self,
            action: u,
            robot,
            robot_density: TransitionDensity::new(&u, &self.robot_noise, self.dt),
            source_density: TransitionDensity::new(&Action::IDLE, &self.source_noise, self.dt),
        }
    }
}

/// How the robot part of each particle is advanced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobotMotion {
    /// Every particle draws its own noisy robot transition.
    Propagate,
    /// The robot state after the step is known; all particles take it.
    /// It is then a conditioning variable and drops out of the transition
    /// density used by the entropy reward.
    Known(AgentState),
}

/// One filter step of the tracking model under a fixed command.
#[derive(Debug, Clone)]
pub struct TrackingStep<'a> {
    model: &'a TrackingModel,
    action: Action,
    robot: RobotMotion,
    robot_density: TransitionDensity,
    source_density: TransitionDensity,
}

impl StateModel for TrackingStep<'_> {
    type State = WorldState;
    type Observation = Observation;

    fn sample_transition<R: Rng + ?Sized>(&self, prev: &WorldState, rng: &mut R) -> WorldState {
        let mut next = self.model.sample_world(prev, &self.action, rng);
        if let RobotMotion::Known(robot) = self.robot {
            next.robot = robot;
        }
        next
    }

    fn transition_log_density(&self, next: &WorldState, prev: &WorldState) -> f64 {
        let source = self.model.prepared_images(&self.source_density, &next.source);
        let source = folded_log_density(&self.source_density, &source, &prev.source);
        match self.robot {
            RobotMotion::Known(_) => source,
            RobotMotion::Propagate => {
                let robot = self.model.prepared_images(&self.robot_density, &next.robot);
                source + folded_log_density(&self.robot_density, &robot, &prev.robot)
            }
        }
    }

    fn likelihood(&self, state: &WorldState, z: &Observation) -> f64 {
        // Coincident robot and source positions have probability zero under
        // continuous motion noise; treat them as uninformative.
        self.model.sensor.likelihood(state, z).unwrap_or(LIKELIHOOD_FLOOR)
    }

    fn mixture_log_densities(&self, next: &[WorldState], prev: &[WorldState], prev_weights: &[f64]) -> Vec<f64> {
        let log_w: Vec<f64> = prev_weights.iter().map(|w| w.ln()).collect();
        if let (RobotMotion::Known(_), Some(form)) = (self.robot, self.source_density.gaussian_form()) {
            return self.windowed_mixture(&form, next, prev, &log_w);
        }
        next.iter()
            .map(|n| {
                let source = self.model.prepared_images(&self.source_density, &n.source);
                let robot = match self.robot {
                    RobotMotion::Known(_) => None,
                    RobotMotion::Propagate => Some(self.model.prepared_images(&self.robot_density, &n.robot)),
                };
                let mut sum = OnlineLogSumExp::default();
                for (p, lw) in prev.iter().zip(&log_w) {
                    let robot_term = match &robot {
                        Some(images) => folded_log_density(&self.robot_density, images, &p.robot),
                        None => 0.0,
                    };
                    let offset = lw + robot_term;
                    for image in &source {
                        let floor = sum.max - MIXTURE_CUTOFF - offset;
                        sum.add(self.source_density.log_density_above(image, &p.source, floor) + offset);
                    }
                }
                sum.value()
            })
            .collect()
    }
}

impl TrackingStep<'_> {
    /// Source-only mixture restricted to predecessors whose x coordinate is
    /// close enough to matter.
    ///
    /// Predecessors are sorted by x. A reference term from the nearest few
    /// gives a lower bound on the largest term, which in turn bounds the x
    /// distance beyond which every term falls below the cutoff.
    fn windowed_mixture(&self, form: &GaussianForm, next: &[WorldState], prev: &[WorldState], log_w: &[f64]) -> Vec<f64> {
        let parents = SortedParents::new(prev, log_w);
        let max_lw = parents.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut terms = Vec::with_capacity(parents.x.len());

        next.iter()
            .map(|n| {
                terms.clear();
                let mut best = f64::NEG_INFINITY;
                for image in self.model.prepared_images(&self.source_density, &n.source) {
                    let (ox, oy) = image.origin();
                    // No predecessor can be closer than the bounding box.
                    let gap_x = (parents.x[0] - ox).max(ox - parents.x[parents.x.len() - 1]).max(0.0);
                    let gap_y = (parents.y_min - oy).max(oy - parents.y_max).max(0.0);
                    let ceiling = form.log_norm + max_lw - 0.5 * (form.a_x * gap_x * gap_x + form.a_y * gap_y * gap_y);
                    if ceiling < best - MIXTURE_CUTOFF {
                        continue;
                    }
                    let start = parents.x.partition_point(|&x| x < ox);
                    let near = start.saturating_sub(REFERENCE_NEIGHBORS)..(start + REFERENCE_NEIGHBORS).min(parents.x.len());
                    let reference = near.map(|k| parents.term(form, &image, k)).fold(f64::NEG_INFINITY, f64::max);
                    best = best.max(reference);
                    let range = if best == f64::NEG_INFINITY {
                        0..parents.x.len()
                    } else {
                        let slack = form.log_norm + max_lw - best + MIXTURE_CUTOFF;
                        let dx = (2.0 * slack.max(0.0) / form.a_x).sqrt();
                        parents.x.partition_point(|&x| x < ox - dx)..parents.x.partition_point(|&x| x <= ox + dx)
                    };
                    parents.extend_terms(form, &image, range, &mut terms);
                }
                crate::belief::log_sum_exp(&terms)
            })
            .collect()
    }
}

/// Number of x-nearest predecessors on each side used for the reference term.
const REFERENCE_NEIGHBORS: usize = 4;

/// Distinct predecessor source states sorted by x, stored by coordinate.
/// Duplicates left by resampling are merged into one entry carrying their
/// total weight.
struct SortedParents {
    x: Vec<f64>,
    y: Vec<f64>,
    theta: Vec<f64>,
    v: Vec<f64>,
    log_w: Vec<f64>,
    y_min: f64,
    y_max: f64,
}

impl SortedParents {
    fn new(prev: &[WorldState], log_w: &[f64]) -> Self {
        let key = |s: &AgentState| [s.x, s.y, s.theta, s.v];
        let mut order: Vec<usize> = (0..prev.len()).collect();
        order.sort_by(|&a, &b| {
            let (ka, kb) = (key(&prev[a].source), key(&prev[b].source));
            ka.iter()
                .zip(&kb)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut out = SortedParents {
            x: Vec::with_capacity(prev.len()),
            y: Vec::with_capacity(prev.len()),
            theta: Vec::with_capacity(prev.len()),
            v: Vec::with_capacity(prev.len()),
            log_w: Vec::with_capacity(prev.len()),
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        let mut last: Option<[f64; 4]> = None;
        for i in order {
            let s = &prev[i].source;
            if last == Some(key(s)) {
                let w = out.log_w.last_mut().expect("merged into an existing entry");
                *w = crate::belief::log_sum_exp(&[*w, log_w[i]]);
                continue;
            }
            last = Some(key(s));
            out.x.push(s.x);
            out.y.push(s.y);
            out.theta.push(s.theta);
            out.v.push(s.v);
            out.log_w.push(log_w[i]);
            out.y_min = out.y_min.min(s.y);
            out.y_max = out.y_max.max(s.y);
        }
        out
    }

    /// Appends the terms of all entries in `range`.
    fn extend_terms(&self, form: &GaussianForm, next: &PreparedSuccessor, range: std::ops::Range<usize>, out: &mut Vec<f64>) {
        let (ox, oy) = next.origin();
        let (nt, nv) = (next.theta(), next.v());
        let r = range;
        let cols = self.x[r.clone()]
            .iter()
            .zip(&self.y[r.clone()])
            .zip(&self.theta[r.clone()])
            .zip(&self.v[r.clone()])
            .zip(&self.log_w[r]);
        out.extend(cols.map(|((((x, y), t), v), lw)| {
            let rx = ox - x;
            let ry = oy - y;
            let rv = nv - v;
            let rt = form.heading_residual(nt, *t);
            form.log_norm - 0.5 * (form.a_x * rx * rx + form.a_y * ry * ry + form.a_v * rv * rv + form.a_theta * rt * rt) + lw
        }));
    }

    #[inline]
    fn term(&self, form: &GaussianForm, next: &PreparedSuccessor, k: usize) -> f64 {
        let (ox, oy) = next.origin();
        let rx = ox - self.x[k];
        let ry = oy - self.y[k];
        let rv = next.v() - self.v[k];
        let rt = form.heading_residual(next.theta(), self.theta[k]);
        form.log_norm - 0.5 * (form.a_x * rx * rx + form.a_y * ry * ry + form.a_v * rv * rv + form.a_theta * rt * rt)
            + self.log_w[k]
    }
}

/// Terms this far (nats) below the running maximum are dropped from mixture
/// sums; together they change the result by less than `I * exp(-40)`.
const MIXTURE_CUTOFF: f64 = 40.0;

/// Streaming `ln sum exp`.
#[derive(Debug, Clone, Copy)]
struct OnlineLogSumExp {
    max: f64,
    scaled_sum: f64,
}

impl Default for OnlineLogSumExp {
    fn default() -> Self {
        OnlineLogSumExp {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
        }
    }
}

impl OnlineLogSumExp {
    #[inline]
    fn add(&mut self, t: f64) {
        if t == f64::NEG_INFINITY || t.is_nan() {
            return;
        }
        if t <= self.max {
            self.scaled_sum += (t - self.max).exp();
        } else {
            self.scaled_sum = self.scaled_sum * (self.max - t).exp() + 1.0;
            self.max = t;
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }
}

/// Log-density of a folded successor: the sum over its preimages.
#[inline]
fn folded_log_density(density: &TransitionDensity, images: &[PreparedSuccessor], prev: &AgentState) -> f64 {
    match images {
        [single] => density.log_density(single, prev),
        _ => {
            let mut sum = OnlineLogSumExp::default();
            for image in images {
                sum.add(density.log_density(image, prev));
            }
            sum.value()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{log_sum_exp, sir_update, ParticleSet};
    use crate::kinematics::{transition_log_density, Room};
    use crate::observation::{build_synthetic_table, AoaGrid, SyntheticTableParams};
    use crate::Rng as StreamRng;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn model() -> TrackingModel {
        TrackingModel {
            dt: TimeStep::new(1.0).unwrap(),
            robot_noise: MotionNoise::new(0.0, 0.0, 0.0, 5.0).unwrap(),
            source_noise: MotionNoise::new(0.1, 0.1, 0.025, 10.0).unwrap(),
            sensor: SensorModel::new(
                Arc::new(build_synthetic_table(&SyntheticTableParams::default()).unwrap()),
                AoaGrid::new(5.0).unwrap(),
            ),
            actions: ActionSet::standard(),
            room: None,
        }
    }

    fn belief(n: usize, seed: u64) -> ParticleSet<WorldState> {
        let mut rng = StreamRng::seed_from_u64(seed);
        let robot = AgentState::new(1.0, 1.0, 20.0, 0.3);
        let ps = (0..n)
            .map(|_| WorldState {
                robot,
                source: AgentState::new(
                    rng.random_range(0.0..7.0),
                    rng.random_range(0.0..5.0),
                    rng.random_range(-180.0..180.0),
                    0.3,
                ),
            })
            .collect();
        ParticleSet::uniform(ps).unwrap()
    }

    /// The fast mixture must agree with the generic pairwise evaluation.
    #[test]
    fn fast_mixture_matches_pairwise_sum() {
        let m = model();
        let prev = belief(40, 1);
        let mut rng = StreamRng::seed_from_u64(2);
        for robot in [RobotMotion::Propagate, RobotMotion::Known(AgentState::new(1.2, 1.1, 25.0, 0.3))] {
            let step = m.step(m.actions.get(3), robot);
            let next: Vec<WorldState> = prev.particles().iter().map(|p| step.sample_transition(p, &mut rng)).collect();
            let fast = step.mixture_log_densities(&next, prev.particles(), prev.weights());
            for (i, n) in next.iter().enumerate() {
                let terms: Vec<f64> = prev
                    .particles()
                    .iter()
                    .zip(prev.weights())
                    .map(|(p, w)| {
                        let mut ld = transition_log_density(&n.source, &p.source, &Action::IDLE, &m.source_noise, m.dt);
                        if robot == RobotMotion::Propagate {
                            ld += transition_log_density(&n.robot, &p.robot, &m.actions.get(3), &m.robot_noise, m.dt);
                        }
                        ld + w.ln()
                    })
                    .collect();
                let slow = log_sum_exp(&terms);
                assert!((fast[i] - slow).abs() < 1e-9 || (fast[i] == slow), "{} vs {slow}", fast[i]);
            }
        }
    }

    /// Near walls the mixture also sums over mirror images.
    #[test]
    fn walled_mixture_matches_pairwise_sum() {
        let m = TrackingModel {
            room: Some(Room::new(7.0, 5.0).unwrap()),
            ..model()
        };
        let mut rng = StreamRng::seed_from_u64(5);
        let robot = AgentState::new(1.0, 1.0, 20.0, 0.3);
        let ps: Vec<WorldState> = (0..60)
            .map(|_| WorldState {
                robot,
                source: AgentState::new(
                    rng.random_range(6.6..7.0),
                    rng.random_range(0.0..0.4),
                    rng.random_range(-180.0..180.0),
                    0.3,
                ),
            })
            .collect();
        // Skewed weights make resampling leave duplicates behind.
        let weights: Vec<f64> = (0..ps.len()).map(|i| ((i % 7) as f64 + 0.1).powi(3)).collect();
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        let prev = ParticleSet::new(ps, weights, 0).unwrap().resampled(60, &mut rng);
        let mut xs: Vec<f64> = prev.particles().iter().map(|p| p.source.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        assert!(xs.len() < 50, "{} distinct", xs.len());
        for motion in [RobotMotion::Propagate, RobotMotion::Known(robot)] {
            let step = m.step(m.actions.get(1), motion);
            let next: Vec<WorldState> = prev.particles().iter().map(|p| step.sample_transition(p, &mut rng)).collect();
            assert!(next.iter().all(|n| n.source.x <= 7.0 && n.source.y >= 0.0));
            let fast = step.mixture_log_densities(&next, prev.particles(), prev.weights());
            for (i, n) in next.iter().enumerate() {
                let terms: Vec<f64> = prev
                    .particles()
                    .iter()
                    .zip(prev.weights())
                    .map(|(p, w)| step.transition_log_density(n, p) + w.ln())
                    .collect();
                let slow = log_sum_exp(&terms);
                assert!((fast[i] - slow).abs() < 1e-9, "{} vs {slow}", fast[i]);
            }
        }
    }

    #[test]
    fn known_robot_is_pinned() {
        let m = model();
        let prev = belief(20, 3);
        let robot = AgentState::new(1.3, 1.0, 20.0, 0.3);
        let step = m.step(m.actions.get(2), RobotMotion::Known(robot));
        let z = m.sensor.grid().observation(10);
        let mut rng = StreamRng::seed_from_u64(4);
        let out = sir_update(&prev, &step, &z, &mut rng);
        assert!(out.belief.particles().iter().all(|p| p.robot == robot));
        assert!(out.reward.unwrap().is_finite());
    }
}
