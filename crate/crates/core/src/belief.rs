//! Weighted particle beliefs, the SIR update and the entropy reward.
//!
//! The reward of a belief update is the particle-based estimate of the
//! negative differential entropy of the posterior,
//!
//! ```text
//! R = -ln( sum_i L_i w'_i ) + sum_i w_i ( ln L_i + ln sum_v p(x_i | x'_v) w'_v )
//! ```
//!
//! where `x'_v, w'_v` are the previous particles and weights, `x_i` the
//! propagated children (child `i` descends from parent `i`), `L_i` the
//! observation likelihoods and `w_i` the normalized posterior weights before
//! resampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kinematics::WorldState;

/// Lower bound of a mixture log-density, keeps the reward finite.
pub const LOG_DENSITY_FLOOR: f64 = -700.0;

/// A probabilistic state-space model that a particle filter can run on.
pub trait StateModel {
    type State: Clone;
    type Observation: ?Sized;

    fn sample_transition<R: Rng + ?Sized>(&self, prev: &Self::State, rng: &mut R) -> Self::State;

    /// `ln p(next | prev)`; may be `-inf` but never NaN.
    fn transition_log_density(&self, next: &Self::State, prev: &Self::State) -> f64;

    /// Observation likelihood, already floored away from zero.
    fn likelihood(&self, state: &Self::State, z: &Self::Observation) -> f64;

    /// `ln sum_v p(next_i | prev_v) w_v` for every `next_i`.
    ///
    /// Implementations may override this with a faster evaluation, but the
    /// summation order over `v` must stay fixed so results are reproducible.
    fn mixture_log_densities(&self, next: &[Self::State], prev: &[Self::State], prev_weights: &[f64]) -> Vec<f64> {
        let log_w: Vec<f64> = prev_weights.iter().map(|w| w.ln()).collect();
        let mut terms = vec![0.0; prev.len()];
        next.iter()
            .map(|n| {
                for ((t, p), lw) in terms.iter_mut().zip(prev).zip(&log_w) {
                    *t = self.transition_log_density(n, p) + lw;
                }
                log_sum_exp(&terms)
            })
            .collect()
    }
}

/// `ln sum exp(x_k)` with the usual max shift; `-inf` for empty or all `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().fold(f64::NEG_INFINITY, |m, &x| if x > m { x } else { m });
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| exp_non_positive(x - max)).sum::<f64>().ln()
}

/// `exp(x)` for `x <= 0`, flushing to 0 below -708.
///
/// Branch-free so that loops over it vectorize; relative error below 1e-14.
#[inline]
pub fn exp_non_positive(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let underflow = !(x >= -708.0);
    let x = if underflow { -708.0 } else { x };
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series of exp on |r| <= ln(2) / 2, Horner form.
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let k = t.to_bits().wrapping_sub(SHIFT.to_bits()) as i64;
    let scale = f64::from_bits(((k + 1023) as u64) << 52);
    if underflow {
        0.0
    } else {
        p * scale
    }
}

/// Weighted particle approximation of a belief.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<S> {
    particles: Vec<S>,
    weights: Vec<f64>,
    generation: u64,
}

impl<S: Clone> ParticleSet<S> {
    pub fn new(particles: Vec<S>, weights: Vec<f64>, generation: u64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::config("filter.num_particles", "a belief needs at least one particle"));
        }
        if particles.len() != weights.len() {
            return Err(Error::config("weights", "one weight per particle is required"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config("weights", "weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("weights", format!("weights sum to {total}, not 1")));
        }
        Ok(ParticleSet {
            particles,
            weights,
            generation,
        })
    }

    pub fn uniform(particles: Vec<S>) -> Result<Self> {
        let n = particles.len().max(1);
        ParticleSet::new(particles, vec![1.0 / n as f64; n], 0)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn particles_mut(&mut self) -> &mut [S] {
        &mut self.particles
    }

    /// Draws one particle with probability equal to its weight.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &S {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        for (p, w) in self.particles.iter().zip(&self.weights) {
            cumulative += w;
            if u < cumulative {
                return p;
            }
        }
        let last = self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        &self.particles[last]
    }

    /// Systematic resample to `n` equally weighted particles.
    pub fn resampled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        let parents = systematic_resample(&self.weights, n, rng);
        ParticleSet {
            particles: parents.iter().map(|&i| self.particles[i].clone()).collect(),
            weights: vec![1.0 / n as f64; n],
            generation: self.generation,
        }
    }

    /// Weighted mean of a scalar feature.
    pub fn weighted_mean(&self, f: impl Fn(&S) -> f64) -> f64 {
        self.particles.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Weighted mean of the source position.
pub fn point_estimate(belief: &ParticleSet<WorldState>) -> (f64, f64) {
    (
        belief.weighted_mean(|s| s.source.x),
        belief.weighted_mean(|s| s.source.y),
    )
}

/// Systematic resampling with a uniformly drawn offset in `[0, 1/n)`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let u0 = rng.random::<f64>() / n as f64;
    systematic_resample_with_offset(weights, n, u0)
}

/// Parent indices selected by the comb `u0 + k/n`, `k = 0..n`, against the
/// cumulative weights.
pub fn systematic_resample_with_offset(weights: &[f64], n: usize, u0: f64) -> Vec<usize> {
    debug_assert!(!weights.is_empty());
    let total: f64 = weights.iter().sum();
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1);
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cumulative = weights[0] / total;
    for k in 0..n {
        let position = u0 + k as f64 / n as f64;
        while position >= cumulative && i < last {
            i += 1;
            cumulative += weights[i] / total;
        }
        out.push(i);
    }
    out
}

/// Result of one SIR step.
#[derive(Debug, Clone)]
pub struct SirOutcome<S> {
    /// Resampled belief with uniform weights.
    pub belief: ParticleSet<S>,
    /// Raw entropy reward in nats; `None` when it was not requested.
    pub reward: Option<f64>,
    /// Every reweighted particle sat at the likelihood floor.
    pub degenerate: bool,
}

/// Propagates, reweights and resamples `belief`, and computes the entropy
/// reward from the pre-resampling quantities.
pub fn sir_update<M: StateModel, R: Rng + ?Sized>(
    belief: &ParticleSet<M::State>,
    model: &M,
    z: &M::Observation,
    rng: &mut R,
) -> SirOutcome<M::State> {
    sir_step(belief, model, z, true, rng)
}

/// Same as [`sir_update`] without the O(I^2) reward evaluation.
pub fn sir_filter<M: StateModel, R: Rng + ?Sized>(
    belief: &ParticleSet<M::State>,
    model: &M,
    z: &M::Observation,
    rng: &mut R,
) -> SirOutcome<M::State> {
    sir_step(belief, model, z, false, rng)
}

fn sir_step<M: StateModel, R: Rng + ?Sized>(
    belief: &ParticleSet<M::State>,
    model: &M,
    z: &M::Observation,
    with_reward: bool,
    rng: &mut R,
) -> SirOutcome<M::State> {
    let propagated: Vec<M::State> = belief
        .particles
        .iter()
        .map(|p| model.sample_transition(p, rng))
        .collect();
    let likelihoods: Vec<f64> = propagated.iter().map(|p| model.likelihood(p, z)).collect();
    let (weights, degenerate) = posterior_weights(&belief.weights, &likelihoods);

    let reward = with_reward.then(|| {
        let mixture = model.mixture_log_densities(&propagated, &belief.particles, &belief.weights);
        entropy_from_parts(&belief.weights, &weights, &likelihoods, &mixture)
    });

    let n = propagated.len();
    let parents = systematic_resample(&weights, n, rng);
    let particles = parents.iter().map(|&i| propagated[i].clone()).collect();
    SirOutcome {
        belief: ParticleSet {
            particles,
            weights: vec![1.0 / n as f64; n],
            generation: belief.generation + 1,
        },
        reward,
        degenerate,
    }
}

/// Normalized `w_prev * L`; uniform when every likelihood sits at the floor.
fn posterior_weights(prev: &[f64], likelihoods: &[f64]) -> (Vec<f64>, bool) {
    let floor = crate::observation::LIKELIHOOD_FLOOR;
    let degenerate = likelihoods.iter().all(|&l| l <= floor);
    let unnormalized: Vec<f64> = prev.iter().zip(likelihoods).map(|(w, l)| w * l).collect();
    let total: f64 = unnormalized.iter().sum();
    if degenerate || !(total > 0.0) {
        let n = prev.len() as f64;
        return (vec![1.0 / n; prev.len()], true);
    }
    (unnormalized.into_iter().map(|w| w / total).collect(), false)
}

/// Entropy reward from its ingredients.
///
/// `prev_weights` are the parent weights, `weights` the normalized posterior
/// weights of the children, `likelihoods` the children's observation
/// likelihoods and `log_mixture[i] = ln sum_v p(x_i | x'_v) w'_v`.
pub fn entropy_from_parts(prev_weights: &[f64], weights: &[f64], likelihoods: &[f64], log_mixture: &[f64]) -> f64 {
    let evidence: f64 = likelihoods.iter().zip(prev_weights).map(|(l, w)| l * w).sum();
    let mut r = -evidence.ln();
    for ((w, l), m) in weights.iter().zip(likelihoods).zip(log_mixture) {
        if *w > 0.0 {
            r += w * (l.ln() + m.max(LOG_DENSITY_FLOOR));
        }
    }
    r
}

/// Entropy reward of a propagated, reweighted (not yet resampled) particle
/// set `propagated` whose particle `i` is the child of particle `i` of `prev`.
pub fn entropy_reward<M: StateModel>(
    prev: &ParticleSet<M::State>,
    propagated: &ParticleSet<M::State>,
    model: &M,
    z: &M::Observation,
) -> f64 {
    let likelihoods: Vec<f64> = propagated.particles.iter().map(|p| model.likelihood(p, z)).collect();
    let mixture = model.mixture_log_densities(&propagated.particles, &prev.particles, &prev.weights);
    entropy_from_parts(&prev.weights, &propagated.weights, &likelihoods, &mixture)
}

/// Affine map of raw rewards (negative entropies) onto `[-1, 0]`.
///
/// A belief with entropy `h_hi` maps to -1, one with entropy `h_lo` to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardNormalizer {
    h_lo: f64,
    h_hi: f64,
}

impl RewardNormalizer {
    pub fn new(h_lo: f64, h_hi: f64) -> Result<Self> {
        if !(h_lo.is_finite() && h_hi.is_finite()) || h_hi <= h_lo {
            return Err(Error::config(
                "reward.h_hi",
                format!("entropy bounds must satisfy h_lo < h_hi, got {h_lo} and {h_hi}"),
            ));
        }
        Ok(RewardNormalizer { h_lo, h_hi })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.h_lo, self.h_hi)
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        let scaled = (raw + self.h_hi) / (self.h_hi - self.h_lo);
        if scaled.is_nan() {
            return -1.0;
        }
        scaled.clamp(0.0, 1.0) - 1.0
    }
}
