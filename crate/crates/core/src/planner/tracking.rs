//! The tree search bound to acoustic source tracking.

use rand::Rng;

use super::{Planner, Simulator};
use crate::belief::{point_estimate, sir_filter, sir_update, ParticleSet, RewardNormalizer};
use crate::kinematics::{sample_transition, AgentState, WorldState};
use crate::model::{RobotMotion, TrackingModel};
use crate::observation::{sample_observation, Observation};

/// Probability that a rollout step uses the informed action rather than a
/// uniformly random one.
pub const INFORMED_PROBABILITY: f64 = 0.5;

/// Planning view of the tracking model.
///
/// Simulated states carry their own robot trajectory. Each belief update
/// pins the robot part of all particles to the simulated robot state, since
/// the robot knows where it is once it has moved.
#[derive(Debug, Clone)]
pub struct TrackingSimulator<'a> {
    pub model: &'a TrackingModel,
    pub normalizer: RewardNormalizer,
}

impl<'a> TrackingSimulator<'a> {
    pub fn new(model: &'a TrackingModel, normalizer: RewardNormalizer) -> Self {
        TrackingSimulator { model, normalizer }
    }
}

impl Simulator for TrackingSimulator<'_> {
    type State = WorldState;
    type Belief = ParticleSet<WorldState>;

    fn num_actions(&self) -> usize {
        self.model.actions.len()
    }

    fn step<R: Rng + ?Sized>(&self, state: &WorldState, action: usize, rng: &mut R) -> WorldState {
        self.model.sample_world(state, &self.model.actions.get(action), rng)
    }

    fn observe<R: Rng + ?Sized>(&self, state: &WorldState, rng: &mut R) -> usize {
        let grid = self.model.sensor.grid();
        match self.model.sensor.observation_pmf(state) {
            Ok(pmf) => sample_observation(&pmf, grid, rng).bin_index,
            Err(_) => rng.random_range(0..grid.len()),
        }
    }

    fn update<R: Rng + ?Sized>(
        &self,
        belief: &ParticleSet<WorldState>,
        state: &WorldState,
        action: usize,
        observation: usize,
        rng: &mut R,
    ) -> (ParticleSet<WorldState>, f64) {
        let step = self
            .model
            .step(self.model.actions.get(action), RobotMotion::Known(state.robot));
        let z = self.model.sensor.grid().observation(observation);
        let out = sir_update(belief, &step, &z, rng);
        let raw = out.reward.expect("sir_update computes the reward");
        (out.belief, self.normalizer.normalize(raw))
    }

    fn default_action<R: Rng + ?Sized>(&self, state: &WorldState, belief: &ParticleSet<WorldState>, rng: &mut R) -> usize {
        if rng.random::<f64>() < INFORMED_PROBABILITY {
            let target = point_estimate(belief);
            informed_action(self.model, &state.robot, target, rng)
        } else {
            rng.random_range(0..self.model.actions.len())
        }
    }
}

/// Action whose sampled robot transition ends closest to `target`.
///
/// One noisy robot transition is drawn per action; ties go to the lowest index.
pub fn informed_action<R: Rng + ?Sized>(
    model: &TrackingModel,
    robot: &AgentState,
    target: (f64, f64),
    rng: &mut R,
) -> usize {
    let mut best = 0;
    let mut best_distance = f64::INFINITY;
    for action in model.actions.iter() {
        let moved = sample_transition(robot, action, &model.robot_noise, model.dt, rng);
        let d = moved.distance_to(target.0, target.1);
        if d < best_distance {
            best = action.index;
            best_distance = d;
        }
    }
    best
}

/// Fuses the executed action and the real measurement into the tracking
/// belief and moves the planner root along.
///
/// The full tracking belief is always updated with a SIR step, with the
/// robot part pinned to the known robot state `robot`. If the tree already
/// holds the history `(action, z)`, that subtree becomes the new root with
/// its statistics; otherwise the new root gets a planning belief downsampled
/// from the updated tracking belief.
pub fn advance<R: Rng + ?Sized>(
    planner: &mut Planner<ParticleSet<WorldState>>,
    action: usize,
    z: &Observation,
    belief: &ParticleSet<WorldState>,
    model: &TrackingModel,
    robot: AgentState,
    rng: &mut R,
) -> ParticleSet<WorldState> {
    let step = model.step(model.actions.get(action), RobotMotion::Known(robot));
    let updated = sir_filter(belief, &step, z, rng).belief;
    let plan_particles = planner.config().plan_particles;
    planner.advance(action, z.bin_index, || updated.resampled(plan_particles, rng));
    updated
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{ActionSet, MotionNoise, Room, TimeStep};
    use crate::observation::{build_synthetic_table, AoaGrid, SensorModel, SyntheticTableParams};
    use crate::planner::PlannerConfig;
    use crate::Rng as StreamRng;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn model(robot_noise: MotionNoise) -> TrackingModel {
        TrackingModel {
            dt: TimeStep::new(1.0).unwrap(),
            robot_noise,
            source_noise: MotionNoise::new(0.1, 0.1, 0.025, 10.0).unwrap(),
            sensor: SensorModel::new(
                Arc::new(build_synthetic_table(&SyntheticTableParams::default()).unwrap()),
                AoaGrid::new(5.0).unwrap(),
            ),
            actions: ActionSet::standard(),
            room: Some(Room::new(7.0, 5.0).unwrap()),
        }
    }

    fn belief_around(robot: AgentState, center: (f64, f64), n: usize, seed: u64) -> ParticleSet<WorldState> {
        let mut rng = StreamRng::seed_from_u64(seed);
        let ps = (0..n)
            .map(|_| WorldState {
                robot,
                source: AgentState::new(
                    center.0 + rng.random_range(-0.5..0.5),
                    center.1 + rng.random_range(-0.5..0.5),
                    rng.random_range(-180.0..180.0),
                    0.3,
                ),
            })
            .collect();
        ParticleSet::uniform(ps).unwrap()
    }

    #[test]
    fn informed_action_heads_straight_at_target() {
        let m = model(MotionNoise::ZERO);
        let mut rng = StreamRng::seed_from_u64(0);
        let robot = AgentState::new(1.0, 1.0, 45.0, 0.3);
        assert_eq!(informed_action(&m, &robot, (4.0, 4.0), &mut rng), 2);
        // Target behind the robot: the stop action keeps it closest.
        let robot = AgentState::new(1.0, 1.0, 0.0, 0.3);
        assert_eq!(informed_action(&m, &robot, (0.0, 1.0), &mut rng), 0);
        // Target on the left: turning left wins.
        assert_eq!(informed_action(&m, &robot, (1.2, 3.0), &mut rng), 3);
    }

    #[test]
    fn planning_from_tracking_belief() {
        let m = model(MotionNoise::new(0.0, 0.0, 0.0, 5.0).unwrap());
        let sim = TrackingSimulator::new(&m, RewardNormalizer::new(-3.0, 9.0).unwrap());
        let robot = AgentState::new(1.0, 1.0, 0.0, 0.3);
        let tracking = belief_around(robot, (5.0, 3.0), 200, 1);
        let mut rng = StreamRng::seed_from_u64(2);
        let config = PlannerConfig {
            horizon: 3,
            budget: 60,
            plan_particles: 50,
            ..PlannerConfig::default()
        };
        let root = tracking.resampled(config.plan_particles, &mut rng);
        let mut planner = Planner::new(config, root, m.actions.len()).with_trace();
        let u = planner.plan(&sim, |r| *tracking.sample(r), &mut rng);
        assert!(u < 4);
        assert!(planner.tree().len() <= 61);
        let (lo, hi) = config.return_bounds();
        let range = planner.returns();
        assert_eq!(range.count as usize, planner.trace().unwrap().len());
        assert!(range.min >= lo - 1e-12 && range.max <= hi);
        for node in planner.tree().iter().skip(1) {
            let r = node.reward.unwrap();
            assert!((-1.0..=0.0).contains(&r));
            assert_eq!(node.belief.len(), 50);
            assert!(node.belief.particles().iter().all(|p| p.robot == node.belief.particles()[0].robot));
        }

        // Advance along a simulated branch and along a fresh one.
        let bins = m.sensor.grid().len();
        let (a, z) = (0..m.actions.len())
            .flat_map(|u| (0..bins).map(move |z| (u, z)))
            .find(|&(u, z)| planner.tree().root().child(u, z).is_some())
            .unwrap();
        let child = planner.tree().root().child(a, z).unwrap();
        let stats = planner.tree().node(child).stats.clone();
        let obs = m.sensor.grid().observation(z);
        let moved = AgentState::new(1.3, 1.0, 0.0, 0.3);
        let updated = advance(&mut planner, a, &obs, &tracking, &m, moved, &mut rng);
        assert_eq!(updated.len(), 200);
        assert!(updated.particles().iter().all(|p| p.robot == moved));
        assert_eq!(planner.tree().root().stats, stats);

        let unseen = (0..m.sensor.grid().len()).find(|&z| planner.tree().root().child(0, z).is_none()).unwrap();
        let updated = advance(&mut planner, 0, &m.sensor.grid().observation(unseen), &updated, &m, moved, &mut rng);
        assert_eq!(planner.tree().len(), 1);
        assert_eq!(planner.tree().root().belief.len(), 50);
        assert_eq!(updated.generation(), 2);
    }
}
