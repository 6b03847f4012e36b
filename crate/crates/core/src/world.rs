//! Ground-truth simulation of tracking episodes and the baseline policies.

use rand::Rng;

use crate::belief::{point_estimate, sir_filter, ParticleSet, RewardNormalizer};
use crate::error::Result;
pub use crate::kinematics::Room;
use crate::kinematics::{deterministic_transition, sample_transition, Action, ActionSet, AgentState, MotionNoise, TimeStep, WorldState};
use crate::model::{RobotMotion, TrackingModel};
use crate::observation::{sample_observation, Observation, SensorModel};
use crate::planner::tracking::{advance, TrackingSimulator};
use crate::planner::{Planner, PlannerConfig, ReturnRange};
use crate::rng_stream;

/// Distance at which the patrol policy counts a corner as visited (meters).
pub const CORNER_VISIT_RADIUS: f64 = 0.5;

/// Number of leading steps executed with the straight action regardless of policy.
pub const FIXED_LEADING_ACTIONS: usize = 2;

// Independent random streams of one episode seed.
const STREAM_SOURCE: u64 = 0;
const STREAM_ROBOT: u64 = 1;
const STREAM_OBSERVATION: u64 = 2;
const STREAM_FILTER: u64 = 3;
const STREAM_POLICY: u64 = 4;

/// Ground-truth motion noise of both agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueDynamics {
    pub robot: MotionNoise,
    pub source: MotionNoise,
    pub dt: TimeStep,
}

/// Random streams driving the ground truth of one episode.
#[derive(Debug, Clone)]
pub struct WorldStreams {
    pub source: crate::Rng,
    pub robot: crate::Rng,
    pub observation: crate::Rng,
}

impl WorldStreams {
    pub fn new(seed: u64) -> Self {
        WorldStreams {
            source: rng_stream(seed, STREAM_SOURCE),
            robot: rng_stream(seed, STREAM_ROBOT),
            observation: rng_stream(seed, STREAM_OBSERVATION),
        }
    }
}

/// Advances the true world by one step; agents leaving the room are clamped
/// to the wall with their heading reflected.
pub fn step_world(w: &WorldState, u: &Action, room: &Room, dynamics: &TrueDynamics, streams: &mut WorldStreams) -> WorldState {
    let robot = sample_transition(&w.robot, u, &dynamics.robot, dynamics.dt, &mut streams.robot);
    let source = sample_transition(&w.source, &Action::IDLE, &dynamics.source, dynamics.dt, &mut streams.source);
    WorldState {
        robot: room.confine(robot),
        source: room.confine(source),
    }
}

/// Real AoA measurement drawn at the true state.
pub fn observe_world<R: Rng + ?Sized>(w: &WorldState, sensor: &SensorModel, rng: &mut R) -> Result<Observation> {
    let pmf = sensor.observation_pmf(w)?;
    Ok(sample_observation(&pmf, sensor.grid(), rng))
}

pub fn random_policy<R: Rng + ?Sized>(actions: &ActionSet, rng: &mut R) -> Action {
    actions.get(rng.random_range(0..actions.len()))
}

/// Progress of the patrol baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatrolState {
    pub visited: [bool; 4],
    pub target: Option<usize>,
}

/// Drives towards the most distant corner not yet visited.
///
/// The target is kept until reached. The action is the one whose noise-free
/// step ends closest to the target.
pub fn patrol_policy(state: &PatrolState, robot: &AgentState, room: &Room, actions: &ActionSet, dt: TimeStep) -> (Action, PatrolState) {
    let corners = room.corners();
    let mut next = state.clone();
    for (k, c) in corners.iter().enumerate() {
        if robot.distance_to(c.0, c.1) <= CORNER_VISIT_RADIUS {
            next.visited[k] = true;
        }
    }
    if next.target.is_some_and(|t| next.visited[t]) {
        next.target = None;
    }
    if next.visited.iter().all(|v| *v) {
        next.visited = [false; 4];
        next.target = None;
    }
    let target = match next.target {
        Some(t) => t,
        None => {
            let mut best = None::<(usize, f64)>;
            for (k, c) in corners.iter().enumerate() {
                if next.visited[k] {
                    continue;
                }
                let d = robot.distance_to(c.0, c.1);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((k, d));
                }
            }
            best.expect("at least one corner is unvisited").0
        }
    };
    next.target = Some(target);
    let (tx, ty) = corners[target];
    let mut choice = actions.get(0);
    let mut best_distance = f64::INFINITY;
    for a in actions.iter() {
        let d = deterministic_transition(robot, a, dt).distance_to(tx, ty);
        if d < best_distance {
            choice = *a;
            best_distance = d;
        }
    }
    (choice, next)
}

/// Robot behavior during an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Random,
    Patrol,
    /// Tree search with the given planning horizon.
    Mcts { horizon: usize },
}

impl Policy {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Patrol => "patrol",
            Policy::Mcts { .. } => "mcts",
        }
    }

    /// Planning horizon, 0 for the baselines.
    pub fn horizon(&self) -> usize {
        match self {
            Policy::Mcts { horizon } => *horizon,
            _ => 0,
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::Mcts { horizon } => write!(f, "mcts:{horizon}"),
            other => f.write_str(other.label()),
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || crate::Error::config("experiment.policies", format!("unknown policy `{s}`; use random, patrol or mcts:K"));
        match s {
            "random" => Ok(Policy::Random),
            "patrol" => Ok(Policy::Patrol),
            _ => {
                let k = s.strip_prefix("mcts:").ok_or_else(bad)?;
                let horizon: usize = k.parse().map_err(|_| bad())?;
                if horizon == 0 {
                    return Err(crate::Error::config("experiment.policies", "planning horizon must be >= 1"));
                }
                Ok(Policy::Mcts { horizon })
            }
        }
    }
}

/// Everything needed to run one episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub room: Room,
    pub truth: TrueDynamics,
    /// Model used by the filter and the planner.
    pub model: TrackingModel,
    pub robot_speed: f64,
    pub source_speed: f64,
    pub num_particles: usize,
    /// Number of recorded steps; `steps - 1` actions are executed.
    pub steps: usize,
    pub planner: PlannerConfig,
    pub normalizer: RewardNormalizer,
}

/// Time-indexed record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub true_states: Vec<WorldState>,
    /// `observations[t - 1]` was measured on arrival at `true_states[t]`.
    pub observations: Vec<Observation>,
    /// `actions[t - 1]` moved the robot from `true_states[t - 1]` to `true_states[t]`.
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub episode: Episode,
    /// Distance between true and estimated source position per step.
    pub errors: Vec<f64>,
    /// Extrema of all returns backed up by the planner.
    pub returns: ReturnRange,
    /// Whether a planner was constructed.
    pub planned: bool,
}

fn uniform_agent<R: Rng + ?Sized>(room: &Room, speed: f64, rng: &mut R) -> AgentState {
    AgentState::new(
        rng.random_range(0.0..room.width),
        rng.random_range(0.0..room.height),
        rng.random_range(-180.0..180.0),
        speed,
    )
}

/// Simulates one episode under `policy`, deterministically in `seed`.
///
/// The ground truth, the filter and the policy each consume their own random
/// streams, so for a given seed all policies face the same source path and
/// the same initial configuration.
pub fn run_episode(policy: Policy, setup: &EpisodeSetup, seed: u64) -> Result<EpisodeResult> {
    let mut streams = WorldStreams::new(seed);
    let mut filter_rng = rng_stream(seed, STREAM_FILTER);
    let mut policy_rng = rng_stream(seed, STREAM_POLICY);
    let room = &setup.room;
    let model = &setup.model;

    let mut truth = WorldState {
        source: uniform_agent(room, setup.source_speed, &mut streams.source),
        robot: uniform_agent(room, setup.robot_speed, &mut streams.robot),
    };
    let initial = (0..setup.num_particles)
        .map(|_| WorldState {
            robot: truth.robot,
            source: uniform_agent(room, setup.source_speed, &mut filter_rng),
        })
        .collect();
    let mut belief = ParticleSet::uniform(initial)?;

    let straight = model
        .actions
        .straight()
        .ok_or_else(|| crate::Error::config("actions", "the action set needs a zero angular speed action"))?;
    let sim = TrackingSimulator::new(model, setup.normalizer);
    let mut planner: Option<Planner<ParticleSet<WorldState>>> = None;
    let mut patrol = PatrolState::default();

    let error_of = |belief: &ParticleSet<WorldState>, w: &WorldState| {
        let (x, y) = point_estimate(belief);
        w.source.distance_to(x, y)
    };
    let mut episode = Episode {
        seed,
        true_states: vec![truth],
        observations: Vec::new(),
        actions: Vec::new(),
    };
    let mut errors = vec![error_of(&belief, &truth)];

    for t in 1..setup.steps {
        let action = if t <= FIXED_LEADING_ACTIONS {
            straight
        } else {
            match policy {
                Policy::Random => random_policy(&model.actions, &mut policy_rng),
                Policy::Patrol => {
                    let (a, next) = patrol_policy(&patrol, &truth.robot, room, &model.actions, model.dt);
                    patrol = next;
                    a
                }
                Policy::Mcts { horizon } => {
                    let p = planner.get_or_insert_with(|| {
                        let config = PlannerConfig {
                            horizon,
                            ..setup.planner
                        };
                        let root = belief.resampled(config.plan_particles, &mut policy_rng);
                        Planner::new(config, root, model.actions.len())
                    });
                    let index = p.plan(&sim, |r| *belief.sample(r), &mut policy_rng);
                    model.actions.get(index)
                }
            }
        };

        truth = step_world(&truth, &action, room, &setup.truth, &mut streams);
        let z = observe_world(&truth, &model.sensor, &mut streams.observation)?;
        belief = match planner.as_mut() {
            Some(p) => advance(p, action.index, &z, &belief, model, truth.robot, &mut filter_rng),
            None => {
                let step = model.step(action, RobotMotion::Known(truth.robot));
                sir_filter(&belief, &step, &z, &mut filter_rng).belief
            }
        };

        episode.true_states.push(truth);
        episode.observations.push(z);
        episode.actions.push(action);
        errors.push(error_of(&belief, &truth));
    }

    Ok(EpisodeResult {
        episode,
        errors,
        returns: planner.as_ref().map(|p| p.returns()).unwrap_or_default(),
        planned: planner.is_some(),
    })
}
