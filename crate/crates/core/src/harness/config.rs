use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::belief::RewardNormalizer;
use crate::error::{Error, Result};
use crate::kinematics::{ActionSet, MotionNoise, TimeStep};
use crate::model::TrackingModel;
use crate::observation::{build_synthetic_table, AoaGrid, ObservationTable, SensorModel, SyntheticTableParams};
use crate::planner::PlannerConfig;
use crate::world::{EpisodeSetup, Policy, Room, TrueDynamics};

/// Full experiment description, read from TOML.
///
/// Every section and key is optional; missing values take the defaults
/// below. Unknown keys are rejected.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub room: RoomSection,
    pub motion: MotionSection,
    pub robot_noise: NoiseSection,
    pub source_noise: NoiseSection,
    pub filter: FilterSection,
    pub planner: PlannerSection,
    pub reward: RewardSection,
    pub observation: ObservationSection,
    pub actions: ActionSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RoomSection {
    pub width: f64,
    pub height: f64,
}

impl Default for RoomSection {
    fn default() -> Self {
        RoomSection { width: 7.0, height: 5.0 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub dt: f64,
    pub robot_speed: f64,
    pub source_speed: f64,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection {
            dt: 1.0,
            robot_speed: 0.3,
            source_speed: 0.3,
        }
    }
}

/// Per-step standard deviations (meters, m/s, degrees).
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_v: f64,
    pub sigma_theta: f64,
}

impl NoiseSection {
    fn robot() -> Self {
        NoiseSection {
            sigma_theta: 5.0,
            ..Default::default()
        }
    }

    fn source() -> Self {
        NoiseSection {
            sigma_v: 0.025,
            sigma_theta: 10.0,
            ..Default::default()
        }
    }

    fn build(&self, section: &str) -> Result<MotionNoise> {
        MotionNoise::new(self.sigma_x, self.sigma_y, self.sigma_v, self.sigma_theta).map_err(|e| match e {
            Error::Config { field, reason } => Error::config(format!("{section}.{field}"), reason),
            other => other,
        })
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub num_particles: usize,
    /// Extra source position noise assumed by the filter (meters per step).
    pub source_sigma_x: f64,
    pub source_sigma_y: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            num_particles: 1000,
            source_sigma_x: 0.1,
            source_sigma_y: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub budget: usize,
    pub gamma: f64,
    pub exploration: f64,
    pub epsilon: f64,
    pub plan_particles: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let d = PlannerConfig::default();
        PlannerSection {
            budget: d.budget,
            gamma: d.gamma,
            exploration: d.exploration,
            epsilon: d.epsilon,
            plan_particles: d.plan_particles,
        }
    }
}

/// Entropy range mapped onto rewards in [-1, 0].
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub h_lo: f64,
    pub h_hi: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection { h_lo: -1.0, h_hi: 5.0 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    /// Quantization step of the measured AoA (degrees).
    pub resolution: f64,
    /// Table file; when absent a synthetic table is generated.
    pub table: Option<PathBuf>,
    pub sigma0: f64,
    pub sigma_per_meter: f64,
    pub kappa: f64,
    pub max_distance: f64,
    pub distance_step: f64,
    pub aoa_step: f64,
}

impl Default for ObservationSection {
    fn default() -> Self {
        let p = SyntheticTableParams::default();
        ObservationSection {
            resolution: 5.0,
            table: None,
            sigma0: p.sigma0,
            sigma_per_meter: p.sigma_per_meter,
            kappa: p.kappa,
            max_distance: p.max_distance,
            distance_step: p.distance_step,
            aoa_step: p.aoa_step,
        }
    }
}

impl ObservationSection {
    pub fn synthetic_params(&self) -> SyntheticTableParams {
        SyntheticTableParams {
            sigma0: self.sigma0,
            sigma_per_meter: self.sigma_per_meter,
            kappa: self.kappa,
            max_distance: self.max_distance,
            distance_step: self.distance_step,
            aoa_step: self.aoa_step,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ActionSection {
    /// Angular speeds in degrees per second.
    pub angular_speeds: Vec<f64>,
    /// Prepend a stop action with index 0.
    pub stop: bool,
}

impl Default for ActionSection {
    fn default() -> Self {
        ActionSection {
            angular_speeds: vec![-45.0, 0.0, 45.0],
            stop: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub num_episodes: usize,
    /// Recorded steps per episode, including the initial belief.
    pub steps: usize,
    /// Policy labels: `random`, `patrol` or `mcts:K`.
    pub policies: Vec<String>,
    pub base_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            num_episodes: 10,
            steps: 30,
            policies: vec!["random".into(), "patrol".into(), "mcts:1".into(), "mcts:5".into()],
            base_seed: 0,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            room: RoomSection::default(),
            motion: MotionSection::default(),
            robot_noise: NoiseSection::robot(),
            source_noise: NoiseSection::source(),
            filter: FilterSection::default(),
            planner: PlannerSection::default(),
            reward: RewardSection::default(),
            observation: ObservationSection::default(),
            actions: ActionSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be > 0, got {value}")))
    }
}

fn non_negative(field: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be >= 0, got {value}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            Error::config(field, e.message().trim().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        Room::new(self.room.width, self.room.height)?;
        positive("motion.dt", self.motion.dt)?;
        non_negative("motion.robot_speed", self.motion.robot_speed)?;
        non_negative("motion.source_speed", self.motion.source_speed)?;
        self.robot_noise.build("robot_noise")?;
        self.source_noise.build("source_noise")?;
        if self.filter.num_particles < 1 {
            return Err(Error::config("filter.num_particles", "must be >= 1"));
        }
        non_negative("filter.source_sigma_x", self.filter.source_sigma_x)?;
        non_negative("filter.source_sigma_y", self.filter.source_sigma_y)?;
        self.planner_config(1).validate()?;
        RewardNormalizer::new(self.reward.h_lo, self.reward.h_hi)?;
        positive("observation.resolution", self.observation.resolution)?;
        AoaGrid::new(self.observation.resolution).map_err(|e| match e {
            Error::Config { reason, .. } => Error::config("observation.resolution", reason),
            other => other,
        })?;
        if self.observation.table.is_none() {
            build_synthetic_table(&self.observation.synthetic_params())?;
        }
        let actions = self.action_set()?;
        if actions.straight().is_none() {
            return Err(Error::config("actions.angular_speeds", "must contain 0"));
        }
        if self.experiment.steps < 1 {
            return Err(Error::config("experiment.steps", "must be >= 1"));
        }
        if self.experiment.policies.is_empty() {
            return Err(Error::config("experiment.policies", "must list at least one policy"));
        }
        self.policies()?;
        Ok(())
    }

    pub fn policies(&self) -> Result<Vec<Policy>> {
        self.experiment.policies.iter().map(|p| p.parse()).collect()
    }

    pub fn action_set(&self) -> Result<ActionSet> {
        ActionSet::new(&self.actions.angular_speeds, self.actions.stop).map_err(|e| match e {
            Error::Config { reason, .. } => Error::config("actions.angular_speeds", reason),
            other => other,
        })
    }

    pub fn planner_config(&self, horizon: usize) -> PlannerConfig {
        PlannerConfig {
            horizon,
            budget: self.planner.budget,
            gamma: self.planner.gamma,
            exploration: self.planner.exploration,
            epsilon: self.planner.epsilon,
            plan_particles: self.planner.plan_particles,
        }
    }

    /// Loads the configured table, or generates the synthetic one.
    ///
    /// `override_path` takes precedence over `observation.table`.
    pub fn observation_table(&self, override_path: Option<&Path>) -> Result<ObservationTable> {
        match override_path.or(self.observation.table.as_deref()) {
            Some(path) => ObservationTable::load(path),
            None => build_synthetic_table(&self.observation.synthetic_params()),
        }
    }

    pub fn episode_setup(&self, table: Arc<ObservationTable>) -> Result<EpisodeSetup> {
        self.validate()?;
        let dt = TimeStep::new(self.motion.dt)?;
        let robot_noise = self.robot_noise.build("robot_noise")?;
        let true_source = self.source_noise.build("source_noise")?;
        let filter_source = MotionNoise {
            sigma_x: self.filter.source_sigma_x,
            sigma_y: self.filter.source_sigma_y,
            ..true_source
        };
        let grid = AoaGrid::new(self.observation.resolution)?;
        Ok(EpisodeSetup {
            room: Room::new(self.room.width, self.room.height)?,
            truth: TrueDynamics {
                robot: robot_noise,
                source: true_source,
                dt,
            },
            model: TrackingModel {
                dt,
                robot_noise,
                source_noise: filter_source,
                sensor: SensorModel::new(table, grid),
                actions: self.action_set()?,
                room: Some(Room::new(self.room.width, self.room.height)?),
            },
            robot_speed: self.motion.robot_speed,
            source_speed: self.motion.source_speed,
            num_particles: self.filter.num_particles,
            steps: self.experiment.steps,
            planner: self.planner_config(1),
            normalizer: RewardNormalizer::new(self.reward.h_lo, self.reward.h_hi)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.filter.num_particles, 1000);
        assert_eq!(c.planner.budget, 500);
        assert_eq!(c.source_noise.sigma_theta, 10.0);
        assert_eq!(c.action_set().unwrap().len(), 4);
    }

    #[test]
    fn sections_override_defaults() {
        let c = ExperimentConfig::from_toml(
            "[planner]\ngamma = 0.5\n[experiment]\npolicies = [\"mcts:7\"]\nnum_episodes = 2\n",
        )
        .unwrap();
        assert_eq!(c.planner.gamma, 0.5);
        assert_eq!(c.policies().unwrap(), vec![Policy::Mcts { horizon: 7 }]);
        assert_eq!(c.planner.budget, 500);
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_toml(text).unwrap_err() {
            Error::Config { field, .. } => field,
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of("[planner]\ngamma = 1.5\n"), "planner.gamma");
        assert_eq!(field_of("[room]\nwidth = -1.0\n"), "room");
        assert_eq!(field_of("[filter]\nnum_particles = 0\n"), "filter.num_particles");
        assert_eq!(field_of("[experiment]\npolicies = [\"greedy\"]\n"), "experiment.policies");
        assert_eq!(field_of("[reward]\nh_lo = 5.0\nh_hi = 1.0\n"), "reward.h_hi");
        assert!(field_of("[planner]\ngama = 0.5\n").contains("gama"));
        assert!(field_of("[unknown]\nx = 1\n").contains("unknown"));
    }

    #[test]
    fn setup_uses_filter_noise_for_the_model() {
        let c = ExperimentConfig::default();
        let table = Arc::new(c.observation_table(None).unwrap());
        let s = c.episode_setup(table).unwrap();
        assert_eq!(s.truth.source.sigma_x, 0.0);
        assert_eq!(s.model.source_noise.sigma_x, 0.1);
        assert_eq!(s.model.source_noise.sigma_theta, 10.0);
        assert_eq!(s.model.robot_noise.sigma_theta, 5.0);
    }
}
