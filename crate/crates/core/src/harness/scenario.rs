use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::controllers::{ClfCbfSpec, MpcSpec, Reference};
use crate::dynamics::Plant;
use crate::errbound::PsoConfig;
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::misolver::Budget;
use crate::relu_net::{Architecture, TrainConfig};

/// How the surrogate network is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    /// Half-widths of the state part of the sampling box `T`.
    pub state_radius: Vec<f64>,
    /// Half-widths of the virtual-input part of `T`.
    pub input_radius: Vec<f64>,
    pub samples_per_axis: usize,
    pub layers: usize,
    pub width: usize,
    /// Pre-trained network; relative paths are resolved against the
    /// scenario file. Training is skipped when set.
    #[serde(default)]
    pub network: Option<PathBuf>,
    #[serde(default)]
    pub optimizer: TrainConfig,
}

impl TrainingSpec {
    pub fn state_box(&self) -> Result<BoxDomain> {
        BoxDomain::symmetric(&self.state_radius)
    }

    pub fn input_box(&self) -> Result<BoxDomain> {
        BoxDomain::symmetric(&self.input_radius)
    }

    /// `T = X_z × V`.
    pub fn domain(&self) -> Result<BoxDomain> {
        Ok(self.state_box()?.product(&self.input_box()?))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            layers: self.layers,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSpec {
    pub pso: PsoConfig,
    /// Validation grid density as a multiple of the training `n_s`.
    pub validation_factor: usize,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self {
            pso: PsoConfig::default(),
            validation_factor: 3,
        }
    }
}

/// MPC settings; `X_z` defaults to the state part of the training box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub reference: Reference,
    #[serde(default)]
    pub state_box: Option<BoxDomain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerConfig {
    ClfCbf(ClfCbfSpec),
    Mpc(MpcConfig),
}

impl ControllerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerConfig::ClfCbf(_) => "clf_cbf",
            ControllerConfig::Mpc(_) => "mpc",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_nodes: Option<usize>,
    pub time_limit_ms: Option<u64>,
}

impl SolverConfig {
    pub fn budget(&self) -> Budget {
        Budget {
            max_nodes: self.max_nodes,
            time_limit: self.time_limit_ms.map(Duration::from_millis),
        }
    }
}

/// One closed-loop study: plant, surrogate, controller and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub plant: Plant,
    /// `z(0)` in flat coordinates.
    pub initial_state: Vec<f64>,
    pub duration: f64,
    pub sample_time: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Default for the training and PSO seeds when the file leaves them out.
    #[serde(default)]
    pub seed: u64,
    pub training: TrainingSpec,
    #[serde(default)]
    pub bound: BoundSpec,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_substeps() -> usize {
    10
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        let has_seed = |section: &str, sub: &str| {
            raw.get(section)
                .and_then(|t| t.get(sub))
                .and_then(|t| t.get("seed"))
                .is_some()
        };
        let (train_seeded, pso_seeded) =
            (has_seed("training", "optimizer"), has_seed("bound", "pso"));
        let mut s: Scenario = raw
            .try_into()
            .map_err(|e: toml::de::Error| Error::Scenario(e.to_string()))?;
        if !train_seeded {
            s.training.optimizer.seed = s.seed;
        }
        if !pso_seeded {
            s.bound.pso.seed = s.seed;
        }
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario file; a relative network path is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::from_toml(&text)?;
        if let Some(net) = &s.training.network {
            if net.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                s.training.network = Some(base.join(net));
            }
        }
        if let Some(net) = &s.training.network {
            if !net.exists() {
                return Err(Error::Scenario(format!(
                    "network file {} does not exist",
                    net.display()
                )));
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    /// Sets every seed (training, PSO, scenario) from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.optimizer.seed = seed;
        self.bound.pso.seed = seed;
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.sample_time).round() as usize
    }

    /// `X_z` used by the controller.
    pub fn state_box(&self) -> Result<BoxDomain> {
        match &self.controller {
            ControllerConfig::Mpc(MpcConfig {
                state_box: Some(b), ..
            }) => Ok(b.clone()),
            _ => self.training.state_box(),
        }
    }

    pub fn mpc_spec(&self) -> Result<Option<MpcSpec>> {
        match &self.controller {
            ControllerConfig::Mpc(c) => Ok(Some(MpcSpec {
                horizon: c.horizon,
                q: c.q.clone(),
                r: c.r.clone(),
                state_box: self.state_box()?,
                reference: c.reference.clone(),
            })),
            ControllerConfig::ClfCbf(_) => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.state_dim();
        let m = self.plant.input_dim();
        let bad = |msg: String| Err(Error::Scenario(msg));
        if self.initial_state.len() != n {
            return bad(format!(
                "initial_state needs {n} entries, got {}",
                self.initial_state.len()
            ));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return bad(format!(
                "duration must be non-negative, got {}",
                self.duration
            ));
        }
        if !(self.sample_time > 0.0) {
            return bad(format!(
                "sample_time must be positive, got {}",
                self.sample_time
            ));
        }
        if self.substeps < 1 {
            return bad("substeps must be at least 1".into());
        }
        let t = &self.training;
        if t.state_radius.len() != n || t.input_radius.len() != m {
            return bad(format!(
                "training radii must have {n} state and {m} input entries"
            ));
        }
        if t.state_radius
            .iter()
            .chain(&t.input_radius)
            .any(|r| !(*r > 0.0 && r.is_finite()))
        {
            return bad("training radii must be positive and finite".into());
        }
        if t.samples_per_axis < 2 {
            return bad("samples_per_axis must be at least 2".into());
        }
        if t.layers < 2 || t.width < 1 {
            return bad("network needs layers >= 2 and width >= 1".into());
        }
        if self.bound.validation_factor < 2 {
            return bad("validation_factor must be at least 2".into());
        }
        self.bound.pso.validate()?;
        match &self.controller {
            ControllerConfig::ClfCbf(spec) => spec.validate(n, m)?,
            ControllerConfig::Mpc(_) => {
                self.mpc_spec()?.expect("mpc").validate(n, m)?;
            }
        }
        if !self
            .training
            .state_box()?
            .contains(&self.initial_state, 0.0)
        {
            return bad("initial_state lies outside the training box".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
initial_state = [0.0, 1.0]
duration = 0.0
sample_time = 0.01

[plant]
kind = "msd"
u_max = 5.0

[training]
state_radius = [5.0, 5.0]
input_radius = [10.0]
samples_per_axis = 4
layers = 2
width = 3

[controller]
kind = "clf_cbf"
p = [[4.58, 10.0], [10.0, 45.83]]
obstacle_center = [1.5, 1.0]
obstacle_radius = 0.8
kappa = 4.0
beta = 0.001
cost = "Qcost"
feedback_gain = [[4.47, 3.37]]
"#;

    #[test]
    fn parses_minimal_scenario_with_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.substeps, 10);
        assert_eq!(s.bound.validation_factor, 3);
        assert_eq!(s.bound.pso.particles, 200);
        assert_eq!(s.steps(), 0);
        assert_eq!(s.controller.name(), "clf_cbf");
        let back = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_initial_state_outside_box() {
        let text = MINIMAL.replace("initial_state = [0.0, 1.0]", "initial_state = [0.0, 6.0]");
        assert!(matches!(
            Scenario::from_toml(&text),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn top_level_seed_fills_unset_stage_seeds() {
        let text = MINIMAL.replace("name = \"tiny\"", "name = \"tiny\"\nseed = 3")
            + "\n[bound.pso]\nseed = 5\n";
        let s = Scenario::from_toml(&text).unwrap();
        assert_eq!(
            (s.seed, s.training.optimizer.seed, s.bound.pso.seed),
            (3, 3, 5)
        );
    }

    #[test]
    fn reseed_touches_every_seed() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.reseed(99);
        assert_eq!(
            (s.seed, s.training.optimizer.seed, s.bound.pso.seed),
            (99, 99, 99)
        );
    }
}
