//! Scenario files: turbine, wake, topology, fault and solver settings in one
//! JSON document. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::aggregate::{DetailedFarm, EquivalentOptions};
use crate::control::TurbineParams;
use crate::error::{Error, Result};
use crate::feeder::{self, FarmTopology, Feeder, SolverOptions};
use crate::simulate::{FaultScenario, SimOptions};
use crate::wake::{draw_inflow, feeder_speeds, WakeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub turbine: TurbineParams,
    pub wake: WakeSection,
    pub topology: TopologySection,
    pub fault: FaultScenario,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WakeSection {
    #[serde(default)]
    pub params: WakeParams,
    pub inflow: Inflow,
}

/// Where the wind speeds come from. Free-stream speeds decay along each
/// feeder, the first listed turbine being the most upstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Inflow {
    /// Free-stream speed of each feeder drawn uniformly from `[min, max]`.
    Random { seed: u64, min: f64, max: f64 },
    /// Free-stream speed given per feeder.
    PerFeeder { speeds: Vec<f64> },
    /// Speed of every turbine, wake already included.
    Explicit { speeds: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySection {
    /// Chains of evenly spaced turbines.
    Chains(ChainLayout),
    Explicit(FarmTopology),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainLayout {
    /// Number of turbines on each feeder.
    pub feeder_sizes: Vec<usize>,
    /// Cable from the collector bus to the first turbine.
    #[serde(with = "feeder::impedance")]
    pub link_z: Complex64,
    /// Cable between neighbouring turbines.
    #[serde(with = "feeder::impedance")]
    pub step_z: Complex64,
    #[serde(with = "feeder::impedance")]
    pub pcc_transformer_z: Complex64,
    #[serde(with = "feeder::impedance")]
    pub grid_thevenin_z: Complex64,
}

impl ChainLayout {
    pub fn topology(&self) -> FarmTopology {
        FarmTopology {
            feeders: self
                .feeder_sizes
                .iter()
                .map(|&n| Feeder::chain(n, self.link_z, self.step_z))
                .collect(),
            pcc_transformer_z: self.pcc_transformer_z,
            grid_thevenin_z: self.grid_thevenin_z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub terminal: SolverOptions,
    pub simulation: SolverOptions,
    pub pcc_tol: f64,
    pub pcc_max_iter: usize,
    /// Classify with unit pre-fault voltage instead of the solved one.
    pub unity_e: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let eq = EquivalentOptions::default();
        Self {
            terminal: eq.terminal,
            simulation: eq.sim.network,
            pcc_tol: eq.pcc_tol,
            pcc_max_iter: eq.pcc_max_iter,
            unity_e: eq.unity_e,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory for generated files; relative paths resolve against the
    /// working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: ScenarioFile = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn topology(&self) -> FarmTopology {
        match &self.topology {
            TopologySection::Chains(c) => c.topology(),
            TopologySection::Explicit(t) => t.clone(),
        }
    }

    /// Checks everything that can be checked without solving anything.
    pub fn validate(&self) -> Result<()> {
        self.turbine.validate().map_err(|e| schema(e.to_string()))?;
        self.wake.params.validate().map_err(|e| schema(e.to_string()))?;
        self.fault.validate().map_err(|e| schema(e.to_string()))?;
        let topology = self.topology();
        if topology.feeders.is_empty() {
            return Err(schema("topology has no feeders"));
        }
        crate::feeder::Network::new(&topology).map_err(|e| schema(e.to_string()))?;
        let n_feeders = topology.feeders.len();
        let n_turbines = topology.n_turbines();
        let check_speeds = |speeds: &[f64], want: usize, what: &str| {
            if speeds.len() != want {
                return Err(schema(format!("{what}: {} speeds for {want} entries", speeds.len())));
            }
            if speeds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(schema(format!("{what}: wind speeds must be finite and non-negative")));
            }
            Ok(())
        };
        match &self.wake.inflow {
            Inflow::Random { min, max, .. } => {
                if !(min.is_finite() && max.is_finite() && *min >= 0.0 && min <= max) {
                    return Err(schema(format!("random inflow range [{min}, {max}] is invalid")));
                }
            }
            Inflow::PerFeeder { speeds } => check_speeds(speeds, n_feeders, "per-feeder inflow")?,
            Inflow::Explicit { speeds } => check_speeds(speeds, n_turbines, "explicit inflow")?,
        }
        let s = &self.solver;
        if !(s.terminal.tol > 0.0 && s.simulation.tol > 0.0 && s.pcc_tol > 0.0) {
            return Err(schema("solver tolerances must be positive"));
        }
        if s.terminal.max_iter == 0 || s.simulation.max_iter == 0 || s.pcc_max_iter == 0 {
            return Err(schema("iteration limits must be positive"));
        }
        Ok(())
    }

    /// Wind speed of every turbine in turbine order.
    pub fn speeds(&self) -> Vec<f64> {
        let topology = self.topology();
        let p = &self.wake.params;
        match &self.wake.inflow {
            Inflow::Explicit { speeds } => speeds.clone(),
            Inflow::PerFeeder { speeds } => topology
                .feeders
                .iter()
                .zip(speeds)
                .flat_map(|(f, &v)| feeder_speeds(v, f.turbine_nodes.len(), p))
                .collect(),
            Inflow::Random { seed, min, max } => topology
                .feeders
                .iter()
                .enumerate()
                .flat_map(|(i, f)| feeder_speeds(draw_inflow(*seed, i, *min, *max), f.turbine_nodes.len(), p))
                .collect(),
        }
    }

    pub fn equivalent_options(&self) -> EquivalentOptions {
        EquivalentOptions {
            unity_e: self.solver.unity_e,
            terminal: self.solver.terminal,
            pcc_tol: self.solver.pcc_tol,
            pcc_max_iter: self.solver.pcc_max_iter,
            sim: self.sim_options(false),
        }
    }

    pub fn sim_options(&self, record_units: bool) -> SimOptions {
        SimOptions {
            network: self.solver.simulation,
            record_units,
        }
    }

    /// Per-turbine farm with its pre-fault operating point solved.
    pub fn detailed_farm(&self) -> Result<DetailedFarm> {
        DetailedFarm::new(
            self.topology(),
            self.turbine.clone(),
            self.speeds(),
            &self.fault,
            self.solver.terminal,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "name": "sample",
        "wake": { "inflow": { "random": { "seed": 3, "min": 9.0, "max": 11.0 } } },
        "topology": { "chains": {
            "feeder_sizes": [3, 2],
            "link_z": { "r": 0.0012, "x": 0.0024 },
            "step_z": { "r": 0.0006, "x": 0.0012 },
            "pcc_transformer_z": { "r": 0.0, "x": 0.003 },
            "grid_thevenin_z": { "r": 0.0, "x": 0.002 }
        } },
        "fault": { "e_source_prefault": 1.0, "e_source_fault": 0.3,
                   "t_fault": 0.1, "t_clear": 0.2, "t_end": 0.5, "dt": 0.001 }
    }"#;

    #[test]
    fn parse_and_round_trip() {
        let s = ScenarioFile::from_json(SAMPLE).unwrap();
        assert_eq!(s.turbine, TurbineParams::default());
        let speeds = s.speeds();
        assert_eq!(speeds.len(), 5);
        assert!(speeds[1] < speeds[0]);
        let again = ScenarioFile::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.speeds(), speeds);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SAMPLE.replace("\"name\"", "\"nmae\"");
        assert!(matches!(ScenarioFile::from_json(&bad), Err(Error::Schema(_))));
        let bad = SAMPLE.replace("\"dt\": 0.001", "\"dt\": 0.001, \"extra\": 1");
        assert!(matches!(ScenarioFile::from_json(&bad), Err(Error::Schema(_))));
    }

    #[test]
    fn semantic_checks() {
        let bad = SAMPLE.replace("\"e_source_fault\": 0.3", "\"e_source_fault\": 1.3");
        assert!(matches!(ScenarioFile::from_json(&bad), Err(Error::Schema(_))));
        let bad = SAMPLE.replace(
            r#"{ "random": { "seed": 3, "min": 9.0, "max": 11.0 } }"#,
            r#"{ "per_feeder": { "speeds": [10.0] } }"#,
        );
        assert!(matches!(ScenarioFile::from_json(&bad), Err(Error::Schema(_))));
        let ok = SAMPLE.replace(
            r#"{ "random": { "seed": 3, "min": 9.0, "max": 11.0 } }"#,
            r#"{ "explicit": { "speeds": [10.0, 9.0, 8.0, 11.0, 7.0] } }"#,
        );
        assert_eq!(ScenarioFile::from_json(&ok).unwrap().speeds(), vec![10.0, 9.0, 8.0, 11.0, 7.0]);
    }
}
