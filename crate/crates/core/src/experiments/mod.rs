//! Scenario layer tying the analytic prediction to the Monte Carlo side:
//! configuration schema, comparison metrics, scenario runners, and artifact
//! emission with stable formats.

pub mod compare;
pub mod output;
pub mod runners;

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::brown::{DeterministicPart, GridSpec, OperatorModel};
use crate::error::{Error, Result};
use crate::measures::AtomicMeasure;
use crate::randmat::{ASpec, EnsembleSpec};

pub use compare::{compare_esd_to_brown, energy_distance, sample_field_cloud, EsdComparison};
pub use runners::{
    run_assumption_audit, run_brown, run_compare, run_convolve, run_jordan, run_local_law,
    run_local_window, run_lsv, run_simulate,
};

/// Which experiment a config describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SingleRing,
    DeformedHermitian,
    DeformedUnitary,
    Jordan,
    LocalLaw,
    LocalWindow,
    LsvTail,
    AssumptionAudit,
    Convolve,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::SingleRing => "single_ring",
            ScenarioKind::DeformedHermitian => "deformed_hermitian",
            ScenarioKind::DeformedUnitary => "deformed_unitary",
            ScenarioKind::Jordan => "jordan",
            ScenarioKind::LocalLaw => "local_law",
            ScenarioKind::LocalWindow => "local_window",
            ScenarioKind::LsvTail => "lsv_tail",
            ScenarioKind::AssumptionAudit => "assumption_audit",
            ScenarioKind::Convolve => "convolve",
        }
    }
}

/// Square grid description for field construction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    pub center: [f64; 2],
    pub half_side: f64,
}

impl GridConfig {
    pub fn to_grid(self) -> Result<GridSpec> {
        GridSpec::square(
            self.n,
            Complex64::new(self.center[0], self.center[1]),
            self.half_side,
        )
    }
}

/// Solver overrides (defaults live in the solver itself).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

/// Comparison thresholds; every one is a declared artifact constant.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Points per cloud for the energy statistic.
    pub cloud_points: usize,
    pub radial_ks_threshold: f64,
    pub angular_ks_threshold: f64,
    pub energy_threshold: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            cloud_points: 10_000,
            radial_ks_threshold: 0.05,
            angular_ks_threshold: 0.05,
            energy_threshold: 0.05,
        }
    }
}

/// Inputs for the free-convolution subcommand: two symmetric laws given by
/// their nonnegative halves as (position, mass) rows, and an output grid for
/// the density.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvolveConfig {
    pub mu1: Vec<[f64; 2]>,
    pub mu2: Vec<[f64; 2]>,
    pub x_min: f64,
    pub x_max: f64,
    pub x_count: usize,
}

/// One scenario: kind plus the sections the matching runner needs. Unused
/// sections are permitted and ignored so one file can drive several
/// subcommands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub ensemble: Option<EnsembleSpec>,
    /// Dimension sweep for scaling studies; overrides ensemble.n per entry.
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    /// Probe points lambda as [re, im] pairs.
    #[serde(default)]
    pub probes: Option<Vec<[f64; 2]>>,
    /// Spectral parameter for subordination / local-law probes.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Window exponent for local averages, in (0, 1/2).
    #[serde(default)]
    pub beta: Option<f64>,
    /// Window center [re, im]; defaults to the annulus mid-radius.
    #[serde(default)]
    pub window_center: Option<[f64; 2]>,
    /// Bump amplitude for the window functional (0 gives the null check).
    #[serde(default)]
    pub bump_amplitude: Option<f64>,
    /// Audit exponent: eta sweeps [n^-kappa1, 1].
    #[serde(default)]
    pub kappa1: Option<f64>,
    /// Declared bound the audited constant must stay under, when known.
    #[serde(default)]
    pub kappa2_bound: Option<f64>,
    /// Thresholds for least-singular-value tail curves.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default)]
    pub convolve: Option<ConvolveConfig>,
    /// Output directory; the CLI --out flag overrides it.
    #[serde(default)]
    pub output: Option<String>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed scenario config: {e}")))?;
        Ok(cfg)
    }

    pub fn ensemble(&self) -> Result<&EnsembleSpec> {
        self.ensemble
            .as_ref()
            .ok_or_else(|| Error::Config("config is missing the ensemble section".into()))
    }

    pub fn probe_points(&self) -> Vec<Complex64> {
        self.probes
            .as_ref()
            .map(|ps| ps.iter().map(|p| Complex64::new(p[0], p[1])).collect())
            .unwrap_or_default()
    }
}

/// The operator model matching an ensemble: same Sigma generator, and the
/// deterministic part mapped to its large-N *-distribution limit.
pub fn model_for(spec: &EnsembleSpec) -> Result<OperatorModel> {
    let sigma = spec.sigma_law()?;
    let part = match &spec.a {
        ASpec::Zero => DeterministicPart::ScalarZero,
        ASpec::HermitianDiag { values } => {
            let mut diag = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                diag.push(values[i % values.len()]);
            }
            DeterministicPart::Hermitian(AtomicMeasure::from_samples(&diag)?)
        }
        // Both the cyclic shift and the plain shift block have the Haar
        // unitary as their limiting *-distribution.
        ASpec::UnitaryPerm | ASpec::JordanBlock => DeterministicPart::HaarUnitary,
        ASpec::File { .. } => DeterministicPart::General(spec.a_matrix()?),
    };
    OperatorModel::new(sigma, part)
}

/// Applies solver overrides from a config onto a model.
pub fn apply_solver_config(model: &mut OperatorModel, cfg: Option<SolverConfig>) {
    if let Some(c) = cfg {
        if let Some(tol) = c.tol {
            model.solver.tol = tol;
        }
        if let Some(mi) = c.max_iter {
            model.solver.max_iter = mi;
        }
    }
}

/// Whether the model's spectral cloud is rotation invariant in the limit
/// (no deterministic part, or a Haar-unitary one).
pub fn rotation_invariant(model: &OperatorModel) -> bool {
    matches!(
        model.deterministic_part(),
        DeterministicPart::ScalarZero | DeterministicPart::HaarUnitary
    )
}

/// Provenance block every report carries.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub package_version: String,
    /// The full resolved configuration the run executed.
    pub config: serde_json::Value,
}

/// Self-contained result of one scenario run: named metrics, pass flags
/// that reference those metrics, timing, and provenance.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub metrics: BTreeMap<String, f64>,
    pub passes: BTreeMap<String, bool>,
    pub timing_seconds: f64,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn new(kind: ScenarioKind, seed: u64, config: &ScenarioConfig) -> Self {
        RunReport {
            scenario: kind.as_str().to_string(),
            metrics: BTreeMap::new(),
            passes: BTreeMap::new(),
            timing_seconds: 0.0,
            provenance: Provenance {
                seed,
                package_version: env!("CARGO_PKG_VERSION").to_string(),
                config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            },
        }
    }

    /// Records a metric without a pass flag.
    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// Records a metric together with its pass flag, keeping the invariant
    /// that every flagged name is present in the metrics map.
    pub fn checked_metric(&mut self, name: &str, value: f64, pass: bool) {
        self.metrics.insert(name.to_string(), value);
        self.passes.insert(name.to_string(), pass);
    }

    pub fn all_passed(&self) -> bool {
        self.passes.values().all(|&p| p)
    }
}
