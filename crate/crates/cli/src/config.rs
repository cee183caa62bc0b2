//! Experiment configuration: a sectioned TOML file deserialized into
//! [`ExperimentConfig`], validated field by field before anything runs.

use std::path::PathBuf;

use ge_remote::dp_finite::DEFAULT_NODE_BUDGET;
use ge_remote::dp_threshold::{Ar1Problem, SolverGrid, ThresholdMode, DEFAULT_N_POINTS, STRUCTURE_TOL};
use ge_remote::models::{
    Ar1Source, DistortionFn, FiniteDistortion, FiniteMarkovSource, GilbertElliottChannel, NoiseFamily, NoiseSpec,
};
use ge_remote::oracle::{Granularity, TinyInstance};
use ge_remote::simulator::FiniteModel;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: f64,
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub distortion: DistortionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Ar1 { a: f64, noise: NoiseFamily, scale: f64 },
    Finite { transition: Vec<Vec<f64>>, initial: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// `q[r][s]`, state 0 = OFF, 1 = ON.
    pub q: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistortionConfig {
    Squared,
    Absolute,
    EvenPower { p: f64 },
    ZeroOne,
    Matrix { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub horizon: usize,
    /// Defaults to `20 * error_scale` of the AR(1) problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default)]
    pub threshold_mode: ThresholdModeConfig,
    #[serde(default = "default_structure_tol")]
    pub structure_tol: f64,
    #[serde(default = "default_node_budget")]
    pub node_budget: usize,
    #[serde(default)]
    pub granularity: GranularityConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 0,
            half_width: None,
            n_points: DEFAULT_N_POINTS,
            threshold_mode: ThresholdModeConfig::default(),
            structure_tol: STRUCTURE_TOL,
            node_budget: DEFAULT_NODE_BUDGET,
            granularity: GranularityConfig::default(),
        }
    }
}

fn default_n_points() -> usize {
    DEFAULT_N_POINTS
}

fn default_structure_tol() -> f64 {
    STRUCTURE_TOL
}

fn default_node_budget() -> usize {
    DEFAULT_NODE_BUDGET
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdModeConfig {
    Grid,
    #[default]
    Refined,
}

impl From<ThresholdModeConfig> for ThresholdMode {
    fn from(m: ThresholdModeConfig) -> Self {
        match m {
            ThresholdModeConfig::Grid => ThresholdMode::Grid,
            ThresholdModeConfig::Refined => ThresholdMode::Refined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GranularityConfig {
    Full,
    #[default]
    Restricted,
}

impl From<GranularityConfig> for Granularity {
    fn from(g: GranularityConfig) -> Self {
        match g {
            GranularityConfig::Full => Granularity::Full,
            GranularityConfig::Restricted => Granularity::Restricted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    #[serde(default = "default_n_reps")]
    pub n_reps: usize,
    /// Distribution of the channel state before the first use. Defaults to
    /// the stationary distribution of `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_channel: Option<[f64; 2]>,
    /// Number of trajectories written to CSV by `simulate`.
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default = "default_deltas")]
    pub perturbation_deltas: Vec<f64>,
}

fn default_n_reps() -> usize {
    100_000
}

fn default_deltas() -> Vec<f64> {
    vec![0.25, -0.25]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Falls back to `$GE_REMOTE_OUT`, then `ge-remote-out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<Format>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub horizon: Option<usize>,
    pub n_reps: Option<usize>,
    pub n_points: Option<usize>,
    pub out: Option<PathBuf>,
}

struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, field: impl AsRef<str>, msg: impl AsRef<str>) {
        self.0.push(format!("{}: {}", field.as_ref(), msg.as_ref()));
    }

    fn prob_row(&mut self, field: &str, row: &[f64]) {
        if let Some(bad) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            self.push(field, format!("entries must be nonnegative and finite, found {bad}"));
            return;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            self.push(field, format!("row sums to {}, expected 1", (sum * 1e12).round() / 1e12));
        }
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.push(field, format!("must be positive and finite, got {v}"));
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Ok(Self::parse(&text)?)
    }

    /// Canonical TOML serialization.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.simulation.seed = s;
        }
        if let Some(l) = o.lambda {
            self.model.lambda = l;
        }
        if let Some(h) = o.horizon {
            self.solver.horizon = h;
        }
        if let Some(n) = o.n_reps {
            self.simulation.n_reps = n;
        }
        if let Some(n) = o.n_points {
            self.solver.n_points = n;
        }
        if let Some(d) = &o.out {
            self.output.dir = Some(d.clone());
        }
    }

    pub fn is_ar1(&self) -> bool {
        matches!(self.model.source, SourceConfig::Ar1 { .. })
    }

    /// Every problem with the configuration, as `field: message` lines.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut is = Issues(Vec::new());
        let m = &self.model;
        if !(m.lambda.is_finite() && m.lambda >= 0.0) {
            is.push("model.lambda", format!("must be nonnegative and finite, got {}", m.lambda));
        }
        for (r, row) in m.channel.q.iter().enumerate() {
            is.prob_row(&format!("model.channel.q[{r}]"), row);
        }
        if let Some(init) = &self.simulation.initial_channel {
            is.prob_row("simulation.initial_channel", init);
        }
        match (&m.source, &m.distortion) {
            (SourceConfig::Ar1 { a, scale, .. }, d) => {
                if !a.is_finite() || *a == 0.0 {
                    is.push("model.source.a", format!("must be finite and nonzero, got {a}"));
                }
                is.positive("model.source.scale", *scale);
                match d {
                    DistortionConfig::EvenPower { p } => is.positive("model.distortion.p", *p),
                    DistortionConfig::ZeroOne | DistortionConfig::Matrix { .. } => {
                        is.push("model.distortion.kind", "finite-alphabet distortion with an AR(1) source")
                    }
                    _ => {}
                }
            }
            (SourceConfig::Finite { transition, initial }, d) => {
                let n = initial.len();
                if n == 0 {
                    is.push("model.source.initial", "must have at least one state");
                }
                is.prob_row("model.source.initial", initial);
                if transition.len() != n {
                    is.push("model.source.transition", format!("has {} rows, expected {n}", transition.len()));
                }
                for (r, row) in transition.iter().enumerate() {
                    let f = format!("model.source.transition[{r}]");
                    if row.len() != n {
                        is.push(&f, format!("has {} entries, expected {n}", row.len()));
                    } else {
                        is.prob_row(&f, row);
                    }
                }
                match d {
                    DistortionConfig::ZeroOne => {}
                    DistortionConfig::Matrix { matrix } => {
                        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                            is.push("model.distortion.matrix", format!("must be {n} x {n}"));
                        }
                        if matrix.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                            is.push("model.distortion.matrix", "entries must be nonnegative and finite");
                        }
                    }
                    _ => is.push("model.distortion.kind", "real-valued distortion with a finite source"),
                }
            }
        }
        let s = &self.solver;
        if let Some(l) = s.half_width {
            is.positive("solver.half_width", l);
        }
        if s.n_points < 3 || s.n_points.is_multiple_of(2) {
            is.push("solver.n_points", format!("must be odd and at least 3, got {}", s.n_points));
        }
        is.positive("solver.structure_tol", s.structure_tol);
        if self.simulation.n_reps < 2 {
            is.push("simulation.n_reps", format!("must be at least 2, got {}", self.simulation.n_reps));
        }
        for (i, d) in self.simulation.perturbation_deltas.iter().enumerate() {
            if !d.is_finite() {
                is.push(format!("simulation.perturbation_deltas[{i}]"), "must be finite");
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.lambdas.is_empty() {
                is.push("sweep.lambdas", "must not be empty");
            }
            if sw.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                is.push("sweep.lambdas", "values must be nonnegative and finite");
            }
            if sw.lambdas.windows(2).any(|w| w[1] < w[0]) {
                is.push("sweep.lambdas", "values must be sorted ascending");
            }
        }
        if is.0.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(is.0.join("\n")))
        }
    }

    /// Fills every defaulted field that depends on other fields, so the
    /// echoed config reproduces the run on its own.
    pub fn resolve(&mut self) {
        if self.simulation.initial_channel.is_none() {
            let ch = GilbertElliottChannel { q: self.model.channel.q, initial: [0.5, 0.5] };
            self.simulation.initial_channel = Some(ch.stationary());
        }
        if self.is_ar1() && self.solver.half_width.is_none() {
            if let Ok(p) = self.ar1_problem() {
                self.solver.half_width = Some(SolverGrid::default_for(&p).half_width);
            }
        }
        if self.output.formats.is_none() {
            self.output.formats = Some(vec![Format::Json, Format::Csv]);
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.as_ref().is_none_or(|v| v.contains(&f))
    }

    pub fn channel(&self) -> Result<GilbertElliottChannel, CliError> {
        let initial = match self.simulation.initial_channel {
            Some(i) => i,
            None => GilbertElliottChannel { q: self.model.channel.q, initial: [0.5, 0.5] }.stationary(),
        };
        Ok(GilbertElliottChannel::new(self.model.channel.q, initial)?)
    }

    pub fn ar1_problem(&self) -> Result<Ar1Problem, CliError> {
        let SourceConfig::Ar1 { a, noise, scale } = &self.model.source else {
            return Err(CliError::Validation("model.source.kind: this command needs an ar1 source".into()));
        };
        let distortion = match self.model.distortion {
            DistortionConfig::Squared => DistortionFn::Squared,
            DistortionConfig::Absolute => DistortionFn::Absolute,
            DistortionConfig::EvenPower { p } => DistortionFn::EvenPower { p },
            _ => return Err(CliError::Validation("model.distortion.kind: finite-alphabet distortion with an AR(1) source".into())),
        };
        let p = Ar1Problem {
            source: Ar1Source::new(*a, NoiseSpec::new(*noise, *scale)?)?,
            channel: self.channel()?,
            distortion,
            lambda: self.model.lambda,
            horizon: self.solver.horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn solver_grid(&self) -> Result<SolverGrid, CliError> {
        let p = self.ar1_problem()?;
        let l = self.solver.half_width.unwrap_or_else(|| SolverGrid::default_for(&p).half_width);
        Ok(SolverGrid::new(l, self.solver.n_points)?)
    }

    pub fn finite_model(&self) -> Result<FiniteModel, CliError> {
        let SourceConfig::Finite { transition, initial } = &self.model.source else {
            return Err(CliError::Validation("model.source.kind: this command needs a finite source".into()));
        };
        let source = FiniteMarkovSource::new(transition.clone(), initial.clone())?;
        let distortion = match &self.model.distortion {
            DistortionConfig::ZeroOne => FiniteDistortion::zero_one(source.n_states()),
            DistortionConfig::Matrix { matrix } => FiniteDistortion::new(matrix.clone())?,
            _ => return Err(CliError::Validation("model.distortion.kind: real-valued distortion with a finite source".into())),
        };
        Ok(FiniteModel { source, channel: self.channel()?, distortion, lambda: self.model.lambda })
    }

    pub fn tiny_instance(&self) -> Result<TinyInstance, CliError> {
        let m = self.finite_model()?;
        let inst = TinyInstance {
            source: m.source,
            channel: m.channel,
            distortion: m.distortion,
            lambda: m.lambda,
            horizon: self.solver.horizon,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Built-in instances usable in place of a config file.
pub fn named_instance(name: &str) -> Option<&'static str> {
    match name {
        "calibration" => Some(CALIBRATION),
        "random-walk" => Some(RANDOM_WALK),
        _ => None,
    }
}

pub const INSTANCE_NAMES: &[&str] = &["calibration", "random-walk"];

const CALIBRATION: &str = r#"
[model]
lambda = 0.4

[model.source]
kind = "finite"
transition = [[0.9, 0.1], [0.2, 0.8]]
initial = [0.5, 0.5]

[model.channel]
q = [[0.7, 0.3], [0.2, 0.8]]

[model.distortion]
kind = "zero_one"

[solver]
horizon = 2

[simulation]
seed = 1
n_reps = 100000
initial_channel = [0.4, 0.6]
"#;

const RANDOM_WALK: &str = r#"
[model]
lambda = 1.0

[model.source]
kind = "ar1"
a = 1.0
noise = "gaussian"
scale = 1.0

[model.channel]
q = [[0.7, 0.3], [0.2, 0.8]]

[model.distortion]
kind = "squared"

[solver]
horizon = 4
half_width = 60.0
n_points = 4097

[simulation]
seed = 1
n_reps = 100000
initial_channel = [0.4, 0.6]
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_instances_parse_and_validate() {
        for name in INSTANCE_NAMES {
            let cfg = ExperimentConfig::parse(named_instance(name).unwrap()).unwrap();
            cfg.validate().unwrap();
        }
        assert!(named_instance("nope").is_none());
    }

    #[test]
    fn round_trip_is_canonical() {
        for name in INSTANCE_NAMES {
            let cfg = ExperimentConfig::parse(named_instance(name).unwrap()).unwrap();
            let once = cfg.to_toml();
            let back = ExperimentConfig::parse(&once).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml(), once);
        }
    }

    #[test]
    fn malformed_row_is_named() {
        let text = named_instance("calibration").unwrap().replace("[[0.7, 0.3], [0.2, 0.8]]", "[[0.7, 0.3], [0.2, 0.7]]");
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("model.channel.q[1]"), "{err}");
        assert!(err.contains("0.9"), "{err}");
        assert!(!err.contains("q[0]"));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = named_instance("calibration").unwrap().replace("lambda = 0.4", "lambda = 0.4\nlamda = 1");
        assert!(matches!(ExperimentConfig::parse(&text), Err(CliError::Validation(_))));
    }

    #[test]
    fn overrides_and_resolution() {
        let mut cfg = ExperimentConfig::parse(named_instance("random-walk").unwrap()).unwrap();
        cfg.apply(&Overrides { seed: Some(9), lambda: Some(2.0), horizon: Some(3), ..Overrides::default() });
        assert_eq!((cfg.simulation.seed, cfg.model.lambda, cfg.solver.horizon), (9, 2.0, 3));
        cfg.simulation.initial_channel = None;
        cfg.resolve();
        let st = cfg.simulation.initial_channel.unwrap();
        assert!((st[0] - 0.4).abs() < 1e-12 && (st[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn mismatched_kinds_rejected() {
        let text = named_instance("random-walk").unwrap().replace("kind = \"squared\"", "kind = \"zero_one\"");
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("model.distortion.kind"));
    }

    #[test]
    fn unsorted_sweep_rejected() {
        let mut cfg = ExperimentConfig::parse(named_instance("random-walk").unwrap()).unwrap();
        cfg.sweep = Some(SweepConfig { lambdas: vec![1.0, 0.5] });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("sweep.lambdas"));
    }
}
