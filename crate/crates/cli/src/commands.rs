//! One function per subcommand. Each takes a validated, resolved config and
//! an output directory, writes its artifacts and returns the lines to print.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ge_remote::dp_finite::{solve_finite_with_budget, FiniteDPSolution};
use ge_remote::dp_threshold::{
    backward_induction, check_structure, extract_thresholds, fmt_threshold, Ar1Problem, StructureReport, ThresholdSchedule,
    ValueGrid,
};
use ge_remote::models::{DistortionFn, GilbertElliottChannel};
use ge_remote::oracle::{exact_cost, exhaustive_search, profile_from_finite_solution, Granularity, TinyInstance};
use ge_remote::simulator::{monte_carlo_cost, perturbation_check, replication_rng, run_episode, simulate_finite, CostEstimate};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliError;
use crate::output::{base_dir, OutputDir};

/// Loads a file or a named instance, applies overrides, validates and fills
/// derived defaults.
pub fn load(config: Option<&Path>, instance: Option<&str>, o: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (config, instance) {
        (Some(p), None) => ExperimentConfig::from_file(p)?,
        (None, Some(name)) => {
            let text = crate::config::named_instance(name).ok_or_else(|| {
                CliError::Validation(format!("unknown instance {name:?}, expected one of {:?}", crate::config::INSTANCE_NAMES))
            })?;
            ExperimentConfig::parse(text)?
        }
        (Some(_), Some(_)) => return Err(CliError::Validation("give either --config or --instance, not both".into()).into()),
        (None, None) => return Err(CliError::Validation("one of --config or --instance is required".into()).into()),
    };
    cfg.apply(o);
    cfg.validate()?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// `<base>/<command>`, created with the config echo.
pub fn output_for(cfg: &ExperimentConfig, command: &str) -> anyhow::Result<OutputDir> {
    let dir = base_dir(cfg).join(command);
    OutputDir::create(&dir, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialValue {
    /// `J_0(0, s)` for `s = 0, 1`.
    pub per_state: [f64; 2],
    pub initial_channel: [f64; 2],
    /// Averaged over the initial channel distribution.
    pub value: f64,
}

pub struct ThresholdSolution {
    pub problem: Ar1Problem,
    pub values: ValueGrid,
    pub schedule: ThresholdSchedule,
    pub report: StructureReport,
    pub initial: InitialValue,
}

pub fn solve_threshold(cfg: &ExperimentConfig) -> Result<ThresholdSolution, CliError> {
    let problem = cfg.ar1_problem()?;
    let grid = cfg.solver_grid()?;
    let values = backward_induction(&problem, grid)?;
    let schedule = extract_thresholds(&values, cfg.solver.threshold_mode.into())?;
    let mut report = check_structure(&values, &problem.source.noise, problem.source.a);
    report.tol = cfg.solver.structure_tol;
    let c = grid.center();
    let initial = InitialValue {
        per_state: [values.j[0][0][c], values.j[0][1][c]],
        initial_channel: problem.channel.initial,
        value: values.initial_value(problem.channel.initial),
    };
    Ok(ThresholdSolution { problem, values, schedule, report, initial })
}

fn structure_summary(r: &StructureReport) -> String {
    let max_changes = r.sign_changes.iter().flatten().max().copied().unwrap_or(0);
    format!(
        "evenness {:.3e}, monotonicity {:.3e}, m0 {:.3e}, max sign changes {max_changes}",
        r.evenness_violation, r.ei_violation, r.m0_violation
    )
}

pub fn cmd_solve_threshold(cfg: &ExperimentConfig, out: &mut OutputDir) -> anyhow::Result<Vec<String>> {
    let sol = solve_threshold(cfg)?;
    out.json("thresholds.json", &sol.schedule)?;
    out.csv("thresholds.csv", |w| sol.schedule.write_csv(w))?;
    out.csv("value_grid.csv", |w| sol.values.write_csv(w))?;
    out.json("structure.json", &sol.report)?;
    out.json("value.json", &sol.initial)?;
    let mut lines = vec![format!("J0(e=0) = {}", sol.initial.value)];
    for (t, k) in sol.schedule.k.iter().enumerate() {
        lines.push(format!("k[{t}] = ({}, {})", fmt_threshold(k[0]), fmt_threshold(k[1])));
    }
    let summary = structure_summary(&sol.report);
    if !sol.report.passes() {
        return Err(CliError::Structure(summary).into());
    }
    lines.push(format!("structure: pass ({summary})"));
    Ok(lines)
}

pub fn solve_finite_cfg(cfg: &ExperimentConfig) -> Result<FiniteDPSolution, CliError> {
    let m = cfg.finite_model()?;
    Ok(solve_finite_with_budget(&m.source, &m.channel, &m.distortion, m.lambda, cfg.solver.horizon, cfg.solver.node_budget)?)
}

fn join(v: impl IntoIterator<Item = impl ToString>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn cmd_solve_finite(cfg: &ExperimentConfig, out: &mut OutputDir) -> anyhow::Result<Vec<String>> {
    let sol = solve_finite_cfg(cfg)?;
    let export = sol.export();
    out.json("solution.json", &export)?;
    out.csv("summary.csv", |w| {
        writeln!(w, "t,stage,s,pmf,value,prescription,estimate")?;
        for n in &export.nodes {
            let stage = serde_json::to_value(n.stage).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                n.t,
                stage,
                n.s,
                join(&n.pmf),
                n.value,
                n.prescription.as_ref().map(join).unwrap_or_default(),
                n.estimate.map(|e| e.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    })?;
    Ok(vec![format!("value = {}", sol.value), format!("belief nodes = {}", export.node_count)])
}

/// Where `simulate` takes its transmission rule from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    /// Solve the dynamic program first.
    Dp,
    Never,
    Always,
    File(PathBuf),
}

impl std::str::FromStr for PolicySource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "dp" => Self::Dp,
            "never" => Self::Never,
            "always" => Self::Always,
            p => Self::File(PathBuf::from(p)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub estimate: CostEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_3se: Option<bool>,
}

fn read_reference(path: &Path) -> anyhow::Result<f64> {
    let v = crate::output::read_data(path)?;
    let x = v.get("value").unwrap_or(&v);
    x.as_f64().with_context(|| format!("{}: expected a number or a \"value\" field", path.display()))
}

fn read_schedule(path: &Path) -> anyhow::Result<ThresholdSchedule> {
    let v = crate::output::read_data(path)?;
    serde_json::from_value(v).with_context(|| format!("{}: not a threshold schedule", path.display()))
}

pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    policy: &PolicySource,
    reference: Option<&Path>,
) -> anyhow::Result<Vec<String>> {
    let sim = &cfg.simulation;
    let horizon = cfg.solver.horizon;
    let mut reference = reference.map(read_reference).transpose()?;
    let estimate = if cfg.is_ar1() {
        let problem = cfg.ar1_problem()?;
        let schedule = match policy {
            PolicySource::Dp => {
                let sol = solve_threshold(cfg)?;
                reference = reference.or(Some(sol.initial.value));
                sol.schedule
            }
            PolicySource::Never => ThresholdSchedule::never(horizon),
            PolicySource::Always => ThresholdSchedule::always(horizon),
            PolicySource::File(p) => read_schedule(p)?,
        };
        if schedule.horizon() != horizon {
            return Err(CliError::Validation(format!(
                "policy horizon {} does not match solver.horizon {horizon}",
                schedule.horizon()
            ))
            .into());
        }
        let est = monte_carlo_cost(&problem, &schedule, horizon, sim.n_reps, sim.seed)?;
        if sim.trajectories > 0 {
            out.csv("trajectories.csv", |w| {
                writeln!(w, "rep,t,x,s,u,y_tag,y_value,xhat,cost")?;
                for r in 0..sim.trajectories {
                    let mut rng = replication_rng(sim.seed, r as u64);
                    let tr = run_episode(&problem, &schedule, horizon, &mut rng).map_err(std::io::Error::other)?;
                    let mut buf = Vec::new();
                    tr.write_csv(&mut buf, false)?;
                    for line in String::from_utf8_lossy(&buf).lines() {
                        writeln!(w, "{r},{line}")?;
                    }
                }
                Ok(())
            })?;
        }
        est
    } else {
        if !matches!(policy, PolicySource::Dp) {
            return Err(CliError::Validation("finite sources are simulated under the dynamic-program policy only".into()).into());
        }
        let m = cfg.finite_model()?;
        let sol = solve_finite_cfg(cfg)?;
        reference = reference.or(Some(sol.value));
        simulate_finite(&m, &sol, horizon, sim.n_reps, sim.seed)?
    };
    let within = reference.map(|r| estimate.within_3se(r));
    let result = SimulationResult { estimate, reference, within_3se: within };
    out.json("cost.json", &result)?;
    let e = &result.estimate;
    let mut lines = vec![
        format!("mean = {} ± {}", e.mean, e.std_error),
        format!("mean transmissions = {}", e.mean_transmissions),
    ];
    if let (Some(r), Some(w)) = (reference, within) {
        lines.push(format!("reference = {r}"));
        lines.push(format!("within 3 SE: {w}"));
    }
    Ok(lines)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub granularity: String,
    pub min_cost: f64,
    pub work: f64,
    pub literal_profiles_log10: f64,
    pub dp_value: f64,
    pub argmin: ge_remote::oracle::ProfileExport,
}

pub fn cmd_oracle(cfg: &ExperimentConfig, out: &mut OutputDir) -> anyhow::Result<Vec<String>> {
    let inst = cfg.tiny_instance()?;
    let g: Granularity = cfg.solver.granularity.into();
    let res = exhaustive_search(&inst, g)?;
    let dp = solve_finite_cfg(cfg)?;
    let result = OracleResult {
        granularity: format!("{:?}", g).to_lowercase(),
        min_cost: res.min_cost,
        work: res.work,
        literal_profiles_log10: res.literal_profiles_log10,
        dp_value: dp.value,
        argmin: res.argmin.export(),
    };
    out.json("oracle.json", &result)?;
    Ok(vec![
        format!("min cost ({}) = {}", result.granularity, result.min_cost),
        format!("dp value = {}", dp.value),
        format!("|gap| = {:.3e}", (dp.value - res.min_cost).abs()),
        format!("decomposed work = {:.3e}, literal profiles = 10^{:.1}", res.work, res.literal_profiles_log10),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub dp_value: f64,
    pub sim_mean: f64,
    pub sim_std_error: f64,
    pub mean_transmissions: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub dp_value_nondecreasing: bool,
    /// Within 3 combined standard errors between consecutive rows.
    pub transmissions_nonincreasing: bool,
}

pub fn sweep(cfg: &ExperimentConfig, lambdas: &[f64]) -> anyhow::Result<SweepResult> {
    if lambdas.is_empty() {
        return Err(CliError::Validation("sweep.lambdas: no values given".into()).into());
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(CliError::Validation("sweep.lambdas: values must be finite, nonnegative and sorted".into()).into());
    }
    let sim = &cfg.simulation;
    let horizon = cfg.solver.horizon;
    let mut rows = Vec::new();
    let mut se_tx = Vec::new();
    for &lambda in lambdas {
        let mut c = cfg.clone();
        c.model.lambda = lambda;
        let (dp_value, est, thresholds) = if c.is_ar1() {
            let sol = solve_threshold(&c)?;
            let est = monte_carlo_cost(&sol.problem, &sol.schedule, horizon, sim.n_reps, sim.seed)?;
            let k = sol.schedule.k.iter().map(|r| [fmt_threshold(r[0]), fmt_threshold(r[1])]).collect();
            (sol.initial.value, est, k)
        } else {
            let m = c.finite_model()?;
            let sol = solve_finite_cfg(&c)?;
            let est = simulate_finite(&m, &sol, horizon, sim.n_reps, sim.seed)?;
            (sol.value, est, Vec::new())
        };
        // standard error of the transmission count from the cost spread is
        // not available separately; bound it by the count range
        se_tx.push((horizon + 1) as f64 / (est.n_reps as f64).sqrt());
        rows.push(SweepRow {
            lambda,
            dp_value,
            sim_mean: est.mean,
            sim_std_error: est.std_error,
            mean_transmissions: est.mean_transmissions,
            thresholds,
        });
    }
    let dp_value_nondecreasing = rows.windows(2).all(|w| w[1].dp_value >= w[0].dp_value - 1e-9);
    let transmissions_nonincreasing = rows
        .windows(2)
        .zip(se_tx.windows(2))
        .all(|(w, s)| w[1].mean_transmissions <= w[0].mean_transmissions + 3.0 * (s[0] * s[0] + s[1] * s[1]).sqrt());
    Ok(SweepResult { rows, dp_value_nondecreasing, transmissions_nonincreasing })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &mut OutputDir, lambdas: Option<&[f64]>) -> anyhow::Result<Vec<String>> {
    let values: Vec<f64> = match (lambdas, &cfg.sweep) {
        (Some(l), _) => l.to_vec(),
        (None, Some(s)) => s.lambdas.clone(),
        (None, None) => return Err(CliError::Validation("sweep.lambdas: give [sweep] lambdas or --lambdas".into()).into()),
    };
    let res = sweep(cfg, &values)?;
    out.json("sweep.json", &res)?;
    out.csv("sweep.csv", |w| {
        writeln!(w, "lambda,dp_value,sim_mean,sim_std_error,mean_transmissions")?;
        for r in &res.rows {
            writeln!(w, "{},{},{},{},{}", r.lambda, r.dp_value, r.sim_mean, r.sim_std_error, r.mean_transmissions)?;
        }
        Ok(())
    })?;
    if cfg.is_ar1() {
        out.csv("sweep_thresholds.csv", |w| {
            writeln!(w, "lambda,t,s,k")?;
            for r in &res.rows {
                for (t, k) in r.thresholds.iter().enumerate() {
                    for (s, v) in k.iter().enumerate() {
                        writeln!(w, "{},{t},{s},{v}", r.lambda)?;
                    }
                }
            }
            Ok(())
        })?;
    }
    let mut lines: Vec<String> = res
        .rows
        .iter()
        .map(|r| format!("lambda {}: dp {} sim {} ± {} tx {}", r.lambda, r.dp_value, r.sim_mean, r.sim_std_error, r.mean_transmissions))
        .collect();
    lines.push(format!("dp value nondecreasing: {}", res.dp_value_nondecreasing));
    lines.push(format!("transmissions nonincreasing (within MC error): {}", res.transmissions_nonincreasing));
    Ok(lines)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.to_owned(), pass, detail }
    }
}

/// Sum over `t` of `Var X_t` when nothing is ever sent and the estimate
/// stays at 0; only defined for squared distortion.
fn never_transmit_distortion(p: &Ar1Problem) -> Option<f64> {
    if p.distortion != DistortionFn::Squared {
        return None;
    }
    let a2 = p.source.a * p.source.a;
    let var_w = p.source.noise.std_dev().powi(2);
    let mut var = 0.0;
    let mut total = 0.0;
    for _ in 0..=p.horizon {
        total += var;
        var = a2 * var + var_w;
    }
    Some(total)
}

fn ar1_checks(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckLine>> {
    let sim = &cfg.simulation;
    let horizon = cfg.solver.horizon;
    let sol = solve_threshold(cfg)?;
    let p = &sol.problem;
    let mut lines = vec![CheckLine::new("threshold structure", sol.report.passes(), structure_summary(&sol.report))];
    let est = monte_carlo_cost(p, &sol.schedule, horizon, sim.n_reps, sim.seed)?;
    lines.push(CheckLine::new(
        "dp-simulation consistency",
        est.within_3se(sol.initial.value),
        format!("J0 {} vs {} ± {}", sol.initial.value, est.mean, est.std_error),
    ));
    let pert = perturbation_check(p, &sol.schedule, &sim.perturbation_deltas, horizon, sim.n_reps, sim.seed)?;
    let worst = pert
        .entries
        .iter()
        .filter(|e| e.paired_std_error > 0.0)
        .map(|e| e.diff_mean / e.paired_std_error)
        .fold(f64::INFINITY, f64::min);
    lines.push(CheckLine::new(
        "local optimality",
        !pert.any_improvement(),
        format!("{} perturbations, smallest diff/SE {worst:.2}", pert.entries.len()),
    ));
    if let Some(target) = never_transmit_distortion(p) {
        let est = monte_carlo_cost(p, &ThresholdSchedule::never(horizon), horizon, sim.n_reps, sim.seed)?;
        lines.push(CheckLine::new(
            "never-transmit baseline",
            est.within_3se(target),
            format!("{} ± {} vs {target}", est.mean, est.std_error),
        ));
    }
    let mut on = p.clone();
    on.channel = GilbertElliottChannel::new([[0.0, 1.0], [0.0, 1.0]], [0.0, 1.0])?;
    let est = monte_carlo_cost(&on, &ThresholdSchedule::always(horizon), horizon, sim.n_reps, sim.seed)?;
    let target = p.lambda * (horizon + 1) as f64;
    lines.push(CheckLine::new(
        "always-transmit baseline",
        est.mean == target && est.std_error == 0.0,
        format!("{} ± {} vs {target}", est.mean, est.std_error),
    ));
    Ok(lines)
}

fn finite_checks(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckLine>> {
    let sim = &cfg.simulation;
    let horizon = cfg.solver.horizon;
    let m = cfg.finite_model()?;
    let sol = solve_finite_cfg(cfg)?;
    let mut lines = vec![CheckLine::new("recomputation", sol.recomputation_gap()? == 0.0, format!("value {}", sol.value))];
    match cfg.tiny_instance() {
        Ok(inst) => {
            let res = exhaustive_search(&inst, Granularity::Restricted)?;
            let gap = (res.min_cost - sol.value).abs();
            lines.push(CheckLine::new("oracle equivalence", gap <= 1e-9, format!("|gap| {gap:.3e}")));
            let profile = profile_from_finite_solution(&inst, &sol)?;
            let replay = exact_cost(&inst, &profile, Granularity::Restricted)?;
            let gap = (replay - sol.value).abs();
            lines.push(CheckLine::new("exact replay", gap <= 1e-9, format!("|gap| {gap:.3e}")));
            let short = TinyInstance { horizon: horizon.min(1), ..inst };
            let full = exhaustive_search(&short, Granularity::Full)?;
            let restricted = exhaustive_search(&short, Granularity::Restricted)?;
            let gap = (full.min_cost - restricted.min_cost).abs();
            lines.push(CheckLine::new(
                "private history irrelevance",
                gap <= 1e-9,
                format!("T={} |gap| {gap:.3e}", short.horizon),
            ));
        }
        Err(e) => lines.push(CheckLine::new("oracle equivalence", true, format!("skipped: {e}"))),
    }
    let est = simulate_finite(&m, &sol, horizon, sim.n_reps, sim.seed)?;
    lines.push(CheckLine::new(
        "dp-simulation consistency",
        est.within_3se(sol.value),
        format!("{} vs {} ± {}", sol.value, est.mean, est.std_error),
    ));
    Ok(lines)
}

pub fn run_checks(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckLine>> {
    if cfg.is_ar1() {
        ar1_checks(cfg)
    } else {
        finite_checks(cfg)
    }
}

pub fn cmd_check(cfg: &ExperimentConfig, out: &mut OutputDir) -> anyhow::Result<Vec<String>> {
    let checks = run_checks(cfg)?;
    out.json("check.json", &checks)?;
    let lines: Vec<String> =
        checks.iter().map(|c| format!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)).collect();
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        for l in &lines {
            eprintln!("{l}");
        }
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(lines)
}
