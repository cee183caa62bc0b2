//! Closed-loop Monte Carlo evaluation over the Gilbert-Elliott channel.
//!
//! Replication `r` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `r`, so every replication has its own reproducible substream and
//! results do not depend on how replications are scheduled. Each time step
//! consumes the same draws whatever the policy does (one channel uniform,
//! then one source draw), which keeps paths aligned across policies
//! (common random numbers).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{f1_finite, f2_finite, FinitePmf, ReceptionFlag};
use crate::dp_finite::FiniteDPSolution;
use crate::dp_threshold::{Ar1Problem, ThresholdSchedule};
use crate::models::{channel_output, ChannelState, ChannelSymbol, FiniteDistortion, FiniteMarkovSource, GilbertElliottChannel};
use crate::{par, Error, Result};

/// Random stream of replication `r`.
pub fn replication_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: f64,
    pub s: ChannelState,
    pub u: bool,
    pub y: ChannelSymbol<f64>,
    pub h: ReceptionFlag,
    pub z: f64,
    pub xhat: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `S_{-1}`.
    pub s_init: ChannelState,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryRecord {
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    /// `t,x,s,u,y_tag,y_value,xhat,cost`; `y_value` is empty for blanks.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "t,x,s,u,y_tag,y_value,xhat,cost")?;
        }
        for st in &self.steps {
            let yv = st.y.payload().map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                st.t,
                st.x,
                st.s.index(),
                st.u as u8,
                st.y.tag(),
                yv,
                st.xhat,
                st.cost
            )?;
        }
        Ok(())
    }
}

/// One closed-loop episode under a threshold transmitter and the
/// Kalman-like receiver (`xhat = payload` on reception, `a xhat` otherwise).
pub fn run_episode<R: Rng + ?Sized>(
    problem: &Ar1Problem,
    policy: &ThresholdSchedule,
    horizon: usize,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    if policy.horizon() < horizon {
        return Err(Error::HorizonMismatch { policy: policy.horizon(), requested: horizon });
    }
    let a = problem.source.a;
    if a == 0.0 {
        return Err(Error::InvalidModel("AR(1) gain must be nonzero".into()));
    }
    let channel = &problem.channel;
    let s_init = channel.sample_initial(rng.random());
    let mut s_prev = s_init;
    let mut x = 0.0;
    let mut xhat_prev = 0.0;
    let mut z_prev = 0.0;
    let mut steps = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let e = x - a * xhat_prev;
        let u = policy.transmits(t, s_prev.index(), e);
        let s = channel.step(s_prev, rng.random());
        let y = channel_output(u.then_some(x), s);
        let (h, xhat, z) = match y {
            ChannelSymbol::Payload(v) => (ReceptionFlag::Received, v, v),
            ChannelSymbol::Blank1 => (ReceptionFlag::Blank1, a * xhat_prev, a * z_prev),
            ChannelSymbol::Blank0 => (ReceptionFlag::Blank0, a * xhat_prev, a * z_prev),
        };
        let comm = if u { problem.lambda } else { 0.0 };
        let cost = comm + problem.distortion.eval(x - xhat);
        steps.push(StepRecord { t, x, s, u, y, h, z, xhat, cost });
        let w = problem.source.noise.sample(rng);
        x = a * x + w;
        xhat_prev = xhat;
        z_prev = z;
        s_prev = s;
    }
    Ok(TrajectoryRecord { s_init, steps })
}

/// Monte Carlo estimate of the expected total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_reps: usize,
    /// `lambda * mean_transmissions`.
    pub transmission_cost: f64,
    pub distortion: f64,
    pub mean_transmissions: f64,
}

impl CostEstimate {
    /// `|mean - target| <= 3 std_error` (with a `1e-12` floor for exact runs).
    pub fn within_3se(&self, target: f64) -> bool {
        (self.mean - target).abs() <= 3.0 * self.std_error + 1e-12 * target.abs().max(1.0)
    }
}

/// Per-replication totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    pub transmissions: usize,
    pub distortion: f64,
}

impl Replication {
    pub fn total(&self, lambda: f64) -> f64 {
        lambda * self.transmissions as f64 + self.distortion
    }
}

/// Mean and standard error in index order, shifted by the first sample so
/// that constant data gives exactly zero spread.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let x0 = xs[0];
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &x in xs {
        let d = x - x0;
        s1 += d;
        s2 += d * d;
    }
    let nf = n as f64;
    let mean = x0 + s1 / nf;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

pub fn aggregate(reps: &[Replication], lambda: f64) -> CostEstimate {
    let totals: Vec<f64> = reps.iter().map(|r| r.total(lambda)).collect();
    let (mean, std_error) = mean_and_se(&totals);
    let n = reps.len() as f64;
    let tx: usize = reps.iter().map(|r| r.transmissions).sum();
    let dist: f64 = reps.iter().map(|r| r.distortion).sum::<f64>() / n;
    let mean_transmissions = tx as f64 / n;
    CostEstimate {
        mean,
        std_error,
        n_reps: reps.len(),
        transmission_cost: lambda * mean_transmissions,
        distortion: dist,
        mean_transmissions,
    }
}

fn check_reps(n_reps: usize) -> Result<()> {
    if n_reps < 2 {
        return Err(Error::InvalidModel(format!("need at least 2 replications, got {n_reps}")));
    }
    Ok(())
}

fn threshold_replications(
    problem: &Ar1Problem,
    policy: &ThresholdSchedule,
    horizon: usize,
    n_reps: usize,
    seed: u64,
) -> Result<Vec<Replication>> {
    check_reps(n_reps)?;
    if policy.horizon() < horizon {
        return Err(Error::HorizonMismatch { policy: policy.horizon(), requested: horizon });
    }
    par::map_range(n_reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        let tr = run_episode(problem, policy, horizon, &mut rng)?;
        let transmissions = tr.steps.iter().filter(|s| s.u).count();
        let distortion = tr.steps.iter().map(|s| problem.distortion.eval(s.x - s.xhat)).sum();
        Ok(Replication { transmissions, distortion })
    })
    .into_iter()
    .collect()
}

pub fn monte_carlo_cost(
    problem: &Ar1Problem,
    policy: &ThresholdSchedule,
    horizon: usize,
    n_reps: usize,
    seed: u64,
) -> Result<CostEstimate> {
    let reps = threshold_replications(problem, policy, horizon, n_reps, seed)?;
    Ok(aggregate(&reps, problem.lambda))
}

/// Which thresholds a perturbation moved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationTarget {
    Single { t: usize, s: usize },
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub target: PerturbationTarget,
    pub delta: f64,
    /// Mean of `perturbed - base` over paired replications.
    pub diff_mean: f64,
    pub paired_std_error: f64,
}

impl PerturbationEntry {
    /// Improvement by more than 3 paired standard errors.
    pub fn significant_improvement(&self) -> bool {
        self.diff_mean < -3.0 * self.paired_std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub base: CostEstimate,
    pub entries: Vec<PerturbationEntry>,
}

impl PerturbationReport {
    pub fn any_improvement(&self) -> bool {
        self.entries.iter().any(PerturbationEntry::significant_improvement)
    }
}

/// Shifts each finite threshold by each `delta`, one `(t, s)` at a time and
/// all together, and compares against `policy` under common random numbers.
pub fn perturbation_check(
    problem: &Ar1Problem,
    policy: &ThresholdSchedule,
    deltas: &[f64],
    horizon: usize,
    n_reps: usize,
    seed: u64,
) -> Result<PerturbationReport> {
    if let Some(d) = deltas.iter().find(|d| !d.is_finite()) {
        return Err(Error::InvalidModel(format!("perturbation delta must be finite, got {d}")));
    }
    let lambda = problem.lambda;
    let base_reps = threshold_replications(problem, policy, horizon, n_reps, seed)?;
    let base_totals: Vec<f64> = base_reps.iter().map(|r| r.total(lambda)).collect();
    let cells: Vec<(usize, usize)> =
        (0..=horizon).flat_map(|t| [(t, 0), (t, 1)]).filter(|&(t, s)| policy.k[t][s].is_finite()).collect();
    let mut targets: Vec<(PerturbationTarget, Vec<(usize, usize)>)> =
        cells.iter().map(|&(t, s)| (PerturbationTarget::Single { t, s }, vec![(t, s)])).collect();
    targets.push((PerturbationTarget::Joint, cells.clone()));
    let mut entries = Vec::new();
    for &delta in deltas {
        for (target, moved) in &targets {
            let perturbed = policy.perturbed(moved, delta);
            let reps = threshold_replications(problem, &perturbed, horizon, n_reps, seed)?;
            let diffs: Vec<f64> = reps.iter().zip(&base_totals).map(|(r, b)| r.total(lambda) - b).collect();
            let (diff_mean, paired_std_error) = mean_and_se(&diffs);
            entries.push(PerturbationEntry { target: target.clone(), delta, diff_mean, paired_std_error });
        }
    }
    Ok(PerturbationReport { base: aggregate(&base_reps, lambda), entries })
}

/// Finite-alphabet closed-loop model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteModel {
    pub source: FiniteMarkovSource,
    pub channel: GilbertElliottChannel,
    pub distortion: FiniteDistortion,
    pub lambda: f64,
}

fn finite_episode(model: &FiniteModel, sol: &FiniteDPSolution, rng: &mut ChaCha8Rng) -> Result<Replication> {
    let g = &sol.graph;
    let mut s_prev = model.channel.sample_initial(rng.random());
    let mut x = model.source.sample_initial(rng.random());
    let mut pre = FinitePmf::new(model.source.initial.clone())?;
    let mut rep = Replication { transmissions: 0, distortion: 0.0 };
    let mut pre_idx = g.layers[0].find_pre(s_prev, &pre).ok_or(Error::BeliefKeyMiss { t: 0 })?;
    for t in 0..=sol.horizon() {
        let layer = &g.layers[t];
        let mask = sol.policy[t][pre_idx];
        let phi = sol.prescription(t, pre_idx);
        let u = phi.transmits(x);
        let s = model.channel.step(s_prev, rng.random());
        let y = channel_output(u.then_some(x), s);
        let post = f2_finite(&pre, &phi, &y)?;
        let post_idx = layer.find_post(s, &post).ok_or(Error::BeliefKeyMiss { t })?;
        let edge = layer.pre_edges[pre_idx][mask as usize].iter().find(|e| e.y == y && e.s == s);
        if edge.map(|e| e.post) != Some(post_idx) {
            return Err(Error::BeliefKeyMiss { t });
        }
        let xhat = sol.estimates[t][post_idx];
        rep.transmissions += u as usize;
        rep.distortion += model.distortion.eval(x, xhat);
        if t < sol.horizon() {
            pre = f1_finite(&post, &model.source)?;
            let next = g.layers[t + 1].find_pre(s, &pre).ok_or(Error::BeliefKeyMiss { t: t + 1 })?;
            if layer.post_next[post_idx] != Some(next) {
                return Err(Error::BeliefKeyMiss { t: t + 1 });
            }
            pre_idx = next;
        } else {
            // keep the draw count per step fixed
            let _: f64 = rng.random();
        }
        x = model.source.sample_next(x, rng.random());
        s_prev = s;
    }
    Ok(rep)
}

/// Closed loop under a dynamic-program solution, replaying the belief
/// filters online and looking prescriptions and estimates up by belief key.
pub fn simulate_finite(model: &FiniteModel, sol: &FiniteDPSolution, horizon: usize, n_reps: usize, seed: u64) -> Result<CostEstimate> {
    check_reps(n_reps)?;
    if sol.horizon() != horizon {
        return Err(Error::HorizonMismatch { policy: sol.horizon(), requested: horizon });
    }
    let reps: Vec<Replication> = par::map_range(n_reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        finite_episode(model, sol, &mut rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(aggregate(&reps, model.lambda))
}
