//! Error-grid dynamic program for AR(1) sources and extraction of the
//! channel-state dependent thresholds `k_t(s)`.
//!
//! With `E_t = X_t - a Xhat_{t-1}` and `s` the previous channel state,
//!
//! ```text
//! J0_t(e,s) = d(e) + Q_s0 E J_{t+1}(ae+W, 0) + Q_s1 E J_{t+1}(ae+W, 1)
//! J1_t(e,s) = lam + Q_s0 d(e) + Q_s0 E J_{t+1}(ae+W, 0) + Q_s1 E J_{t+1}(W, 1)
//! J_t = min(J0_t, J1_t),  J_{T+1} = 0.
//! ```
//!
//! Expectations over `W` use the noise kernel on the value-grid lattice:
//! `F = kernel * J_{t+1}` (with `J_{t+1}` clamped beyond the grid) is
//! tabulated once per layer and `E J_{t+1}(ae+W, .)` is read off `F` at
//! `ae` by linear interpolation, clamped at the ends. Both steps map even,
//! nondecreasing-on-`e >= 0` tables to tables with the same properties.

use std::fmt;
use std::io::Write;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::belief::NoiseKernel;
use crate::models::{Ar1Source, DistortionFn, GilbertElliottChannel, NoiseSpec};
use crate::{par, Error, Result};

pub const DEFAULT_N_POINTS: usize = 4097;
pub const STRUCTURE_TOL: f64 = 1e-9;

/// AR(1) remote-estimation problem over a Gilbert-Elliott channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Problem {
    pub source: Ar1Source,
    pub channel: GilbertElliottChannel,
    pub distortion: DistortionFn,
    pub lambda: f64,
    pub horizon: usize,
}

impl Ar1Problem {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.distortion.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidModel(format!("lambda must be a nonnegative number, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Standard deviation of the error process: stationary when `|a| < 1`,
    /// after `T + 1` silent steps otherwise.
    pub fn error_scale(&self) -> f64 {
        let a2 = self.source.a * self.source.a;
        let var = if a2 < 1.0 {
            1.0 / (1.0 - a2)
        } else {
            (0..=self.horizon).map(|k| a2.powi(k as i32)).sum()
        };
        self.source.noise.std_dev() * var.sqrt()
    }
}

/// Symmetric uniform grid `e_i = (i - c) h` on `[-L, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub half_width: f64,
    pub n_points: usize,
}

impl SolverGrid {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half-width must be positive, got {half_width}")));
        }
        if n_points < 3 || n_points.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("point count must be odd and >= 3, got {n_points}")));
        }
        Ok(Self { half_width, n_points })
    }

    /// `L = 20 * error_scale`, 4097 points.
    pub fn default_for(problem: &Ar1Problem) -> Self {
        Self { half_width: 20.0 * problem.error_scale(), n_points: DEFAULT_N_POINTS }
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n_points - 1) as f64
    }

    pub fn center(&self) -> usize {
        self.n_points / 2
    }

    pub fn point(&self, i: usize) -> f64 {
        (i as f64 - self.center() as f64) * self.h()
    }

    /// Twice as fine: `2n - 1` points on the same interval.
    pub fn refined(&self) -> Self {
        Self { half_width: self.half_width, n_points: 2 * self.n_points - 1 }
    }

    /// Largest `|e|` whose expectations never touch the clamped region:
    /// `|a| e + r_W <= L`.
    pub fn operational_reach(&self, a: f64, noise: &NoiseSpec) -> f64 {
        ((self.half_width - noise.truncation_radius()) / a.abs()).max(0.0)
    }

    /// Errors if `l_operational` exceeds [`Self::operational_reach`].
    pub fn check_guard(&self, a: f64, noise: &NoiseSpec, l_operational: f64) -> Result<()> {
        let reach = self.operational_reach(a, noise);
        if l_operational > reach {
            return Err(Error::Guard(format!(
                "grid half-width {} too small: |a| * {l_operational} + {} exceeds it",
                self.half_width,
                noise.truncation_radius()
            )));
        }
        Ok(())
    }
}

/// `J_t`, `J0_t`, `J1_t` on the solver grid, indexed `[t][s][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub grid: SolverGrid,
    pub horizon: usize,
    pub lambda: f64,
    /// Length `T + 2`; the last layer is zero.
    pub j: Vec<[Vec<f64>; 2]>,
    /// Length `T + 1`.
    pub j0: Vec<[Vec<f64>; 2]>,
    pub j1: Vec<[Vec<f64>; 2]>,
}

impl ValueGrid {
    /// `sum_s initial[s] J_0(0, s)`: optimal cost from `E_0 = 0`.
    pub fn initial_value(&self, initial: [f64; 2]) -> f64 {
        let c = self.grid.center();
        initial[0] * self.j[0][0][c] + initial[1] * self.j[0][1][c]
    }

    /// Long format `t,s,e,J,J0,J1` for `t = 0..=T`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,s,e,J,J0,J1")?;
        for t in 0..=self.horizon {
            for s in 0..2 {
                for i in 0..self.grid.n_points {
                    writeln!(
                        w,
                        "{t},{s},{},{},{},{}",
                        self.grid.point(i),
                        self.j[t][s][i],
                        self.j0[t][s][i],
                        self.j1[t][s][i]
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Row `F[i] = sum_j w_j J[clamp(i + j)]`, summed in mirrored pairs.
fn smooth(kernel: &NoiseKernel, next: &[f64]) -> Vec<f64> {
    let n = next.len() as isize;
    let r = kernel.radius() as isize;
    let w = kernel.weights();
    let at = |k: isize| next[k.clamp(0, n - 1) as usize];
    let mut out = vec![0.0; next.len()];
    par::fill_indexed(&mut out, |i| {
        let i = i as isize;
        let mut acc = w[r as usize] * at(i);
        for j in 1..=r {
            acc += w[(r + j) as usize] * (at(i + j) + at(i - j));
        }
        acc
    });
    out
}

/// `F` at fractional index `pos`, clamped to the table.
fn interpolate(f: &[f64], pos: f64) -> f64 {
    let last = f.len() - 1;
    if pos <= 0.0 {
        return f[0];
    }
    if pos >= last as f64 {
        return f[last];
    }
    let i0 = pos.floor() as usize;
    let frac = pos - i0 as f64;
    if frac == 0.0 {
        f[i0]
    } else {
        f[i0] + frac * (f[i0 + 1] - f[i0])
    }
}

/// Backward induction from `J_{T+1} = 0`.
pub fn backward_induction(problem: &Ar1Problem, grid: SolverGrid) -> Result<ValueGrid> {
    problem.validate()?;
    let grid = SolverGrid::new(grid.half_width, grid.n_points)?;
    let n = grid.n_points;
    let c = grid.center();
    let a = problem.source.a;
    let q = problem.channel.q;
    let lambda = problem.lambda;
    let kernel = NoiseKernel::new(&problem.source.noise, grid.h());
    let dist: Vec<f64> = (0..n).map(|i| problem.distortion.eval(grid.point(i))).collect();
    let pos: Vec<f64> = (0..n).map(|i| c as f64 + a * (i as f64 - c as f64)).collect();

    let layers = problem.horizon + 1;
    let mut j = vec![[vec![0.0; n], vec![0.0; n]]; layers + 1];
    let mut j0 = vec![[Vec::new(), Vec::new()]; layers];
    let mut j1 = vec![[Vec::new(), Vec::new()]; layers];
    for t in (0..layers).rev() {
        let f = [smooth(&kernel, &j[t + 1][0]), smooth(&kernel, &j[t + 1][1])];
        let restart = f[1][c];
        let both = par::map_range(2 * n, |k| {
            let (s, i) = (k / n, k % n);
            let g0 = interpolate(&f[0], pos[i]);
            let g1 = interpolate(&f[1], pos[i]);
            let [q0, q1] = q[s];
            let silent = dist[i] + q0 * g0 + q1 * g1;
            let transmit = lambda + q0 * dist[i] + q0 * g0 + q1 * restart;
            (silent, transmit)
        });
        for s in 0..2 {
            let rows = &both[s * n..(s + 1) * n];
            j0[t][s] = rows.iter().map(|r| r.0).collect();
            j1[t][s] = rows.iter().map(|r| r.1).collect();
            j[t][s] = rows.iter().map(|r| r.0.min(r.1)).collect();
        }
    }
    Ok(ValueGrid { grid, horizon: problem.horizon, lambda, j, j0, j1 })
}

/// Threshold read-out: the first grid point with `J0 > J1`, or the linear
/// zero crossing of `J0 - J1` within the preceding cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Grid,
    #[default]
    Refined,
}

/// `k[t][s]` for `t = 0..=T`, `s` the previous channel state. `+inf` means
/// never transmit; serialized as `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    #[serde(with = "threshold_serde")]
    pub k: Vec<[f64; 2]>,
    #[serde(default)]
    pub refined: bool,
}

impl ThresholdSchedule {
    pub fn constant(horizon: usize, k: f64) -> Self {
        Self { k: vec![[k, k]; horizon + 1], refined: false }
    }

    pub fn never(horizon: usize) -> Self {
        Self::constant(horizon, f64::INFINITY)
    }

    pub fn always(horizon: usize) -> Self {
        Self::constant(horizon, 0.0)
    }

    pub fn horizon(&self) -> usize {
        self.k.len().saturating_sub(1)
    }

    pub fn threshold(&self, t: usize, s_prev: usize) -> f64 {
        self.k[t][s_prev]
    }

    /// Transmit iff `|e| >= k_t(s_prev)`.
    pub fn transmits(&self, t: usize, s_prev: usize, e: f64) -> bool {
        e.abs() >= self.k[t][s_prev]
    }

    /// `k + delta`, clamped at 0; infinite thresholds stay infinite.
    pub fn perturbed(&self, cells: &[(usize, usize)], delta: f64) -> Self {
        let mut out = self.clone();
        for &(t, s) in cells {
            let k = out.k[t][s];
            if k.is_finite() {
                out.k[t][s] = (k + delta).max(0.0);
            }
        }
        out
    }

    /// Long format `t,s,k`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,s,k")?;
        for (t, row) in self.k.iter().enumerate() {
            for (s, k) in row.iter().enumerate() {
                writeln!(w, "{t},{s},{}", fmt_threshold(*k))?;
            }
        }
        Ok(())
    }
}

pub fn fmt_threshold(k: f64) -> String {
    if k.is_infinite() {
        "inf".to_string()
    } else {
        format!("{k}")
    }
}

mod threshold_serde {
    use super::*;

    struct Value(f64);

    impl Serialize for Value {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            if self.0.is_infinite() {
                s.serialize_str("inf")
            } else {
                s.serialize_f64(self.0)
            }
        }
    }

    impl<'de> Deserialize<'de> for Value {
        fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
            struct V;
            impl Visitor<'_> for V {
                type Value = Value;
                fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                    f.write_str("a nonnegative number or \"inf\"")
                }
                fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Value, E> {
                    Ok(Value(v))
                }
                fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Value, E> {
                    Ok(Value(v as f64))
                }
                fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Value, E> {
                    Ok(Value(v as f64))
                }
                fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Value, E> {
                    match v {
                        "inf" => Ok(Value(f64::INFINITY)),
                        _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                    }
                }
            }
            d.deserialize_any(V)
        }
    }

    pub fn serialize<S: Serializer>(k: &[[f64; 2]], s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<[Value; 2]> = k.iter().map(|r| [Value(r[0]), Value(r[1])]).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<[f64; 2]>, D::Error> {
        let rows: Vec<[Value; 2]> = Vec::deserialize(d)?;
        Ok(rows.into_iter().map(|[a, b]| [a.0, b.0]).collect())
    }
}

/// Number of alternations between `<= 0` and `> 0` along `diff`, and
/// whether the positive part is a suffix (silent set is a prefix).
fn sign_structure(diff: &[f64]) -> (usize, bool) {
    let mut changes = 0;
    for w in diff.windows(2) {
        if (w[0] > 0.0) != (w[1] > 0.0) {
            changes += 1;
        }
    }
    let prefix = changes == 0 || (changes == 1 && diff[0] <= 0.0);
    (changes, prefix)
}

fn branch_difference(vg: &ValueGrid, t: usize, s: usize) -> Vec<f64> {
    let c = vg.grid.center();
    (c..vg.grid.n_points).map(|i| vg.j0[t][s][i] - vg.j1[t][s][i]).collect()
}

/// Thresholds from the sign of `J0 - J1` on `e >= 0`.
///
/// The silent set must be a prefix of the nonnegative half-grid; otherwise
/// [`Error::StructureViolation`] is returned.
pub fn extract_thresholds(vg: &ValueGrid, mode: ThresholdMode) -> Result<ThresholdSchedule> {
    let h = vg.grid.h();
    let mut k = Vec::with_capacity(vg.horizon + 1);
    for t in 0..=vg.horizon {
        let mut row = [f64::INFINITY; 2];
        for (s, slot) in row.iter_mut().enumerate() {
            let diff = branch_difference(vg, t, s);
            let (changes, prefix) = sign_structure(&diff);
            if !prefix {
                return Err(Error::StructureViolation { t, s, sign_changes: changes });
            }
            if let Some(p) = diff.iter().position(|&v| v > 0.0) {
                *slot = match (mode, p) {
                    (_, 0) => 0.0,
                    (ThresholdMode::Grid, p) => p as f64 * h,
                    (ThresholdMode::Refined, p) => {
                        let (lo, hi) = (diff[p - 1], diff[p]);
                        (p - 1) as f64 * h + h * (-lo) / (hi - lo)
                    }
                };
            }
        }
        k.push(row);
    }
    Ok(ThresholdSchedule { k, refined: mode == ThresholdMode::Refined })
}

/// `M0(y|e) = 1 - int_{-y}^{y} mu(ae + w) dw = P(W > y - ae) + P(W > y + ae)`
/// in closed form.
pub fn m0(y: f64, e: f64, a: f64, noise: &NoiseSpec) -> f64 {
    if y == 0.0 {
        return 1.0;
    }
    let ae = a * e;
    noise.survival(y + ae) + noise.survival(y - ae)
}

/// Largest decrease of `M0(y|.)` between consecutive points of an
/// `n_y x n_e` grid on `[0, y_max] x [0, e_max]`.
pub fn m0_monotonicity_violation(a: f64, noise: &NoiseSpec, n_y: usize, n_e: usize, y_max: f64, e_max: f64) -> f64 {
    let rows = par::map_range(n_y, |iy| {
        let y = y_max * iy as f64 / (n_y - 1).max(1) as f64;
        let mut worst: f64 = 0.0;
        let mut prev = m0(y, 0.0, a, noise);
        for ie in 1..n_e {
            let e = e_max * ie as f64 / (n_e - 1) as f64;
            let v = m0(y, e, a, noise);
            worst = worst.max(prev - v);
            prev = v;
        }
        worst
    });
    rows.into_iter().fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub tol: f64,
    /// `max |J_t(e,s) - J_t(-e,s)|`.
    pub evenness_violation: f64,
    /// `max (J_t(e_i,s) - J_t(e_{i+1},s))^+` on `e >= 0`.
    pub ei_violation: f64,
    /// `max |J - min(J0, J1)|`.
    pub min_violation: f64,
    /// Largest decrease of `M0(y|e)` in `e` over a 200 x 200 grid.
    pub m0_violation: f64,
    /// Alternations of the sign of `J0 - J1` on `e >= 0`, per `(t, s)`.
    pub sign_changes: Vec<[usize; 2]>,
    pub silent_prefix: Vec<[bool; 2]>,
    /// See [`SolverGrid::operational_reach`].
    pub operational_reach: f64,
}

impl StructureReport {
    pub fn passes(&self) -> bool {
        self.evenness_violation <= self.tol
            && self.ei_violation <= self.tol
            && self.min_violation == 0.0
            && self.m0_violation <= 1e-12
            && self.sign_changes.iter().flatten().all(|&c| c <= 1)
            && self.silent_prefix.iter().flatten().all(|&p| p)
    }
}

pub fn check_structure(vg: &ValueGrid, noise: &NoiseSpec, a: f64) -> StructureReport {
    let n = vg.grid.n_points;
    let c = vg.grid.center();
    let mut even: f64 = 0.0;
    let mut ei: f64 = 0.0;
    let mut minv: f64 = 0.0;
    for t in 0..vg.j0.len() {
        for s in 0..2 {
            let j = &vg.j[t][s];
            for i in 0..n {
                even = even.max((j[i] - j[n - 1 - i]).abs());
                let m = vg.j0[t][s][i].min(vg.j1[t][s][i]);
                minv = minv.max((j[i] - m).abs());
            }
            for i in c..n - 1 {
                ei = ei.max(j[i] - j[i + 1]);
            }
        }
    }
    let span = 6.0 * noise.std_dev();
    let m0v = m0_monotonicity_violation(a, noise, 200, 200, span, span / a.abs().max(1e-12));
    let mut sign_changes = Vec::new();
    let mut silent_prefix = Vec::new();
    for t in 0..vg.j0.len() {
        let a0 = sign_structure(&branch_difference(vg, t, 0));
        let a1 = sign_structure(&branch_difference(vg, t, 1));
        sign_changes.push([a0.0, a1.0]);
        silent_prefix.push([a0.1, a1.1]);
    }
    StructureReport {
        tol: STRUCTURE_TOL,
        evenness_violation: even,
        ei_violation: ei,
        min_violation: minv,
        m0_violation: m0v,
        sign_changes,
        silent_prefix,
        operational_reach: vg.grid.operational_reach(a, noise),
    }
}

/// Outcome of the grid convergence loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_points: Vec<usize>,
    /// Largest threshold change between successive grids.
    pub max_change: Vec<f64>,
    pub converged: bool,
}

fn max_threshold_change(a: &ThresholdSchedule, b: &ThresholdSchedule) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.k.iter().zip(&b.k) {
        for (x, y) in ra.iter().zip(rb) {
            let d = if x.is_infinite() && y.is_infinite() { 0.0 } else { (x - y).abs() };
            worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
        }
    }
    worst
}

/// Solve on `grid`, then on successively refined grids (`n -> 2n - 1`) until
/// thresholds move by less than the coarser spacing, at most `max_refinements` times.
pub fn solve_converged(
    problem: &Ar1Problem,
    grid: SolverGrid,
    mode: ThresholdMode,
    max_refinements: usize,
) -> Result<(ValueGrid, ThresholdSchedule, ConvergenceReport)> {
    let mut vg = backward_induction(problem, grid)?;
    let mut sched = extract_thresholds(&vg, mode)?;
    let mut report = ConvergenceReport { n_points: vec![grid.n_points], max_change: Vec::new(), converged: false };
    let mut g = grid;
    for _ in 0..max_refinements {
        let finer = g.refined();
        let vg2 = backward_induction(problem, finer)?;
        let sched2 = extract_thresholds(&vg2, mode)?;
        let change = max_threshold_change(&sched, &sched2);
        report.n_points.push(finer.n_points);
        report.max_change.push(change);
        let done = change < g.h();
        vg = vg2;
        sched = sched2;
        g = finer;
        if done {
            report.converged = true;
            break;
        }
    }
    Ok((vg, sched, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(a: f64, q: [[f64; 2]; 2], lambda: f64, horizon: usize) -> Ar1Problem {
        Ar1Problem {
            source: Ar1Source::new(a, NoiseSpec::gaussian(1.0)).unwrap(),
            channel: GilbertElliottChannel::new(q, [0.4, 0.6]).unwrap(),
            distortion: DistortionFn::Squared,
            lambda,
            horizon,
        }
    }

    const CAL_Q: [[f64; 2]; 2] = [[0.7, 0.3], [0.2, 0.8]];

    #[test]
    fn terminal_layer_zero_and_one_step() {
        let p = problem(1.0, CAL_Q, 0.7, 0);
        let g = SolverGrid::new(10.0, 201).unwrap();
        let vg = backward_induction(&p, g).unwrap();
        assert!(vg.j[1].iter().flatten().all(|&v| v == 0.0));
        for s in 0..2 {
            assert_eq!(vg.j[0][s][g.center()], 0.0);
            for i in 0..g.n_points {
                let d = g.point(i).powi(2);
                let expect = d.min(0.7 + CAL_Q[s][0] * d);
                assert!((vg.j[0][s][i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn always_off_next_never_transmits() {
        let p = problem(1.0, [[1.0, 0.0], [1.0, 0.0]], 0.5, 3);
        let vg = backward_induction(&p, SolverGrid::new(10.0, 201).unwrap()).unwrap();
        for t in 0..=3 {
            for s in 0..2 {
                for i in 0..201 {
                    assert!((vg.j1[t][s][i] - vg.j0[t][s][i] - 0.5).abs() < 1e-9);
                }
            }
        }
        let k = extract_thresholds(&vg, ThresholdMode::Refined).unwrap();
        assert!(k.k.iter().flatten().all(|v| v.is_infinite()));
    }

    #[test]
    fn lambda_zero_thresholds_vanish() {
        let p = problem(0.9, CAL_Q, 0.0, 4);
        let vg = backward_induction(&p, SolverGrid::new(15.0, 301).unwrap()).unwrap();
        let k = extract_thresholds(&vg, ThresholdMode::Refined).unwrap();
        assert!(k.k.iter().flatten().all(|&v| v == 0.0), "{:?}", k.k);
        let kg = extract_thresholds(&vg, ThresholdMode::Grid).unwrap();
        assert!(kg.k.iter().flatten().all(|&v| v == vg.grid.h()));
    }

    #[test]
    fn huge_lambda_gives_sentinel() {
        let g = SolverGrid::new(8.0, 161).unwrap();
        let horizon = 3;
        let lambda = (horizon as f64 + 1.0) * 64.0 + 1.0;
        let vg = backward_induction(&problem(1.0, CAL_Q, lambda, horizon), g).unwrap();
        let k = extract_thresholds(&vg, ThresholdMode::Grid).unwrap();
        assert!(k.k.iter().flatten().all(|v| v.is_infinite()));
    }

    #[test]
    fn equal_rows_remove_state_dependence() {
        let p = problem(1.1, [[0.3, 0.7], [0.3, 0.7]], 1.0, 5);
        let vg = backward_induction(&p, SolverGrid::new(20.0, 401).unwrap()).unwrap();
        let k = extract_thresholds(&vg, ThresholdMode::Refined).unwrap();
        for row in &k.k {
            assert_eq!(row[0], row[1]);
        }
    }

    #[test]
    fn structure_holds_on_moderate_grid() {
        let p = problem(1.0, CAL_Q, 1.0, 5);
        let vg = backward_induction(&p, SolverGrid::new(30.0, 1201).unwrap()).unwrap();
        let r = check_structure(&vg, &p.source.noise, 1.0);
        assert!(r.passes(), "{r:?}");
        assert!(r.evenness_violation <= 1e-9);
    }

    #[test]
    fn m0_examples() {
        let n = NoiseSpec::gaussian(1.0);
        assert_eq!(m0(0.0, 0.7, 1.0, &n), 1.0);
        assert!((m0(1.96, 0.0, 1.0, &n) - 0.05).abs() < 1e-3);
        for (y, e) in [(0.3, 0.2), (1.0, 2.5), (2.2, 0.9)] {
            assert!((m0(y, e, 1.3, &n) - m0(y, -e, 1.3, &n)).abs() < 1e-15);
        }
        for a in [0.5, 1.0, -1.0, 2.0] {
            for noise in [NoiseSpec::gaussian(1.0), NoiseSpec::uniform(1.0)] {
                assert!(m0_monotonicity_violation(a, &noise, 200, 200, 6.0, 6.0) <= 1e-12);
            }
        }
    }

    #[test]
    fn schedule_serde_inf() {
        let s = ThresholdSchedule { k: vec![[0.5, f64::INFINITY]], refined: true };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"k":[[0.5,"inf"]],"refined":true}"#);
        assert_eq!(serde_json::from_str::<ThresholdSchedule>(&json).unwrap(), s);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,s,k\n0,0,0.5\n0,1,inf\n");
    }

    #[test]
    fn perturbation_clamps_and_keeps_inf() {
        let s = ThresholdSchedule { k: vec![[0.1, f64::INFINITY]], refined: false };
        let p = s.perturbed(&[(0, 0), (0, 1)], -0.25);
        assert_eq!(p.k[0], [0.0, f64::INFINITY]);
    }

    #[test]
    fn sign_structure_cases() {
        assert_eq!(sign_structure(&[0.0, -1.0, 1.0, 2.0]), (1, true));
        assert_eq!(sign_structure(&[1.0, 2.0]), (0, true));
        assert_eq!(sign_structure(&[-1.0, 1.0, -1.0]), (2, false));
        assert_eq!(sign_structure(&[1.0, -1.0]), (1, false));
    }

    #[test]
    fn convergence_loop_reports() {
        let p = problem(0.8, CAL_Q, 1.0, 3);
        let (_, _, r) = solve_converged(&p, SolverGrid::new(20.0, 201).unwrap(), ThresholdMode::Refined, 2).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.n_points.len() >= 2 && r.n_points[1] == 401);
    }

    #[test]
    fn guard_and_default_grid() {
        let p = problem(0.8, CAL_Q, 1.0, 3);
        let g = SolverGrid::default_for(&p);
        assert_eq!(g.n_points, DEFAULT_N_POINTS);
        assert!((g.half_width - 20.0 / 0.6).abs() < 1e-12);
        assert!(g.check_guard(0.8, &p.source.noise, 10.0).is_ok());
        assert!(g.check_guard(0.8, &p.source.noise, 100.0).is_err());
    }
}
