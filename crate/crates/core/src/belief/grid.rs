use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Prescription;
use crate::models::{DistortionFn, NoiseSpec};
use crate::{par, Error, Result};

/// Largest tolerated deviation of pre-normalisation mass from 1 after a
/// convolution or truncation. Larger losses mean the grid is too small.
pub const MASS_TOL: f64 = 1e-6;

/// Smallest conditioning mass accepted by the blank-1 restriction.
const CONDITIONING_TOL: f64 = 1e-12;

/// Probability density sampled at `n` equally spaced points on `[-L, L]`,
/// `n` odd so that 0 is a grid point. Mass is `h * sum(values)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    half_width: f64,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(half_width: f64, values: Vec<f64>) -> Result<Self> {
        check_grid(half_width, values.len())?;
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidGrid(format!("density value {v} is not a nonnegative number")));
        }
        Ok(Self { half_width, values })
    }

    /// Samples `f` at the grid points without normalising.
    pub fn from_fn(half_width: f64, n_points: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_grid(half_width, n_points)?;
        let h = 2.0 * half_width / (n_points - 1) as f64;
        let c = (n_points / 2) as f64;
        let values = (0..n_points).map(|i| f((i as f64 - c) * h)).collect();
        Self::new(half_width, values)
    }

    /// Grid Dirac at 0: all mass in the centre cell.
    pub fn dirac(half_width: f64, n_points: usize) -> Result<Self> {
        check_grid(half_width, n_points)?;
        let mut values = vec![0.0; n_points];
        let h = 2.0 * half_width / (n_points - 1) as f64;
        values[n_points / 2] = 1.0 / h;
        Ok(Self { half_width, values })
    }

    /// Noise density sampled on the grid and renormalised.
    pub fn from_noise(half_width: f64, n_points: usize, noise: &NoiseSpec) -> Result<Self> {
        let g = Self::from_fn(half_width, n_points, |e| noise.density(e))?;
        let outside = 2.0 * noise.survival(half_width + 0.5 * g.h());
        if outside > MASS_TOL {
            return Err(Error::TruncationOverflow { mass: 1.0 - outside, tol: MASS_TOL });
        }
        g.normalized()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.values.len() - 1) as f64
    }

    pub fn center_index(&self) -> usize {
        self.values.len() / 2
    }

    pub fn point(&self, i: usize) -> f64 {
        (i as f64 - self.center_index() as f64) * self.h()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at_offset(&self, j: isize) -> f64 {
        let idx = self.center_index() as isize + j;
        if idx < 0 || idx >= self.values.len() as isize {
            0.0
        } else {
            self.values[idx as usize]
        }
    }

    pub fn mass(&self) -> f64 {
        self.h() * self.values.iter().sum::<f64>()
    }

    /// Rescale to unit mass. Fails on an all-zero density.
    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if m.is_nan() || m <= 0.0 {
            return Err(Error::DegenerateConditioning { mass: m });
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(self)
    }

    pub fn same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.values.len() != other.values.len() || self.half_width != other.half_width {
            return Err(Error::GridMismatch {
                n_a: self.values.len(),
                l_a: self.half_width,
                n_b: other.values.len(),
                l_b: other.half_width,
            });
        }
        Ok(())
    }

    /// Mass of the cells where `phi` does not transmit.
    pub fn silent_mass<P: GridPrescription + ?Sized>(&self, phi: &P) -> f64 {
        let h = self.h();
        h * (0..self.values.len()).filter(|&i| !phi.transmits_at(self, i)).map(|i| self.values[i]).sum::<f64>()
    }

    /// Writes `e,density` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "e,density")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.point(i), v)?;
        }
        Ok(())
    }
}

fn check_grid(half_width: f64, n_points: usize) -> Result<()> {
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::InvalidGrid(format!("half-width must be positive, got {half_width}")));
    }
    if n_points < 3 || n_points.is_multiple_of(2) {
        return Err(Error::InvalidGrid(format!("point count must be odd and >= 3, got {n_points}")));
    }
    Ok(())
}

/// A transmission rule evaluated on grid points.
pub trait GridPrescription {
    fn transmits_at(&self, grid: &GridDensity, i: usize) -> bool;
}

/// Transmit iff `|e - center| >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPrescription {
    pub center: f64,
    pub threshold: f64,
}

impl ThresholdPrescription {
    pub fn new(center: f64, threshold: f64) -> Self {
        Self { center, threshold }
    }

    pub fn transmits(&self, e: f64) -> bool {
        (e - self.center).abs() >= self.threshold
    }

    /// Widest threshold around 0 whose silent set `{|e| < k}` has mass at
    /// most `mass` under `density`. Returns `None` if even the centre cell
    /// exceeds `mass`.
    pub fn around_zero_with_silent_mass_at_most(density: &GridDensity, mass: f64) -> Option<Self> {
        let h = density.h();
        let c = density.center_index();
        let mut acc = h * density.values[c];
        if acc > mass {
            return None;
        }
        let mut m = 1;
        while m <= c {
            let next = acc + h * (density.values[c + m] + density.values[c - m]);
            if next > mass {
                break;
            }
            acc = next;
            m += 1;
        }
        Some(Self::new(0.0, m as f64 * h))
    }
}

impl GridPrescription for ThresholdPrescription {
    fn transmits_at(&self, grid: &GridDensity, i: usize) -> bool {
        self.transmits(grid.point(i))
    }
}

impl GridPrescription for Prescription {
    fn transmits_at(&self, _grid: &GridDensity, i: usize) -> bool {
        self.transmits(i)
    }
}

/// Reception outcome `H_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceptionFlag {
    Blank0,
    Blank1,
    Received,
}

impl ReceptionFlag {
    pub const ALL: [ReceptionFlag; 3] = [ReceptionFlag::Blank0, ReceptionFlag::Blank1, ReceptionFlag::Received];
}

/// Noise density discretised on a lattice of spacing `h` with midpoint
/// weights, truncated at the family's truncation radius and normalised to
/// sum to 1. Weights are symmetric bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseKernel {
    radius: usize,
    weights: Vec<f64>,
}

impl NoiseKernel {
    pub fn new(noise: &NoiseSpec, h: f64) -> Self {
        let radius = (noise.truncation_radius() / h + 1e-9).floor() as usize;
        let half: Vec<f64> = (0..=radius).map(|j| noise.density(j as f64 * h)).collect();
        let total = half[0] + 2.0 * half[1..].iter().sum::<f64>();
        let mut weights = Vec::with_capacity(2 * radius + 1);
        weights.extend(half.iter().rev().map(|w| w / total));
        weights.extend(half[1..].iter().map(|w| w / total));
        Self { radius, weights }
    }

    /// Number of lattice cells on each side of 0.
    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Weights for offsets `-radius..=radius`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, offset: isize) -> f64 {
        let idx = offset + self.radius as isize;
        if idx < 0 || idx as usize >= self.weights.len() {
            0.0
        } else {
            self.weights[idx as usize]
        }
    }
}

/// Density of `a * E` on the same grid, by exact cell averaging of the
/// piecewise-constant density. Returns the rescaled values and the mass
/// that fell outside the grid.
fn scale_density(post: &GridDensity, a: f64) -> (Vec<f64>, f64) {
    let n = post.n_points();
    let c = post.center_index() as isize;
    let abs_a = a.abs();
    let mut out = vec![0.0; n];
    let mut lost = 0.0;
    let h = post.h();
    for (k, &v) in post.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let mid = a * (k as isize - c) as f64;
        let lo = mid - 0.5 * abs_a;
        let hi = mid + 0.5 * abs_a;
        let j_lo = (lo + 0.5).floor() as isize;
        let j_hi = (hi + 0.5).floor() as isize;
        let mut placed = 0.0;
        for j in j_lo..=j_hi {
            let overlap = hi.min(j as f64 + 0.5) - lo.max(j as f64 - 0.5);
            if overlap <= 0.0 {
                continue;
            }
            let idx = j + c;
            if idx >= 0 && (idx as usize) < n {
                out[idx as usize] += v * overlap / abs_a;
                placed += overlap;
            }
        }
        lost += h * v * (1.0 - placed / abs_a);
    }
    (out, lost)
}

/// Pre-transmission error density at the next step.
///
/// With `received == false` this is the density of `a E^+ + W`: the post
/// density rescaled by `a` and convolved with the noise kernel. With
/// `received == true` the error restarts from the noise density.
pub fn f1_error(post: &GridDensity, a: f64, noise: &NoiseSpec, received: bool) -> Result<GridDensity> {
    if received {
        return GridDensity::from_noise(post.half_width, post.n_points(), noise);
    }
    if !a.is_finite() || a == 0.0 {
        return Err(Error::InvalidModel(format!("AR(1) gain must be finite and nonzero, got {a}")));
    }
    let h = post.h();
    let (scaled, lost) = scale_density(post, a);
    if lost > MASS_TOL {
        return Err(Error::TruncationOverflow { mass: post.mass() - lost, tol: MASS_TOL });
    }
    let kernel = NoiseKernel::new(noise, h);
    let n = post.n_points() as isize;
    let r = kernel.radius() as isize;
    let mut values = vec![0.0; post.n_points()];
    par::fill_indexed(&mut values, |i| {
        let i = i as isize;
        let lo = (-r).max(i - (n - 1));
        let hi = r.min(i);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += kernel.weights[(j + r) as usize] * scaled[(i - j) as usize];
        }
        acc
    });
    let out = GridDensity { half_width: post.half_width, values };
    let mass = out.mass();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::TruncationOverflow { mass, tol: MASS_TOL });
    }
    out.normalized()
}

/// Post-transmission error density given the reception flag.
pub fn f2_error<P: GridPrescription + ?Sized>(pre: &GridDensity, phi: &P, flag: ReceptionFlag) -> Result<GridDensity> {
    match flag {
        ReceptionFlag::Received => GridDensity::dirac(pre.half_width, pre.n_points()),
        ReceptionFlag::Blank0 => Ok(pre.clone()),
        ReceptionFlag::Blank1 => {
            let values: Vec<f64> = (0..pre.n_points())
                .map(|i| if phi.transmits_at(pre, i) { 0.0 } else { pre.values[i] })
                .collect();
            let restricted = GridDensity { half_width: pre.half_width, values };
            let mass = restricted.mass();
            if mass <= CONDITIONING_TOL {
                return Err(Error::DegenerateConditioning { mass });
            }
            restricted.normalized()
        }
    }
}

/// `min_xhat  sum_i h d(e_i - xhat) pi(e_i)` over grid candidates.
///
/// Candidates within a relative `1e-12` of the minimum are treated as tied
/// and the one closest to 0 (then the negative one) is returned, so that
/// symmetric densities report their centre despite roundoff.
pub fn expected_distortion_grid(post: &GridDensity, d: &DistortionFn) -> (f64, f64) {
    let n = post.n_points();
    let h = post.h();
    let costs = par::map_range(n, |j| {
        let mut acc = 0.0;
        for (i, &v) in post.values.iter().enumerate() {
            if v != 0.0 {
                acc += d.eval((i as f64 - j as f64) * h) * v;
            }
        }
        acc * h
    });
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = 1e-12 * min.abs().max(1.0);
    let c = post.center_index() as isize;
    let best = (0..n)
        .filter(|&j| costs[j] <= min + slack)
        .min_by_key(|&j| {
            let off = j as isize - c;
            (off.abs(), off > 0)
        })
        .unwrap_or(post.center_index());
    (min, post.point(best))
}
