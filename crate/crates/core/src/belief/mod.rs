//! Pre- and post-transmission belief filters.
//!
//! For finite-alphabet sources the beliefs are probability vectors
//! ([`FinitePmf`]). For AR(1) sources the filters act on the conditional
//! density of the error process, represented on a symmetric uniform grid
//! ([`GridDensity`]).

mod grid;
mod majorization;

pub use grid::{
    expected_distortion_grid, f1_error, f2_error, GridDensity, GridPrescription, NoiseKernel, ReceptionFlag,
    ThresholdPrescription,
    MASS_TOL,
};
pub use majorization::{concentration_profile, is_asu, majorizes, majorizes_within, symmetric_decreasing_rearrangement};

use serde::{Deserialize, Serialize};

use crate::models::{ChannelSymbol, FiniteDistortion, FiniteMarkovSource};
use crate::{Error, Result};

/// Probability vector over a finite source alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePmf {
    probs: Vec<f64>,
}

impl FinitePmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidModel(format!("not a probability vector: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("probability vector sums to {total}")));
        }
        Ok(Self { probs })
    }

    /// Dirac measure at `x`.
    pub fn one_hot(n: usize, x: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[x] = 1.0;
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `pi(B_i(phi))`.
    pub fn mass_where(&self, phi: &Prescription, transmit: bool) -> f64 {
        self.probs.iter().zip(phi.decide()).filter(|(_, &u)| u == transmit).map(|(p, _)| p).sum()
    }

    /// Components rounded to 12 decimal digits; used to deduplicate beliefs.
    pub fn key(&self) -> Vec<i64> {
        self.probs.iter().map(|p| (p * 1e12).round() as i64).collect()
    }
}

/// Map from the source alphabet (or grid) to transmit decisions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prescription {
    decide: Vec<bool>,
}

impl Prescription {
    pub fn new(decide: Vec<bool>) -> Self {
        Self { decide }
    }

    pub fn never(n: usize) -> Self {
        Self { decide: vec![false; n] }
    }

    pub fn always(n: usize) -> Self {
        Self { decide: vec![true; n] }
    }

    /// Prescription number `mask` in lexicographic order of the decision
    /// vector: `decide[0]` is the most significant bit.
    pub fn from_mask(n: usize, mask: u32) -> Self {
        Self { decide: (0..n).map(|x| (mask >> (n - 1 - x)) & 1 == 1).collect() }
    }

    pub fn mask(&self) -> u32 {
        self.decide.iter().fold(0u32, |acc, &u| (acc << 1) | u as u32)
    }

    pub fn decide(&self) -> &[bool] {
        &self.decide
    }

    pub fn transmits(&self, x: usize) -> bool {
        self.decide[x]
    }

    pub fn len(&self) -> usize {
        self.decide.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decide.is_empty()
    }

    /// `B_0(phi)`, the no-transmission set.
    pub fn silent_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.decide.iter().enumerate().filter(|(_, &u)| !u).map(|(x, _)| x)
    }

    /// `B_1(phi)`, the transmission set.
    pub fn transmit_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.decide.iter().enumerate().filter(|(_, &u)| u).map(|(x, _)| x)
    }
}

/// `pi^2 P`, the pre-transmission belief one step later.
pub fn f1_finite(post: &FinitePmf, source: &FiniteMarkovSource) -> Result<FinitePmf> {
    let n = source.n_states();
    if post.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: post.len() });
    }
    let mut next = vec![0.0; n];
    for (x, &px) in post.probs.iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        for (y, &pxy) in source.transition[x].iter().enumerate() {
            next[y] += px * pxy;
        }
    }
    Ok(FinitePmf { probs: next })
}

/// `pi^1|_phi`: restriction to `B_0(phi)`, renormalised.
pub fn restrict_to_silent(pre: &FinitePmf, phi: &Prescription) -> Result<FinitePmf> {
    if phi.len() != pre.len() {
        return Err(Error::DimensionMismatch { expected: pre.len(), got: phi.len() });
    }
    let mass = pre.mass_where(phi, false);
    if mass <= 0.0 {
        return Err(Error::DegenerateConditioning { mass });
    }
    let probs = pre.probs.iter().zip(phi.decide()).map(|(&p, &u)| if u { 0.0 } else { p / mass }).collect();
    Ok(FinitePmf { probs })
}

/// Post-transmission belief after observing `y`.
pub fn f2_finite(pre: &FinitePmf, phi: &Prescription, y: &ChannelSymbol<usize>) -> Result<FinitePmf> {
    match *y {
        ChannelSymbol::Payload(x) => {
            if x >= pre.len() {
                return Err(Error::SymbolOutOfRange { symbol: x, n_states: pre.len() });
            }
            Ok(FinitePmf::one_hot(pre.len(), x))
        }
        ChannelSymbol::Blank1 => restrict_to_silent(pre, phi),
        ChannelSymbol::Blank0 => Ok(pre.clone()),
    }
}

/// Minimum expected distortion and its minimiser; ties go to the smallest index.
pub fn expected_distortion_finite(post: &FinitePmf, d: &FiniteDistortion) -> (f64, usize) {
    let n = post.len();
    let mut best = (f64::INFINITY, 0);
    for xhat in 0..n {
        let v: f64 = post.probs.iter().enumerate().map(|(x, p)| d.eval(x, xhat) * p).sum();
        if v < best.0 {
            best = (v, xhat);
        }
    }
    best
}
