//! Source, channel, distortion and cost models.
//!
//! All model values are immutable after validation. Samplers never own a
//! random generator; callers pass one in so parallel replications can use
//! independent streams.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

fn check_prob_vector(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidModel(format!("{name}: empty probability vector")));
    }
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidModel(format!("{name}[{i}] = {v} is not a probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

fn check_stochastic(name: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    if m.len() != n {
        return Err(Error::InvalidModel(format!("{name}: expected {n} rows, got {}", m.len())));
    }
    for (r, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidModel(format!(
                "{name} row {r}: expected {n} entries, got {}",
                row.len()
            )));
        }
        check_prob_vector(&format!("{name} row {r}"), row)?;
    }
    Ok(())
}

/// Channel state. `Off` drops every packet, `On` delivers it error-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelState {
    Off,
    On,
}

impl ChannelState {
    pub const BOTH: [ChannelState; 2] = [ChannelState::Off, ChannelState::On];

    pub fn index(self) -> usize {
        match self {
            ChannelState::Off => 0,
            ChannelState::On => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            ChannelState::Off
        } else {
            ChannelState::On
        }
    }
}

/// Channel output symbol. `Blank0` means the channel was off; `Blank1` means
/// the channel was on and nothing was sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSymbol<T> {
    Payload(T),
    Blank0,
    Blank1,
}

impl<T: Copy> ChannelSymbol<T> {
    pub fn payload(&self) -> Option<T> {
        match self {
            ChannelSymbol::Payload(v) => Some(*v),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ChannelSymbol::Payload(_) => "payload",
            ChannelSymbol::Blank0 => "blank0",
            ChannelSymbol::Blank1 => "blank1",
        }
    }
}

/// Deterministic channel output for input `input` (absent = no transmission)
/// in channel state `state`.
pub fn channel_output<T>(input: Option<T>, state: ChannelState) -> ChannelSymbol<T> {
    match (input, state) {
        (_, ChannelState::Off) => ChannelSymbol::Blank0,
        (Some(x), ChannelState::On) => ChannelSymbol::Payload(x),
        (None, ChannelState::On) => ChannelSymbol::Blank1,
    }
}

/// Two-state Markov channel. `q[r][s]` is the probability of moving from
/// state `r` to state `s`; `initial` is the distribution of the state one
/// step before the first channel use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GilbertElliottChannel {
    pub q: [[f64; 2]; 2],
    pub initial: [f64; 2],
}

impl GilbertElliottChannel {
    pub fn new(q: [[f64; 2]; 2], initial: [f64; 2]) -> Result<Self> {
        let ch = Self { q, initial };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        for (r, row) in self.q.iter().enumerate() {
            check_prob_vector(&format!("channel q row {r}"), row)?;
        }
        check_prob_vector("channel initial", &self.initial)
    }

    pub fn transition(&self, from: ChannelState, to: ChannelState) -> f64 {
        self.q[from.index()][to.index()]
    }

    /// Next state given the previous one and a uniform draw on `[0, 1)`.
    pub fn step(&self, s: ChannelState, draw: f64) -> ChannelState {
        if draw < self.q[s.index()][1] {
            ChannelState::On
        } else {
            ChannelState::Off
        }
    }

    pub fn sample_initial(&self, draw: f64) -> ChannelState {
        if draw < self.initial[1] {
            ChannelState::On
        } else {
            ChannelState::Off
        }
    }

    /// Stationary distribution. Reducible chains (`q01 + q10 == 0`) return
    /// the initial distribution, which is then invariant.
    pub fn stationary(&self) -> [f64; 2] {
        let up = self.q[0][1];
        let down = self.q[1][0];
        if up + down == 0.0 {
            return self.initial;
        }
        [down / (up + down), up / (up + down)]
    }
}

/// `channel.step(s, draw)` as a free function.
pub fn channel_step(channel: &GilbertElliottChannel, s: ChannelState, draw: f64) -> ChannelState {
    channel.step(s, draw)
}

/// Symmetric unimodal noise families with closed-form densities and tails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    /// `scale` is the standard deviation.
    Gaussian,
    /// `scale` is the diversity `b`; density `exp(-|w|/b) / 2b`.
    Laplace,
    /// Uniform on `[-scale, scale]`.
    Uniform,
    /// Triangular on `[-scale, scale]` with peak at 0.
    Triangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<Self> {
        let n = Self { family, scale };
        n.validate()?;
        Ok(n)
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self { family: NoiseFamily::Gaussian, scale: sigma }
    }

    pub fn laplace(b: f64) -> Self {
        Self { family: NoiseFamily::Laplace, scale: b }
    }

    pub fn uniform(half_width: f64) -> Self {
        Self { family: NoiseFamily::Uniform, scale: half_width }
    }

    pub fn triangular(half_width: f64) -> Self {
        Self { family: NoiseFamily::Triangular, scale: half_width }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidModel(format!(
                "noise scale must be positive and finite, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Density `mu(w)`. Evaluated on `|w|`, so `density(w) == density(-w)`
    /// bit for bit.
    pub fn density(&self, w: f64) -> f64 {
        let x = w.abs();
        let c = self.scale;
        match self.family {
            NoiseFamily::Gaussian => {
                let z = x / c;
                (-0.5 * z * z).exp() / (c * (2.0 * std::f64::consts::PI).sqrt())
            }
            NoiseFamily::Laplace => (-x / c).exp() / (2.0 * c),
            NoiseFamily::Uniform => {
                if x <= c {
                    0.5 / c
                } else {
                    0.0
                }
            }
            NoiseFamily::Triangular => {
                if x <= c {
                    (c - x) / (c * c)
                } else {
                    0.0
                }
            }
        }
    }

    /// Upper tail `P(W > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0 - self.survival(-x);
        }
        let c = self.scale;
        match self.family {
            NoiseFamily::Gaussian => 0.5 * erfc(x / (c * std::f64::consts::SQRT_2)),
            NoiseFamily::Laplace => 0.5 * (-x / c).exp(),
            NoiseFamily::Uniform => ((c - x) / (2.0 * c)).clamp(0.0, 0.5),
            NoiseFamily::Triangular => {
                if x >= c {
                    0.0
                } else {
                    let r = c - x;
                    r * r / (2.0 * c * c)
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.survival(-x)
    }

    /// Radius beyond which grid work treats the density as zero.
    ///
    /// Gaussian: 8 sigma (two-sided tail mass 1.2e-15). Laplace: 34 b (tail
    /// mass 1.7e-15). Uniform and triangular: the exact support.
    pub fn truncation_radius(&self) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => 8.0 * self.scale,
            NoiseFamily::Laplace => 34.0 * self.scale,
            NoiseFamily::Uniform | NoiseFamily::Triangular => self.scale,
        }
    }

    /// Two-sided probability mass outside `truncation_radius()`.
    pub fn truncated_mass(&self) -> f64 {
        2.0 * self.survival(self.truncation_radius())
    }

    pub fn std_dev(&self) -> f64 {
        let c = self.scale;
        match self.family {
            NoiseFamily::Gaussian => c,
            NoiseFamily::Laplace => c * std::f64::consts::SQRT_2,
            NoiseFamily::Uniform => c / 3f64.sqrt(),
            NoiseFamily::Triangular => c / 6f64.sqrt(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = self.scale;
        match self.family {
            NoiseFamily::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                c * z
            }
            NoiseFamily::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                // 1 - 2|u| lies in (0, 1]
                -c * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseFamily::Uniform => c * (2.0 * rng.random::<f64>() - 1.0),
            NoiseFamily::Triangular => {
                let u: f64 = rng.random();
                if u < 0.5 {
                    -c + c * (2.0 * u).sqrt()
                } else {
                    c - c * (2.0 * (1.0 - u)).sqrt()
                }
            }
        }
    }
}

/// First-order autoregressive source `X_{t+1} = a X_t + W_t`, `X_0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Source {
    pub a: f64,
    pub noise: NoiseSpec,
}

impl Ar1Source {
    pub fn new(a: f64, noise: NoiseSpec) -> Result<Self> {
        let s = Self { a, noise };
        s.validate()?;
        Ok(s)
    }

    /// Rejects `a == 0`: the estimator recursion would be identically zero.
    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || self.a == 0.0 {
            return Err(Error::InvalidModel(format!("AR(1) gain must be finite and nonzero, got {}", self.a)));
        }
        self.noise.validate()
    }

    pub fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        ar1_step(self, x, self.noise.sample(rng))
    }
}

/// `a x + w`.
pub fn ar1_step(source: &Ar1Source, x: f64, w: f64) -> f64 {
    source.a * x + w
}

/// Finite-alphabet Markov source with row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMarkovSource {
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl FiniteMarkovSource {
    pub fn new(transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let s = Self { transition, initial };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.initial.len();
        if n == 0 {
            return Err(Error::InvalidModel("source must have at least one state".into()));
        }
        check_prob_vector("source initial", &self.initial)?;
        check_stochastic("source transition", &self.transition, n)
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    /// Inverse-CDF draw from row `x` of the transition matrix.
    pub fn sample_next(&self, x: usize, draw: f64) -> usize {
        sample_categorical(&self.transition[x], draw)
    }

    pub fn sample_initial(&self, draw: f64) -> usize {
        sample_categorical(&self.initial, draw)
    }
}

fn sample_categorical(p: &[f64], draw: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last_positive = i;
        }
        acc += pi;
        if draw < acc && pi > 0.0 {
            return i;
        }
    }
    last_positive
}

/// Even distortion `d(e)` for real-valued sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionFn {
    Squared,
    Absolute,
    /// `|e|^p`, `p > 0`.
    EvenPower { p: f64 },
}

impl DistortionFn {
    pub fn validate(&self) -> Result<()> {
        if let DistortionFn::EvenPower { p } = self {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::InvalidModel(format!("even-power exponent must be positive, got {p}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, e: f64) -> f64 {
        match self {
            DistortionFn::Squared => e * e,
            DistortionFn::Absolute => e.abs(),
            DistortionFn::EvenPower { p } => e.abs().powf(*p),
        }
    }
}

/// Tabulated distortion `d(x, xhat)` for finite sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistortion {
    pub matrix: Vec<Vec<f64>>,
}

impl FiniteDistortion {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self { matrix };
        d.validate()?;
        Ok(d)
    }

    /// `d(x, xhat) = 1{x != xhat}`.
    pub fn zero_one(n: usize) -> Self {
        let matrix = (0..n).map(|x| (0..n).map(|y| if x == y { 0.0 } else { 1.0 }).collect()).collect();
        Self { matrix }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.matrix.len();
        for (r, row) in self.matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidModel(format!("distortion row {r}: expected {n} entries, got {}", row.len())));
            }
            if let Some((c, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidModel(format!("distortion[{r}][{c}] = {v} must be nonnegative")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.matrix.len()
    }

    pub fn eval(&self, x: usize, xhat: usize) -> f64 {
        self.matrix[x][xhat]
    }

    pub fn max_value(&self) -> f64 {
        self.matrix.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Per-step cost `lambda u + d(x - xhat)` for real-valued sources.
pub fn step_cost(lambda: f64, transmit: bool, d: &DistortionFn, x: f64, xhat: f64) -> f64 {
    let comm = if transmit { lambda } else { 0.0 };
    comm + d.eval(x - xhat)
}

/// Per-step cost `lambda u + d(x, xhat)` for finite sources.
pub fn step_cost_finite(lambda: f64, transmit: bool, d: &FiniteDistortion, x: usize, xhat: usize) -> f64 {
    let comm = if transmit { lambda } else { 0.0 };
    comm + d.eval(x, xhat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn channel_output_table() {
        assert_eq!(channel_output(Some(2.5), ChannelState::On), ChannelSymbol::Payload(2.5));
        assert_eq!(channel_output::<f64>(None, ChannelState::On), ChannelSymbol::Blank1);
        assert_eq!(channel_output(Some(2.5), ChannelState::Off), ChannelSymbol::Blank0);
        assert_eq!(channel_output::<f64>(None, ChannelState::Off), ChannelSymbol::Blank0);
    }

    #[test]
    fn deterministic_channels() {
        let absorbing_off = GilbertElliottChannel::new([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0]).unwrap();
        let always_on = GilbertElliottChannel::new([[0.0, 1.0], [0.0, 1.0]], [1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let u: f64 = rng.random();
            assert_eq!(absorbing_off.step(ChannelState::Off, u), ChannelState::Off);
            assert_eq!(always_on.step(ChannelState::Off, u), ChannelState::On);
        }
    }

    #[test]
    fn fair_channel_frequency() {
        let ch = GilbertElliottChannel::new([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let ones = (0..n).filter(|_| ch.step(ChannelState::Off, rng.random()) == ChannelState::On).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.002, "freq {freq}");
    }

    #[test]
    fn channel_rows_match_empirically() {
        let ch = GilbertElliottChannel::new([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000usize;
        for s in ChannelState::BOTH {
            let ones = (0..n).filter(|_| ch.step(s, rng.random()) == ChannelState::On).count();
            let q1 = ch.q[s.index()][1];
            let tol = 3.0 * (q1 * (1.0 - q1) / n as f64).sqrt();
            assert!((ones as f64 / n as f64 - q1).abs() < tol);
        }
    }

    #[test]
    fn ar1_arithmetic() {
        let src = Ar1Source::new(1.0, NoiseSpec::gaussian(1.0)).unwrap();
        assert_eq!(ar1_step(&src, 0.0, 0.3), 0.3);
        let src = Ar1Source::new(2.0, NoiseSpec::gaussian(1.0)).unwrap();
        assert_eq!(ar1_step(&src, 1.5, -1.0), 2.0);
    }

    #[test]
    fn ar1_uniform_noise_mean() {
        let src = Ar1Source::new(1.0, NoiseSpec::uniform(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1_000_000;
        let mean = (0..n).map(|_| src.step(0.0, &mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn zero_gain_rejected() {
        assert!(Ar1Source::new(0.0, NoiseSpec::gaussian(1.0)).is_err());
        assert!(Ar1Source::new(f64::NAN, NoiseSpec::gaussian(1.0)).is_err());
    }

    #[test]
    fn step_costs() {
        assert_eq!(step_cost(1.0, true, &DistortionFn::Squared, 1.2, 1.2), 1.0);
        assert_eq!(step_cost(0.5, false, &DistortionFn::Squared, 2.0, 0.0), 4.0);
        assert_eq!(step_cost(0.0, false, &DistortionFn::Absolute, -1.5, 1.5), 3.0);
    }

    #[test]
    fn malformed_channel_names_row() {
        let err = GilbertElliottChannel::new([[0.7, 0.3], [0.2, 0.7]], [0.5, 0.5]).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn noise_densities_are_symmetric_unimodal_and_normalized() {
        for noise in [NoiseSpec::gaussian(1.3), NoiseSpec::laplace(0.7), NoiseSpec::uniform(2.0), NoiseSpec::triangular(1.5)] {
            let r = noise.truncation_radius();
            let n = 200_001;
            let h = 2.0 * r / (n - 1) as f64;
            let mut mass = 0.0;
            let mut prev = noise.density(0.0);
            for i in 0..n {
                let w = -r + i as f64 * h;
                assert_eq!(noise.density(w), noise.density(-w));
                mass += noise.density(w) * h;
                if w > 0.0 {
                    let d = noise.density(w);
                    assert!(d <= prev + 1e-15);
                    prev = d;
                }
            }
            assert!(noise.truncated_mass() < 1e-14, "{noise:?}");
            assert!((mass - 1.0).abs() < 1e-3, "{noise:?} mass {mass}");
        }
    }

    #[test]
    fn survival_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for noise in [NoiseSpec::gaussian(1.0), NoiseSpec::laplace(1.0), NoiseSpec::uniform(1.0), NoiseSpec::triangular(1.0)] {
            let n = 400_000;
            let x = 0.5;
            let above = (0..n).filter(|_| noise.sample(&mut rng) > x).count() as f64 / n as f64;
            let p = noise.survival(x);
            assert!((above - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{noise:?}: {above} vs {p}");
        }
    }

    #[test]
    fn finite_source_sampling_respects_support() {
        let src = FiniteMarkovSource::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 0.0]).unwrap();
        assert_eq!(src.sample_initial(0.999_999), 0);
        assert_eq!(src.sample_next(0, 0.0), 1);
        assert_eq!(src.sample_next(1, 0.5), 0);
    }
}
