//! Brute-force ground truth on tiny finite instances.
//!
//! Information sets are keyed by the common history
//! `(S_{-1}, (S_0, Y_0), ..., (S_{t-1}, Y_{t-1}))`. The transmitter also sees
//! its private data: `X_t` alone (`Restricted`) or the whole path `X_{0:t}`
//! (`Full`). Its past decisions are functions of these and are not part of
//! the key. The receiver at `t` sees the common history through `(S_t, Y_t)`.
//! The initial channel state `S_{-1}` is known to both agents.
//!
//! [`exhaustive_search`] minimises over every strategy profile, exploiting
//! that choices at distinct common histories act on disjoint subtrees: each
//! node enumerates all local transmitter maps, the receiver best-responds
//! per information set, and subtree minima add up. No beliefs are formed;
//! the node carries unnormalised joint weights of the private data.
//! [`exhaustive_search_literal`] enumerates complete transmitter strategies
//! instead and is only feasible on the smallest cases.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp_finite::FiniteDPSolution;
use crate::models::{channel_output, ChannelState, ChannelSymbol, FiniteDistortion, FiniteMarkovSource, GilbertElliottChannel};
use crate::simulator::{aggregate, replication_rng, CostEstimate, Replication};
use crate::sum::Compensated;
use crate::{par, Error, Result};

pub const MAX_STATES: usize = 2;
pub const MAX_HORIZON: usize = 2;
/// Bound on enumeration work (node evaluations or strategy profiles).
pub const WORK_GUARD: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    pub source: FiniteMarkovSource,
    pub channel: GilbertElliottChannel,
    pub distortion: FiniteDistortion,
    pub lambda: f64,
    pub horizon: usize,
}

impl TinyInstance {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.distortion.validate()?;
        let n = self.source.n_states();
        if n > MAX_STATES {
            return Err(Error::Guard(format!("oracle supports at most {MAX_STATES} source states, got {n}")));
        }
        if self.horizon > MAX_HORIZON {
            return Err(Error::Guard(format!("oracle supports horizon T <= {MAX_HORIZON}, got {}", self.horizon)));
        }
        if self.distortion.n_states() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.distortion.n_states() });
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidModel(format!("lambda must be a nonnegative number, got {}", self.lambda)));
        }
        Ok(())
    }

    fn n(&self) -> usize {
        self.source.n_states()
    }

    fn roots(&self) -> impl Iterator<Item = ChannelState> + '_ {
        ChannelState::BOTH.into_iter().filter(|s| self.channel.initial[s.index()] > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Full,
    Restricted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommonHistory {
    pub s_init: ChannelState,
    pub steps: Vec<(ChannelState, ChannelSymbol<usize>)>,
}

impl CommonHistory {
    pub fn root(s_init: ChannelState) -> Self {
        Self { s_init, steps: Vec::new() }
    }

    pub fn t(&self) -> usize {
        self.steps.len()
    }

    pub fn last_state(&self) -> ChannelState {
        self.steps.last().map_or(self.s_init, |st| st.0)
    }

    pub fn extended(&self, s: ChannelState, y: ChannelSymbol<usize>) -> Self {
        let mut steps = self.steps.clone();
        steps.push((s, y));
        Self { s_init: self.s_init, steps }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxInfoSet {
    pub history: CommonHistory,
    /// `[x_t]` or `x_{0:t}`.
    pub local: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrategyProfile {
    pub transmitter: BTreeMap<TxInfoSet, bool>,
    pub receiver: BTreeMap<CommonHistory, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileExport {
    pub transmitter: Vec<(TxInfoSet, bool)>,
    pub receiver: Vec<(CommonHistory, usize)>,
}

impl StrategyProfile {
    pub fn export(&self) -> ProfileExport {
        ProfileExport {
            transmitter: self.transmitter.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            receiver: self.receiver.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        }
    }
}

fn local_key(granularity: Granularity, xs: &[usize]) -> Vec<usize> {
    match granularity {
        Granularity::Restricted => vec![*xs.last().expect("nonempty path")],
        Granularity::Full => xs.to_vec(),
    }
}

/// Expected total cost by summing over every joint realisation of sources
/// and channel states. Any information set reached with positive
/// probability must be in the profile.
pub fn exact_cost(inst: &TinyInstance, profile: &StrategyProfile, granularity: Granularity) -> Result<f64> {
    inst.validate()?;
    let mut acc = Compensated::default();
    for s_init in inst.roots() {
        for (x0, &p0) in inst.source.initial.iter().enumerate() {
            if p0 > 0.0 {
                let p = inst.channel.initial[s_init.index()] * p0;
                walk(inst, profile, granularity, &CommonHistory::root(s_init), &mut vec![x0], p, 0.0, &mut acc)?;
            }
        }
    }
    Ok(acc.value())
}

#[allow(clippy::too_many_arguments)]
fn walk(
    inst: &TinyInstance,
    profile: &StrategyProfile,
    granularity: Granularity,
    hist: &CommonHistory,
    xs: &mut Vec<usize>,
    prob: f64,
    cost: f64,
    acc: &mut Compensated,
) -> Result<()> {
    let t = hist.t();
    let x = *xs.last().expect("nonempty path");
    let key = TxInfoSet { history: hist.clone(), local: local_key(granularity, xs) };
    let u = *profile.transmitter.get(&key).ok_or_else(|| Error::MissingInfoSet(format!("{key:?}")))?;
    let q = inst.channel.q[hist.last_state().index()];
    for s in ChannelState::BOTH {
        let ps = q[s.index()];
        if ps == 0.0 {
            continue;
        }
        let y = channel_output(u.then_some(x), s);
        let next = hist.extended(s, y);
        let xhat = *profile.receiver.get(&next).ok_or_else(|| Error::MissingInfoSet(format!("{next:?}")))?;
        let c = cost + if u { inst.lambda } else { 0.0 } + inst.distortion.eval(x, xhat);
        if t == inst.horizon {
            acc.add(prob * ps * c);
            continue;
        }
        for (x2, &px) in inst.source.transition[x].iter().enumerate() {
            if px > 0.0 {
                xs.push(x2);
                walk(inst, profile, granularity, &next, xs, prob * ps * px, c, acc)?;
                xs.pop();
            }
        }
    }
    Ok(())
}

/// Private items at a node: local key and joint weight with the history.
type Items = Vec<(Vec<usize>, f64)>;

fn best_estimate(items: &Items, d: &FiniteDistortion, n: usize) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for xhat in 0..n {
        let v: f64 = items.iter().map(|(k, w)| w * d.eval(*k.last().unwrap(), xhat)).sum();
        if v < best.0 {
            best = (v, xhat);
        }
    }
    best
}

struct Search<'a> {
    inst: &'a TinyInstance,
    granularity: Granularity,
}

/// Outcome of sending under local map `mask`: child history and items.
struct Child {
    s: ChannelState,
    y: ChannelSymbol<usize>,
    items: Items,
}

impl Search<'_> {
    fn transmits(mask: u64, len: usize, k: usize) -> bool {
        (mask >> (len - 1 - k)) & 1 == 1
    }

    fn children(&self, hist: &CommonHistory, items: &Items, mask: u64) -> Vec<Child> {
        let q = self.inst.channel.q[hist.last_state().index()];
        let len = items.len();
        let mut out = Vec::new();
        if q[0] > 0.0 {
            out.push(Child { s: ChannelState::Off, y: ChannelSymbol::Blank0, items: items.iter().map(|(k, w)| (k.clone(), w * q[0])).collect() });
        }
        if q[1] > 0.0 {
            let silent: Items = items
                .iter()
                .enumerate()
                .filter(|(k, _)| !Self::transmits(mask, len, *k))
                .map(|(_, (key, w))| (key.clone(), w * q[1]))
                .collect();
            if silent.iter().any(|(_, w)| *w > 0.0) {
                out.push(Child { s: ChannelState::On, y: ChannelSymbol::Blank1, items: silent });
            }
            for x in 0..self.inst.n() {
                let sent: Items = items
                    .iter()
                    .enumerate()
                    .filter(|(k, (key, _))| Self::transmits(mask, len, *k) && *key.last().unwrap() == x)
                    .map(|(_, (key, w))| (key.clone(), w * q[1]))
                    .collect();
                if sent.iter().any(|(_, w)| *w > 0.0) {
                    out.push(Child { s: ChannelState::On, y: ChannelSymbol::Payload(x), items: sent });
                }
            }
        }
        out
    }

    fn advance(&self, items: &Items) -> Items {
        let p = &self.inst.source.transition;
        let n = self.inst.n();
        match self.granularity {
            Granularity::Restricted => (0..n)
                .map(|x2| (vec![x2], items.iter().map(|(k, w)| w * p[*k.last().unwrap()][x2]).sum()))
                .collect(),
            Granularity::Full => {
                let mut out = Vec::with_capacity(items.len() * n);
                for (k, w) in items {
                    for x2 in 0..n {
                        let mut key = k.clone();
                        key.push(x2);
                        out.push((key, w * p[*k.last().unwrap()][x2]));
                    }
                }
                out
            }
        }
    }

    /// Cost of local map `mask` plus optimal continuation.
    fn mask_value(&self, hist: &CommonHistory, items: &Items, mask: u64) -> f64 {
        let len = items.len();
        let mut v: f64 = items.iter().enumerate().filter(|(k, _)| Self::transmits(mask, len, *k)).map(|(_, (_, w))| self.inst.lambda * w).sum();
        for ch in self.children(hist, items, mask) {
            v += best_estimate(&ch.items, &self.inst.distortion, self.inst.n()).0;
            if hist.t() < self.inst.horizon {
                v += self.value(&hist.extended(ch.s, ch.y), &self.advance(&ch.items));
            }
        }
        v
    }

    fn best_mask(&self, hist: &CommonHistory, items: &Items) -> (f64, u64) {
        let mut best = (f64::INFINITY, 0);
        for mask in 0..(1u64 << items.len()) {
            let v = self.mask_value(hist, items, mask);
            if v < best.0 {
                best = (v, mask);
            }
        }
        best
    }

    fn value(&self, hist: &CommonHistory, items: &Items) -> f64 {
        self.best_mask(hist, items).0
    }

    fn record(&self, hist: &CommonHistory, items: &Items, profile: &mut StrategyProfile) {
        let (_, mask) = self.best_mask(hist, items);
        let len = items.len();
        for (k, (key, _)) in items.iter().enumerate() {
            profile.transmitter.insert(TxInfoSet { history: hist.clone(), local: key.clone() }, Self::transmits(mask, len, k));
        }
        for ch in self.children(hist, items, mask) {
            let next = hist.extended(ch.s, ch.y);
            profile.receiver.insert(next.clone(), best_estimate(&ch.items, &self.inst.distortion, self.inst.n()).1);
            if hist.t() < self.inst.horizon {
                self.record(&next, &self.advance(&ch.items), profile);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub min_cost: f64,
    pub argmin: StrategyProfile,
    /// Node-level work of the decomposed search.
    pub work: f64,
    /// `log10` of the number of complete strategy profiles.
    pub literal_profiles_log10: f64,
}

fn local_count(granularity: Granularity, n: usize, t: usize) -> u32 {
    match granularity {
        Granularity::Restricted => n as u32,
        Granularity::Full => (n as u32).pow(t as u32 + 1),
    }
}

/// Upper bound on node evaluations of [`exhaustive_search`].
pub fn decomposed_work(inst: &TinyInstance, granularity: Granularity) -> f64 {
    let n = inst.n();
    let fanout = (n + 2) as f64;
    let mut w = 0.0;
    for t in (0..=inst.horizon).rev() {
        let options = 2f64.powi(local_count(granularity, n, t) as i32);
        w = options * fanout * (1.0 + w);
    }
    w * inst.roots().count() as f64
}

/// `log10` of (transmitter strategies x receiver strategies) over all
/// common histories.
pub fn literal_profiles_log10(inst: &TinyInstance, granularity: Granularity) -> f64 {
    let n = inst.n();
    let roots = inst.roots().count() as f64;
    let per_step = (n + 2) as f64;
    let mut tx_bits = 0.0;
    let mut rx_sets = 0.0;
    for t in 0..=inst.horizon {
        let hist = roots * per_step.powi(t as i32);
        tx_bits += hist * local_count(granularity, n, t) as f64;
        rx_sets += hist * per_step;
    }
    tx_bits * 2f64.log10() + rx_sets * (n as f64).log10()
}

/// Global minimum of [`exact_cost`] over all profiles at `granularity`.
/// Ties go to the first local map in lexicographic mask order and the
/// smallest estimate.
pub fn exhaustive_search(inst: &TinyInstance, granularity: Granularity) -> Result<SearchResult> {
    inst.validate()?;
    let work = decomposed_work(inst, granularity);
    if work > WORK_GUARD {
        return Err(Error::Guard(format!("oracle search needs ~{work:.3e} node evaluations, above {WORK_GUARD:e}")));
    }
    let search = Search { inst, granularity };
    let roots: Vec<ChannelState> = inst.roots().collect();
    let parts = par::map_slice(&roots, |&s| {
        let hist = CommonHistory::root(s);
        let p = inst.channel.initial[s.index()];
        let items: Items = inst.source.initial.iter().enumerate().map(|(x, px)| (vec![x], p * px)).collect();
        let v = search.value(&hist, &items);
        let mut profile = StrategyProfile::default();
        search.record(&hist, &items, &mut profile);
        (v, profile)
    });
    let mut acc = Compensated::default();
    let mut argmin = StrategyProfile::default();
    for (v, p) in parts {
        acc.add(v);
        argmin.transmitter.extend(p.transmitter);
        argmin.receiver.extend(p.receiver);
    }
    Ok(SearchResult { min_cost: acc.value(), argmin, work, literal_profiles_log10: literal_profiles_log10(inst, granularity) })
}

/// How [`exhaustive_search_literal`] treats the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverMode {
    /// Best response per information set to each transmitter strategy.
    BestResponse,
    /// Every receiver map.
    Enumerate,
}

fn all_histories(inst: &TinyInstance, len: usize) -> Vec<CommonHistory> {
    let mut out: Vec<CommonHistory> = inst.roots().map(CommonHistory::root).collect();
    for _ in 0..len {
        let mut next = Vec::new();
        for h in &out {
            next.push(h.extended(ChannelState::Off, ChannelSymbol::Blank0));
            next.push(h.extended(ChannelState::On, ChannelSymbol::Blank1));
            for x in 0..inst.n() {
                next.push(h.extended(ChannelState::On, ChannelSymbol::Payload(x)));
            }
        }
        out = next;
    }
    out
}

fn all_locals(granularity: Granularity, n: usize, t: usize) -> Vec<Vec<usize>> {
    match granularity {
        Granularity::Restricted => (0..n).map(|x| vec![x]).collect(),
        Granularity::Full => {
            let mut out = vec![Vec::new()];
            for _ in 0..=t {
                out = out.into_iter().flat_map(|k: Vec<usize>| (0..n).map(move |x| [k.clone(), vec![x]].concat())).collect();
            }
            out
        }
    }
}

/// Joint weight of each receiver information set and current source value.
fn receiver_weights(inst: &TinyInstance, tx: &BTreeMap<TxInfoSet, bool>, granularity: Granularity) -> BTreeMap<CommonHistory, Vec<f64>> {
    fn go(
        inst: &TinyInstance,
        tx: &BTreeMap<TxInfoSet, bool>,
        g: Granularity,
        hist: &CommonHistory,
        xs: &mut Vec<usize>,
        prob: f64,
        out: &mut BTreeMap<CommonHistory, Vec<f64>>,
    ) {
        let x = *xs.last().unwrap();
        let u = tx[&TxInfoSet { history: hist.clone(), local: local_key(g, xs) }];
        let q = inst.channel.q[hist.last_state().index()];
        for s in ChannelState::BOTH {
            if q[s.index()] == 0.0 {
                continue;
            }
            let next = hist.extended(s, channel_output(u.then_some(x), s));
            let p = prob * q[s.index()];
            out.entry(next.clone()).or_insert_with(|| vec![0.0; inst.n()])[x] += p;
            if hist.t() < inst.horizon {
                for (x2, &px) in inst.source.transition[x].iter().enumerate() {
                    if px > 0.0 {
                        xs.push(x2);
                        go(inst, tx, g, &next, xs, p * px, out);
                        xs.pop();
                    }
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for s in inst.roots() {
        for (x0, &p0) in inst.source.initial.iter().enumerate() {
            if p0 > 0.0 {
                go(inst, tx, granularity, &CommonHistory::root(s), &mut vec![x0], inst.channel.initial[s.index()] * p0, &mut out);
            }
        }
    }
    out
}

/// Minimum over complete transmitter strategies, enumerated in binary
/// order over the sorted information sets, each evaluated by [`exact_cost`].
pub fn exhaustive_search_literal(inst: &TinyInstance, granularity: Granularity, receiver: ReceiverMode) -> Result<(f64, StrategyProfile)> {
    inst.validate()?;
    let n = inst.n();
    let mut tx_sets = Vec::new();
    for t in 0..=inst.horizon {
        for h in all_histories(inst, t) {
            for local in all_locals(granularity, n, t) {
                tx_sets.push(TxInfoSet { history: h.clone(), local });
            }
        }
    }
    tx_sets.sort();
    let rx_sets: Vec<CommonHistory> = (1..=inst.horizon + 1).flat_map(|len| all_histories(inst, len)).collect();
    let mut count = 2f64.powi(tx_sets.len() as i32);
    if receiver == ReceiverMode::Enumerate {
        count *= (n as f64).powi(rx_sets.len() as i32);
    }
    if count > WORK_GUARD {
        return Err(Error::Guard(format!("literal enumeration of {count:.3e} profiles exceeds {WORK_GUARD:e}")));
    }
    let k = tx_sets.len();
    let candidates: Vec<u64> = (0..1u64 << k).collect();
    let results = par::map_slice(&candidates, |&bits| -> Result<(f64, StrategyProfile)> {
        let transmitter: BTreeMap<TxInfoSet, bool> =
            tx_sets.iter().enumerate().map(|(i, s)| (s.clone(), (bits >> (k - 1 - i)) & 1 == 1)).collect();
        match receiver {
            ReceiverMode::BestResponse => {
                let weights = receiver_weights(inst, &transmitter, granularity);
                let receiver = rx_sets
                    .iter()
                    .map(|h| {
                        let xhat = weights.get(h).map_or(0, |w| {
                            let items: Items = w.iter().enumerate().map(|(x, p)| (vec![x], *p)).collect();
                            best_estimate(&items, &inst.distortion, n).1
                        });
                        (h.clone(), xhat)
                    })
                    .collect();
                let profile = StrategyProfile { transmitter, receiver };
                Ok((exact_cost(inst, &profile, granularity)?, profile))
            }
            ReceiverMode::Enumerate => {
                let m = rx_sets.len() as u32;
                let mut best: Option<(f64, StrategyProfile)> = None;
                for code in 0..(n as u64).pow(m) {
                    let mut c = code;
                    let mut receiver = BTreeMap::new();
                    for h in rx_sets.iter().rev() {
                        receiver.insert(h.clone(), (c % n as u64) as usize);
                        c /= n as u64;
                    }
                    let profile = StrategyProfile { transmitter: transmitter.clone(), receiver };
                    let v = exact_cost(inst, &profile, granularity)?;
                    if best.as_ref().is_none_or(|b| v < b.0) {
                        best = Some((v, profile));
                    }
                }
                Ok(best.expect("at least one receiver map"))
            }
        }
    });
    let mut best: Option<(f64, StrategyProfile)> = None;
    for r in results {
        let (v, p) = r?;
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, p));
        }
    }
    Ok(best.expect("at least one strategy"))
}

/// Restricted-granularity profile that plays a dynamic-program solution,
/// defined on every information set reached with positive probability.
pub fn profile_from_finite_solution(inst: &TinyInstance, sol: &FiniteDPSolution) -> Result<StrategyProfile> {
    let mut profile = StrategyProfile::default();
    let g = &sol.graph;
    let mut stack: Vec<(CommonHistory, usize)> = g.roots.iter().map(|&(s, i)| (CommonHistory::root(s), i)).collect();
    while let Some((hist, pre)) = stack.pop() {
        let t = hist.t();
        let layer = g.layers.get(t).ok_or(Error::BeliefKeyMiss { t })?;
        let mask = sol.policy[t][pre];
        let phi = sol.prescription(t, pre);
        for x in 0..inst.n() {
            profile.transmitter.insert(TxInfoSet { history: hist.clone(), local: vec![x] }, phi.transmits(x));
        }
        for e in &layer.pre_edges[pre][mask as usize] {
            let next = hist.extended(e.s, e.y);
            profile.receiver.insert(next.clone(), sol.estimates[t][e.post]);
            if let Some(j) = layer.post_next[e.post] {
                stack.push((next, j));
            }
        }
    }
    Ok(profile)
}

/// Monte Carlo cost of a profile with the simulator's stream scheme.
pub fn monte_carlo_profile(
    inst: &TinyInstance,
    profile: &StrategyProfile,
    granularity: Granularity,
    n_reps: usize,
    seed: u64,
) -> Result<CostEstimate> {
    inst.validate()?;
    if n_reps < 2 {
        return Err(Error::InvalidModel(format!("need at least 2 replications, got {n_reps}")));
    }
    let reps: Vec<Replication> = par::map_range(n_reps, |r| {
        let mut rng = replication_rng(seed, r as u64);
        let mut hist = CommonHistory::root(inst.channel.sample_initial(rng.random()));
        let mut xs = vec![inst.source.sample_initial(rng.random())];
        let mut rep = Replication { transmissions: 0, distortion: 0.0 };
        for t in 0..=inst.horizon {
            let x = *xs.last().unwrap();
            let key = TxInfoSet { history: hist.clone(), local: local_key(granularity, &xs) };
            let u = *profile.transmitter.get(&key).ok_or_else(|| Error::MissingInfoSet(format!("{key:?}")))?;
            let s = inst.channel.step(hist.last_state(), rng.random());
            hist = hist.extended(s, channel_output(u.then_some(x), s));
            let xhat = *profile.receiver.get(&hist).ok_or_else(|| Error::MissingInfoSet(format!("{hist:?}")))?;
            rep.transmissions += u as usize;
            rep.distortion += inst.distortion.eval(x, xhat);
            let next = inst.source.sample_next(x, rng.random());
            if t < inst.horizon {
                xs.push(next);
            }
        }
        Ok(rep)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(aggregate(&reps, inst.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(q: [[f64; 2]; 2], initial_channel: [f64; 2], lambda: f64, horizon: usize) -> TinyInstance {
        TinyInstance {
            source: FiniteMarkovSource::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![0.5, 0.5]).unwrap(),
            channel: GilbertElliottChannel::new(q, initial_channel).unwrap(),
            distortion: FiniteDistortion::zero_one(2),
            lambda,
            horizon,
        }
    }

    fn constant_profile(inst: &TinyInstance, u: bool, xhat: usize) -> StrategyProfile {
        let mut p = StrategyProfile::default();
        for t in 0..=inst.horizon {
            for h in all_histories(inst, t) {
                for local in all_locals(Granularity::Restricted, inst.n(), t) {
                    p.transmitter.insert(TxInfoSet { history: h.clone(), local }, u);
                }
            }
        }
        for len in 1..=inst.horizon + 1 {
            for h in all_histories(inst, len) {
                let x = match h.steps.last().unwrap().1 {
                    ChannelSymbol::Payload(x) => x,
                    _ => xhat,
                };
                p.receiver.insert(h, x);
            }
        }
        p
    }

    #[test]
    fn exact_cost_examples() {
        let inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6], 1.0, 0);
        let never = constant_profile(&inst, false, 0);
        assert!((exact_cost(&inst, &never, Granularity::Restricted).unwrap() - 0.5).abs() < 1e-15);
        let on = instance([[0.0, 1.0], [0.0, 1.0]], [0.0, 1.0], 0.3, 0);
        let always = constant_profile(&on, true, 0);
        assert!((exact_cost(&on, &always, Granularity::Restricted).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn missing_info_set_is_reported() {
        let inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6], 1.0, 0);
        assert!(matches!(exact_cost(&inst, &StrategyProfile::default(), Granularity::Restricted), Err(Error::MissingInfoSet(_))));
    }

    #[test]
    fn decomposed_matches_full_literal_on_horizon_zero() {
        for lambda in [0.0, 0.2, 0.6] {
            let inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6], lambda, 0);
            let fast = exhaustive_search(&inst, Granularity::Restricted).unwrap();
            let (lit, _) = exhaustive_search_literal(&inst, Granularity::Restricted, ReceiverMode::Enumerate).unwrap();
            assert!((fast.min_cost - lit).abs() < 1e-12, "{} vs {lit}", fast.min_cost);
            let v = exact_cost(&inst, &fast.argmin, Granularity::Restricted).unwrap();
            assert!((v - fast.min_cost).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposed_matches_literal_best_response() {
        for g in [Granularity::Restricted, Granularity::Full] {
            let inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.0, 1.0], 0.4, 1);
            let fast = exhaustive_search(&inst, g).unwrap();
            let (lit, _) = exhaustive_search_literal(&inst, g, ReceiverMode::BestResponse).unwrap();
            assert!((fast.min_cost - lit).abs() < 1e-12, "{g:?}: {} vs {lit}", fast.min_cost);
        }
    }

    #[test]
    fn literal_guard_trips() {
        let inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6], 0.4, 2);
        assert!(matches!(exhaustive_search_literal(&inst, Granularity::Restricted, ReceiverMode::BestResponse), Err(Error::Guard(_))));
        assert!(literal_profiles_log10(&inst, Granularity::Restricted) > 8.0);
        assert!(decomposed_work(&inst, Granularity::Restricted) <= WORK_GUARD);
    }

    #[test]
    fn instance_guards() {
        let mut inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6], 0.4, 3);
        assert!(matches!(exhaustive_search(&inst, Granularity::Restricted), Err(Error::Guard(_))));
        inst.horizon = 1;
        inst.source = FiniteMarkovSource::new(vec![vec![1.0 / 3.0; 3]; 3], vec![1.0 / 3.0; 3]).unwrap();
        assert!(matches!(inst.validate(), Err(Error::Guard(_))));
    }

    #[test]
    fn full_never_beats_restricted_contains() {
        let inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6], 0.4, 1);
        let full = exhaustive_search(&inst, Granularity::Full).unwrap();
        let restricted = exhaustive_search(&inst, Granularity::Restricted).unwrap();
        assert!(full.min_cost <= restricted.min_cost + 1e-12);
        assert!((full.min_cost - restricted.min_cost).abs() < 1e-9);
    }

    #[test]
    fn lambda_zero_argmin_costs_no_more_than_always_transmit() {
        let inst = instance([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6], 0.0, 1);
        let r = exhaustive_search(&inst, Granularity::Restricted).unwrap();
        let always = constant_profile(&inst, true, 0);
        let best_always = {
            let w = receiver_weights(&inst, &always.transmitter, Granularity::Restricted);
            let mut p = always.clone();
            for (h, ws) in w {
                let items: Items = ws.iter().enumerate().map(|(x, v)| (vec![x], *v)).collect();
                p.receiver.insert(h, best_estimate(&items, &inst.distortion, 2).1);
            }
            exact_cost(&inst, &p, Granularity::Restricted).unwrap()
        };
        assert!((r.min_cost - best_always).abs() < 1e-12);
    }
}
