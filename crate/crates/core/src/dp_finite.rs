//! Exact finite-horizon common-information dynamic program for
//! finite-alphabet sources.
//!
//! Starting from the initial pre-transmission belief, every prescription in
//! `{0,1}^n` and every positive-probability channel output is expanded, so
//! the dynamic program runs over the finite set of beliefs that can actually
//! occur. Beliefs are deduplicated by [`FinitePmf::key`].
//!
//! Node state conventions: a pre-node `(t, s, pi1)` carries the previous
//! channel state `S_{t-1}`, a post-node `(t, s, pi2)` the current state `S_t`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::belief::{expected_distortion_finite, f1_finite, restrict_to_silent, FinitePmf, Prescription};
use crate::models::{ChannelState, ChannelSymbol, FiniteDistortion, FiniteMarkovSource, GilbertElliottChannel};
use crate::{par, Error, Result};

pub const MAX_STATES: usize = 4;
pub const MAX_HORIZON: usize = 5;
pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefNode {
    pub t: usize,
    pub stage: Stage,
    pub s: ChannelState,
    pub pmf: FinitePmf,
}

/// One channel outcome out of a pre-node under a fixed prescription.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub y: ChannelSymbol<usize>,
    /// Channel state during this use.
    pub s: ChannelState,
    /// Joint probability of the outcome given the pre-node.
    pub prob: f64,
    pub post: usize,
}

type NodeKey = (usize, Vec<i64>);

#[derive(Debug, Clone, Default)]
pub struct Layer {
    pub pre: Vec<BeliefNode>,
    pub post: Vec<BeliefNode>,
    /// `pre_edges[i][mask]`: outcomes of pre-node `i` under prescription `mask`.
    pub pre_edges: Vec<Vec<Vec<Edge>>>,
    /// Index of `F1(post)` in the next layer, `None` in the last layer.
    pub post_next: Vec<Option<usize>>,
    pre_index: HashMap<NodeKey, usize>,
    post_index: HashMap<NodeKey, usize>,
}

impl Layer {
    pub fn find_pre(&self, s: ChannelState, pmf: &FinitePmf) -> Option<usize> {
        self.pre_index.get(&(s.index(), pmf.key())).copied()
    }

    pub fn find_post(&self, s: ChannelState, pmf: &FinitePmf) -> Option<usize> {
        self.post_index.get(&(s.index(), pmf.key())).copied()
    }
}

fn intern(nodes: &mut Vec<BeliefNode>, index: &mut HashMap<NodeKey, usize>, node: BeliefNode) -> usize {
    let key = (node.s.index(), node.pmf.key());
    *index.entry(key).or_insert_with(|| {
        nodes.push(node);
        nodes.len() - 1
    })
}

/// Reachable-belief graph, one [`Layer`] per time step.
#[derive(Debug, Clone)]
pub struct BeliefGraph {
    pub n_states: usize,
    pub horizon: usize,
    pub layers: Vec<Layer>,
    /// Root pre-node per initial channel state with positive probability.
    pub roots: Vec<(ChannelState, usize)>,
}

impl BeliefGraph {
    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.pre.len() + l.post.len()).sum()
    }
}

fn check_guards(source: &FiniteMarkovSource, horizon: usize) -> Result<()> {
    let n = source.n_states();
    if n > MAX_STATES {
        return Err(Error::Guard(format!("finite DP supports at most {MAX_STATES} source states, got {n}")));
    }
    if horizon > MAX_HORIZON {
        return Err(Error::Guard(format!("finite DP supports horizon T <= {MAX_HORIZON}, got {horizon}")));
    }
    Ok(())
}

/// Successors of a pre-node per prescription mask: `(post-node, output, probability)`.
type Expansion = Vec<Vec<(BeliefNode, ChannelSymbol<usize>, f64)>>;

fn expand_pre(node: &BeliefNode, channel: &GilbertElliottChannel) -> Result<Expansion> {
    let n = node.pmf.len();
    let q = channel.q[node.s.index()];
    let mut per_mask = Vec::with_capacity(1 << n);
    for mask in 0..(1u32 << n) {
        let phi = Prescription::from_mask(n, mask);
        let mut out = Vec::new();
        let post = |s, pmf| BeliefNode { t: node.t, stage: Stage::Post, s, pmf };
        if q[0] > 0.0 {
            out.push((post(ChannelState::Off, node.pmf.clone()), ChannelSymbol::Blank0, q[0]));
        }
        if q[1] > 0.0 {
            let silent = node.pmf.mass_where(&phi, false);
            if silent > 0.0 {
                let r = restrict_to_silent(&node.pmf, &phi)?;
                out.push((post(ChannelState::On, r), ChannelSymbol::Blank1, q[1] * silent));
            }
            for x in phi.transmit_set() {
                let px = node.pmf.probs()[x];
                if px > 0.0 {
                    out.push((post(ChannelState::On, FinitePmf::one_hot(n, x)), ChannelSymbol::Payload(x), q[1] * px));
                }
            }
        }
        per_mask.push(out);
    }
    Ok(per_mask)
}

/// All beliefs reachable from `source.initial` within horizon `T`.
pub fn enumerate_reachable(
    source: &FiniteMarkovSource,
    channel: &GilbertElliottChannel,
    horizon: usize,
    node_budget: usize,
) -> Result<BeliefGraph> {
    source.validate()?;
    channel.validate()?;
    check_guards(source, horizon)?;
    let n = source.n_states();
    let pi0 = FinitePmf::new(source.initial.clone())?;
    let mut layers: Vec<Layer> = Vec::with_capacity(horizon + 1);
    let mut first = Layer::default();
    let mut roots = Vec::new();
    for s in ChannelState::BOTH {
        if channel.initial[s.index()] > 0.0 {
            let node = BeliefNode { t: 0, stage: Stage::Pre, s, pmf: pi0.clone() };
            roots.push((s, intern(&mut first.pre, &mut first.pre_index, node)));
        }
    }
    layers.push(first);
    let mut count = 0usize;
    for t in 0..=horizon {
        let layer = &mut layers[t];
        let expanded = par::map_slice(&layer.pre, |node| expand_pre(node, channel));
        let mut pre_edges = Vec::with_capacity(expanded.len());
        for per_mask in expanded {
            let per_mask = per_mask?;
            let mut edges_by_mask = Vec::with_capacity(per_mask.len());
            for outcomes in per_mask {
                let edges = outcomes
                    .into_iter()
                    .map(|(node, y, prob)| {
                        let s = node.s;
                        let post = intern(&mut layer.post, &mut layer.post_index, node);
                        Edge { y, s, prob, post }
                    })
                    .collect();
                edges_by_mask.push(edges);
            }
            pre_edges.push(edges_by_mask);
        }
        layer.pre_edges = pre_edges;
        count += layer.pre.len() + layer.post.len();
        if count > node_budget {
            return Err(Error::BudgetExceeded { budget: node_budget });
        }
        if t == horizon {
            layer.post_next = vec![None; layer.post.len()];
            break;
        }
        let images = par::map_slice(&layer.post, |node| f1_finite(&node.pmf, source));
        let mut next = Layer::default();
        let mut post_next = Vec::with_capacity(images.len());
        for (node, img) in layer.post.iter().zip(images) {
            let pre = BeliefNode { t: t + 1, stage: Stage::Pre, s: node.s, pmf: img? };
            post_next.push(Some(intern(&mut next.pre, &mut next.pre_index, pre)));
        }
        layer.post_next = post_next;
        layers.push(next);
    }
    debug_assert!(layers.iter().all(|l| l.pre.iter().all(|p| p.pmf.len() == n)));
    Ok(BeliefGraph { n_states: n, horizon, layers, roots })
}

/// `V2_t(s, pi2)` for post-node `i` of layer `t` and its minimising
/// estimate. `next_pre` holds `V1_{t+1}` and must be `None` at `t = T`.
pub fn backup_post(graph: &BeliefGraph, t: usize, i: usize, next_pre: Option<&[f64]>, d: &FiniteDistortion) -> Result<(f64, usize)> {
    let layer = &graph.layers[t];
    let (dist, xhat) = expected_distortion_finite(&layer.post[i].pmf, d);
    let future = match (layer.post_next[i], next_pre) {
        (None, _) => 0.0,
        (Some(j), Some(v)) => *v.get(j).ok_or(Error::MissingSuccessor { t })?,
        (Some(_), None) => return Err(Error::MissingSuccessor { t }),
    };
    Ok((dist + future, xhat))
}

/// Cost-to-go of pre-node `i` under prescription `mask`.
pub fn prescription_value(graph: &BeliefGraph, t: usize, i: usize, mask: u32, post_values: &[f64], lambda: f64) -> Result<f64> {
    let layer = &graph.layers[t];
    let node = &layer.pre[i];
    let phi = Prescription::from_mask(graph.n_states, mask);
    let mut v = lambda * node.pmf.mass_where(&phi, true);
    for e in &layer.pre_edges[i][mask as usize] {
        v += e.prob * post_values.get(e.post).ok_or(Error::MissingSuccessor { t })?;
    }
    Ok(v)
}

/// `V1_t(s, pi1)` and the best prescription mask; ties go to the smallest
/// mask (lexicographic order).
pub fn backup_pre(graph: &BeliefGraph, t: usize, i: usize, post_values: &[f64], lambda: f64) -> Result<(f64, u32)> {
    let mut best = (f64::INFINITY, 0u32);
    for mask in 0..(1u32 << graph.n_states) {
        let v = prescription_value(graph, t, i, mask, post_values, lambda)?;
        if v < best.0 {
            best = (v, mask);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct FiniteDPSolution {
    pub graph: BeliefGraph,
    pub lambda: f64,
    /// `V1_t` per pre-node.
    pub pre_values: Vec<Vec<f64>>,
    /// `V2_t` per post-node.
    pub post_values: Vec<Vec<f64>>,
    /// Optimal prescription mask per pre-node.
    pub policy: Vec<Vec<u32>>,
    /// Optimal estimate per post-node.
    pub estimates: Vec<Vec<usize>>,
    pub initial_channel: [f64; 2],
    /// Optimal expected total cost.
    pub value: f64,
}

/// Full backward induction over the reachable-belief graph.
pub fn solve_finite(
    source: &FiniteMarkovSource,
    channel: &GilbertElliottChannel,
    d: &FiniteDistortion,
    lambda: f64,
    horizon: usize,
) -> Result<FiniteDPSolution> {
    solve_finite_with_budget(source, channel, d, lambda, horizon, DEFAULT_NODE_BUDGET)
}

pub fn solve_finite_with_budget(
    source: &FiniteMarkovSource,
    channel: &GilbertElliottChannel,
    d: &FiniteDistortion,
    lambda: f64,
    horizon: usize,
    node_budget: usize,
) -> Result<FiniteDPSolution> {
    d.validate()?;
    if d.n_states() != source.n_states() {
        return Err(Error::DimensionMismatch { expected: source.n_states(), got: d.n_states() });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidModel(format!("lambda must be a nonnegative number, got {lambda}")));
    }
    let graph = enumerate_reachable(source, channel, horizon, node_budget)?;
    let layers = graph.layers.len();
    let mut pre_values = vec![Vec::new(); layers];
    let mut post_values = vec![Vec::new(); layers];
    let mut policy = vec![Vec::new(); layers];
    let mut estimates = vec![Vec::new(); layers];
    for t in (0..layers).rev() {
        let next = if t + 1 < layers { Some(pre_values[t + 1].as_slice()) } else { None };
        let post: Vec<(f64, usize)> =
            par::map_range(graph.layers[t].post.len(), |i| backup_post(&graph, t, i, next, d)).into_iter().collect::<Result<_>>()?;
        post_values[t] = post.iter().map(|p| p.0).collect();
        estimates[t] = post.iter().map(|p| p.1).collect();
        let pv = &post_values[t];
        let pre: Vec<(f64, u32)> =
            par::map_range(graph.layers[t].pre.len(), |i| backup_pre(&graph, t, i, pv, lambda)).into_iter().collect::<Result<_>>()?;
        pre_values[t] = pre.iter().map(|p| p.0).collect();
        policy[t] = pre.iter().map(|p| p.1).collect();
    }
    let value = graph.roots.iter().map(|&(s, i)| channel.initial[s.index()] * pre_values[0][i]).sum();
    Ok(FiniteDPSolution { graph, lambda, pre_values, post_values, policy, estimates, initial_channel: channel.initial, value })
}

impl FiniteDPSolution {
    pub fn horizon(&self) -> usize {
        self.graph.horizon
    }

    pub fn prescription(&self, t: usize, i: usize) -> Prescription {
        Prescription::from_mask(self.graph.n_states, self.policy[t][i])
    }

    /// Largest gap between a stored pre-value and the one-step backup of its
    /// stored prescription.
    pub fn recomputation_gap(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in 0..self.graph.layers.len() {
            for i in 0..self.graph.layers[t].pre.len() {
                let v = prescription_value(&self.graph, t, i, self.policy[t][i], &self.post_values[t], self.lambda)?;
                worst = worst.max((v - self.pre_values[t][i]).abs());
            }
        }
        Ok(worst)
    }

    pub fn export(&self) -> FiniteSolutionExport {
        let mut nodes = Vec::new();
        for (t, layer) in self.graph.layers.iter().enumerate() {
            for (i, node) in layer.pre.iter().enumerate() {
                nodes.push(NodeExport {
                    t,
                    stage: Stage::Pre,
                    s: node.s.index(),
                    pmf: node.pmf.probs().to_vec(),
                    value: self.pre_values[t][i],
                    prescription: Some(self.prescription(t, i).decide().iter().map(|&u| u as u8).collect()),
                    estimate: None,
                });
            }
            for (i, node) in layer.post.iter().enumerate() {
                nodes.push(NodeExport {
                    t,
                    stage: Stage::Post,
                    s: node.s.index(),
                    pmf: node.pmf.probs().to_vec(),
                    value: self.post_values[t][i],
                    prescription: None,
                    estimate: Some(self.estimates[t][i]),
                });
            }
        }
        FiniteSolutionExport {
            value: self.value,
            lambda: self.lambda,
            horizon: self.horizon(),
            n_states: self.graph.n_states,
            initial_channel: self.initial_channel,
            node_count: nodes.len(),
            nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub t: usize,
    pub stage: Stage,
    pub s: usize,
    pub pmf: Vec<f64>,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prescription: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSolutionExport {
    pub value: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub n_states: usize,
    pub initial_channel: [f64; 2],
    pub node_count: usize,
    pub nodes: Vec<NodeExport>,
}
