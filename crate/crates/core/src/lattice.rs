//! Recombining lattice of cumulative factor states.
//!
//! A node is identified by how many times each outcome has occurred, so two
//! paths that differ only in the order of their moves land on the same node.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorDistribution;

/// Default cap on the total number of materialized nodes.
pub const DEFAULT_MAX_NODES: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeNode {
    pub step: usize,
    pub counts: Vec<u32>,
    /// Cumulative state `Σ_j c_j·Δw(j)`.
    pub w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Level {
    nodes: Vec<LatticeNode>,
    probs: Vec<f64>,
    index: HashMap<Vec<u32>, usize>,
    /// `children[i * (n+1) + s]` is the index in the next level reached from
    /// node `i` by outcome `s`. Empty on the last level.
    children: Vec<usize>,
}

impl Level {
    pub fn nodes(&self) -> &[LatticeNode] {
        &self.nodes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, counts: &[u32]) -> Option<usize> {
        self.index.get(counts).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Lattice {
    factor: FactorDistribution,
    horizon: usize,
    levels: Vec<Level>,
}

/// `C(t+n, n)` without overflow for the sizes the engine admits.
pub fn level_size(t: usize, n: usize) -> u128 {
    let mut acc: u128 = 1;
    for k in 1..=n as u128 {
        acc = acc * (t as u128 + k) / k;
    }
    acc
}

/// Total node count over levels `0..=horizon`, which is `C(horizon+n+1, n+1)`.
pub fn total_nodes(horizon: usize, n: usize) -> u128 {
    level_size(horizon, n + 1)
}

pub fn state_of(f: &FactorDistribution, counts: &[u32]) -> Vec<f64> {
    let mut w = vec![0.0; f.n()];
    for (s, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        for (wi, x) in w.iter_mut().zip(f.outcome(s)) {
            *wi += c as f64 * x;
        }
    }
    w
}

impl Lattice {
    pub fn build(f: &FactorDistribution, horizon: usize) -> Result<Self> {
        Self::build_with_budget(f, horizon, DEFAULT_MAX_NODES)
    }

    pub fn build_with_budget(f: &FactorDistribution, horizon: usize, max_nodes: usize) -> Result<Self> {
        let n = f.n();
        let size = f.size();
        let nodes = total_nodes(horizon, n);
        if nodes > max_nodes as u128 {
            return Err(Error::MemoryBudget { nodes, budget: max_nodes });
        }

        let root_counts = vec![0u32; size];
        let root = LatticeNode { step: 0, w: vec![0.0; n], counts: root_counts.clone() };
        let mut levels = vec![Level {
            nodes: vec![root],
            probs: vec![1.0],
            index: HashMap::from([(root_counts, 0)]),
            children: Vec::new(),
        }];

        for t in 0..horizon {
            let cur = &levels[t];
            let mut next_nodes = Vec::with_capacity(level_size(t + 1, n) as usize);
            let mut next_probs: Vec<f64> = Vec::with_capacity(next_nodes.capacity());
            let mut next_index = HashMap::with_capacity(next_nodes.capacity());
            let mut children = Vec::with_capacity(cur.len() * size);
            for (i, node) in cur.nodes.iter().enumerate() {
                for s in 0..size {
                    let mut counts = node.counts.clone();
                    counts[s] += 1;
                    let j = match next_index.get(&counts) {
                        Some(&j) => j,
                        None => {
                            let j = next_nodes.len();
                            next_nodes.push(LatticeNode { step: t + 1, w: state_of(f, &counts), counts: counts.clone() });
                            next_probs.push(0.0);
                            next_index.insert(counts, j);
                            j
                        }
                    };
                    next_probs[j] += cur.probs[i] * f.probs()[s];
                    children.push(j);
                }
            }
            levels[t].children = children;
            levels.push(Level { nodes: next_nodes, probs: next_probs, index: next_index, children: Vec::new() });
        }

        Ok(Self { factor: f.clone(), horizon, levels })
    }

    pub fn factor(&self) -> &FactorDistribution {
        &self.factor
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, step: usize) -> Result<&Level> {
        self.levels
            .get(step)
            .ok_or_else(|| Error::OutOfRange(format!("step {step} (horizon {})", self.horizon)))
    }

    pub fn root(&self) -> &LatticeNode {
        &self.levels[0].nodes[0]
    }

    /// Index of `node` within its level, or `ForeignNode` if it is not part of
    /// this lattice.
    pub fn locate(&self, node: &LatticeNode) -> Result<usize> {
        let foreign = || Error::ForeignNode { step: node.step, counts: node.counts.clone() };
        let level = self.levels.get(node.step).ok_or_else(foreign)?;
        let i = level.find(&node.counts).ok_or_else(foreign)?;
        let stored = &level.nodes[i].w;
        if stored.len() != node.w.len() || stored.iter().zip(&node.w).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(foreign());
        }
        Ok(i)
    }

    pub fn node(&self, step: usize, counts: &[u32]) -> Result<&LatticeNode> {
        let level = self.level(step)?;
        let i = level.find(counts).ok_or_else(|| Error::ForeignNode { step, counts: counts.to_vec() })?;
        Ok(&level.nodes[i])
    }

    pub fn node_probability(&self, node: &LatticeNode) -> Result<f64> {
        let i = self.locate(node)?;
        Ok(self.levels[node.step].probs[i])
    }

    /// Index in level `step+1` of the child reached by outcome `s`.
    pub fn child_index(&self, step: usize, i: usize, s: usize) -> usize {
        self.levels[step].children[i * self.factor.size() + s]
    }

    pub fn children(&self, node: &LatticeNode) -> Result<Vec<(usize, &LatticeNode)>> {
        let i = self.locate(node)?;
        if node.step >= self.horizon {
            return Err(Error::OutOfRange(format!("node at step {} has no children within the horizon", node.step)));
        }
        let next = &self.levels[node.step + 1];
        Ok((0..self.factor.size()).map(|s| (s, &next.nodes[self.child_index(node.step, i, s)])).collect())
    }

    /// Follows an outcome sequence from the root.
    pub fn follow(&self, path: &[usize]) -> Result<&LatticeNode> {
        if path.len() > self.horizon {
            return Err(Error::OutOfRange(format!("path of length {} beyond horizon {}", path.len(), self.horizon)));
        }
        let mut i = 0;
        for (t, &s) in path.iter().enumerate() {
            if s >= self.factor.size() {
                return Err(Error::OutOfRange(format!("outcome index {s}")));
            }
            i = self.child_index(t, i, s);
        }
        Ok(&self.levels[path.len()].nodes[i])
    }
}

/// Draws `steps` i.i.d. outcome indices under the real-world probabilities.
pub fn sample_outcomes<R: Rng>(f: &FactorDistribution, steps: usize, rng: &mut R) -> Vec<usize> {
    let probs = f.probs();
    (0..steps)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (s, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return s;
                }
            }
            probs.len() - 1
        })
        .collect()
}
