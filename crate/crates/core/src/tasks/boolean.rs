//! Binary-tree Boolean circuits of AND/OR gates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_model::{Domain, EdgeKind, GraphicalModel};
use crate::tasks::TaskInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    And,
    Or,
}

impl Gate {
    pub fn apply(self, a: bool, b: bool) -> bool {
        match self {
            Gate::And => a && b,
            Gate::Or => a || b,
        }
    }
}

/// A depth-`n` circuit over `2^n` inputs. Gates are stored level by level,
/// first level first, so the root is the last gate. Gate `g` of level `l`
/// reads outputs `2g` and `2g + 1` of level `l - 1` (the inputs for `l = 0`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub depth: usize,
    pub gates: Vec<Gate>,
}

impl CircuitSpec {
    pub fn random(depth: usize, seed: u64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("circuit depth must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gates = (0..(1usize << depth) - 1)
            .map(|_| if rng.gen_bool(0.5) { Gate::And } else { Gate::Or })
            .collect();
        Ok(Self { depth, gates })
    }

    pub fn uniform(depth: usize, gate: Gate) -> Self {
        Self {
            depth,
            gates: vec![gate; (1usize << depth) - 1],
        }
    }

    pub fn inputs(&self) -> usize {
        1 << self.depth
    }

    /// Offset of each level's first gate.
    fn level_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.depth);
        let mut off = 0;
        for l in 0..self.depth {
            out.push(off);
            off += 1 << (self.depth - 1 - l);
        }
        out
    }

    /// Outputs of every gate in storage order.
    pub fn evaluate(&self, input: &[bool]) -> Result<Vec<bool>> {
        if input.len() != self.inputs() {
            return Err(Error::Shape(format!("{} input bits for a circuit of width {}", input.len(), self.inputs())));
        }
        let mut out = Vec::with_capacity(self.gates.len());
        let mut prev = input.to_vec();
        let mut g = 0;
        while prev.len() > 1 {
            let next: Vec<bool> = prev
                .chunks(2)
                .map(|p| {
                    let v = self.gates[g].apply(p[0], p[1]);
                    g += 1;
                    v
                })
                .collect();
            out.extend_from_slice(&next);
            prev = next;
        }
        Ok(out)
    }

    /// Graphical model with arrays `input`, `gate`, `output` (or only `input`
    /// and `output` without intermediates).
    pub fn model(&self, intermediates: bool) -> Result<GraphicalModel> {
        let w = self.inputs();
        let mut m = GraphicalModel::new();
        m.add_array("input", &[w], Domain::Discrete(2), &[])?;
        if intermediates {
            let ng = self.gates.len();
            m.add_array("gate", &[ng], Domain::Discrete(2), &[])?;
            m.add_array("output", &[1], Domain::Discrete(2), &[])?;
            let offsets = self.level_offsets();
            for l in 0..self.depth {
                for g in 0..(1 << (self.depth - 1 - l)) {
                    let node = w + offsets[l] + g;
                    let (a, b) = if l == 0 {
                        (2 * g, 2 * g + 1)
                    } else {
                        (w + offsets[l - 1] + 2 * g, w + offsets[l - 1] + 2 * g + 1)
                    };
                    m.add_edge(a, node, EdgeKind::Directed)?;
                    m.add_edge(b, node, EdgeKind::Directed)?;
                }
            }
            m.add_edge(w + ng - 1, w + ng, EdgeKind::Directed)?;
        } else {
            m.add_array("output", &[1], Domain::Discrete(2), &[])?;
            for i in 0..w {
                m.add_edge(i, w, EdgeKind::Directed)?;
            }
        }
        Ok(m)
    }

    /// Instance with uniform random input bits; the input is observed.
    pub fn sample(&self, model: Arc<GraphicalModel>, intermediates: bool, rng: &mut impl Rng) -> Result<TaskInstance> {
        let input: Vec<bool> = (0..self.inputs()).map(|_| rng.gen_bool(0.5)).collect();
        let gates = self.evaluate(&input)?;
        let bit = |b: bool| if b { 1.0 } else { 0.0 };
        let mut values: Vec<f64> = input.iter().map(|&b| bit(b)).collect();
        if intermediates {
            values.extend(gates.iter().map(|&b| bit(b)));
        }
        values.push(bit(*gates.last().expect("at least one gate")));
        if values.len() != model.len() {
            return Err(Error::Shape("model does not match the circuit".into()));
        }
        let mut observed = vec![false; values.len()];
        observed[..self.inputs()].fill(true);
        Ok(TaskInstance {
            model,
            values,
            observed,
            dims: vec![self.depth],
        })
    }
}

/// Fraction of positions where the bits agree.
pub fn boolean_accuracy(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} predicted and {} true bits", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}
