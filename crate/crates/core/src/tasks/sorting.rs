//! Sorting a list through a latent permutation matrix.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_model::{Domain, EdgeKind, GraphicalModel};
use crate::tasks::TaskInstance;

/// How the sortedness of `s` is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortConstraint {
    /// A factor between each adjacent pair.
    #[default]
    Adjacent,
    /// One factor over all of `s`.
    Full,
    Unconstrained,
}

/// Arrays `u[n]`, `P[n, n]`, `C[n, n]` (when `intermediates`), `s[n]`.
///
/// `P[i, j] = 1` when `u_j` is the `i`-th smallest. The `j` plate (the order
/// of `u`) is exchangeable.
pub fn sorting_build(n: usize, constraint: SortConstraint, intermediates: bool) -> Result<GraphicalModel> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sorting needs n >= 2, got {n}")));
    }
    let mut m = GraphicalModel::new();
    m.add_plated_array("u", &[("j", n)], Domain::Continuous, &[0])?;
    m.add_plated_array("P", &[("i", n), ("j", n)], Domain::Discrete(2), &[1])?;
    if intermediates {
        m.add_plated_array("C", &[("i", n), ("j", n)], Domain::Continuous, &[1])?;
    }
    m.add_plated_array("s", &[("i", n)], Domain::Continuous, &[])?;
    let u = |j: usize| j;
    let p = |i: usize, j: usize| n + i * n + j;
    let c = |i: usize, j: usize| n + n * n + i * n + j;
    let s_off = if intermediates { n + 2 * n * n } else { n + n * n };
    let s = |i: usize| s_off + i;
    for i in 0..n {
        for j in 0..n {
            if intermediates {
                m.add_edge(p(i, j), c(i, j), EdgeKind::Directed)?;
                m.add_edge(u(j), c(i, j), EdgeKind::Directed)?;
                m.add_edge(c(i, j), s(i), EdgeKind::Directed)?;
            } else {
                m.add_edge(p(i, j), s(i), EdgeKind::Directed)?;
                m.add_edge(u(j), s(i), EdgeKind::Directed)?;
            }
        }
    }
    for i in 0..n {
        m.add_factor(&(0..n).map(|j| p(i, j)).collect::<Vec<_>>())?;
        m.add_factor(&(0..n).map(|j| p(j, i)).collect::<Vec<_>>())?;
    }
    match constraint {
        SortConstraint::Adjacent => {
            for i in 0..n - 1 {
                m.add_factor(&[s(i), s(i + 1)])?;
            }
        }
        SortConstraint::Full => m.add_factor(&(0..n).map(s).collect::<Vec<_>>())?,
        SortConstraint::Unconstrained => {}
    }
    Ok(m)
}

/// Stable ascending order of `u`: `order[i]` is the index of the `i`-th smallest.
pub fn sort_order(u: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
    order
}

/// Instance values for a given list; `u` is observed.
pub fn sorting_instance(model: Arc<GraphicalModel>, u: &[f64], intermediates: bool) -> Result<TaskInstance> {
    let n = u.len();
    let order = sort_order(u);
    let mut perm = vec![0.0; n * n];
    for (i, &j) in order.iter().enumerate() {
        perm[i * n + j] = 1.0;
    }
    let mut values = u.to_vec();
    values.extend_from_slice(&perm);
    if intermediates {
        for i in 0..n {
            values.extend((0..n).map(|j| perm[i * n + j] * u[j]));
        }
    }
    values.extend(order.iter().map(|&j| u[j]));
    if values.len() != model.len() {
        return Err(Error::Shape("model does not match the list length".into()));
    }
    let mut observed = vec![false; values.len()];
    observed[..n].fill(true);
    Ok(TaskInstance {
        model,
        values,
        observed,
        dims: vec![n],
    })
}

pub fn sorting_sample(model: Arc<GraphicalModel>, n: usize, intermediates: bool, rng: &mut impl Rng) -> Result<TaskInstance> {
    let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    sorting_instance(model, &u, intermediates)
}

fn row_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose argmax differs between two `n x n` score matrices.
pub fn perm_mismatch(truth: &[f64], sampled: &[f64], n: usize) -> Result<f64> {
    if n == 0 || truth.len() != n * n || sampled.len() != n * n {
        return Err(Error::Shape(format!(
            "permutation matrices of {} and {} entries for n = {n}",
            truth.len(),
            sampled.len()
        )));
    }
    let bad = (0..n)
        .filter(|&i| row_argmax(&truth[i * n..(i + 1) * n]) != row_argmax(&sampled[i * n..(i + 1) * n]))
        .count();
    Ok(bad as f64 / n as f64)
}
