//! Binary-continuous matrix factorization `E = A R`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_model::{Domain, EdgeKind, GraphicalModel};
use crate::tasks::TaskInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcmfVariant {
    /// `A ~ U(0,1)`, `R ~ Bernoulli(0.3)`, per-term products `C`, `E` observed.
    #[default]
    Default,
    /// As `Default` without `C`.
    NoIntermediates,
    /// As `Default` with nothing observed.
    Unconditional,
    /// `A, R ~ N(0,1)`, `A` and `E` observed.
    MatrixInversion,
}

impl BcmfVariant {
    pub fn intermediates(self) -> bool {
        self != BcmfVariant::NoIntermediates
    }

    pub fn observed_arrays(self) -> &'static [&'static str] {
        match self {
            BcmfVariant::Default | BcmfVariant::NoIntermediates => &["E"],
            BcmfVariant::Unconditional => &[],
            BcmfVariant::MatrixInversion => &["A", "E"],
        }
    }

    fn r_domain(self) -> Domain {
        match self {
            BcmfVariant::MatrixInversion => Domain::Continuous,
            _ => Domain::Discrete(2),
        }
    }
}

pub const R_PROBABILITY: f64 = 0.3;

/// Arrays `A[m, k]`, `R[k, n]`, `C[m, n, k]` (with intermediates), `E[m, n]`
/// on plates `i` (extent m), `j` (n) and `k`, all exchangeable.
pub fn bcmf_build(m: usize, n: usize, k: usize, variant: BcmfVariant) -> Result<GraphicalModel> {
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!("BCMF dims must be positive, got ({m}, {n}, {k})")));
    }
    let mut g = GraphicalModel::new();
    g.add_plated_array("A", &[("i", m), ("k", k)], Domain::Continuous, &[0, 1])?;
    g.add_plated_array("R", &[("k", k), ("j", n)], variant.r_domain(), &[0, 1])?;
    let a = |i: usize, kk: usize| i * k + kk;
    let r = |kk: usize, j: usize| m * k + kk * n + j;
    let c0 = m * k + k * n;
    let c = |i: usize, j: usize, kk: usize| c0 + (i * n + j) * k + kk;
    let e0 = if variant.intermediates() {
        g.add_plated_array("C", &[("i", m), ("j", n), ("k", k)], Domain::Continuous, &[0, 1, 2])?;
        c0 + m * n * k
    } else {
        c0
    };
    g.add_plated_array("E", &[("i", m), ("j", n)], Domain::Continuous, &[0, 1])?;
    let e = |i: usize, j: usize| e0 + i * n + j;
    for i in 0..m {
        for j in 0..n {
            for kk in 0..k {
                if variant.intermediates() {
                    g.add_edge(a(i, kk), c(i, j, kk), EdgeKind::Directed)?;
                    g.add_edge(r(kk, j), c(i, j, kk), EdgeKind::Directed)?;
                    g.add_edge(c(i, j, kk), e(i, j), EdgeKind::Directed)?;
                } else {
                    g.add_edge(a(i, kk), e(i, j), EdgeKind::Directed)?;
                    g.add_edge(r(kk, j), e(i, j), EdgeKind::Directed)?;
                }
            }
        }
    }
    Ok(g)
}

/// Draws `A` and `R` from the variant's prior.
pub fn bcmf_prior(m: usize, n: usize, k: usize, variant: BcmfVariant, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    match variant {
        BcmfVariant::MatrixInversion => {
            let a = (0..m * k).map(|_| rng.sample(StandardNormal)).collect();
            let r = (0..k * n).map(|_| rng.sample(StandardNormal)).collect();
            (a, r)
        }
        _ => {
            let a = (0..m * k).map(|_| rng.gen::<f64>()).collect();
            let r = (0..k * n).map(|_| if rng.gen_bool(R_PROBABILITY) { 1.0 } else { 0.0 }).collect();
            (a, r)
        }
    }
}

/// Row-major `m x n` product of `a (m x k)` and `r (k x n)`.
pub fn matmul(a: &[f64], r: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            e[i * n + j] = (0..k).map(|kk| a[i * k + kk] * r[kk * n + j]).sum();
        }
    }
    e
}

/// Instance from given factors.
pub fn bcmf_instance(
    model: Arc<GraphicalModel>,
    dims: (usize, usize, usize),
    a: &[f64],
    r: &[f64],
    variant: BcmfVariant,
) -> Result<TaskInstance> {
    let (m, n, k) = dims;
    if a.len() != m * k || r.len() != k * n {
        return Err(Error::Shape("factor sizes do not match the dims".into()));
    }
    let mut values = a.to_vec();
    values.extend_from_slice(r);
    if variant.intermediates() {
        for i in 0..m {
            for j in 0..n {
                values.extend((0..k).map(|kk| a[i * k + kk] * r[kk * n + j]));
            }
        }
    }
    values.extend(matmul(a, r, m, n, k));
    if values.len() != model.len() {
        return Err(Error::Shape("model does not match the dims".into()));
    }
    let mut observed = vec![false; values.len()];
    for name in variant.observed_arrays() {
        let (_, arr) = model.array_by_name(name).expect("array declared by the builder");
        for id in arr.ids() {
            observed[id] = true;
        }
    }
    Ok(TaskInstance {
        model,
        values,
        observed,
        dims: vec![m, n, k],
    })
}

pub fn bcmf_sample(
    model: Arc<GraphicalModel>,
    dims: (usize, usize, usize),
    variant: BcmfVariant,
    rng: &mut impl Rng,
) -> Result<TaskInstance> {
    let (a, r) = bcmf_prior(dims.0, dims.1, dims.2, variant, rng);
    bcmf_instance(model, dims, &a, &r, variant)
}

/// `sqrt(mean_ij (E_ij - (A R)_ij)^2)`.
pub fn bcmf_rmse(a: &[f64], r: &[f64], e: &[f64], m: usize, n: usize, k: usize) -> Result<f64> {
    if a.len() != m * k || r.len() != k * n || e.len() != m * n {
        return Err(Error::Shape(format!(
            "A {} R {} E {} entries for ({m}, {n}, {k})",
            a.len(),
            r.len(),
            e.len()
        )));
    }
    let p = matmul(a, r, m, n, k);
    let mse = p.iter().zip(e).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / (m * n) as f64;
    Ok(mse.sqrt())
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// RMSE of independent prior draws of `A, R` against prior-drawn `E`:
/// returns the mean and its standard error over `samples` draws.
pub fn prior_baseline_rmse(m: usize, n: usize, k: usize, samples: usize, rng: &mut impl Rng) -> (f64, f64) {
    let v = BcmfVariant::Default;
    let xs: Vec<f64> = (0..samples)
        .map(|_| {
            let (a0, r0) = bcmf_prior(m, n, k, v, rng);
            let e = matmul(&a0, &r0, m, n, k);
            let (a, r) = bcmf_prior(m, n, k, v, rng);
            bcmf_rmse(&a, &r, &e, m, n, k).expect("consistent shapes")
        })
        .collect();
    mean_stderr(&xs)
}

/// Best RMSE achievable with constant `A = a` and `R = b` entries, found by a
/// coarse-to-fine search over `a` in `[0, 1]` and `b` in `{0, 1}` against
/// `samples` prior-drawn test matrices.
pub fn constant_baseline_rmse(m: usize, n: usize, k: usize, samples: usize, rng: &mut impl Rng) -> f64 {
    let tests: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let (a, r) = bcmf_prior(m, n, k, BcmfVariant::Default, rng);
            matmul(&a, &r, m, n, k)
        })
        .collect();
    let score = |a: f64, b: f64| {
        let ca = vec![a; m * k];
        let cr = vec![b; k * n];
        tests
            .iter()
            .map(|e| bcmf_rmse(&ca, &cr, e, m, n, k).expect("consistent shapes"))
            .sum::<f64>()
            / tests.len() as f64
    };
    let mut best = score(0.0, 0.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..6 {
        let step = (hi - lo) / 10.0;
        let mut arg = lo;
        let mut val = f64::INFINITY;
        for s in 0..=10 {
            let a = lo + step * s as f64;
            let v = score(a, 1.0);
            if v < val {
                val = v;
                arg = a;
            }
        }
        best = best.min(val);
        lo = (arg - step).max(0.0);
        hi = (arg + step).min(1.0);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn node_count() {
        assert_eq!(bcmf_build(6, 5, 2, BcmfVariant::Default).unwrap().len(), 112);
        assert_eq!(bcmf_build(6, 5, 2, BcmfVariant::NoIntermediates).unwrap().len(), 52);
        assert!(bcmf_build(0, 5, 2, BcmfVariant::Default).is_err());
    }

    #[test]
    fn ones_give_k() {
        let (m, n, k) = (3, 4, 5);
        let e = matmul(&vec![1.0; m * k], &vec![1.0; k * n], m, n, k);
        assert!(e.iter().all(|&v| v == k as f64));
    }

    #[test]
    fn sampled_instances_satisfy_links() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in [BcmfVariant::Default, BcmfVariant::NoIntermediates, BcmfVariant::MatrixInversion] {
            let model = Arc::new(bcmf_build(4, 3, 2, v).unwrap());
            let inst = bcmf_sample(model, (4, 3, 2), v, &mut rng).unwrap();
            let a = &inst.values[..8];
            let r = &inst.values[8..14];
            let e = &inst.values[inst.values.len() - 12..];
            assert!(bcmf_rmse(a, r, e, 4, 3, 2).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn observation_defaults() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Arc::new(bcmf_build(2, 2, 1, BcmfVariant::MatrixInversion).unwrap());
        let inst = bcmf_sample(model, (2, 2, 1), BcmfVariant::MatrixInversion, &mut rng).unwrap();
        // A (2) R (2) C (4) E (4)
        let expect: Vec<bool> = [true; 2].into_iter().chain([false; 6]).chain([true; 4]).collect();
        assert_eq!(inst.observed, expect);
    }

    #[test]
    fn constant_baseline_beats_zero_and_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = constant_baseline_rmse(4, 4, 2, 200, &mut rng);
        let (p, _) = prior_baseline_rmse(4, 4, 2, 2000, &mut rng);
        assert!(c < p, "constant {c} prior {p}");
    }
}
