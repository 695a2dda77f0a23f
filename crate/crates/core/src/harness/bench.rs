//! Timing and operation counts of packed versus dense masked attention.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::mask::{pack, random_mask};
use crate::nn::attention::{dense_masked_attention, packed_attention_heads, OpCounter};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    /// Allowed keys per query, self included.
    pub m: usize,
    pub d: usize,
    pub packed_macs: u64,
    pub dense_macs: Option<u64>,
    pub packed_ms: f64,
    pub dense_ms: Option<f64>,
}

/// Runs one packed pass (and a dense pass when `n <= dense_limit`) for each
/// `(n, m)` pair on a random mask with exactly `m` keys per query.
pub fn bench_attention(ns: &[usize], ms: &[usize], d: usize, dense_limit: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &n in ns {
        for &m in ms {
            if m == 0 || m > n {
                continue;
            }
            let mask = random_mask(n, m - 1, rng.gen())?;
            let packed = pack(&mask);
            let mut gen = |_| rng.gen_range(-1.0f32..1.0);
            let q = Tensor::from_fn(&[n, d], &mut gen);
            let k = Tensor::from_fn(&[n, d], &mut gen);
            let v = Tensor::from_fn(&[n, d], &mut gen);
            let mut pc = OpCounter::default();
            let start = Instant::now();
            packed_attention_heads(&q, &k, &v, &packed, 1, true, Some(&mut pc))?;
            let packed_ms = start.elapsed().as_secs_f64() * 1e3;
            let (dense_macs, dense_ms) = if n <= dense_limit {
                let mut dc = OpCounter::default();
                let start = Instant::now();
                dense_masked_attention(&q, &k, &v, &mask, 1, true, Some(&mut dc))?;
                (Some(dc.total()), Some(start.elapsed().as_secs_f64() * 1e3))
            } else {
                (None, None)
            };
            rows.push(BenchRow {
                n,
                m,
                d,
                packed_macs: pc.total(),
                dense_macs,
                packed_ms,
                dense_ms,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut out = String::from("n,m,d,packed_macs,dense_macs,packed_ms,dense_ms\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{},{:.3},{}\n",
            r.n,
            r.m,
            r.d,
            r.packed_macs,
            opt(r.dense_macs.map(|v| v.to_string())),
            r.packed_ms,
            opt(r.dense_ms.map(|v| format!("{v:.3}")))
        );
    }
    out
}
