//! Attention masks derived from graphical models.
//!
//! `allow[i][j]` means node `i` may attend to node `j`, i.e. information flows
//! from `j` to `i` in one attention layer.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph_model::{EdgeKind, GraphicalModel};

/// Dense boolean `n x n` adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            allow: vec![false; n * n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            allow: vec![true; n * n],
        }
    }

    pub fn diagonal(n: usize) -> Self {
        let mut m = Self::empty(n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("mask rows must all have length n".into()));
        }
        Ok(Self {
            n,
            allow: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.allow[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allow[i * self.n..(i + 1) * self.n]
    }

    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| self.row(i).iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.allow.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn has_self_edges(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i))
    }

    /// Relabels nodes: entry `(i, j)` moves to `(map[i], map[j])`.
    pub fn permuted(&self, map: &[usize]) -> Self {
        assert_eq!(map.len(), self.n);
        let mut out = Self::empty(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.set(map[i], map[j], true);
                }
            }
        }
        out
    }

    /// Ids `j` with `allow[i][j]`, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i)
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskOptions {
    pub symmetrize: bool,
    pub self_edges: bool,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            symmetrize: true,
            self_edges: true,
        }
    }
}

/// Builds the attention mask of a graphical model.
///
/// With `symmetrize` off, a directed edge `a -> b` only lets the child `b`
/// attend to its parent `a`; undirected edges and factor cliques stay
/// two-way.
pub fn compile_mask(model: &GraphicalModel, opts: MaskOptions) -> Result<AttentionMask> {
    model.check()?;
    let n = model.len();
    let mut mask = AttentionMask::empty(n);
    if opts.self_edges {
        for i in 0..n {
            mask.set(i, i, true);
        }
    }
    for e in model.edges() {
        mask.set(e.b, e.a, true);
        if opts.symmetrize || e.kind == EdgeKind::Undirected {
            mask.set(e.a, e.b, true);
        }
    }
    for f in model.factors() {
        for &i in &f.members {
            for &j in &f.members {
                if i != j {
                    mask.set(i, j, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Neighbor ids used for padded slots.
pub const PAD: usize = usize::MAX;

/// Row-packed neighbor lists padded to a common width `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMask {
    n: usize,
    m: usize,
    neighbors: Vec<usize>,
}

impl PackedMask {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Padding width (densest row unless repacked wider).
    pub fn m(&self) -> usize {
        self.m
    }

    /// Slot list of row `i`; padded slots hold [`PAD`].
    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.m..(i + 1) * self.m]
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn pad_flags(&self) -> Vec<bool> {
        self.neighbors.iter().map(|&j| j == PAD).collect()
    }

    pub fn unpack(&self) -> AttentionMask {
        let mut mask = AttentionMask::empty(self.n);
        for i in 0..self.n {
            for &j in self.row(i).iter().filter(|&&j| j != PAD) {
                mask.set(i, j, true);
            }
        }
        mask
    }

    /// Block-diagonal union of several masks (one block per batch element).
    pub fn concat(parts: &[&PackedMask]) -> PackedMask {
        let n: usize = parts.iter().map(|p| p.n).sum();
        let m = parts.iter().map(|p| p.m).max().unwrap_or(0);
        let mut neighbors = Vec::with_capacity(n * m);
        let mut offset = 0;
        for p in parts {
            for i in 0..p.n {
                let row = p.row(i);
                neighbors.extend(
                    row.iter()
                        .map(|&j| if j == PAD { PAD } else { j + offset }),
                );
                neighbors.extend(std::iter::repeat_n(PAD, m - p.m));
            }
            offset += p.n;
        }
        PackedMask { n, m, neighbors }
    }
}

/// Packs a mask to the width of its densest row, neighbors ascending.
pub fn pack(mask: &AttentionMask) -> PackedMask {
    let m = mask.row_counts().into_iter().max().unwrap_or(0);
    pack_with_width(mask, m).expect("width equals the densest row")
}

/// Packs with an explicit width `m`, which must cover the densest row.
pub fn pack_with_width(mask: &AttentionMask, m: usize) -> Result<PackedMask> {
    let n = mask.n();
    let mut neighbors = Vec::with_capacity(n * m);
    for i in 0..n {
        let start = neighbors.len();
        neighbors.extend(mask.neighbors(i));
        let used = neighbors.len() - start;
        if used > m {
            return Err(Error::InvalidArgument(format!(
                "row {i} has {used} entries, wider than m = {m}"
            )));
        }
        neighbors.extend(std::iter::repeat_n(PAD, m - used));
    }
    Ok(PackedMask { n, m, neighbors })
}

/// Shortest-path diameter of the (undirected) mask graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diameter {
    /// Longest shortest path over connected pairs.
    pub longest: usize,
    pub connected: bool,
}

fn bfs(mask: &AttentionMask, start: usize, dist: &mut [usize]) {
    dist.fill(usize::MAX);
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for j in mask.neighbors(i) {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
}

pub fn graph_diameter(mask: &AttentionMask) -> Diameter {
    let n = mask.n();
    let mut dist = vec![0; n];
    let mut longest = 0;
    let mut connected = true;
    for s in 0..n {
        bfs(mask, s, &mut dist);
        for &d in &dist {
            if d == usize::MAX {
                connected = false;
            } else {
                longest = longest.max(d);
            }
        }
    }
    Diameter { longest, connected }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthCheck {
    Ok,
    /// Fewer layers than the diameter: some pairs never exchange information.
    TooShallow { layers: usize, diameter: usize },
    Disconnected { layers: usize, diameter: usize },
}

pub fn check_depth(mask: &AttentionMask, layers: usize) -> DepthCheck {
    let d = graph_diameter(mask);
    if !d.connected {
        DepthCheck::Disconnected {
            layers,
            diameter: d.longest,
        }
    } else if layers < d.longest {
        DepthCheck::TooShallow {
            layers,
            diameter: d.longest,
        }
    } else {
        DepthCheck::Ok
    }
}

/// True iff the mask graph is connected: every output node can eventually
/// receive information from every input node.
pub fn verify_reachability(mask: &AttentionMask) -> bool {
    if mask.n() == 0 {
        return true;
    }
    let mut dist = vec![0; mask.n()];
    bfs(mask, 0, &mut dist);
    if dist.contains(&usize::MAX) {
        return false;
    }
    // one BFS suffices only for symmetric masks
    mask.is_symmetric() || graph_diameter(mask).connected
}

/// Nodes that can receive information originating at `sources` through any
/// number of attention layers (directed: `j` feeds `i` when `allow[i][j]`).
pub fn information_reach(mask: &AttentionMask, sources: &[usize]) -> Vec<bool> {
    let n = mask.n();
    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = sources.iter().copied().collect();
    for &s in sources {
        reached[s] = true;
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !reached[i] && mask.get(i, j) {
                reached[i] = true;
                queue.push_back(i);
            }
        }
    }
    reached
}

/// Each row attends to `per_row` distinct random other nodes plus itself.
pub fn random_mask(n: usize, per_row: usize, seed: u64) -> Result<AttentionMask> {
    if per_row >= n {
        return Err(Error::InvalidArgument(format!(
            "per_row = {per_row} must be below n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = AttentionMask::diagonal(n);
    for i in 0..n {
        for j in sample(&mut rng, n - 1, per_row) {
            let j = if j >= i { j + 1 } else { j };
            mask.set(i, j, true);
        }
    }
    Ok(mask)
}
