//! Graphical models over arrays of variables.
//!
//! A [`GraphicalModel`] stores structure only: which variables exist, how they
//! are grouped into (possibly multi-dimensional) arrays, and which edges and
//! factors connect them. Node ids are assigned canonically: arrays in
//! declaration order, and row-major order within each array.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value domain of every variable in an array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Continuous,
    /// Categorical with the given cardinality (at least 2).
    Discrete(usize),
}

impl Domain {
    /// Width of the encoded representation of one variable.
    pub fn width(self) -> usize {
        match self {
            Domain::Continuous => 1,
            Domain::Discrete(c) => c,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, Domain::Discrete(_))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Continuous => write!(f, "continuous"),
            Domain::Discrete(c) => write!(f, "discrete:{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrayId(pub usize);

/// A named array of variables sharing one domain.
///
/// Every axis carries a plate label. Axes of different arrays that share a
/// label are indexed by the same plate, so permuting that plate permutes all
/// of them together.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGroup {
    pub name: String,
    pub shape: Vec<usize>,
    pub domain: Domain,
    pub exchangeable_axes: BTreeSet<usize>,
    pub axis_labels: Vec<String>,
    /// Id of the first node of this array.
    pub offset: usize,
}

impl ArrayGroup {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row-major flat offset of `index` within the array.
    pub fn flat_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            if i >= extent {
                return None;
            }
            flat = flat * extent + i;
        }
        Some(flat)
    }

    /// Inverse of [`ArrayGroup::flat_index`].
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.shape.len()];
        for (slot, &extent) in index.iter_mut().zip(&self.shape).rev() {
            *slot = flat % extent;
            flat /= extent;
        }
        index
    }

    pub fn ids(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableNode {
    pub id: usize,
    pub array: ArrayId,
    pub index: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    /// `a -> b`: `a` is a parent of `b`.
    Directed,
    Undirected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

/// A group constraint; compiled into a clique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub members: Vec<usize>,
}

/// A single invariant violation reported by [`GraphicalModel::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyShape { array: String },
    ZeroExtent { array: String },
    AxisOutOfRange { array: String, axis: usize },
    DuplicateArrayName { array: String },
    BadCardinality { array: String },
    LabelCountMismatch { array: String },
    DanglingEdge { edge: usize },
    SelfEdge { edge: usize },
    FactorTooSmall { factor: usize },
    DanglingFactor { factor: usize },
    DuplicateFactorMember { factor: usize },
    NodeTable,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyShape { array } => write!(f, "array {array}: empty shape"),
            Violation::ZeroExtent { array } => write!(f, "array {array}: zero extent"),
            Violation::AxisOutOfRange { array, axis } => {
                write!(f, "array {array}: exchangeable axis {axis} out of range")
            }
            Violation::DuplicateArrayName { array } => write!(f, "duplicate array name {array}"),
            Violation::BadCardinality { array } => {
                write!(f, "array {array}: discrete cardinality below 2")
            }
            Violation::LabelCountMismatch { array } => {
                write!(f, "array {array}: axis label count differs from rank")
            }
            Violation::DanglingEdge { edge } => write!(f, "dangling edge #{edge}"),
            Violation::SelfEdge { edge } => write!(f, "self edge #{edge}"),
            Violation::FactorTooSmall { factor } => write!(f, "factor #{factor} has fewer than 2 members"),
            Violation::DanglingFactor { factor } => write!(f, "factor #{factor} references a missing node"),
            Violation::DuplicateFactorMember { factor } => {
                write!(f, "factor #{factor} lists a node twice")
            }
            Violation::NodeTable => write!(f, "node table is not in canonical order"),
        }
    }
}

/// Plate information derived from axis labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plate {
    pub label: String,
    pub extent: usize,
    /// True when every axis carrying this label is declared exchangeable.
    pub exchangeable: bool,
}

/// Offsets of each node's entries in a flat encoded state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub offsets: Vec<usize>,
    pub widths: Vec<usize>,
    pub total: usize,
}

impl Layout {
    pub fn range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node] + self.widths[node]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphicalModel {
    arrays: Vec<ArrayGroup>,
    nodes: Vec<VariableNode>,
    edges: Vec<Edge>,
    factors: Vec<Factor>,
}

impl GraphicalModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an array whose axes get private plate labels `name.0`, `name.1`, ...
    pub fn add_array(
        &mut self,
        name: &str,
        shape: &[usize],
        domain: Domain,
        exchangeable_axes: &[usize],
    ) -> Result<ArrayId> {
        let labels: Vec<String> = (0..shape.len()).map(|a| format!("{name}.{a}")).collect();
        self.add_array_labeled(name, shape, &labels, domain, exchangeable_axes)
    }

    /// Declares an array whose axes are indexed by the named plates.
    pub fn add_plated_array(
        &mut self,
        name: &str,
        axes: &[(&str, usize)],
        domain: Domain,
        exchangeable_axes: &[usize],
    ) -> Result<ArrayId> {
        let shape: Vec<usize> = axes.iter().map(|&(_, e)| e).collect();
        let labels: Vec<String> = axes.iter().map(|&(l, _)| l.to_string()).collect();
        self.add_array_labeled(name, &shape, &labels, domain, exchangeable_axes)
    }

    pub fn add_array_labeled(
        &mut self,
        name: &str,
        shape: &[usize],
        labels: &[String],
        domain: Domain,
        exchangeable_axes: &[usize],
    ) -> Result<ArrayId> {
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::Model(format!("duplicate array name {name:?}")));
        }
        if shape.is_empty() {
            return Err(Error::Model(format!("array {name:?} has an empty shape")));
        }
        if shape.contains(&0) {
            return Err(Error::Model(format!("array {name:?} has a zero extent")));
        }
        if labels.len() != shape.len() {
            return Err(Error::Model(format!("array {name:?}: one label per axis required")));
        }
        if let Domain::Discrete(c) = domain {
            if c < 2 {
                return Err(Error::Model(format!("array {name:?}: cardinality must be >= 2")));
            }
        }
        if let Some(&axis) = exchangeable_axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::Model(format!("array {name:?}: axis {axis} out of range")));
        }
        let id = ArrayId(self.arrays.len());
        let group = ArrayGroup {
            name: name.to_string(),
            shape: shape.to_vec(),
            domain,
            exchangeable_axes: exchangeable_axes.iter().copied().collect(),
            axis_labels: labels.to_vec(),
            offset: self.nodes.len(),
        };
        for flat in 0..group.len() {
            self.nodes.push(VariableNode {
                id: self.nodes.len(),
                array: id,
                index: group.unflatten(flat),
            });
        }
        self.arrays.push(group);
        Ok(id)
    }

    pub fn add_edge(&mut self, a: usize, b: usize, kind: EdgeKind) -> Result<()> {
        let n = self.nodes.len();
        if a >= n || b >= n {
            return Err(Error::Model(format!("edge {a}-{b} references a node outside 0..{n}")));
        }
        if a == b {
            return Err(Error::Model(format!("self edge on node {a}")));
        }
        self.edges.push(Edge { a, b, kind });
        Ok(())
    }

    pub fn add_factor(&mut self, members: &[usize]) -> Result<()> {
        let n = self.nodes.len();
        if members.len() < 2 {
            return Err(Error::Model("a factor needs at least 2 members".into()));
        }
        if let Some(&bad) = members.iter().find(|&&m| m >= n) {
            return Err(Error::Model(format!("factor member {bad} outside 0..{n}")));
        }
        let unique: HashSet<_> = members.iter().collect();
        if unique.len() != members.len() {
            return Err(Error::Model("factor lists a node twice".into()));
        }
        self.factors.push(Factor {
            members: members.to_vec(),
        });
        Ok(())
    }

    /// Assembles a model from raw parts without checking invariants; call
    /// [`GraphicalModel::validate`] afterwards.
    pub fn from_parts(arrays: Vec<ArrayGroup>, edges: Vec<Edge>, factors: Vec<Factor>) -> Self {
        let mut nodes = Vec::new();
        let mut arrays = arrays;
        for (a, group) in arrays.iter_mut().enumerate() {
            group.offset = nodes.len();
            for flat in 0..group.len() {
                nodes.push(VariableNode {
                    id: nodes.len(),
                    array: ArrayId(a),
                    index: group.unflatten(flat),
                });
            }
        }
        Self {
            arrays,
            nodes,
            edges,
            factors,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let mut names = HashSet::new();
        let mut expected_offset = 0;
        for group in &self.arrays {
            let array = group.name.clone();
            if !names.insert(group.name.as_str()) {
                out.push(Violation::DuplicateArrayName {
                    array: array.clone(),
                });
            }
            if group.shape.is_empty() {
                out.push(Violation::EmptyShape {
                    array: array.clone(),
                });
            }
            if group.shape.contains(&0) {
                out.push(Violation::ZeroExtent {
                    array: array.clone(),
                });
            }
            if group.axis_labels.len() != group.shape.len() {
                out.push(Violation::LabelCountMismatch {
                    array: array.clone(),
                });
            }
            if let Domain::Discrete(c) = group.domain {
                if c < 2 {
                    out.push(Violation::BadCardinality {
                        array: array.clone(),
                    });
                }
            }
            for &axis in &group.exchangeable_axes {
                if axis >= group.shape.len() {
                    out.push(Violation::AxisOutOfRange {
                        array: array.clone(),
                        axis,
                    });
                }
            }
            if group.offset != expected_offset {
                out.push(Violation::NodeTable);
            }
            expected_offset += group.len();
        }
        let n = self.nodes.len();
        if n != expected_offset || self.nodes.iter().enumerate().any(|(i, v)| v.id != i) {
            out.push(Violation::NodeTable);
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.a >= n || e.b >= n {
                out.push(Violation::DanglingEdge { edge: i });
            } else if e.a == e.b {
                out.push(Violation::SelfEdge { edge: i });
            }
        }
        for (i, f) in self.factors.iter().enumerate() {
            if f.members.len() < 2 {
                out.push(Violation::FactorTooSmall { factor: i });
            }
            if f.members.iter().any(|&m| m >= n) {
                out.push(Violation::DanglingFactor { factor: i });
            }
            let unique: HashSet<_> = f.members.iter().collect();
            if unique.len() != f.members.len() {
                out.push(Violation::DuplicateFactorMember { factor: i });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Like [`GraphicalModel::validate`] but folds violations into an error.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(|v| {
            let list: Vec<String> = v.iter().map(ToString::to_string).collect();
            Error::Model(list.join("; "))
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn arrays(&self) -> &[ArrayGroup] {
        &self.arrays
    }

    pub fn nodes(&self) -> &[VariableNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn array(&self, id: ArrayId) -> &ArrayGroup {
        &self.arrays[id.0]
    }

    pub fn array_by_name(&self, name: &str) -> Option<(ArrayId, &ArrayGroup)> {
        self.arrays
            .iter()
            .enumerate()
            .find(|(_, a)| a.name == name)
            .map(|(i, a)| (ArrayId(i), a))
    }

    /// Node id of `index` within the named array.
    pub fn node(&self, array: &str, index: &[usize]) -> Option<usize> {
        let (_, group) = self.array_by_name(array)?;
        group.flat_index(index).map(|f| group.offset + f)
    }

    /// Domain of each node, in id order.
    pub fn domains(&self) -> Vec<Domain> {
        self.nodes
            .iter()
            .map(|v| self.arrays[v.array.0].domain)
            .collect()
    }

    pub fn layout(&self) -> Layout {
        let widths: Vec<usize> = self.domains().into_iter().map(Domain::width).collect();
        let mut offsets = Vec::with_capacity(widths.len());
        let mut total = 0;
        for &w in &widths {
            offsets.push(total);
            total += w;
        }
        Layout {
            offsets,
            widths,
            total,
        }
    }

    /// Plates in order of first appearance.
    pub fn plates(&self) -> Vec<Plate> {
        let mut plates: Vec<Plate> = Vec::new();
        for group in &self.arrays {
            for (axis, label) in group.axis_labels.iter().enumerate() {
                let exch = group.exchangeable_axes.contains(&axis);
                match plates.iter_mut().find(|p| &p.label == label) {
                    Some(p) => p.exchangeable &= exch,
                    None => plates.push(Plate {
                        label: label.clone(),
                        extent: group.shape[axis],
                        exchangeable: exch,
                    }),
                }
            }
        }
        plates
    }

    /// Node permutation induced by permuting plate `label` with `perm`.
    ///
    /// Returns `map` with `map[old_id] = new_id`: the node whose index along a
    /// `label` axis is `p` is sent to the node with index `perm[p]`.
    pub fn plate_permutation(&self, label: &str, perm: &[usize]) -> Result<Vec<usize>> {
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        let mut map = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let group = &self.arrays[node.array.0];
            let mut index = node.index.clone();
            for (axis, l) in group.axis_labels.iter().enumerate() {
                if l == label {
                    if group.shape[axis] != perm.len() {
                        return Err(Error::InvalidArgument(format!(
                            "plate {label} has extent {} but permutation has length {}",
                            group.shape[axis],
                            perm.len()
                        )));
                    }
                    index[axis] = perm[index[axis]];
                }
            }
            let flat = group.flat_index(&index).expect("permuted index in range");
            map.push(group.offset + flat);
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_ids_follow_declaration_and_row_major_order() {
        let mut m = GraphicalModel::new();
        m.add_array("u", &[3], Domain::Continuous, &[0]).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.nodes().iter().map(|v| v.id).collect::<Vec<_>>(), [0, 1, 2]);

        m.add_array("P", &[2, 3], Domain::Discrete(2), &[]).unwrap();
        assert_eq!(m.node("P", &[0, 0]), Some(3));
        assert_eq!(m.node("P", &[1, 0]), Some(6));
        assert_eq!(m.nodes()[7].index, vec![1, 1]);
    }

    #[test]
    fn bcmf_shaped_arrays_count_112_nodes() {
        let mut m = GraphicalModel::new();
        m.add_array("A", &[6, 2], Domain::Continuous, &[0, 1]).unwrap();
        m.add_array("R", &[2, 5], Domain::Discrete(2), &[0, 1]).unwrap();
        m.add_array("C", &[6, 5, 2], Domain::Continuous, &[0, 1, 2]).unwrap();
        m.add_array("E", &[6, 5], Domain::Continuous, &[0, 1]).unwrap();
        assert_eq!(m.len(), 12 + 10 + 60 + 30);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn rejects_bad_arrays() {
        let mut m = GraphicalModel::new();
        assert!(m.add_array("u", &[0], Domain::Continuous, &[]).is_err());
        assert!(m.add_array("u", &[], Domain::Continuous, &[]).is_err());
        assert!(m.add_array("u", &[2], Domain::Discrete(1), &[]).is_err());
        assert!(m.add_array("u", &[2], Domain::Continuous, &[1]).is_err());
        m.add_array("u", &[2], Domain::Continuous, &[]).unwrap();
        assert!(m.add_array("u", &[2], Domain::Continuous, &[]).is_err());
    }

    #[test]
    fn rejects_bad_edges_and_factors() {
        let mut m = GraphicalModel::new();
        m.add_array("x", &[6], Domain::Continuous, &[]).unwrap();
        assert!(m.add_edge(5, 5, EdgeKind::Directed).is_err());
        assert!(m.add_edge(0, 6, EdgeKind::Undirected).is_err());
        assert!(m.add_factor(&[1]).is_err());
        assert!(m.add_factor(&[1, 1]).is_err());
        m.add_edge(0, 1, EdgeKind::Directed).unwrap();
        m.add_edge(0, 1, EdgeKind::Directed).unwrap();
        m.add_factor(&[0, 1, 2]).unwrap();
        assert_eq!(m.edges().len(), 2);
    }

    #[test]
    fn validate_reports_violations() {
        let mut m = GraphicalModel::new();
        m.add_array("x", &[3], Domain::Continuous, &[]).unwrap();
        let arrays = m.arrays().to_vec();
        let broken = GraphicalModel::from_parts(
            arrays,
            vec![Edge {
                a: 0,
                b: 7,
                kind: EdgeKind::Directed,
            }],
            vec![Factor { members: vec![1] }],
        );
        let v = broken.validate().unwrap_err();
        assert!(v.contains(&Violation::DanglingEdge { edge: 0 }));
        assert!(v.contains(&Violation::FactorTooSmall { factor: 0 }));
        assert!(v[0].to_string().contains("dangling edge"));
    }

    #[test]
    fn plate_permutation_moves_all_axes_sharing_a_label() {
        let mut m = GraphicalModel::new();
        m.add_plated_array("A", &[("i", 3), ("k", 2)], Domain::Continuous, &[0, 1])
            .unwrap();
        m.add_plated_array("E", &[("i", 3)], Domain::Continuous, &[0]).unwrap();
        let map = m.plate_permutation("i", &[2, 0, 1]).unwrap();
        assert_eq!(map[m.node("A", &[0, 1]).unwrap()], m.node("A", &[2, 1]).unwrap());
        assert_eq!(map[m.node("E", &[1]).unwrap()], m.node("E", &[0]).unwrap());
        let plates = m.plates();
        assert_eq!(plates.len(), 2);
        assert!(plates.iter().all(|p| p.exchangeable));
        assert!(m.plate_permutation("i", &[0, 0, 1]).is_err());
    }
}
