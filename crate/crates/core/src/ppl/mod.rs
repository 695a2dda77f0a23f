//! A small first-order probabilistic language compiled to graphical models.
//!
//! Programs are evaluated abstractly: every executed `sample` becomes one
//! node, and a directed edge joins each node whose value flows into a
//! distribution's parameters to the node sampled from it. Nodes sharing an
//! address string form one 1-D array in creation order.

pub mod eval;
pub mod parse;

use std::collections::HashMap;

use crate::error::Result;
use crate::graph_model::{ArrayGroup, Domain, Edge, EdgeKind, GraphicalModel};

pub use eval::{DistKind, TraceNode};
pub use parse::{parse, Defn, Expr, Pos, ProgramAst};

/// The BCMF generative program over a 3x2 and a 2x3 matrix.
pub const BCMF_PROGRAM: &str = include_str!("../../programs/bcmf.foppl");

#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub trace: Vec<TraceNode>,
    pub model: GraphicalModel,
    /// Model node id of each trace node.
    pub node_of_trace: Vec<usize>,
}

impl CompiledProgram {
    /// Node counts per address, in array order.
    pub fn address_counts(&self) -> Vec<(String, usize)> {
        self.model.arrays().iter().map(|a| (a.name.clone(), a.len())).collect()
    }
}

/// Compiles a parsed program.
pub fn compile_graph(ast: &ProgramAst) -> Result<CompiledProgram> {
    compile_with_values(ast, &HashMap::new())
}

/// Compiles with the values of some trace nodes pinned (by trace id).
pub fn compile_with_values(ast: &ProgramAst, values: &HashMap<usize, f64>) -> Result<CompiledProgram> {
    let mut ev = eval::Evaluator::new(ast, values)?;
    ev.run(&ast.body)?;
    let trace = ev.trace;

    let mut order: Vec<String> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for node in &trace {
        members
            .entry(node.address.as_str())
            .or_insert_with(|| {
                order.push(node.address.clone());
                Vec::new()
            })
            .push(node.id);
    }
    let mut arrays = Vec::with_capacity(order.len());
    let mut node_of_trace = vec![0; trace.len()];
    let mut offset = 0;
    for name in &order {
        let ids = &members[name.as_str()];
        let all_binary = ids.iter().all(|&i| trace[i].dist == DistKind::Bernoulli);
        for (k, &i) in ids.iter().enumerate() {
            node_of_trace[i] = offset + k;
        }
        arrays.push(ArrayGroup {
            name: name.clone(),
            shape: vec![ids.len()],
            domain: if all_binary { Domain::Discrete(2) } else { Domain::Continuous },
            exchangeable_axes: Default::default(),
            axis_labels: vec![format!("{name}.0")],
            offset,
        });
        offset += ids.len();
    }
    let edges = trace
        .iter()
        .flat_map(|n| {
            let child = node_of_trace[n.id];
            let map = &node_of_trace;
            n.parents.iter().map(move |&p| Edge {
                a: map[p],
                b: child,
                kind: EdgeKind::Directed,
            })
        })
        .collect();
    let model = GraphicalModel::from_parts(arrays, edges, Vec::new());
    model.check()?;
    Ok(CompiledProgram {
        trace,
        model,
        node_of_trace,
    })
}

/// Parses and compiles program text.
pub fn compile_source(source: &str) -> Result<CompiledProgram> {
    compile_graph(&parse(source)?)
}
