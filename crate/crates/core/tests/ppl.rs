use std::collections::{BTreeSet, HashMap};

use gsdm::graph_model::GraphicalModel;
use gsdm::mask::{compile_mask, AttentionMask, MaskOptions};
use gsdm::ppl::{compile_graph, compile_with_values, parse, DistKind, ProgramAst, BCMF_PROGRAM};
use gsdm::tasks::{bcmf_build, BcmfVariant};
use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::UnGraph;
use proptest::prelude::*;

const BRANCHING: &str = r#"
(let [a (sample "a" (normal 0 1))
      b (sample "b" (normal a 1))
      c (if (> b 0)
            (sample "c" (normal 1 1))
            (sample "c" (normal -1 1)))
      d (sample "d" (normal (* c 2) 1))
      u (sample "u" (uniform 0 1))]
  (+ d u))
"#;

const LOOPING: &str = r#"
(defn step [t s x]
  (+ s (sample "y" (normal (* x t) 1))))

(let [x (sample "x" (normal 1 1))
      z (sample "z" (bernoulli 0.7))
      w (sample "w" (normal (if (> z 0.5) x 0) 1))]
  (loop 3 w step x))
"#;

fn programs() -> Vec<ProgramAst> {
    [BCMF_PROGRAM, BRANCHING, LOOPING].iter().map(|s| parse(s).unwrap()).collect()
}

/// Nodes reachable from `start` along directed edges, `start` excluded.
fn descendants(model: &GraphicalModel, start: usize) -> BTreeSet<usize> {
    let mut children = vec![Vec::new(); model.len()];
    for e in model.edges() {
        children[e.a].push(e.b);
    }
    let mut seen = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &c in &children[v] {
            if seen.insert(c) {
                stack.push(c);
            }
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Changing the value of one sampled node only changes the distributions
    /// of nodes the compiled graph lists as its descendants.
    #[test]
    fn dependencies_are_sound(program in 0usize..3, pick in any::<prop::sample::Index>(), delta in 0.5f64..3.0, sign: bool) {
        let ast = &programs()[program];
        let base = compile_graph(ast).unwrap();
        let x = &base.trace[pick.index(base.trace.len())];
        let new_value = match x.dist {
            DistKind::Bernoulli => 1.0 - x.value,
            _ => x.value + if sign { delta } else { -delta },
        };
        let pert = compile_with_values(ast, &HashMap::from([(x.id, new_value)])).unwrap();
        let reach = descendants(&base.model, base.node_of_trace[x.id]);
        let reach_ids: BTreeSet<usize> = base.trace.iter().filter(|t| reach.contains(&base.node_of_trace[t.id])).map(|t| t.id).collect();
        for (a, b) in base.trace.iter().zip(&pert.trace) {
            if a.id == x.id {
                continue;
            }
            let changed = a.address != b.address || a.dist != b.dist || a.params != b.params;
            prop_assert!(!changed || reach_ids.contains(&a.id), "node {} ({}) changed but is not downstream of {}", a.id, a.address, x.id);
        }
        if pert.trace.len() != base.trace.len() {
            prop_assert!(!reach_ids.is_empty());
        }
    }
}

#[test]
fn perturbing_a_parent_changes_its_children() {
    let ast = parse(BRANCHING).unwrap();
    let base = compile_graph(&ast).unwrap();
    let pert = compile_with_values(&ast, &HashMap::from([(0, 0.7)])).unwrap();
    assert_ne!(base.trace[1].params, pert.trace[1].params);
    assert_eq!(base.trace[4].params, pert.trace[4].params);
}

fn labelled(model: &GraphicalModel, mask: &AttentionMask) -> UnGraph<String, ()> {
    let mut g = UnGraph::new_undirected();
    let ids: Vec<_> = model
        .nodes()
        .iter()
        .map(|v| g.add_node(model.array(v.array).name.clone()))
        .collect();
    for i in 0..mask.n() {
        for j in mask.neighbors(i).filter(|&j| j >= i) {
            g.add_edge(ids[i], ids[j], ());
        }
    }
    g
}

#[test]
fn program_mask_is_isomorphic_to_hand_built_graph() {
    let compiled = compile_graph(&parse(BCMF_PROGRAM).unwrap()).unwrap();
    let hand = bcmf_build(3, 3, 2, BcmfVariant::Default).unwrap();
    assert_eq!(compiled.model.len(), hand.len());
    let opts = MaskOptions::default();
    let a = labelled(&compiled.model, &compile_mask(&compiled.model, opts).unwrap());
    let b = labelled(&hand, &compile_mask(&hand, opts).unwrap());
    assert_eq!(a.edge_count(), b.edge_count());
    assert!(is_isomorphic_matching(&a, &b, |x, y| x == y, |_, _| true));

    let flat = bcmf_build(3, 3, 2, BcmfVariant::NoIntermediates).unwrap();
    let c = labelled(&flat, &compile_mask(&flat, opts).unwrap());
    assert!(!is_isomorphic_matching(&a, &c, |x, y| x == y, |_, _| true));
}
