//! Text formats for graphs and masks, and mask images.
//!
//! Graph files:
//!
//! ```text
//! gsdm-graph v1
//! array <name> <extents,> <continuous|discrete:c> <exchangeable axes, or -> [<axis labels,>]
//! edge <a> <b> <d|u>
//! factor <id> <id> ...
//! ```
//!
//! Mask files: a `gsdm-mask v1 n=<n>` header followed by one row of `0`/`1`
//! characters per node.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph_model::{Domain, EdgeKind, GraphicalModel};
use crate::mask::AttentionMask;

pub const GRAPH_HEADER: &str = "gsdm-graph v1";
pub const MASK_HEADER: &str = "gsdm-mask v1";

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_graph(model: &GraphicalModel) -> String {
    let mut out = String::new();
    writeln!(out, "{GRAPH_HEADER}").unwrap();
    for a in model.arrays() {
        let exch = if a.exchangeable_axes.is_empty() {
            "-".to_string()
        } else {
            join(&a.exchangeable_axes)
        };
        writeln!(out, "array {} {} {} {} {}", a.name, join(&a.shape), a.domain, exch, a.axis_labels.join(",")).unwrap();
    }
    for e in model.edges() {
        let k = match e.kind {
            EdgeKind::Directed => 'd',
            EdgeKind::Undirected => 'u',
        };
        writeln!(out, "edge {} {} {k}", e.a, e.b).unwrap();
    }
    for f in model.factors() {
        let ids: Vec<String> = f.members.iter().map(|x| x.to_string()).collect();
        writeln!(out, "factor {}", ids.join(" ")).unwrap();
    }
    out
}

fn bad(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {}", message.into()),
    }
}

fn parse_list(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|x| x.parse().ok()).collect()
}

/// Parses a graph file; `path` is used only in error messages.
pub fn read_graph(text: &str, path: &Path) -> Result<GraphicalModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, GRAPH_HEADER)) => {}
        Some((n, other)) => return Err(bad(path, n, format!("expected header '{GRAPH_HEADER}', found '{other}'"))),
        None => return Err(bad(path, 1, "empty file")),
    }
    let mut model = GraphicalModel::new();
    for (n, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "array" => {
                if toks.len() != 5 && toks.len() != 6 {
                    return Err(bad(path, n, "array lines have: name extents domain exchangeable-axes [labels]"));
                }
                let shape = parse_list(toks[2]).ok_or_else(|| bad(path, n, format!("bad extents '{}'", toks[2])))?;
                let domain = match toks[3] {
                    "continuous" => Domain::Continuous,
                    d => match d.strip_prefix("discrete:").and_then(|c| c.parse().ok()) {
                        Some(c) => Domain::Discrete(c),
                        None => return Err(bad(path, n, format!("bad domain '{d}'"))),
                    },
                };
                let exch: Vec<usize> = if toks[4] == "-" {
                    Vec::new()
                } else {
                    parse_list(toks[4]).ok_or_else(|| bad(path, n, format!("bad axis list '{}'", toks[4])))?
                };
                let labels: Vec<String> = match toks.get(5) {
                    Some(l) => l.split(',').map(str::to_string).collect(),
                    None => (0..shape.len()).map(|a| format!("{}.{a}", toks[1])).collect(),
                };
                model
                    .add_array_labeled(toks[1], &shape, &labels, domain, &exch)
                    .map_err(|e| bad(path, n, e.to_string()))?;
            }
            "edge" => {
                if toks.len() != 4 {
                    return Err(bad(path, n, "edge lines have: a b d|u"));
                }
                let a = toks[1].parse().map_err(|_| bad(path, n, "bad node id"))?;
                let b = toks[2].parse().map_err(|_| bad(path, n, "bad node id"))?;
                let kind = match toks[3] {
                    "d" => EdgeKind::Directed,
                    "u" => EdgeKind::Undirected,
                    k => return Err(bad(path, n, format!("edge kind must be d or u, got '{k}'"))),
                };
                model.add_edge(a, b, kind).map_err(|e| bad(path, n, e.to_string()))?;
            }
            "factor" => {
                let ids = toks[1..]
                    .iter()
                    .map(|t| t.parse().map_err(|_| bad(path, n, format!("bad node id '{t}'"))))
                    .collect::<Result<Vec<usize>>>()?;
                model.add_factor(&ids).map_err(|e| bad(path, n, e.to_string()))?;
            }
            other => return Err(bad(path, n, format!("unknown record '{other}'"))),
        }
    }
    Ok(model)
}

pub fn write_mask(mask: &AttentionMask) -> String {
    let n = mask.n();
    let mut out = String::with_capacity((n + 1) * n + 32);
    writeln!(out, "{MASK_HEADER} n={n}").unwrap();
    for i in 0..n {
        out.extend(mask.row(i).iter().map(|&b| if b { '1' } else { '0' }));
        out.push('\n');
    }
    out
}

pub fn read_mask(text: &str, path: &Path) -> Result<AttentionMask> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, head) = lines.next().ok_or_else(|| bad(path, 1, "empty file"))?;
    let n: usize = head
        .strip_prefix(MASK_HEADER)
        .and_then(|r| r.trim().strip_prefix("n="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(path, 1, format!("expected '{MASK_HEADER} n=<n>'")))?;
    let mut rows = Vec::with_capacity(n);
    for (ln, line) in lines.filter(|(_, l)| !l.is_empty()) {
        if line.len() != n {
            return Err(bad(path, ln, format!("row has {} entries, expected {n}", line.len())));
        }
        let row = line
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(bad(path, ln, format!("unexpected character '{c}'"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        rows.push(row);
    }
    if rows.len() != n {
        return Err(bad(path, n + 1, format!("found {} rows, expected {n}", rows.len())));
    }
    AttentionMask::from_rows(&rows)
}

/// Binary PGM with allowed entries white, `scale` pixels per entry.
pub fn mask_pgm(mask: &AttentionMask, scale: usize) -> Vec<u8> {
    let scale = scale.max(1);
    let side = mask.n() * scale;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for i in 0..side {
        let row = mask.row(i / scale);
        out.extend((0..side).map(|j| if row[j / scale] { 255u8 } else { 0 }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{compile_mask, MaskOptions};
    use crate::tasks::{bcmf_build, sorting_build, BcmfVariant, SortConstraint};

    #[test]
    fn graph_round_trip() {
        for m in [
            bcmf_build(3, 2, 2, BcmfVariant::Default).unwrap(),
            sorting_build(3, SortConstraint::Full, true).unwrap(),
        ] {
            let text = write_graph(&m);
            let back = read_graph(&text, Path::new("x")).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn graph_errors_name_the_line() {
        let e = read_graph("gsdm-graph v1\narray x 2 continuous -\nedge 0 5 d\n", Path::new("g.txt")).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("g.txt") && msg.contains("line 3"), "{msg}");
        assert!(read_graph("nope", Path::new("g")).is_err());
    }

    #[test]
    fn mask_round_trip_and_image() {
        let m = compile_mask(&bcmf_build(2, 2, 1, BcmfVariant::Default).unwrap(), MaskOptions::default()).unwrap();
        let back = read_mask(&write_mask(&m), Path::new("m")).unwrap();
        assert_eq!(back, m);
        let img = mask_pgm(&m, 2);
        let side = m.n() * 2;
        assert!(img.starts_with(format!("P5\n{side} {side}\n255\n").as_bytes()));
        assert!(read_mask("gsdm-mask v1 n=2\n10\n1\n", Path::new("m")).is_err());
    }
}
