//! Sudoku grids as factor graphs. Cell values are stored as classes `0..g`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph_model::{Domain, GraphicalModel};
use crate::tasks::TaskInstance;

fn block_size(g: usize) -> Result<usize> {
    match g {
        4 => Ok(2),
        9 => Ok(3),
        _ => Err(Error::InvalidArgument(format!("grid size must be 4 or 9, got {g}"))),
    }
}

/// The 3g constraint groups (rows, columns, blocks) as cell lists.
pub fn sudoku_groups(g: usize) -> Result<Vec<Vec<usize>>> {
    let b = block_size(g)?;
    let mut groups = Vec::with_capacity(3 * g);
    for r in 0..g {
        groups.push((0..g).map(|c| r * g + c).collect());
    }
    for c in 0..g {
        groups.push((0..g).map(|r| r * g + c).collect());
    }
    for br in 0..b {
        for bc in 0..b {
            let mut cells = Vec::with_capacity(g);
            for r in 0..b {
                for c in 0..b {
                    cells.push((br * b + r) * g + bc * b + c);
                }
            }
            groups.push(cells);
        }
    }
    Ok(groups)
}

/// `cell[g, g]` with one factor per row, column and block.
pub fn sudoku_build(g: usize) -> Result<GraphicalModel> {
    let mut m = GraphicalModel::new();
    m.add_plated_array("cell", &[("row", g), ("col", g)], Domain::Discrete(g), &[])?;
    for group in sudoku_groups(g)? {
        m.add_factor(&group)?;
    }
    Ok(m)
}

/// True when every row, column and block holds each class exactly once.
pub fn sudoku_valid(grid: &[usize], g: usize) -> bool {
    let Ok(groups) = sudoku_groups(g) else { return false };
    if grid.len() != g * g || grid.iter().any(|&v| v >= g) {
        return false;
    }
    groups.iter().all(|cells| {
        let mut seen = vec![false; g];
        cells.iter().all(|&c| !std::mem::replace(&mut seen[grid[c]], true))
    })
}

/// A complete grid by randomized backtracking.
pub fn generate_grid(g: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let b = block_size(g)?;
    let mut grid = vec![usize::MAX; g * g];
    let mut candidates: Vec<Vec<usize>> = vec![Vec::new(); g * g];
    let allowed = |grid: &[usize], cell: usize, v: usize| {
        let (r, c) = (cell / g, cell % g);
        let (br, bc) = (r / b * b, c / b * b);
        (0..g).all(|x| grid[r * g + x] != v && grid[x * g + c] != v)
            && (0..b).all(|dr| (0..b).all(|dc| grid[(br + dr) * g + bc + dc] != v))
    };
    let mut cell = 0;
    candidates[0] = (0..g).collect();
    candidates[0].shuffle(rng);
    while cell < g * g {
        grid[cell] = usize::MAX;
        let mut placed = false;
        while let Some(v) = candidates[cell].pop() {
            if allowed(&grid, cell, v) {
                grid[cell] = v;
                placed = true;
                break;
            }
        }
        if placed {
            cell += 1;
            if cell < g * g {
                candidates[cell] = (0..g).collect();
                candidates[cell].shuffle(rng);
            }
        } else {
            if cell == 0 {
                return Err(Error::InvalidArgument("backtracking exhausted".into()));
            }
            cell -= 1;
        }
    }
    Ok(grid)
}

/// A fresh complete grid; nothing observed by default.
pub fn sudoku_sample(model: Arc<GraphicalModel>, g: usize, rng: &mut impl Rng) -> Result<TaskInstance> {
    let grid = generate_grid(g, rng)?;
    if model.len() != g * g {
        return Err(Error::Shape("model does not match the grid size".into()));
    }
    Ok(TaskInstance {
        model,
        values: grid.iter().map(|&v| v as f64).collect(),
        observed: vec![false; g * g],
        dims: vec![g],
    })
}
