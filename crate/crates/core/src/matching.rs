//! Row permutation giving a structurally zero-free diagonal, computed by
//! maximum bipartite matching between columns and rows of the pattern.

use crate::error::{Result, SaiError};
use crate::sparse::CscMatrix;

/// Returns `perm` such that `A.permute_rows(&perm)` has a structurally
/// nonzero diagonal: new row `j` is old row `perm[j]`.
///
/// The identity is returned unchanged when the diagonal is already
/// zero-free.
pub fn zero_free_diagonal_permutation(a: &CscMatrix) -> Result<Vec<usize>> {
    if !a.is_square() {
        return Err(SaiError::Domain(format!("matching needs a square matrix, got {}x{}", a.n_rows(), a.n_cols())));
    }
    let n = a.n_cols();
    if a.has_zero_free_diagonal() {
        return Ok((0..n).collect());
    }
    let row_of_col = maximum_matching(a);
    let matched = row_of_col.iter().filter(|r| r.is_some()).count();
    if matched < n {
        return Err(SaiError::StructurallySingular { matched, n });
    }
    Ok(row_of_col.into_iter().map(|r| r.unwrap()).collect())
}

/// Column-to-row maximum matching by depth-first augmenting paths (MC21
/// style) with a cheap-assignment pass first. Diagonal entries are
/// preferred in the cheap pass.
pub fn maximum_matching(a: &CscMatrix) -> Vec<Option<usize>> {
    let n_cols = a.n_cols();
    let n_rows = a.n_rows();
    let mut row_of_col: Vec<Option<usize>> = vec![None; n_cols];
    let mut col_of_row: Vec<Option<usize>> = vec![None; n_rows];

    for j in 0..n_cols {
        let (rows, _) = a.col(j);
        let pick = if j < n_rows && rows.binary_search(&j).is_ok() && col_of_row[j].is_none() {
            Some(j)
        } else {
            rows.iter().copied().find(|&i| col_of_row[i].is_none())
        };
        if let Some(i) = pick {
            row_of_col[j] = Some(i);
            col_of_row[i] = Some(j);
        }
    }

    let mut visited = vec![usize::MAX; n_rows];
    // stack of (column, next position in its row list)
    let mut stack: Vec<(usize, usize)> = Vec::new();
    // row chosen at each stack level
    let mut via: Vec<usize> = Vec::new();
    for root in 0..n_cols {
        if row_of_col[root].is_some() {
            continue;
        }
        stack.clear();
        via.clear();
        stack.push((root, 0));
        let mut found: Option<usize> = None;
        while let Some(&mut (j, ref mut pos)) = stack.last_mut() {
            let (rows, _) = a.col(j);
            // look for a free row first
            if *pos == 0 {
                if let Some(&i) = rows.iter().find(|&&i| col_of_row[i].is_none() && visited[i] != root) {
                    visited[i] = root;
                    found = Some(i);
                    break;
                }
            }
            let mut advanced = false;
            while *pos < rows.len() {
                let i = rows[*pos];
                *pos += 1;
                if visited[i] == root {
                    continue;
                }
                visited[i] = root;
                if let Some(next) = col_of_row[i] {
                    via.push(i);
                    stack.push((next, 0));
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                stack.pop();
                via.pop();
            }
        }
        if let Some(mut free_row) = found {
            // flip the alternating path from the top of the stack down
            for level in (0..stack.len()).rev() {
                let j = stack[level].0;
                let prev = row_of_col[j];
                row_of_col[j] = Some(free_row);
                col_of_row[free_row] = Some(j);
                match prev {
                    Some(r) => free_row = r,
                    None => break,
                }
            }
        }
    }
    row_of_col
}
