//! Rectangular assignment by the Hungarian algorithm (O(n^3), dual labels
//! with slack tracking). The public entry point maximizes total similarity;
//! internally the matrix is negated and padded square for minimization.
//! Every scan runs in ascending index order, so the result is deterministic
//! with ties resolved toward lower row then lower column indices.

use super::SimilarityMatrix;
use crate::scalar::Scalar;

/// Matching between row instances and column instances. `matches` is sorted
/// by row index; instances without a partner are listed per side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    /// Total similarity of the matched pairs, summed in row order.
    pub fn total_similarity<S: Scalar>(&self, matrix: &SimilarityMatrix<S>) -> S {
        let mut total = S::zero();
        for &(r, c) in &self.matches {
            total += matrix.at(r, c);
        }
        total
    }
}

/// Maximum-total-similarity one-to-one assignment. The smaller side is fully
/// matched first; pairs with exactly zero similarity are then demoted so both
/// instances count as unmatched.
pub fn hungarian_max<S: Scalar>(matrix: &SimilarityMatrix<S>) -> Assignment {
    let (rows, cols) = (matrix.rows, matrix.cols);
    if rows == 0 || cols == 0 {
        return Assignment {
            matches: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }

    let row_to_col = solve_min_cost(matrix);

    let mut matches = Vec::new();
    let mut col_used = vec![false; cols];
    for (r, c) in row_to_col.iter().enumerate().take(rows) {
        if let Some(c) = *c {
            if c < cols && matrix.at(r, c) > S::zero() {
                matches.push((r, c));
                col_used[c] = true;
            }
        }
    }
    let matched_rows: std::collections::HashSet<usize> =
        matches.iter().map(|&(r, _)| r).collect();
    Assignment {
        matches,
        unmatched_rows: (0..rows).filter(|r| !matched_rows.contains(r)).collect(),
        unmatched_cols: (0..cols).filter(|c| !col_used[*c]).collect(),
    }
}

/// Dual-label Hungarian on the negated, square-padded cost matrix.
/// Returns the matched column per row of the padded problem.
fn solve_min_cost<S: Scalar>(matrix: &SimilarityMatrix<S>) -> Vec<Option<usize>> {
    let dim = matrix.rows.max(matrix.cols);
    let mut cost = vec![S::zero(); dim * dim];
    for r in 0..matrix.rows {
        for c in 0..matrix.cols {
            cost[r * dim + c] = -matrix.at(r, c);
        }
    }

    let mut label_row = vec![S::zero(); dim];
    let mut label_col = vec![S::zero(); dim];
    let mut row_match: Vec<Option<usize>> = vec![None; dim];
    let mut col_match: Vec<Option<usize>> = vec![None; dim];

    // subtract row minima, then column minima
    for r in 0..dim {
        let min = (0..dim).map(|c| cost[r * dim + c]).fold(S::infinity(), S::min);
        for c in 0..dim {
            cost[r * dim + c] -= min;
        }
    }
    for c in 0..dim {
        let min = (0..dim).map(|r| cost[r * dim + c]).fold(S::infinity(), S::min);
        for r in 0..dim {
            cost[r * dim + c] -= min;
        }
    }
    // start each column label at its cheapest incident cost
    for c in 0..dim {
        label_col[c] = (0..dim).map(|r| cost[r * dim + c]).fold(S::infinity(), S::min);
    }
    // greedy zero-slack matching to seed the augmentation phases
    for r in 0..dim {
        for c in 0..dim {
            if row_match[r].is_none()
                && col_match[c].is_none()
                && cost[r * dim + c] - label_row[r] - label_col[c] == S::zero()
            {
                row_match[r] = Some(c);
                col_match[c] = Some(r);
            }
        }
    }

    let mut slack_val = vec![S::zero(); dim];
    let mut slack_row = vec![0usize; dim];
    let mut committed = vec![false; dim];
    let mut parent_row: Vec<Option<usize>> = vec![None; dim];

    while let Some(root) = (0..dim).find(|&r| row_match[r].is_none()) {
        // one phase: grow an alternating tree from `root` until a free column
        committed.iter_mut().for_each(|v| *v = false);
        parent_row.iter_mut().for_each(|v| *v = None);
        committed[root] = true;
        for c in 0..dim {
            slack_val[c] = cost[root * dim + c] - label_row[root] - label_col[c];
            slack_row[c] = root;
        }
        loop {
            let mut best: Option<usize> = None;
            for c in 0..dim {
                if parent_row[c].is_none()
                    && best.is_none_or(|b| slack_val[c] < slack_val[b])
                {
                    best = Some(c);
                }
            }
            let col = best.expect("some column is always reachable");
            let delta = slack_val[col];
            if delta > S::zero() {
                for r in 0..dim {
                    if committed[r] {
                        label_row[r] += delta;
                    }
                }
                for c in 0..dim {
                    if parent_row[c].is_some() {
                        label_col[c] -= delta;
                    } else {
                        slack_val[c] -= delta;
                    }
                }
            }
            parent_row[col] = Some(slack_row[col]);
            match col_match[col] {
                None => {
                    // augment along the alternating path back to the root
                    let mut col = col;
                    loop {
                        let row = parent_row[col].expect("tree path reaches the root");
                        let prev = row_match[row];
                        row_match[row] = Some(col);
                        col_match[col] = Some(row);
                        match prev {
                            Some(p) => col = p,
                            None => break,
                        }
                    }
                    break;
                }
                Some(row) => {
                    committed[row] = true;
                    for c in 0..dim {
                        if parent_row[c].is_none() {
                            let s = cost[row * dim + c] - label_row[row] - label_col[c];
                            if s < slack_val[c] {
                                slack_val[c] = s;
                                slack_row[c] = row;
                            }
                        }
                    }
                }
            }
        }
    }
    row_match
}
