use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(query_index, gt_index)` pairs ordered by ground truth.
    pub assignment: Vec<(usize, usize)>,
    pub total_cost: f64,
}

struct Solution {
    cost: f64,
    /// Column position (into the column list) assigned to each row.
    row_to_col: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Shortest augmenting path assignment of every row to a distinct column,
/// on the submatrix selected by `rows` and `cols` (`rows.len() <= cols.len()`).
fn solve(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Solution {
    let n = rows.len();
    let m = cols.len();
    let c = |i: usize, j: usize| cost[cols[j - 1]][rows[i - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|r| c(r + 1, row_to_col[r] + 1)).sum();
    Solution {
        cost: total,
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

/// Minimum-cost injective assignment of ground truths (columns of the N x G
/// `cost` matrix) to queries (rows). Among optimal assignments the one whose
/// query sequence, read in ground-truth order, is lexicographically smallest
/// is returned; costs within `1e-9 * (1 + |optimum|)` count as ties.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let n = cost.len();
    let g = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != g) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if n < g {
        return Err(Error::InfeasibleMatch { queries: n, gts: g });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Shape("non-finite matching cost".into()));
    }
    if g == 0 {
        return Ok(MatchResult {
            assignment: Vec::new(),
            total_cost: 0.0,
        });
    }

    let scale = cost.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
    let all_rows: Vec<usize> = (0..g).collect();
    let mut free: Vec<usize> = (0..n).collect();
    let mut current = solve(cost, &all_rows, &free);
    let optimum = current.cost;
    let eps = 1e-9 * (1.0 + optimum.abs());
    let slack_tol = 1e-9 * (1.0 + scale) * g as f64;

    let mut prefix = 0.0;
    let mut assignment = Vec::with_capacity(g);
    for gt in 0..g {
        let incumbent = current.row_to_col[0];
        let mut chosen = incumbent;
        let mut replacement = None;
        for pos in 0..incumbent {
            let q = free[pos];
            let reduced = cost[q][gt] - current.u[0] - current.v[pos];
            if reduced > slack_tol {
                continue;
            }
            let rest_cols: Vec<usize> = free.iter().copied().filter(|&c| c != q).collect();
            let rest = solve(cost, &all_rows[gt + 1..], &rest_cols);
            if prefix + cost[q][gt] + rest.cost <= optimum + eps {
                chosen = pos;
                replacement = Some(rest);
                break;
            }
        }
        let q = free[chosen];
        prefix += cost[q][gt];
        assignment.push((q, gt));
        free.remove(chosen);
        current = match replacement {
            Some(rest) => rest,
            None => {
                let mut u = current.u;
                u.remove(0);
                let mut v = current.v;
                v.remove(chosen);
                let row_to_col = current.row_to_col[1..]
                    .iter()
                    .map(|&c| if c > chosen { c - 1 } else { c })
                    .collect();
                Solution {
                    cost: current.cost - cost[q][gt],
                    row_to_col,
                    u,
                    v,
                }
            }
        };
    }
    let total_cost = assignment.iter().map(|&(q, gt)| cost[q][gt]).sum();
    Ok(MatchResult {
        assignment,
        total_cost,
    })
}
