//! Minimum-cost rectangular assignment.

/// Shortest augmenting path Hungarian method with potentials. `cost` is
/// `n x m` row-major with `n <= m`. Returns the column of each row.
fn hungarian(cost: &[f64], n: usize, m: usize) -> Vec<usize> {
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
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
                    let cur = a(i0, j) - u[i0] - v[j];
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
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of[p[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Optimal total cost over the given row and column subsets, matching
/// `min(rows.len(), cols.len())` pairs.
fn optimal_cost(cost: &[f64], width: usize, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let (n, m) = (rows.len(), cols.len());
    if n <= m {
        let sub: Vec<f64> = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| cost[r * width + c]))
            .collect();
        hungarian(&sub, n, m)
            .iter()
            .enumerate()
            .map(|(i, &j)| sub[i * m + j])
            .sum()
    } else {
        let sub: Vec<f64> = cols
            .iter()
            .flat_map(|&c| rows.iter().map(move |&r| cost[r * width + c]))
            .collect();
        hungarian(&sub, m, n)
            .iter()
            .enumerate()
            .map(|(i, &j)| sub[i * n + j])
            .sum()
    }
}

/// Sum of `cost` over `pairs`.
pub fn assignment_cost(cost: &[f64], cols: usize, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r * cols + c]).sum()
}

/// Minimum-cost one-to-one assignment on a `rows x cols` row-major matrix of
/// finite costs. Exactly `min(rows, cols)` pairs are returned, sorted by row.
/// Among optimal assignments (within a relative tolerance of 1e-9) the
/// lexicographically smallest `(row, col)` sequence is chosen.
pub fn solve_assignment(cost: &[f64], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    assert_eq!(cost.len(), rows * cols, "cost matrix shape");
    assert!(cost.iter().all(|c| c.is_finite()), "non-finite cost");
    let k = rows.min(cols);
    if k == 0 {
        return Vec::new();
    }
    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let best = optimal_cost(cost, cols, &all_rows, &all_cols);
    let tol = 1e-9 * (1.0 + best.abs());

    let mut pairs = Vec::with_capacity(k);
    let mut fixed = 0.0;
    let mut free_cols = all_cols;
    for r in 0..rows {
        let remaining = k - pairs.len();
        if remaining == 0 {
            break;
        }
        let later: Vec<usize> = (r + 1..rows).collect();
        let mut chosen = None;
        for (ci, &c) in free_cols.iter().enumerate() {
            let mut rest = free_cols.clone();
            rest.remove(ci);
            let total = fixed + cost[r * cols + c] + optimal_cost(cost, cols, &later, &rest);
            // the subproblem must still be able to place every remaining pair
            if later.len().min(rest.len()) >= remaining - 1 && total <= best + tol {
                chosen = Some((ci, c));
                break;
            }
        }
        match chosen {
            Some((ci, c)) => {
                fixed += cost[r * cols + c];
                free_cols.remove(ci);
                pairs.push((r, c));
            }
            // leaving row r unmatched is only possible when rows > cols, and
            // then it must be optimal since every column choice failed
            None => debug_assert!(later.len() >= remaining),
        }
    }
    debug_assert_eq!(pairs.len(), k);
    pairs
}
