//! Exact rectangular linear assignment (shortest augmenting paths with
//! potentials, O(n^2 m)).

use alloc::vec;
use alloc::vec::Vec;

/// Minimum-cost assignment of a `rows x cols` row-major cost matrix.
///
/// Every row is assigned when `rows <= cols`, every column otherwise.
/// Returns, for each row, the assigned column.
pub fn minimize(rows: usize, cols: usize, cost: &[f64]) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        solve(rows, cols, |i, j| cost[i * cols + j])
    } else {
        let by_col = solve(cols, rows, |j, i| cost[i * cols + j]);
        let mut out = vec![None; rows];
        for (j, row) in by_col.into_iter().enumerate() {
            if let Some(i) = row {
                out[i] = Some(j);
            }
        }
        out
    }
}

/// Maximum-profit assignment. Pairs are only reported where the profit is
/// strictly positive, so callers encode forbidden pairs as `0`.
pub fn maximize_positive(rows: usize, cols: usize, profit: &[f64]) -> Vec<Option<usize>> {
    let cost: Vec<f64> = profit.iter().map(|p| -p).collect();
    let mut out = minimize(rows, cols, &cost);
    for (i, slot) in out.iter_mut().enumerate() {
        if let Some(j) = *slot {
            if profit[i * cols + j] <= 0.0 {
                *slot = None;
            }
        }
    }
    out
}

// n <= m. Potentials u (rows), v (cols); column 0 is a virtual source.
fn solve(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[f64], cols: usize, a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| cost[i * cols + j]))
            .sum()
    }

    // Exhaustive search over injective row->column maps.
    fn brute_min(rows: usize, cols: usize, cost: &[f64]) -> f64 {
        fn go(i: usize, rows: usize, cols: usize, cost: &[f64], used: &mut [bool], need: usize) -> f64 {
            if i == rows {
                return if need == 0 { 0.0 } else { f64::INFINITY };
            }
            let mut best = if rows - i > need { go(i + 1, rows, cols, cost, used, need) } else { f64::INFINITY };
            if need > 0 {
                for j in 0..cols {
                    if !used[j] {
                        used[j] = true;
                        let c = cost[i * cols + j] + go(i + 1, rows, cols, cost, used, need - 1);
                        used[j] = false;
                        best = best.min(c);
                    }
                }
            }
            best
        }
        let mut used = vec![false; cols];
        go(0, rows, cols, cost, &mut used, rows.min(cols))
    }

    #[test]
    fn classic_square() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = minimize(3, 3, &cost);
        assert_eq!(total(&cost, 3, &a), 5.0);
    }

    #[test]
    fn rectangular_both_orientations() {
        let cost = [1.0, 9.0, 9.0, 9.0, 9.0, 2.0];
        let a = minimize(2, 3, &cost);
        assert_eq!(a, [Some(0), Some(2)]);
        let t = [1.0, 9.0, 9.0, 9.0, 9.0, 2.0];
        let b = minimize(3, 2, &t);
        assert_eq!(total(&t, 2, &b), 1.0 + 2.0);
        assert_eq!(b.iter().filter(|x| x.is_some()).count(), 2);
    }

    #[test]
    fn matches_brute_force() {
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for rows in 1..=5 {
            for cols in 1..=5 {
                for _ in 0..20 {
                    let cost: Vec<f64> = (0..rows * cols).map(|_| next()).collect();
                    let a = minimize(rows, cols, &cost);
                    let got = total(&cost, cols, &a);
                    assert!((got - brute_min(rows, cols, &cost)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maximize_drops_zero_profit() {
        let profit = [0.0, 0.0, 0.0, 0.7];
        assert_eq!(maximize_positive(2, 2, &profit), [None, Some(1)]);
        assert!(maximize_positive(0, 3, &[]).is_empty());
    }
}
