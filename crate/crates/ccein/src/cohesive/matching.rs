//! Minimum-cost assignment on small rectangular cost matrices.
//!
//! The solver first maximizes the number of feasible pairings, then
//! minimizes their total cost, and finally — among equally cheap optima —
//! returns the lexicographically smallest assignment by `(row, column)`.
//! Infeasible pairs are marked with `f64::INFINITY`.
//!
//! Internally the matrix is padded to a square with a large sentinel cost
//! and solved by the augmenting-path (potentials) method in O(n^3). The
//! sentinel exceeds any achievable finite total, so minimizing cost with
//! sentinels automatically maximizes feasible cardinality. The tie-break is
//! a second pass: fix rows one at a time to the smallest column that still
//! admits an equally cheap completion.

/// Internal stand-in for an infeasible pairing. One sentinel outweighs every
/// possible finite total (see [`MAX_FINITE_COST`] x [`MAX_SIDE`]), which is
/// what makes "min cost" imply "max cardinality".
const PAD_COST: f64 = 1e7;

/// Upper bound on a single finite cost entry.
pub const MAX_FINITE_COST: f64 = 1e5;

/// Largest supported matrix side.
pub const MAX_SIDE: usize = 64;

/// Totals within this are considered ties (exact for costs that are
/// multiples of 2^-k, which is all the engine produces).
const TIE_EPS: f64 = 1e-9;

/// Outcome of [`optimal_assignment`]: for each row, the column it got (or
/// `None`), plus the summed cost of the feasible pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<Option<usize>>,
    pub total: f64,
}

impl MatchResult {
    pub fn assigned_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_some()).count()
    }
}

/// Augmenting-path assignment on a square matrix; returns each row's column.
/// All entries must be finite. Deterministic: scans use strict `<`, so the
/// first (lowest-index) minimum encountered wins every internal choice.
fn solve_square(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    // 1-based arrays in the classic formulation; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![usize::MAX; n];
    for j in 1..=n {
        if row_of_col[j] != 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}

fn padded_total(a: &[Vec<f64>], cols: &[usize]) -> f64 {
    cols.iter().enumerate().map(|(r, &c)| a[r][c]).sum()
}

/// Solves the square matrix with some rows pre-committed to given columns:
/// returns the total over *all* rows, or `None` if the pre-commitment is
/// inconsistent.
fn total_with_prefix(a: &[Vec<f64>], prefix: &[usize]) -> Option<f64> {
    let n = a.len();
    let mut taken = vec![false; n];
    let mut fixed_cost = 0.0;
    for (r, &c) in prefix.iter().enumerate() {
        if taken[c] {
            return None;
        }
        taken[c] = true;
        fixed_cost += a[r][c];
    }
    let free_rows: Vec<usize> = (prefix.len()..n).collect();
    let free_cols: Vec<usize> = (0..n).filter(|&c| !taken[c]).collect();
    if free_rows.is_empty() {
        return Some(fixed_cost);
    }
    let sub: Vec<Vec<f64>> =
        free_rows.iter().map(|&r| free_cols.iter().map(|&c| a[r][c]).collect()).collect();
    let sub_assign = solve_square(&sub);
    Some(fixed_cost + padded_total(&sub, &sub_assign))
}

/// Minimum-cost assignment of rows to columns. See the module docs for the
/// exact optimization order. Panics if any finite cost reaches
/// [`MAX_FINITE_COST`] or the matrix exceeds [`MAX_SIDE`] on a side —
/// both far beyond anything the coordinator produces.
pub fn optimal_assignment(cost: &[Vec<f64>]) -> MatchResult {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return MatchResult { pairs: vec![None; rows], total: 0.0 };
    }
    assert!(rows <= MAX_SIDE && cols <= MAX_SIDE, "assignment matrix too large");
    let n = rows.max(cols);

    let padded: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    if r < rows && c < cols {
                        let x = cost[r][c];
                        assert_eq!(cost[r].len(), cols, "ragged cost matrix");
                        assert!(!x.is_nan(), "NaN cost");
                        if x.is_finite() {
                            assert!(
                                x.abs() < MAX_FINITE_COST,
                                "finite cost {x} out of supported range"
                            );
                            x
                        } else {
                            PAD_COST
                        }
                    } else {
                        PAD_COST
                    }
                })
                .collect()
        })
        .collect();

    let mut chosen = solve_square(&padded);
    let best_total = padded_total(&padded, &chosen);

    // Lexicographic tie-break: for each real row in order, adopt the lowest
    // feasible column that still permits an equally cheap completion.
    for r in 0..rows.min(n) {
        let current = chosen[r];
        if padded[r][current] >= PAD_COST {
            // This row is effectively unassigned; any feasible column would
            // change cardinality, which optimality already ruled out.
            continue;
        }
        for c in 0..current {
            if padded[r][c] >= PAD_COST || chosen[..r].contains(&c) {
                continue;
            }
            let mut prefix: Vec<usize> = chosen[..r].to_vec();
            prefix.push(c);
            if let Some(total) = total_with_prefix(&padded, &prefix) {
                if total <= best_total + TIE_EPS {
                    // Re-derive the tail so later rows stay consistent.
                    let mut taken = vec![false; n];
                    for &pc in &prefix {
                        taken[pc] = true;
                    }
                    let free_cols: Vec<usize> = (0..n).filter(|&cc| !taken[cc]).collect();
                    let sub: Vec<Vec<f64>> = (r + 1..n)
                        .map(|rr| free_cols.iter().map(|&cc| padded[rr][cc]).collect())
                        .collect();
                    if !sub.is_empty() {
                        for (k, &sc) in solve_square(&sub).iter().enumerate() {
                            chosen[r + 1 + k] = free_cols[sc];
                        }
                    }
                    chosen[r] = c;
                    break;
                }
            }
        }
    }

    let mut pairs = vec![None; rows];
    let mut total = 0.0;
    for r in 0..rows {
        let c = chosen[r];
        if c < cols && cost[r][c].is_finite() {
            pairs[r] = Some(c);
            total += cost[r][c];
        }
    }
    MatchResult { pairs, total }
}

// -------------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive reference: tries every injective row->column mapping and
    /// returns the (max cardinality, then min cost) optimum.
    fn brute_force(cost: &[Vec<f64>]) -> (usize, f64) {
        let cols = cost.first().map_or(0, |r| r.len());
        let mut best = (0usize, 0.0f64);
        fn recurse(
            cost: &[Vec<f64>],
            r: usize,
            used: &mut Vec<bool>,
            count: usize,
            sum: f64,
            best: &mut (usize, f64),
        ) {
            if r == cost.len() {
                if count > best.0 || (count == best.0 && sum < best.1 - 1e-12) {
                    *best = (count, sum);
                }
                return;
            }
            recurse(cost, r + 1, used, count, sum, best); // leave row r out
            for c in 0..used.len() {
                if !used[c] && cost[r][c].is_finite() {
                    used[c] = true;
                    recurse(cost, r + 1, used, count + 1, sum + cost[r][c], best);
                    used[c] = false;
                }
            }
        }
        let mut used = vec![false; cols];
        recurse(cost, 0, &mut used, 0, 0.0, &mut best);
        (best.0, best.1)
    }

    #[test]
    fn two_by_two_picks_the_diagonal() {
        let m = optimal_assignment(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(m.pairs, vec![Some(0), Some(1)]);
        assert_eq!(m.total, 2.0);
    }

    #[test]
    fn anti_diagonal_when_it_is_cheaper() {
        let m = optimal_assignment(&[vec![1.0, 1.0], vec![1.0, 2.0]]);
        assert_eq!(m.pairs, vec![Some(1), Some(0)]);
        assert_eq!(m.total, 2.0);
    }

    #[test]
    fn all_equal_costs_break_ties_lexicographically() {
        let m = optimal_assignment(&vec![vec![3.0, 3.0, 3.0]; 3]);
        assert_eq!(m.pairs, vec![Some(0), Some(1), Some(2)]);

        // Off-diagonal optimum with a tie: rows may keep total 4 in several
        // ways; row 0 must grab column 0.
        let m = optimal_assignment(&[vec![2.0, 2.0], vec![2.0, 2.0]]);
        assert_eq!(m.pairs, vec![Some(0), Some(1)]);
    }

    #[test]
    fn infeasible_pairs_are_never_used() {
        let inf = f64::INFINITY;
        let m = optimal_assignment(&[vec![1.0, inf], vec![inf, inf]]);
        assert_eq!(m.pairs, vec![Some(0), None]);
        assert_eq!(m.total, 1.0);
    }

    #[test]
    fn cardinality_beats_cost() {
        let inf = f64::INFINITY;
        // Assigning row 0 to column 0 cheaply would strand row 1; the solver
        // must take the expensive split that matches both.
        let m = optimal_assignment(&[vec![1.0, 100.0], vec![1.5, inf]]);
        assert_eq!(m.pairs, vec![Some(1), Some(0)]);
        assert_eq!(m.total, 101.5);
    }

    #[test]
    fn contested_column_goes_to_the_cheaper_row() {
        let inf = f64::INFINITY;
        let m = optimal_assignment(&[vec![5.0, inf], vec![1.0, inf]]);
        assert_eq!(m.pairs, vec![None, Some(0)]);
        assert_eq!(m.total, 1.0);
    }

    #[test]
    fn rectangular_matrices_work_both_ways() {
        // More rows than columns: one row stays out.
        let m = optimal_assignment(&[vec![4.0], vec![2.0], vec![9.0]]);
        assert_eq!(m.pairs, vec![None, Some(0), None]);

        // More columns than rows: every row lands somewhere.
        let m = optimal_assignment(&[vec![7.0, 1.0, 3.0], vec![2.0, 8.0, 6.0]]);
        assert_eq!(m.pairs, vec![Some(1), Some(0)]);
        assert_eq!(m.total, 3.0);
    }

    #[test]
    fn empty_inputs_are_fine() {
        assert_eq!(optimal_assignment(&[]).pairs, Vec::<Option<usize>>::new());
        let m = optimal_assignment(&[vec![], vec![]]);
        assert_eq!(m.pairs, vec![None, None]);
    }

    #[test]
    fn matches_brute_force_on_random_feasible_5x5() {
        // 200 seeded trials against exhaustive permutation search; costs are
        // multiples of 0.25 so every comparison is exact in f64.
        use rand::Rng;
        let mut rng = crate::rng::stream(404, "matching-oracle");
        for trial in 0..200 {
            let cost: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..5).map(|_| f64::from(rng.random_range(0..400u16)) * 0.25).collect())
                .collect();
            let got = optimal_assignment(&cost);
            let (want_count, want_total) = brute_force(&cost);
            assert_eq!(got.assigned_count(), want_count, "trial {trial}: {cost:?}");
            assert!(
                (got.total - want_total).abs() < 1e-9,
                "trial {trial}: got {} want {want_total} on {cost:?}",
                got.total
            );
        }
    }

    #[test]
    fn matches_brute_force_with_random_infeasibilities() {
        use rand::Rng;
        let mut rng = crate::rng::stream(405, "matching-oracle-inf");
        for trial in 0..200 {
            let cost: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    (0..4)
                        .map(|_| {
                            if rng.random::<f64>() < 0.35 {
                                f64::INFINITY
                            } else {
                                f64::from(rng.random_range(0..100u8))
                            }
                        })
                        .collect()
                })
                .collect();
            let got = optimal_assignment(&cost);
            let (want_count, want_total) = brute_force(&cost);
            assert_eq!(got.assigned_count(), want_count, "trial {trial}: {cost:?}");
            assert!(
                (got.total - want_total).abs() < 1e-9,
                "trial {trial}: got {} want {want_total} on {cost:?}",
                got.total
            );
        }
    }

    #[test]
    fn lexicographic_choice_is_globally_consistent() {
        // Two optimal assignments exist: (0,1,2) and (1,0,2) both cost 6.
        // Row 0 prefers column 0, which forces row 1 onto column 1.
        let m = optimal_assignment(&[
            vec![2.0, 2.0, 9.0],
            vec![2.0, 2.0, 9.0],
            vec![9.0, 9.0, 2.0],
        ]);
        assert_eq!(m.pairs, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(m.total, 6.0);
    }
}
