//! Minimum-cost assignment on square f64 matrices.
//!
//! The solver is the O(n³) shortest-augmenting-path formulation of the
//! Hungarian algorithm with row/column potentials. On top of it,
//! [`lex_smallest_optimal`] canonicalizes the answer to the
//! lexicographically smallest optimal assignment (row by row, smallest
//! column index), which makes downstream scores reproducible when many
//! assignments tie.

/// Comparison slack for optimality checks. Matrix entries in this crate
/// are small sums of unit costs, so this is far below any real gap.
const EPS: f64 = 1e-6;

/// Solve the assignment problem for a square cost matrix.
///
/// Returns `(assignment, total)` where `assignment[row] = column`.
/// An empty matrix yields an empty assignment with total 0.
pub fn min_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    debug_assert!(cost.iter().all(|row| row.len() == n), "matrix must be square");

    // Potentials and matching, 1-indexed; p[j] is the row matched to
    // column j, with column 0 acting as the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
            for j in 0..=n {
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

    let mut assignment = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
        total += cost[p[j] - 1][j - 1];
    }
    (assignment, total)
}

/// The lexicographically smallest optimal assignment.
///
/// Rows are fixed in order; each row takes the smallest column index that
/// still admits an optimal completion (verified by re-solving the reduced
/// problem). Deterministic for any input.
pub fn lex_smallest_optimal(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let (_, opt) = min_assignment(cost);

    let mut assignment = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let free_cols: Vec<usize> = (0..n).filter(|&j| !used[j]).collect();
        for &j in &free_cols {
            let remaining: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let sub_total = if remaining.is_empty() {
                0.0
            } else {
                let sub: Vec<Vec<f64>> = (i + 1..n)
                    .map(|r| remaining.iter().map(|&c| cost[r][c]).collect())
                    .collect();
                min_assignment(&sub).1
            };
            if fixed_cost + cost[i][j] + sub_total <= opt + EPS {
                assignment[i] = j;
                used[j] = true;
                fixed_cost += cost[i][j];
                break;
            }
        }
        debug_assert!(assignment[i] != usize::MAX, "row {i} must be assignable");
    }
    (assignment, fixed_cost)
}
