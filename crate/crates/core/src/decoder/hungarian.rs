use crate::error::{Error, Result};
use crate::Scalar;

/// Minimum-cost assignment for a rectangular cost matrix given as rows.
///
/// Returns, for every row, the column it is matched to. Exactly
/// `min(n, m)` rows are matched. Potentials-based shortest augmenting path,
/// `O(n²·m)`.
pub fn hungarian_solve<T: Scalar>(cost: &[Vec<T>]) -> Result<Vec<Option<usize>>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Shape {
            op: "hungarian_solve",
            detail: "ragged cost matrix".into(),
        });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            op: "hungarian_solve",
        });
    }
    if m == 0 {
        return Ok(vec![None; n]);
    }
    if n <= m {
        Ok(solve(n, m, |i, j| cost[i][j]))
    } else {
        let by_col = solve(m, n, |i, j| cost[j][i]);
        let mut out = vec![None; n];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        Ok(out)
    }
}

/// Requires `n ≤ m`; every row gets a column.
fn solve<T: Scalar>(n: usize, m: usize, a: impl Fn(usize, usize) -> T) -> Vec<Option<usize>> {
    // 1-based with a virtual column 0
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}
