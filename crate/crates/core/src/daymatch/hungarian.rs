use super::DayMatchError;

/// Minimum-cost assignment: `pairs[k] = (row, col)` for every row of an
/// `n x m` matrix with `n <= m`, or for every column when `n > m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Kuhn-Munkres via shortest augmenting paths with row and column
/// potentials, O(n² m). Rows are inserted in order and the first column of
/// minimal reduced cost wins, so uniform costs give the identity.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, DayMatchError> {
    let n = cost.len();
    if n == 0 {
        return Ok(Assignment {
            pairs: vec![],
            total: 0.0,
        });
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(DayMatchError::Ragged);
    }
    if let Some((i, j)) = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .find(|&(i, j)| !cost[i][j].is_finite())
    {
        return Err(DayMatchError::NonFiniteCost { row: i, col: j });
    }
    if m == 0 {
        return Ok(Assignment {
            pairs: vec![],
            total: 0.0,
        });
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let a = solve(&t);
        let mut pairs: Vec<(usize, usize)> = a.into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return Ok(finish(cost, pairs));
    }
    Ok(finish(cost, solve(cost)))
}

fn finish(cost: &[Vec<f64>], pairs: Vec<(usize, usize)>) -> Assignment {
    let total = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Assignment { pairs, total }
}

/// Requires `n <= m`; returns `(row, col)` sorted by row.
fn solve(a: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = a.len();
    let m = a[0].len();
    // 1-based: index 0 is the virtual source column
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
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}
