//! Tiny dense solvers for the per-face systems of the grid oracles.

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when a pivot falls below `tol` times the largest
/// entry.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))?;
        if a[piv][col].abs() <= tol * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                let (top, bottom) = a.split_at_mut(row);
                for (x, p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                    *x -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least-squares / minimum-norm solution of `a x = b` for small, possibly
/// rectangular or rank-deficient systems (ridge-regularized normal equations).
pub fn lstsq(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    if m == n {
        if let Some(x) = solve(a.to_vec(), b.to_vec(), 1e-13) {
            return x;
        }
    }
    let ridge = 1e-13;
    if m >= n {
        let mut ata = vec![vec![0.0; n]; n];
        let mut atb = vec![0.0; n];
        for (row, bi) in a.iter().zip(b) {
            for i in 0..n {
                atb[i] += row[i] * bi;
                for j in 0..n {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        let tr: f64 = (0..n).map(|i| ata[i][i]).sum::<f64>().max(1.0);
        for (i, r) in ata.iter_mut().enumerate() {
            r[i] += ridge * tr;
        }
        solve(ata, atb, 0.0).unwrap_or_else(|| vec![0.0; n])
    } else {
        let mut aat = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                aat[i][j] = (0..n).map(|k| a[i][k] * a[j][k]).sum();
            }
        }
        let tr: f64 = (0..m).map(|i| aat[i][i]).sum::<f64>().max(1.0);
        for (i, r) in aat.iter_mut().enumerate() {
            r[i] += ridge * tr;
        }
        let y = solve(aat, b.to_vec(), 0.0).unwrap_or_else(|| vec![0.0; m]);
        (0..n).map(|k| (0..m).map(|i| a[i][k] * y[i]).sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_solve() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(a, vec![3.0, 5.0], 1e-14).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0], 1e-14).is_none());
    }

    #[test]
    fn minimum_norm_for_underdetermined() {
        let x = lstsq(&[vec![1.0, 1.0, 1.0]], &[1.0]);
        for v in x {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overdetermined_consistent() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let x = lstsq(&a, &[0.25, 0.75, 1.0]);
        assert!((x[0] - 0.25).abs() < 1e-10 && (x[1] - 0.75).abs() < 1e-10);
    }
}
