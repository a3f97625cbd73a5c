//! Brute-force reference implementations for small inputs. They share no code
//! with the production routines they check.

use crate::error::{Error, Result};

/// Gauss-Jordan inverse with partial pivoting.
pub fn oracle_inverse(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..k).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty");
        if m[piv][col].abs() <= 1e-14 * scale {
            return Err(Error::Singular("oracle normal matrix".into()));
        }
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for i in 0..k {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..2 * k {
                        m[i][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    Ok(m.into_iter().map(|r| r[k..].to_vec()).collect())
}

fn cross(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = x.first().map_or(0, Vec::len);
    let mut a = vec![vec![0.0; k]; k];
    for row in x {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    a
}

/// `(X'X)^-1 X'y` by explicit inverse; `x` holds rows.
pub fn oracle_ols(y: &[f64], x: &[Vec<f64>]) -> Result<Vec<f64>> {
    if y.len() != x.len() {
        return Err(Error::Domain("oracle_ols: y and X disagree on rows".into()));
    }
    let k = x.first().map_or(0, Vec::len);
    let inv = oracle_inverse(&cross(x))?;
    let mut xty = vec![0.0; k];
    for (row, &yi) in x.iter().zip(y) {
        for j in 0..k {
            xty[j] += row[j] * yi;
        }
    }
    Ok((0..k).map(|i| (0..k).map(|j| inv[i][j] * xty[j]).sum()).collect())
}

/// Clustered sandwich by direct summation over clusters.
pub fn oracle_cluster_cov(x: &[Vec<f64>], u: &[f64], clusters: &[u32], small_sample: bool) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let k = x.first().map_or(0, Vec::len);
    let mut ids: Vec<u32> = clusters.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InsufficientData("oracle: fewer than two clusters".into()));
    }
    let mut meat = vec![vec![0.0; k]; k];
    for &g in &ids {
        let mut s = vec![0.0; k];
        for i in (0..n).filter(|&i| clusters[i] == g) {
            for j in 0..k {
                s[j] += x[i][j] * u[i];
            }
        }
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += s[a] * s[b];
            }
        }
    }
    let bread = oracle_inverse(&cross(x))?;
    let mut tmp = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            tmp[a][b] = (0..k).map(|c| bread[a][c] * meat[c][b]).sum();
        }
    }
    let f = if small_sample {
        let g = ids.len() as f64;
        g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64)
    } else {
        1.0
    };
    Ok((0..k)
        .map(|a| (0..k).map(|b| f * (0..k).map(|c| tmp[a][c] * bread[c][b]).sum::<f64>()).collect())
        .collect())
}

/// Linear-interpolation percentile, `h = (n - 1) p`, `p` in [0, 1].
pub fn oracle_quantile(data: &[f64], p: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Conditional variances `sigma2[0..=n]` of the asymmetric GARCH(1,1) recursion.
pub fn oracle_gjr_recursion(omega: f64, alpha: f64, gamma: f64, beta: f64, eps: &[f64], init: f64) -> Vec<f64> {
    let mut out = vec![init];
    for &e in eps {
        let prev = *out.last().expect("non-empty");
        let neg = if e < 0.0 { 1.0 } else { 0.0 };
        out.push(omega + (alpha + gamma * neg) * e * e + beta * prev);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{cluster_robust_cov, pooled_ols};
    use crate::volatility::gjr_variance_path;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y = x.iter().map(|r| r.iter().sum::<f64>() + rng.gen_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn identity_and_mean() {
        let x: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        assert_eq!(oracle_ols(&[4.0, -1.0, 2.5], &x).unwrap(), vec![4.0, -1.0, 2.5]);
        let ones = vec![vec![1.0]; 4];
        assert!((oracle_ols(&[1.0, 2.0, 3.0, 6.0], &ones).unwrap()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_is_an_error() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        assert!(oracle_ols(&[1.0, 2.0, 3.0], &x).is_err());
    }

    #[test]
    fn quantile_hand_value() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(oracle_quantile(&v, 0.25), 25.75);
    }

    #[test]
    fn zero_residuals_give_zero_covariance() {
        let x = vec![vec![1.0, 0.5], vec![1.0, 1.5], vec![1.0, -0.5], vec![1.0, 2.0]];
        let v = oracle_cluster_cov(&x, &[0.0; 4], &[1, 1, 2, 2], true).unwrap();
        assert!(v.iter().flatten().all(|&e| e == 0.0));
    }

    #[test]
    fn paired_with_production_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n = rng.gen_range(12..60);
            let k = rng.gen_range(1..6);
            let (x, y) = random_system(&mut rng, n, k);
            let xm = DMatrix::from_fn(n, k, |i, j| x[i][j]);
            let sol = pooled_ols(&DVector::from_vec(y.clone()), &xm).unwrap();
            let b = oracle_ols(&y, &x).unwrap();
            for j in 0..k {
                assert!((b[j] - sol.beta[j]).abs() <= 1e-9 * (1.0 + b[j].abs()));
            }
            let clusters: Vec<u32> = (0..n).map(|i| (i % 5) as u32).collect();
            let u: Vec<f64> = sol.residuals.iter().copied().collect();
            let vo = oracle_cluster_cov(&x, &u, &clusters, true).unwrap();
            let vp = cluster_robust_cov(&xm, &sol.residuals, &clusters, true).unwrap();
            for a in 0..k {
                for c in 0..k {
                    assert!((vo[a][c] - vp[(a, c)]).abs() <= 1e-9 * (1.0 + vo[a][a].abs()));
                }
            }
            let p = rng.gen_range(0.0..1.0);
            let q = oracle_quantile(&y, p);
            assert!((q - crate::stats::quantile(&y, p)).abs() <= 1e-9 * (1.0 + q.abs()));
            let eps: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let (om, al, ga, be) = (1e-5, rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.1), rng.gen_range(0.5..0.85));
            let o = oracle_gjr_recursion(om, al, ga, be, &eps, 1e-4);
            let pr = gjr_variance_path(om, al, ga, be, &eps, 1e-4);
            for (a, b) in o.iter().zip(&pr) {
                assert!((a - b).abs() <= 1e-9 * a.abs());
            }
        }
    }
}
