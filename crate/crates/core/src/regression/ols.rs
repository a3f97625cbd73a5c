//! Dense least squares, stock-clustered sandwich covariance and fit statistics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size below which a pivot of the triangular factor counts as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsSolution {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
}

fn dependent_columns(pivots: &[usize], rank: usize, labels: Option<&[String]>) -> Vec<String> {
    pivots[rank..]
        .iter()
        .map(|&c| labels.and_then(|l| l.get(c).cloned()).unwrap_or_else(|| format!("column {c}")))
        .collect()
}

/// Original column index of every position after column pivoting.
fn pivot_order(p: &nalgebra::PermutationSequence<nalgebra::Dyn>, k: usize) -> Vec<usize> {
    let mut m = DMatrix::<f64>::from_fn(1, k, |_, j| j as f64);
    p.permute_columns(&mut m);
    m.iter().map(|&v| v as usize).collect()
}

fn numerical_rank(r: &DMatrix<f64>) -> usize {
    let k = r.nrows().min(r.ncols());
    let top = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    (0..k).take_while(|&i| r[(i, i)].abs() > RANK_TOL * top).count()
}

/// Least squares by column-pivoted QR of `x`. Rank deficiency is reported with
/// the names of the columns the pivoting found dependent.
pub fn pooled_ols_labeled(y: &DVector<f64>, x: &DMatrix<f64>, labels: Option<&[String]>) -> Result<OlsSolution> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::Domain(format!("y has {} rows, X has {n}", y.len())));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} rows for {k} columns")));
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let pivots = pivot_order(qr.p(), k);
    let rank = numerical_rank(&r);
    if rank < k {
        return Err(Error::RankDeficient { columns: dependent_columns(&pivots, rank, labels) });
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, k).into_owned();
    let z = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Singular("triangular factor".into()))?;
    let mut beta = DVector::zeros(k);
    for (pos, &col) in pivots.iter().enumerate() {
        beta[col] = z[pos];
    }
    let residuals = y - x * &beta;
    Ok(OlsSolution { beta, residuals })
}

pub fn pooled_ols(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<OlsSolution> {
    pooled_ols_labeled(y, x, None)
}

/// Inverse of a symmetric positive semidefinite cross-product matrix, computed
/// on its unit-diagonal rescaling through column-pivoted QR.
pub fn invert_cross_product(a: &DMatrix<f64>, labels: Option<&[String]>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    let zero_diag: Vec<usize> = (0..k).filter(|&i| !(a[(i, i)] > 0.0)).collect();
    if !zero_diag.is_empty() {
        return Err(Error::RankDeficient { columns: dependent_columns(&zero_diag, 0, labels) });
    }
    let s: Vec<f64> = (0..k).map(|i| 1.0 / a[(i, i)].sqrt()).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| a[(i, j)] * s[i] * s[j]);
    let qr = scaled.col_piv_qr();
    let r = qr.r();
    let rank = numerical_rank(&r);
    if rank < k {
        let pivots = pivot_order(qr.p(), k);
        return Err(Error::RankDeficient { columns: dependent_columns(&pivots, rank, labels) });
    }
    let inv = qr
        .try_inverse()
        .ok_or_else(|| Error::Singular("cross-product matrix".into()))?;
    let out = DMatrix::from_fn(k, k, |i, j| inv[(i, j)] * s[i] * s[j]);
    Ok((&out + out.transpose()) * 0.5)
}

/// `G/(G-1) x (N-1)/(N-K)`.
pub fn small_sample_factor(n_clusters: usize, n: usize, k: usize) -> f64 {
    let g = n_clusters as f64;
    (g / (g - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64))
}

/// Sandwich `(X'X)^-1 (sum_g X_g'u_g u_g'X_g) (X'X)^-1`, optionally with the
/// small-sample factor.
pub fn cluster_robust_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    clusters: &[u32],
    small_sample: bool,
) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if clusters.len() != n || residuals.len() != n {
        return Err(Error::Domain("cluster ids and residuals must match the rows of X".into()));
    }
    let mut scores: BTreeMap<u32, DVector<f64>> = BTreeMap::new();
    for i in 0..n {
        let s = scores.entry(clusters[i]).or_insert_with(|| DVector::zeros(k));
        s.axpy(residuals[i], &x.row(i).transpose(), 1.0);
    }
    let g = scores.len();
    if g < 2 {
        return Err(Error::InsufficientData("clustered covariance needs at least two clusters".into()));
    }
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for s in scores.values() {
        meat.ger(1.0, s, s, 1.0);
    }
    let bread = invert_cross_product(&(x.transpose() * x), None)?;
    let mut v = &bread * meat * &bread;
    if small_sample {
        v *= small_sample_factor(g, n, k);
    }
    Ok((&v + v.transpose()) * 0.5)
}

/// `1 - (RSS/(n-k)) / (TSS/(n-1))`, TSS about the mean.
pub fn adj_r2(y: &[f64], residuals: &[f64], k: usize) -> Result<f64> {
    let n = y.len();
    if n <= k {
        return Err(Error::InsufficientData(format!("adjusted R² needs n > k ({n} <= {k})")));
    }
    let mean = crate::stats::mean(y);
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let rss: f64 = residuals.iter().map(|u| u * u).sum();
    Ok(adj_r2_from_sums(rss, tss, n, k))
}

pub(crate) fn adj_r2_from_sums(rss: f64, tss: f64, n: usize, k: usize) -> f64 {
    if tss == 0.0 {
        return if rss == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - (rss / (n - k) as f64) / (tss / (n - 1) as f64)
}

/// Least squares subject to `R beta = q`.
pub fn restricted_ols(y: &DVector<f64>, x: &DMatrix<f64>, r: &DMatrix<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
    let unrestricted = pooled_ols(y, x)?.beta;
    let xtx_inv = invert_cross_product(&(x.transpose() * x), None)?;
    let middle = (r * &xtx_inv * r.transpose())
        .try_inverse()
        .ok_or_else(|| Error::Singular("restriction matrix".into()))?;
    let gap = r * &unrestricted - q;
    Ok(&unrestricted - &xtx_inv * r.transpose() * middle * gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dummy_means() {
        let groups = [0usize, 1, 2, 0, 1, 2, 2, 0];
        let y = DVector::from_vec(vec![1.0, 5.0, 3.0, 2.0, 7.0, 4.0, 5.0, 3.0]);
        let x = DMatrix::from_fn(8, 3, |i, j| f64::from(u8::from(groups[i] == j)));
        let b = pooled_ols(&y, &x).unwrap().beta;
        assert!((b[0] - 2.0).abs() < 1e-12);
        assert!((b[1] - 6.0).abs() < 1e-12);
        assert!((b[2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_fn(10, 3, |i, j| ((i + 1) as f64).powi(j as i32));
        let truth = DVector::from_vec(vec![0.5, -2.0, 0.25]);
        let y = &x * &truth;
        let s = pooled_ols(&y, &x).unwrap();
        assert!((s.beta - truth).amax() < 1e-10);
        assert!(s.residuals.amax() < 1e-10);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 + 3.0 * i as f64,
        });
        let y = DVector::from_fn(6, |i, _| i as f64);
        match pooled_ols_labeled(&y, &x, Some(&labels)) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_by_two_cluster_toy() {
        // X = [[1,0],[1,1],[1,2],[1,4]], y = [1,2,2,5], clusters {0,0,1,1}
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 2.0, 5.0]);
        let s = pooled_ols(&y, &x).unwrap();
        // hand arithmetic: X'X = [[4,7],[7,21]], X'y = [10,26]
        // beta = (X'X)^-1 X'y = [1/35 * (21*10 - 7*26), 1/35 * (4*26 - 7*10)] = [0.8, 34/35]
        assert!((s.beta[0] - 0.8).abs() < 1e-12);
        assert!((s.beta[1] - 34.0 / 35.0).abs() < 1e-12);
        let u: Vec<f64> = (0..4).map(|i| y[i] - 0.8 - 34.0 / 35.0 * x[(i, 1)]).collect();
        let s0 = [u[0] + u[1], u[1]];
        let s1 = [u[2] + u[3], 2.0 * u[2] + 4.0 * u[3]];
        let meat = [
            [s0[0] * s0[0] + s1[0] * s1[0], s0[0] * s0[1] + s1[0] * s1[1]],
            [s0[1] * s0[0] + s1[1] * s1[0], s0[1] * s0[1] + s1[1] * s1[1]],
        ];
        let inv = [[21.0 / 35.0, -7.0 / 35.0], [-7.0 / 35.0, 4.0 / 35.0]];
        let mut want = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        want[i][j] += inv[i][a] * meat[a][b] * inv[b][j];
                    }
                }
            }
        }
        let v = cluster_robust_cov(&x, &s.residuals, &[0, 0, 1, 1], false).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((v[(i, j)] - want[i][j]).abs() < 1e-10, "{v}");
            }
        }
        let vc = cluster_robust_cov(&x, &s.residuals, &[0, 0, 1, 1], true).unwrap();
        let f = 2.0 * 3.0 / 2.0;
        assert!((vc[(0, 0)] - f * want[0][0]).abs() < 1e-10);
    }

    #[test]
    fn single_cluster_is_an_error() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let u = DVector::from_element(3, 0.1);
        assert!(cluster_robust_cov(&x, &u, &[4, 4, 4], true).is_err());
    }

    #[test]
    fn singleton_clusters_equal_heteroskedastic_sandwich() {
        let x = DMatrix::from_fn(7, 2, |i, j| if j == 0 { 1.0 } else { (i * i) as f64 * 0.1 });
        let u = DVector::from_fn(7, |i, _| (i as f64 - 3.0) * 0.2);
        let ids: Vec<u32> = (0..7).collect();
        let v = cluster_robust_cov(&x, &u, &ids, false).unwrap();
        let bread = (x.transpose() * &x).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..7 {
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * (u[i] * u[i]);
        }
        let hc0 = &bread * meat * &bread;
        assert!((v - hc0).amax() < 1e-12);
    }

    #[test]
    fn duplicated_clusters_scale_t_by_root_two() {
        let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { ((i * 7) % 5) as f64 });
        let y = DVector::from_fn(12, |i, _| ((i * 3) % 7) as f64 * 0.3 + x[(i, 1)]);
        let ids: Vec<u32> = (0..12).map(|i| (i / 3) as u32).collect();
        let s = pooled_ols(&y, &x).unwrap();
        let v = cluster_robust_cov(&x, &s.residuals, &ids, false).unwrap();
        // every cluster appears twice, the copy as a new cluster
        let x2 = DMatrix::from_fn(24, 2, |i, j| x[(i % 12, j)]);
        let y2 = DVector::from_fn(24, |i, _| y[i % 12]);
        let ids2: Vec<u32> = (0..24).map(|i| ids[i % 12] + if i < 12 { 0 } else { 100 }).collect();
        let s2 = pooled_ols(&y2, &x2).unwrap();
        let v2 = cluster_robust_cov(&x2, &s2.residuals, &ids2, false).unwrap();
        assert!((s2.beta.clone() - s.beta.clone()).amax() < 1e-12);
        for j in 0..2 {
            let t1 = s.beta[j] / v[(j, j)].sqrt();
            let t2 = s2.beta[j] / v2[(j, j)].sqrt();
            assert!((t2 / t1 - 2f64.sqrt()).abs() < 1e-10, "{t1} {t2}");
        }
    }

    #[test]
    fn adj_r2_cases() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(adj_r2(&y, &[0.0; 4], 2).unwrap(), 1.0);
        assert!(adj_r2(&y, &[0.0; 4], 4).is_err());
    }
}
