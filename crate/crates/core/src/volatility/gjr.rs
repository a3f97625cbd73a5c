use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ObsKind;
use crate::stats;

use super::optim::{minimize, BfgsOptions};

/// Minimum series length for a variance-model fit.
pub const MIN_GJR_OBS: usize = 240;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gjr,
    GarchFallback,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gjr => "gjr",
            ModelKind::GarchFallback => "garch_fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GjrParams {
    pub omega: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub model_kind: ModelKind,
    /// Sample mean removed before fitting.
    pub mean: f64,
    /// Total Gaussian log-likelihood at the optimum.
    pub loglik: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub iterations: usize,
    pub grad_inf_norm: f64,
    /// Asymptotic standard errors of (omega, alpha, gamma, beta); gamma is NaN
    /// when it was held at zero.
    pub std_errors: [f64; 4],
}

impl GjrParams {
    /// `alpha + beta + gamma / 2`.
    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta + 0.5 * self.gamma
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.persistence())
    }
}

/// Conditional variances `σ²_0..σ²_n` (one more than `eps`, the last being the
/// forecast), starting from `init`.
pub fn gjr_variance_path(omega: f64, alpha: f64, gamma: f64, beta: f64, eps: &[f64], init: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(eps.len() + 1);
    let mut s2 = init;
    out.push(s2);
    for &e in eps {
        let a = if e < 0.0 { alpha + gamma } else { alpha };
        s2 = omega + a * e * e + beta * s2;
        out.push(s2);
    }
    out
}

/// Mean log-likelihood and its gradient in (omega, alpha, gamma, beta), with the
/// recursion started at the unconditional variance.
fn gjr_mean_loglik(theta: &[f64; 4], eps: &[f64]) -> (f64, [f64; 4]) {
    let [omega, alpha, gamma, beta] = *theta;
    let d = 1.0 - alpha - beta - 0.5 * gamma;
    if !(omega > 0.0 && d > 0.0) {
        return (f64::NAN, [f64::NAN; 4]);
    }
    let mut s2 = omega / d;
    let mut ds = [1.0 / d, omega / (d * d), 0.5 * omega / (d * d), omega / (d * d)];
    let mut ll = stats::CompensatedSum::new();
    let mut grad = [0.0f64; 4];
    let mut prev = 0.0f64;
    for (t, &e) in eps.iter().enumerate() {
        if t > 0 {
            let neg = if prev < 0.0 { prev * prev } else { 0.0 };
            let z = [1.0, prev * prev, neg, s2];
            for j in 0..4 {
                ds[j] = z[j] + beta * ds[j];
            }
            s2 = omega + (alpha * prev * prev) + gamma * neg + beta * s2;
        }
        if !(s2 > 0.0) || !s2.is_finite() {
            return (f64::NAN, [f64::NAN; 4]);
        }
        let e2 = e * e;
        ll.add(-0.5 * (LN_2PI + s2.ln() + e2 / s2));
        let w = -0.5 * (1.0 / s2 - e2 / (s2 * s2));
        for j in 0..4 {
            grad[j] += w * ds[j];
        }
        prev = e;
    }
    let n = eps.len() as f64;
    (ll.value() / n, grad.map(|g| g / n))
}

fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().fold(0.0f64, |a, &b| a.max(b));
    let ex: Vec<f64> = u.iter().map(|x| (x - m).exp()).chain(std::iter::once((-m).exp())).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|x| x / s).collect()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps unconstrained `u` to (omega, alpha, gamma, beta) and the Jacobian
/// d theta / d u. With `free_gamma` the shares of alpha, gamma/2 and beta in the
/// persistence come from a three-way softmax, otherwise gamma is pinned at 0.
fn transform(u: &[f64], free_gamma: bool) -> ([f64; 4], Vec<[f64; 4]>) {
    let omega = u[0].exp();
    let p = logistic(u[1]);
    let dp = p * (1.0 - p);
    let k = u.len();
    let mut jac = vec![[0.0f64; 4]; k];
    jac[0][0] = omega;
    if free_gamma {
        let s = softmax(&u[2..4]);
        let (sa, sg, sb) = (s[0], s[1], s[2]);
        let theta = [omega, p * sa, 2.0 * p * sg, p * sb];
        jac[1] = [0.0, dp * sa, 2.0 * dp * sg, dp * sb];
        jac[2] = [0.0, p * sa * (1.0 - sa), -2.0 * p * sg * sa, -p * sb * sa];
        jac[3] = [0.0, -p * sa * sg, 2.0 * p * sg * (1.0 - sg), -p * sb * sg];
        (theta, jac)
    } else {
        let s = softmax(&u[2..3]);
        let (sa, sb) = (s[0], s[1]);
        let theta = [omega, p * sa, 0.0, p * sb];
        jac[1] = [0.0, dp * sa, 0.0, dp * sb];
        jac[2] = [0.0, p * sa * (1.0 - sa), 0.0, -p * sb * sa];
        (theta, jac)
    }
}

fn start_point(var: f64, free_gamma: bool) -> Vec<f64> {
    let (alpha, gamma, beta) = (0.05, if free_gamma { 0.05 } else { 0.0 }, 0.85);
    let p = alpha + beta + 0.5 * gamma;
    let omega = var * (1.0 - p);
    let mut u = vec![omega.ln(), (p / (1.0 - p)).ln(), (alpha / beta).ln()];
    if free_gamma {
        u.push((0.5 * gamma / beta).ln());
    }
    u
}

fn demeaned(returns: &[f64]) -> Result<(f64, Vec<f64>)> {
    if returns.len() < MIN_GJR_OBS {
        return Err(Error::InsufficientData(format!(
            "variance model needs at least {MIN_GJR_OBS} observations, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("non-finite return in variance-model input".into()));
    }
    let mean = stats::mean(returns);
    let eps: Vec<f64> = returns.iter().map(|r| r - mean).collect();
    Ok((mean, eps))
}

/// Numeric Hessian of the analytic mean-loglik gradient over the free natural
/// parameters, inverted into asymptotic standard errors.
fn standard_errors(theta: &[f64; 4], eps: &[f64], free_gamma: bool) -> [f64; 4] {
    let idx: Vec<usize> = if free_gamma { vec![0, 1, 2, 3] } else { vec![0, 1, 3] };
    let k = idx.len();
    let mut h = DMatrix::<f64>::zeros(k, k);
    for (a, &i) in idx.iter().enumerate() {
        let step = 1e-5 * theta[i].abs().max(1e-3);
        let mut up = *theta;
        let mut dn = *theta;
        up[i] += step;
        dn[i] -= step;
        let gu = gjr_mean_loglik(&up, eps).1;
        let gd = gjr_mean_loglik(&dn, eps).1;
        for (b, &j) in idx.iter().enumerate() {
            h[(b, a)] = (gu[j] - gd[j]) / (2.0 * step);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let info = h * (-(eps.len() as f64));
    let mut se = [f64::NAN; 4];
    if let Some(cov) = info.try_inverse() {
        for (a, &i) in idx.iter().enumerate() {
            let v = cov[(a, a)];
            se[i] = if v > 0.0 { v.sqrt() } else { f64::NAN };
        }
    }
    se
}

fn fit_inner(returns: &[f64], free_gamma: bool) -> Result<GjrParams> {
    let (mean, eps) = demeaned(returns)?;
    let var = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
    if !(var > 0.0) {
        return Err(Error::Domain("variance model input has zero variance".into()));
    }
    let objective = |u: &[f64]| {
        let (theta, jac) = transform(u, free_gamma);
        let (ll, g) = gjr_mean_loglik(&theta, &eps);
        let grad: Vec<f64> = jac
            .iter()
            .map(|col| -(0..4).map(|j| col[j] * g[j]).sum::<f64>())
            .collect();
        (-ll, grad)
    };
    let res = minimize(objective, &start_point(var, free_gamma), BfgsOptions::default());
    let (theta, _) = transform(&res.x, free_gamma);
    let loglik = -res.f * eps.len() as f64;
    // a stalled line search at a near-flat gradient is a numerical optimum
    let converged = loglik.is_finite() && (res.converged || (res.stalled && res.grad_inf_norm < 1e-4));
    if !converged {
        return Err(Error::NonConvergence(format!(
            "{} fit stopped after {} iterations with gradient norm {:.3e}",
            if free_gamma { "GJR-GARCH" } else { "GARCH" },
            res.iterations,
            res.grad_inf_norm
        )));
    }
    Ok(GjrParams {
        omega: theta[0],
        alpha: theta[1],
        gamma: theta[2],
        beta: theta[3],
        model_kind: if free_gamma { ModelKind::Gjr } else { ModelKind::GarchFallback },
        mean,
        loglik,
        converged,
        n_obs: eps.len(),
        iterations: res.iterations,
        grad_inf_norm: res.grad_inf_norm,
        std_errors: standard_errors(&theta, &eps, free_gamma),
    })
}

/// Gaussian maximum likelihood fit of the asymmetric model on demeaned returns;
/// without convergence the fit is redone with gamma held at zero.
pub fn fit_gjr_garch(returns: &[f64]) -> Result<GjrParams> {
    match fit_inner(returns, true) {
        Ok(p) => Ok(p),
        Err(Error::NonConvergence(first)) => fit_inner(returns, false)
            .map_err(|e| Error::NonConvergence(format!("{first}; fallback: {e}"))),
        Err(e) => Err(e),
    }
}

/// The same likelihood with gamma constrained to zero.
pub fn fit_gjr_constrained(returns: &[f64]) -> Result<GjrParams> {
    fit_inner(returns, false)
}

/// Total log-likelihood of demeaned `eps` under the given parameters.
pub fn gjr_loglik(omega: f64, alpha: f64, gamma: f64, beta: f64, eps: &[f64]) -> f64 {
    gjr_mean_loglik(&[omega, alpha, gamma, beta], eps).0 * eps.len() as f64
}

/// Log-likelihood at the starting values used by the optimizer.
pub fn start_loglik(returns: &[f64], free_gamma: bool) -> Result<f64> {
    let (_, eps) = demeaned(returns)?;
    let var = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
    let (theta, _) = transform(&start_point(var, free_gamma), free_gamma);
    Ok(gjr_mean_loglik(&theta, &eps).0 * eps.len() as f64)
}

/// Conditional volatility for each return, scaled to full-day units: √2 for
/// overnight returns, 1 for close-to-close returns.
pub fn gjr_sigma_series(params: &GjrParams, returns: &[f64], kind: ObsKind) -> Result<Vec<f64>> {
    let scale = match kind {
        ObsKind::Overnight => std::f64::consts::SQRT_2,
        ObsKind::Daily => 1.0,
        ObsKind::Intraday => {
            return Err(Error::Domain("variance-model volatility is not defined for intraday returns".into()))
        }
    };
    let eps: Vec<f64> = returns.iter().map(|r| r - params.mean).collect();
    let init = params.unconditional_variance();
    let mut path = gjr_variance_path(params.omega, params.alpha, params.gamma, params.beta, &eps, init);
    path.pop();
    Ok(path.into_iter().map(|v| v.sqrt() * scale).collect())
}

/// Draws `n` innovations from the asymmetric model with Gaussian shocks, after
/// a burn-in started at the unconditional variance.
pub fn simulate_gjr(omega: f64, alpha: f64, gamma: f64, beta: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let p = alpha + beta + 0.5 * gamma;
    if !(omega > 0.0 && alpha >= 0.0 && gamma >= 0.0 && beta >= 0.0 && p < 1.0) {
        return Err(Error::Config(format!(
            "non-stationary or invalid variance parameters ({omega}, {alpha}, {gamma}, {beta})"
        )));
    }
    let burn = 500;
    let mut s2 = omega / (1.0 - p);
    let mut out = Vec::with_capacity(n);
    for t in 0..burn + n {
        let z: f64 = rng.sample(StandardNormal);
        let e = s2.sqrt() * z;
        if t >= burn {
            out.push(e);
        }
        let a = if e < 0.0 { alpha + gamma } else { alpha };
        s2 = omega + a * e * e + beta * s2;
    }
    Ok(out)
}

/// Symmetric GARCH(1,1) fitted through its own recursion and parameter map;
/// used to cross-check the constrained asymmetric fit.
pub mod plain {
    use super::*;

    pub fn variance_path(omega: f64, alpha: f64, beta: f64, eps: &[f64]) -> Vec<f64> {
        let mut s2 = omega / (1.0 - alpha - beta);
        eps.iter()
            .map(|&e| {
                let cur = s2;
                s2 = omega + alpha * e * e + beta * s2;
                cur
            })
            .collect()
    }

    fn loglik_grad(omega: f64, alpha: f64, beta: f64, eps: &[f64]) -> (f64, [f64; 3]) {
        let d = 1.0 - alpha - beta;
        if !(omega > 0.0 && d > 0.0) {
            return (f64::NAN, [f64::NAN; 3]);
        }
        let mut s2 = omega / d;
        let mut ds = [1.0 / d, omega / (d * d), omega / (d * d)];
        let mut ll = 0.0;
        let mut g = [0.0; 3];
        for t in 0..eps.len() {
            if t > 0 {
                let e2 = eps[t - 1] * eps[t - 1];
                ds = [1.0 + beta * ds[0], e2 + beta * ds[1], s2 + beta * ds[2]];
                s2 = omega + alpha * e2 + beta * s2;
            }
            let e2 = eps[t] * eps[t];
            ll += -0.5 * (LN_2PI + s2.ln() + e2 / s2);
            let w = -0.5 * (1.0 / s2 - e2 / (s2 * s2));
            for j in 0..3 {
                g[j] += w * ds[j];
            }
        }
        (ll, g)
    }

    /// Returns (omega, alpha, beta, total log-likelihood).
    pub fn fit(returns: &[f64]) -> Result<(f64, f64, f64, f64)> {
        let (_, eps) = demeaned(returns)?;
        let n = eps.len() as f64;
        let var = eps.iter().map(|e| e * e).sum::<f64>() / n;
        // omega = exp(a), alpha = exp(b) / (1 + exp(b) + exp(c)), beta = exp(c) / (...)
        let map = |u: &[f64]| {
            let (eb, ec) = (u[1].exp(), u[2].exp());
            let den = 1.0 + eb + ec;
            (u[0].exp(), eb / den, ec / den)
        };
        let objective = |u: &[f64]| {
            let (omega, alpha, beta) = map(u);
            let (ll, g) = loglik_grad(omega, alpha, beta, &eps);
            let (da_db, da_dc) = (alpha * (1.0 - alpha), -alpha * beta);
            let (db_db, db_dc) = (-alpha * beta, beta * (1.0 - beta));
            let grad = vec![
                -g[0] * omega / n,
                -(g[1] * da_db + g[2] * db_db) / n,
                -(g[1] * da_dc + g[2] * db_dc) / n,
            ];
            (-ll / n, grad)
        };
        let a0 = (0.05f64, 0.85f64);
        let u0 = [
            (var * (1.0 - a0.0 - a0.1)).ln(),
            (a0.0 / (1.0 - a0.0 - a0.1)).ln(),
            (a0.1 / (1.0 - a0.0 - a0.1)).ln(),
        ];
        let res = minimize(objective, &u0, BfgsOptions::default());
        if !(res.converged || (res.stalled && res.grad_inf_norm < 1e-4)) {
            return Err(Error::NonConvergence(format!(
                "GARCH(1,1) stopped with gradient norm {:.3e}",
                res.grad_inf_norm
            )));
        }
        let (omega, alpha, beta) = map(&res.x);
        Ok((omega, alpha, beta, -res.f * n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_unrolled_recursion() {
        let p = gjr_variance_path(0.1, 0.1, 0.2, 0.7, &[-1.0, 1.0, -1.0], 1.0);
        let want = [1.0, 1.1, 0.97, 1.079];
        for (g, w) in p.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn zero_gamma_matches_symmetric_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = simulate_gjr(0.1, 0.08, 0.0, 0.9, 300, &mut rng).unwrap();
        let a = gjr_variance_path(0.1, 0.08, 0.0, 0.9, &eps, 0.1 / 0.02);
        let b = plain::variance_path(0.1, 0.08, 0.9, &eps);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x, "{x} vs {y}");
        }
    }

    #[test]
    fn degenerate_recursion_is_constant() {
        let params = GjrParams {
            omega: 0.04,
            alpha: 0.0,
            gamma: 0.0,
            beta: 0.0,
            model_kind: ModelKind::Gjr,
            mean: 0.0,
            loglik: 0.0,
            converged: true,
            n_obs: 3,
            iterations: 0,
            grad_inf_norm: 0.0,
            std_errors: [0.0; 4],
        };
        let s = gjr_sigma_series(&params, &[0.3, -0.2, 0.1], ObsKind::Overnight).unwrap();
        for v in s {
            assert!((v - 0.2 * std::f64::consts::SQRT_2).abs() < 1e-15);
        }
        let d = gjr_sigma_series(&params, &[0.3], ObsKind::Daily).unwrap();
        assert!((d[0] - 0.2).abs() < 1e-15);
        assert!(gjr_sigma_series(&params, &[0.3], ObsKind::Intraday).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = simulate_gjr(0.05, 0.05, 0.1, 0.85, 500, &mut rng).unwrap();
        let theta = [0.06, 0.07, 0.08, 0.8];
        let (_, g) = gjr_mean_loglik(&theta, &eps);
        for j in 0..4 {
            let h = 1e-6;
            let mut up = theta;
            let mut dn = theta;
            up[j] += h;
            dn[j] -= h;
            let fd = (gjr_mean_loglik(&up, &eps).0 - gjr_mean_loglik(&dn, &eps).0) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn short_series_is_rejected() {
        let xs = vec![0.01; 239];
        assert!(matches!(fit_gjr_garch(&xs), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn iid_series_has_low_persistence_loading() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma2: f64 = 0.0004;
        let xs: Vec<f64> = (0..10_000)
            .map(|_| sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let p = fit_gjr_garch(&xs).unwrap();
        // beta is not identified when the shock loadings vanish, so only the
        // shock loadings and the unconditional variance are pinned down
        assert!(p.alpha + 0.5 * p.gamma < 0.02, "{p:?}");
        assert!((p.unconditional_variance() / sigma2 - 1.0).abs() < 0.10, "{p:?}");
        assert!(p.persistence() < 1.0);
        assert!(p.loglik >= start_loglik(&xs, true).unwrap());
    }
}
