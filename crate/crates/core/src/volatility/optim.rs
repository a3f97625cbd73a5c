//! Quasi-Newton minimization with a backtracking line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { grad_tol: 1e-6, max_iter: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    /// Gradient norm fell below tolerance.
    pub converged: bool,
    /// The line search could not decrease `f` any further.
    pub stalled: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `fg`, which returns the objective and its gradient. Non-finite
/// objective values are treated as infeasible and shrink the step.
pub fn minimize<F>(mut fg: F, x0: &[f64], opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g) = fg(x.as_slice());
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first_step = true;
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < opts.max_iter {
        if !f.is_finite() || inf_norm(&g) < opts.grad_tol {
            break;
        }
        iterations += 1;
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            // lost descent; restart from steepest descent
            h = DMatrix::identity(n, n);
            d = -g.clone();
            slope = -g.norm_squared();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * step;
            let (fn_, gn) = fg(xn.as_slice());
            if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, DVector::from_vec(gn)));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            stalled = true;
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_step {
                h = DMatrix::identity(n, n) * (sy / y.norm_squared());
                first_step = false;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            h = &a * &h * &b + &s * s.transpose() * rho;
        }
        let no_progress = (f - fn_).abs() <= f64::EPSILON * f.abs().max(1.0) && s.norm() <= 1e-14 * x.norm().max(1.0);
        x = xn;
        f = fn_;
        g = gn;
        if no_progress {
            stalled = true;
            break;
        }
    }
    let grad_inf_norm = inf_norm(&g);
    BfgsResult {
        x: x.as_slice().to_vec(),
        f,
        grad_inf_norm,
        iterations,
        converged: f.is_finite() && grad_inf_norm < opts.grad_tol,
        stalled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
                (f, g)
            },
            &[-1.2, 1.0],
            BfgsOptions::default(),
        );
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_in_few_steps() {
        let r = minimize(
            |x| {
                let f = 3.0 * (x[0] - 2.0).powi(2) + 0.5 * (x[1] + 1.0).powi(2) + x[0] * x[1];
                (f, vec![6.0 * (x[0] - 2.0) + x[1], (x[1] + 1.0) + x[0]])
            },
            &[0.0, 0.0],
            BfgsOptions::default(),
        );
        assert!(r.converged);
        // stationary point of the quadratic: 6a + b = 12, a + b = -1
        assert!((r.x[0] - 2.6).abs() < 1e-7 && (r.x[1] + 3.6).abs() < 1e-7);
        assert!(r.iterations < 20);
    }
}
