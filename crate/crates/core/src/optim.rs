//! Small dense BFGS minimizer with a backtracking Armijo line search.
//!
//! Sized for the three-parameter transmission fits; the inverse Hessian is
//! kept as a dense `n x n` matrix.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once `max |g_i| <= grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop once a step lowers `f` by less than `f_tol * (1 + |f|)`.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-10,
            f_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    /// Gradient or objective tolerance reached.
    Converged,
    /// Iteration budget used up while still making progress.
    MaxIter,
    /// The line search found no decrease along any tried direction.
    NoProgress,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub status: BfgsStatus,
    /// Final inverse Hessian approximation; can warm-start a later call.
    pub inverse_hessian: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f` starting at `x0`. `eval` returns the value and gradient.
/// The returned point is never worse than `x0`.
pub fn minimize<F>(eval: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_from(eval, x0, None, opts)
}

/// As [`minimize`], starting from a known inverse Hessian approximation,
/// typically the one returned by a previous call on a nearby problem.
pub fn minimize_from<F>(
    mut eval: F,
    x0: &[f64],
    inverse_hessian: Option<Vec<Vec<f64>>>,
    opts: &BfgsOptions,
) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = eval(&x);
    let warm =
        inverse_hessian.filter(|h| h.len() == n && h.iter().all(|r| r.len() == n && r.iter().all(|v| v.is_finite())));
    let mut scaled = warm.is_some();
    let mut h = warm.unwrap_or_else(|| identity(n));
    let mut resets = 0;

    if !f.is_finite() {
        return BfgsResult {
            x,
            f,
            grad: g,
            iterations: 0,
            status: BfgsStatus::NoProgress,
            inverse_hessian: h,
        };
    }

    for iter in 0..opts.max_iter {
        if max_abs(&g) <= opts.grad_tol * (1.0 + f.abs()) {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter,
                status: BfgsStatus::Converged,
                inverse_hessian: h,
            };
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            h = identity(n);
            scaled = false;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        // first step along steepest descent gets unit length
        let mut step = if scaled { 1.0 } else { 1.0 / max_abs(&d).max(1e-300) };

        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = eval(&xn);
            if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if resets == 0 && scaled {
                // stale curvature; retry once from steepest descent
                h = identity(n);
                scaled = false;
                resets += 1;
                continue;
            }
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter,
                status: BfgsStatus::NoProgress,
                inverse_hessian: h,
            };
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;

        if decrease <= opts.f_tol * (1.0 + f.abs()) {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter + 1,
                status: BfgsStatus::Converged,
                inverse_hessian: h,
            };
        }

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h = identity(n);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = gamma;
                }
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
    }
    BfgsResult {
        x,
        f,
        grad: g,
        iterations: opts.max_iter,
        status: BfgsStatus::MaxIter,
        inverse_hessian: h,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
