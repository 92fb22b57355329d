//! Matrix-free preconditioned conjugate gradients.

/// Outcome of [`pcg`].
#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖b - Ax‖ / ‖b‖`.
    pub relative_residual: f64,
    /// Set when a direction with `⟨Ap, p⟩ ≤ 0` was met.
    pub indefinite: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A` given by `apply`,
/// preconditioned by the inverse of `diag` (entries `≤ 0` are treated as 1),
/// starting from the contents of `x`.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> PcgOutcome {
    let n = b.len();
    let inv: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return PcgOutcome {
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
            indefinite: false,
        };
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut iterations = 0;
    while rel > tol && iterations < max_iter {
        apply(&p, &mut ap);
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return PcgOutcome {
                iterations,
                converged: false,
                relative_residual: rel,
                indefinite: true,
            };
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
    }
    PcgOutcome {
        iterations,
        converged: rel <= tol,
        relative_residual: rel,
        indefinite: false,
    }
}
