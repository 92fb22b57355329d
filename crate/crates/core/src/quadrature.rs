//! Gauss-Legendre rules used by the exact-on-steps integrals and the
//! sliced ball/cell overlap volumes.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub(crate) fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

pub(crate) fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Integrates `f` over [a, b] with the given rule.
pub(crate) fn integrate(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Integrates `f` over [a, b] with `0 < a < b` on octave panels in `ln(rho)`.
pub(crate) fn integrate_log_panels(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let rule = gl8();
    let (la, lb) = (a.ln(), b.ln());
    let panels = ((lb - la) / std::f64::consts::LN_2).ceil().max(1.0) as usize;
    let step = (lb - la) / panels as f64;
    let mut total = 0.0;
    for j in 0..panels {
        let lo = la + step * j as f64;
        total += integrate(rule, lo, lo + step, |t| {
            let rho = t.exp();
            f(rho) * rho
        });
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let rule = gauss_legendre(8);
        let wsum: f64 = rule.1.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
        // degree 15 is the highest exact degree for 8 points
        let v = integrate(&rule, 0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn log_panels_handle_wide_ranges() {
        let v = integrate_log_panels(1e-6, 1e3, |r| r.powf(-0.5));
        let exact = 2.0 * (1e3f64.sqrt() - 1e-3);
        assert!((v - exact).abs() < 1e-10 * exact);
    }
}
