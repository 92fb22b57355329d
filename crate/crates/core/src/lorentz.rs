//! Decreasing rearrangements, Hunt's maximal average and Lorentz
//! quasi-norms, all evaluated exactly on the step profiles that grid fields
//! induce.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::quadrature::integrate_log_panels;

/// Indices `(γ, q)` of `L(γ, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzParams {
    pub gamma: f64,
    pub q: f64,
}

impl LorentzParams {
    pub fn new(gamma: f64, q: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("{gamma} must be positive and finite")));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(invalid("q", format!("{q} must be positive and finite")));
        }
        Ok(LorentzParams { gamma, q })
    }
}

/// The decreasing rearrangement `μ*` as a right-continuous step function:
/// `μ*(s) = levels[i]` for `breakpoints[i-1] ≤ s < breakpoints[i]`
/// (with `breakpoints[-1] = 0`) and zero beyond the last breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RearrangementProfile {
    levels: Vec<f64>,
    breakpoints: Vec<f64>,
    /// `∫_0^{breakpoints[i]} μ*`.
    cumulative: Vec<f64>,
    total_measure: f64,
}

impl RearrangementProfile {
    /// Builds a profile from `(value, measure)` pieces; zero values and
    /// empty pieces are dropped and equal values merged.
    pub fn from_pieces(pieces: &[(f64, f64)], total_measure: f64) -> Result<Self> {
        let mut sorted: Vec<(f64, f64)> = pieces
            .iter()
            .map(|&(v, m)| (v.abs(), m))
            .filter(|&(v, m)| v > 0.0 && m > 0.0)
            .collect();
        if sorted.iter().any(|(v, m)| !v.is_finite() || !m.is_finite()) {
            return Err(Error::Divergent("non-finite level or measure".into()));
        }
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut levels: Vec<f64> = Vec::new();
        let mut breakpoints: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (v, m) in sorted {
            acc += m;
            if levels.last() == Some(&v) {
                *breakpoints.last_mut().unwrap() = acc;
            } else {
                levels.push(v);
                breakpoints.push(acc);
            }
        }
        Ok(Self::assemble(levels, breakpoints, total_measure.max(acc)))
    }

    fn assemble(levels: Vec<f64>, breakpoints: Vec<f64>, total_measure: f64) -> Self {
        let mut cumulative = Vec::with_capacity(levels.len());
        let mut prev = 0.0;
        let mut acc = 0.0;
        for (l, s) in levels.iter().zip(&breakpoints) {
            acc += l * (s - prev);
            cumulative.push(acc);
            prev = *s;
        }
        RearrangementProfile {
            levels,
            breakpoints,
            cumulative,
            total_measure,
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    /// Measure of the support of `μ*`.
    pub fn support(&self) -> f64 {
        self.breakpoints.last().copied().unwrap_or(0.0)
    }

    /// `∫_0^∞ μ*`.
    pub fn mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn value(&self, s: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= s);
        self.levels.get(i).copied().unwrap_or(0.0)
    }

    /// `|{μ* > t}|`.
    pub fn measure_above(&self, t: f64) -> f64 {
        let i = self.levels.partition_point(|&l| l > t);
        if i == 0 {
            0.0
        } else {
            self.breakpoints[i - 1]
        }
    }

    /// `μ**(s) = (1/s)∫_0^s μ*`.
    pub fn maximal_avg(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(invalid("s", format!("{s} must be positive")));
        }
        Ok(self.integral_to(s) / s)
    }

    fn integral_to(&self, s: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= s);
        if i >= self.levels.len() {
            return self.mass();
        }
        let (c0, s0) = if i == 0 {
            (0.0, 0.0)
        } else {
            (self.cumulative[i - 1], self.breakpoints[i - 1])
        };
        c0 + self.levels[i] * (s - s0)
    }

    /// Profile of `μ^k` (levels raised to `k > 0`, same breakpoints).
    pub fn powered(&self, k: f64) -> Self {
        Self::assemble(
            self.levels.iter().map(|l| l.powf(k)).collect(),
            self.breakpoints.clone(),
            self.total_measure,
        )
    }

    /// `∫_0^{upper} μ**(ρ)^a ρ^{b-1} dρ` for `a, b > 0`: exact on the first
    /// step, Gauss-Legendre on octave panels across the later steps and in
    /// closed form beyond the support.
    pub fn maximal_power_integral(&self, a: f64, b: f64, upper: f64) -> Result<f64> {
        if self.is_zero() || upper <= 0.0 {
            return Ok(0.0);
        }
        let first = self.breakpoints[0].min(upper);
        let mut total = self.levels[0].powf(a) * first.powf(b) / b;
        let mut prev = self.breakpoints[0];
        for i in 1..self.levels.len() {
            if prev >= upper {
                break;
            }
            let end = self.breakpoints[i].min(upper);
            let (c0, s0, l) = (self.cumulative[i - 1], prev, self.levels[i]);
            total += integrate_log_panels(prev, end, |rho| ((c0 + l * (rho - s0)) / rho).powf(a) * rho.powf(b - 1.0));
            prev = self.breakpoints[i];
        }
        let support = self.support();
        if upper > support {
            let ca = self.mass().powf(a);
            let tail = if upper.is_infinite() {
                if a <= b {
                    return Err(Error::Divergent(format!(
                        "∫ μ**^{a} ρ^{b}-1 dρ diverges at infinity for a nonzero profile"
                    )));
                }
                ca * support.powf(b - a) / (a - b)
            } else if (a - b).abs() < 1e-14 {
                ca * (upper / support).ln()
            } else {
                ca * (support.powf(b - a) - upper.powf(b - a)) / (a - b)
            };
            total += tail;
        }
        if !total.is_finite() {
            return Err(Error::Divergent("non-finite maximal-function integral".into()));
        }
        Ok(total)
    }
}

/// Decreasing rearrangement of `|f|`, extended by zero outside Ω.
pub fn rearrange(f: &ScalarField) -> RearrangementProfile {
    let magnitudes: Vec<f64> = f
        .values()
        .iter()
        .zip(f.mask())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.abs())
        .collect();
    profile_of(magnitudes, f.grid().cell_volume(), f.grid().domain_volume())
}

/// Rearrangement of the pointwise norm of a vector field.
pub fn rearrange_vector(f: &VectorField) -> RearrangementProfile {
    rearrange(&f.norm_field())
}

fn profile_of(mut magnitudes: Vec<f64>, cell: f64, total: f64) -> RearrangementProfile {
    magnitudes.retain(|&v| v > 0.0);
    magnitudes.sort_by(|a, b| b.total_cmp(a));
    let mut levels = Vec::new();
    let mut breakpoints = Vec::new();
    for (i, v) in magnitudes.iter().enumerate() {
        let count = (i + 1) as f64;
        if levels.last() == Some(v) {
            *breakpoints.last_mut().unwrap() = count * cell;
        } else {
            levels.push(*v);
            breakpoints.push(count * cell);
        }
    }
    RearrangementProfile::assemble(levels, breakpoints, total)
}

/// `[μ]_{L(γ,q)}`, exact on the step profile.
pub fn quasinorm(profile: &RearrangementProfile, params: LorentzParams) -> Result<f64> {
    let e = params.q / params.gamma;
    let mut prev: f64 = 0.0;
    let mut sum = 0.0;
    for (l, s) in profile.levels.iter().zip(&profile.breakpoints) {
        sum += l.powf(params.q) * (s.powf(e) - prev.powf(e));
        prev = *s;
    }
    finite(sum.powf(1.0 / params.q))
}

/// `[f]_{L(γ,q)}` through the distribution function `λ ↦ |{|f| > λ}|`,
/// computed directly from the field's value set.
pub fn layer_cake_quasinorm(f: &ScalarField, params: LorentzParams) -> Result<f64> {
    let mut values: Vec<f64> = f
        .values()
        .iter()
        .zip(f.mask())
        .filter(|(v, &m)| m && **v != 0.0)
        .map(|(v, _)| v.abs())
        .collect();
    values.sort_by(f64::total_cmp);
    let cell = f.grid().cell_volume();
    let n = values.len();
    let e = params.q / params.gamma;
    // distinct levels ascending; |{|f| > λ}| is constant between them
    let mut sum = 0.0;
    let mut i = 0;
    let mut below = 0.0;
    while i < n {
        let level = values[i];
        let above = (n - i) as f64 * cell;
        sum += above.powf(e) * (level.powf(params.q) - below);
        below = level.powf(params.q);
        while i < n && values[i] == level {
            i += 1;
        }
    }
    finite(sum.powf(1.0 / params.q))
}

/// `‖μ‖_{L(γ,q)}`, the same functional with `μ**` in place of `μ*`.
pub fn lorentz_norm(profile: &RearrangementProfile, params: LorentzParams) -> Result<f64> {
    if params.gamma <= 1.0 && !profile.is_zero() {
        return Err(Error::Divergent(format!(
            "‖·‖_L(γ,q) is infinite for γ = {} ≤ 1 on a nonzero profile",
            params.gamma
        )));
    }
    let e = params.q / params.gamma;
    let integral = profile.maximal_power_integral(params.q, e, f64::INFINITY)?;
    finite((e * integral).powf(1.0 / params.q))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergent("Lorentz functional overflowed".into()))
    }
}

/// Both sides of `[|V|²]_{L(n/2,1/2)} = [V]²_{L(n,1)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SquareIdentityReport {
    pub squared_field: f64,
    pub squared_norm: f64,
    pub relative_discrepancy: f64,
}

/// Evaluates the left side by the distribution function of `|V|²` and the
/// right side from the rearrangement of `|V|`.
pub fn square_identity_check(v: &ScalarField, n: usize) -> Result<SquareIdentityReport> {
    if n <= 2 {
        return Err(invalid("n", format!("the identity is used for n > 2, got {n}")));
    }
    let nf = n as f64;
    let squared = v.map(|x| x * x);
    let lhs = layer_cake_quasinorm(&squared, LorentzParams::new(nf / 2.0, 0.5)?)?;
    let rhs = quasinorm(&rearrange(v), LorentzParams::new(nf, 1.0)?)?.powi(2);
    let scale = lhs.abs().max(rhs.abs());
    Ok(SquareIdentityReport {
        squared_field: lhs,
        squared_norm: rhs,
        relative_discrepancy: if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 },
    })
}

/// One row of the Lorentz report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzRow {
    pub gamma: f64,
    pub q: f64,
    pub quasinorm: f64,
    pub norm: f64,
    pub ratio: f64,
}

pub fn lorentz_row(profile: &RearrangementProfile, params: LorentzParams) -> Result<LorentzRow> {
    let quasi = quasinorm(profile, params)?;
    let norm = lorentz_norm(profile, params)?;
    Ok(LorentzRow {
        gamma: params.gamma,
        q: params.q,
        quasinorm: quasi,
        norm,
        ratio: if quasi > 0.0 { norm / quasi } else { 1.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{lp_norm, Grid, Region};
    use approx::assert_relative_eq;

    fn two_level() -> RearrangementProfile {
        RearrangementProfile::from_pieces(&[(1.0, 2.0), (3.0, 1.0)], 5.0).unwrap()
    }

    #[test]
    fn two_level_profile() {
        let p = two_level();
        assert_eq!(p.levels(), &[3.0, 1.0]);
        assert_eq!(p.breakpoints(), &[1.0, 3.0]);
        assert_eq!(p.value(0.5), 3.0);
        assert_eq!(p.value(1.0), 1.0);
        assert_eq!(p.value(3.0), 0.0);
        assert_eq!(p.maximal_avg(2.0).unwrap(), 2.0);
        assert!(p.maximal_avg(0.0).is_err());
    }

    #[test]
    fn indicator_closed_forms() {
        let g = Grid::cube(3, 9, 0.0, 1.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| if x[0] + x[1] < 0.6 { 2.5 } else { 0.0 });
        let measure = f.values().iter().filter(|&&v| v > 0.0).count() as f64 * g.cell_volume();
        for (gamma, q) in [(3.0, 1.0), (1.5, 0.5), (2.0, 4.0)] {
            let params = LorentzParams::new(gamma, q).unwrap();
            let exact = 2.5 * measure.powf(1.0 / gamma);
            assert_relative_eq!(quasinorm(&rearrange(&f), params).unwrap(), exact, max_relative = 1e-13);
            assert_relative_eq!(layer_cake_quasinorm(&f, params).unwrap(), exact, max_relative = 1e-13);
        }
        let rep = square_identity_check(&f, 3).unwrap();
        assert_relative_eq!(rep.squared_norm, 6.25 * measure.powf(2.0 / 3.0), max_relative = 1e-13);
        assert!(rep.relative_discrepancy < 1e-13);
    }

    #[test]
    fn zero_field() {
        let g = Grid::cube(2, 5, 0.0, 1.0).unwrap();
        let f = ScalarField::zeros(&g);
        let params = LorentzParams::new(3.0, 1.0).unwrap();
        assert_eq!(quasinorm(&rearrange(&f), params).unwrap(), 0.0);
        assert_eq!(layer_cake_quasinorm(&f, params).unwrap(), 0.0);
        assert_eq!(lorentz_norm(&rearrange(&f), params).unwrap(), 0.0);
        assert_eq!(square_identity_check(&f, 3).unwrap().relative_discrepancy, 0.0);
    }

    #[test]
    fn diagonal_index_is_lebesgue() {
        let g = Grid::cube(2, 12, 0.0, 1.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| (7.0 * x[0]).sin() * (1.0 + x[1]));
        for r in [1.0, 2.5, 4.0] {
            let params = LorentzParams::new(r, r).unwrap();
            let l = lp_norm(&f, r, &Region::All).unwrap();
            assert_relative_eq!(quasinorm(&rearrange(&f), params).unwrap(), l, max_relative = 1e-10);
        }
    }

    #[test]
    fn constant_profile_norm_equals_quasinorm_beyond_support() {
        // μ** = μ* on the support; past it the tail ∫ (c m/ρ)^q ρ^{q/γ-1} adds a fixed factor
        let p = RearrangementProfile::from_pieces(&[(2.0, 1.5)], 1.5).unwrap();
        let params = LorentzParams::new(3.0, 1.0).unwrap();
        let quasi = quasinorm(&p, params).unwrap();
        let norm = lorentz_norm(&p, params).unwrap();
        // (1/3)[∫_0^m c ρ^{-2/3} dρ + ∫_m^∞ c m ρ^{-5/3} dρ] = c m^{1/3}(1 + 1/2)
        assert_relative_eq!(norm, 1.5 * quasi, max_relative = 1e-12);
    }

    #[test]
    fn gamma_at_most_one_is_divergent() {
        let p = two_level();
        assert!(matches!(lorentz_norm(&p, LorentzParams::new(1.0, 1.0).unwrap()), Err(Error::Divergent(_))));
        assert!(LorentzParams::new(0.0, 1.0).is_err());
        assert!(LorentzParams::new(2.0, f64::INFINITY).is_err());
    }

    #[test]
    fn maximal_integral_matches_dense_quadrature() {
        let p = RearrangementProfile::from_pieces(&[(5.0, 0.1), (2.0, 0.4), (0.5, 1.0)], 2.0).unwrap();
        let (a, b) = (0.5, 1.0 / 3.0);
        let exact = p.maximal_power_integral(a, b, 3.0).unwrap();
        // midpoint rule in log coordinates
        let (lo, hi) = (1e-12f64.ln(), 3.0f64.ln());
        let steps = 400_000;
        let dt = (hi - lo) / steps as f64;
        let mut brute = 0.0;
        for i in 0..steps {
            let rho = (lo + (i as f64 + 0.5) * dt).exp();
            brute += p.maximal_avg(rho).unwrap().powf(a) * rho.powf(b) * dt;
        }
        brute += 5f64.powf(a) * 1e-12f64.powf(b) / b;
        assert_relative_eq!(exact, brute, max_relative = 1e-6);
    }
}
