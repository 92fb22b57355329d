//! Flux fields `a(z)`, the map `W(z) = |z|^{(p-2)/2} z`, monotonicity
//! checks and the ε-regularized fields used by the solver.
//!
//! Every catalog field is radial, `a(z) = g(|z|²) z`, with
//! `g(τ) = (c + τ)^{(p-2)/2} ℓ((c + τ)^κ)`: `ℓ ≡ 1` for the power profile and
//! `ℓ(y) = ln(e + y)` for the power-log profile. Uhlenbeck fields use `κ = 1`
//! and general-growth fields `κ = 1/2`, so that `g(τ) = h(√τ)/√τ` with
//! `h(t) = t^{p-1} ℓ(t)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gl16, integrate};

const E: f64 = std::f64::consts::E;

/// Largest `N·n` for which the tensor-product mollifier is built.
pub const MAX_MOLLIFIED_COMPONENTS: usize = 4;

/// Midpoints of five equal cells of [-1, 1].
const MOLLIFIER_NODES: [f64; 5] = [-0.8, -0.4, 0.0, 0.4, 0.8];

/// In the singular range the Hessian of each mollifier term is evaluated no
/// closer than this fraction of ε to its singular point.
const HESSIAN_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    PLaplace,
    Uhlenbeck,
    GeneralGrowth,
}

/// Named shape of `g` (Uhlenbeck) or `h` (general growth).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Power,
    PowerLog,
}

/// The vector field `a(·)` with its structure constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorModel {
    pub variant: Variant,
    pub p: f64,
    #[serde(default)]
    pub s: f64,
    #[serde(default)]
    pub profile: Profile,
    /// Ellipticity constant; filled in by [`OperatorModel::new`] when absent.
    #[serde(default)]
    pub nu: Option<f64>,
    /// Growth constant; filled in by [`OperatorModel::new`] when absent.
    #[serde(rename = "L", default)]
    pub l: Option<f64>,
    /// Lower bound of `h'(t)t/h(t)` (general growth).
    #[serde(default)]
    pub delta0: Option<f64>,
    /// Upper bound of `h'(t)t/h(t)` (general growth).
    #[serde(rename = "Lambda", default)]
    pub lambda: Option<f64>,
}

/// `g(τ) = (c+τ)^m ℓ((c+τ)^κ)` with `m = (p-2)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Radial {
    p: f64,
    c: f64,
    kappa: f64,
    log: bool,
}

impl Radial {
    fn m(&self) -> f64 {
        0.5 * (self.p - 2.0)
    }

    fn ell(&self, y: f64) -> f64 {
        if self.log {
            (E + y).ln()
        } else {
            1.0
        }
    }

    /// `y ℓ'(y)`.
    fn y_ell_prime(&self, y: f64) -> f64 {
        if self.log {
            y / (E + y)
        } else {
            0.0
        }
    }

    fn singular_at_zero(&self) -> bool {
        self.c == 0.0 && self.p < 2.0
    }

    fn g(&self, tau: f64) -> f64 {
        let sigma = self.c + tau;
        if sigma == 0.0 {
            return if self.p > 2.0 {
                0.0
            } else if self.p == 2.0 {
                self.ell(0.0)
            } else {
                f64::INFINITY
            };
        }
        sigma.powf(self.m()) * self.ell(sigma.powf(self.kappa))
    }

    /// `g'(τ) τ`, finite whenever `g(τ)` is.
    fn g_prime_tau(&self, tau: f64) -> f64 {
        if tau == 0.0 {
            return 0.0;
        }
        let sigma = self.c + tau;
        let y = sigma.powf(self.kappa);
        sigma.powf(self.m()) * (tau / sigma) * (self.m() * self.ell(y) + self.kappa * self.y_ell_prime(y))
    }

    fn flux(&self, z: &[f64], out: &mut [f64]) {
        let tau = norm2(z);
        let g = if tau == 0.0 && self.singular_at_zero() { 0.0 } else { self.g(tau) };
        for (o, zi) in out.iter_mut().zip(z) {
            *o = g * zi;
        }
    }

    /// Adds `weight · ∂a(z)` to the row-major `k × k` matrix `out`, with `|z|`
    /// raised to at least `floor`.
    fn add_jacobian(&self, z: &[f64], weight: f64, floor: f64, out: &mut [f64]) {
        let k = z.len();
        let mut tau = norm2(z);
        let r = tau.sqrt();
        let mut unit = vec![0.0; k];
        if r > 0.0 {
            for (u, zi) in unit.iter_mut().zip(z) {
                *u = zi / r;
            }
        }
        if r < floor {
            tau = floor * floor;
        }
        let g = self.g(tau);
        let radial = 2.0 * self.g_prime_tau(tau);
        for i in 0..k {
            out[i * k + i] += weight * g;
            if radial != 0.0 {
                for j in 0..k {
                    out[i * k + j] += weight * radial * unit[i] * unit[j];
                }
            }
        }
    }

    /// `Φ(σ) = ½∫_0^σ t^m ℓ(t^κ) dt`; the density is `Φ(c + τ) - Φ(c)`.
    fn phi(&self, sigma: f64) -> f64 {
        let y = sigma.powf(0.5 * self.p);
        if !self.log {
            return y / self.p;
        }
        self.log_tail(y) / self.p
    }

    /// `∫_0^y ℓ(t^{2κ/p}) dt` on geometric panels towards zero.
    fn log_tail(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let e = 2.0 * self.kappa / self.p;
        let f = |t: f64| (E + t.powf(e)).ln();
        let mut total = 0.0;
        let mut hi = y;
        for _ in 0..48 {
            let lo = 0.5 * hi;
            total += integrate(gl16(), lo, hi, f);
            hi = lo;
        }
        total + hi * f(0.5 * hi)
    }

    fn density(&self, z: &[f64]) -> f64 {
        self.density_increment(&vec![0.0; z.len()], z)
    }

    /// `A(z + dz) - A(z)` without cancellation when `dz` is small.
    fn density_increment(&self, z: &[f64], dz: &[f64]) -> f64 {
        let s1 = self.c + norm2(z);
        let d: f64 = z.iter().zip(dz).map(|(a, b)| 2.0 * a * b + b * b).sum();
        let s2 = (s1 + d).max(0.0);
        let half_p = 0.5 * self.p;
        if s1 == 0.0 || s2 == 0.0 {
            return self.phi(s2) - self.phi(s1);
        }
        // y2 - y1 with y = σ^{p/2}
        let y1 = s1.powf(half_p);
        let dy = y1 * (half_p * (d / s1).ln_1p()).exp_m1();
        if !self.log {
            return dy / self.p;
        }
        let y2 = y1 + dy;
        if y1.min(y2) >= 0.5 * y1.max(y2) {
            let e = 2.0 * self.kappa / self.p;
            let mean = integrate(gl16(), 0.0, 1.0, |t| (E + (y1 + t * dy).powf(e)).ln());
            dy * mean / self.p
        } else {
            (self.log_tail(y2) - self.log_tail(y1)) / self.p
        }
    }
}


impl Radial {
    /// `A(z + dz) - A(z) - ⟨a(z), dz⟩ ≥ 0`, accurate when `dz` is small.
    fn bregman(&self, z: &[f64], dz: &[f64]) -> f64 {
        let tau = norm2(z);
        let s1 = self.c + tau;
        let dd = norm2(dz);
        let d: f64 = 2.0 * dot(z, dz) + dd;
        if s1 == 0.0 {
            return self.density(dz);
        }
        let x = d / s1;
        let half_g = 0.5 * self.g(tau);
        let one_dim = if x.abs() >= 0.5 {
            // no cancellation to fear: A(z+dz) - A(z) - Φ'(σ1) d
            self.density_increment(z, dz) - half_g * d
        } else if !self.log {
            let k = 0.5 * self.p;
            s1.powf(k) / self.p * pow_remainder(k, x)
        } else {
            // ∫_{σ1}^{σ2} (Φ'(σ) - Φ'(σ1)) dσ with Φ' = g/2
            let inner = integrate(gl16(), 0.0, 1.0, |t| 0.5 * self.g(tau + t * d) - half_g);
            d * inner
        };
        (one_dim + half_g * dd).max(0.0)
    }
}

/// `(1 + x)^k - 1 - kx` for `x > -1`, by series when `|x|` is small.
fn pow_remainder(k: f64, x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let mut term = k * (k - 1.0) / 2.0 * x * x;
        let mut sum = term;
        for j in 3..9 {
            term *= (k - (j as f64 - 1.0)) / j as f64 * x;
            sum += term;
        }
        sum
    } else {
        (k * x.ln_1p()).exp_m1() - k * x
    }
}

pub(crate) fn norm2(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W(z) = |z|^{(p-2)/2} z`, continuously extended by `W(0) = 0`.
pub fn w_map(p: f64, z: &[f64]) -> Vec<f64> {
    let r2 = norm2(z);
    if r2 == 0.0 {
        return vec![0.0; z.len()];
    }
    let f = r2.powf(0.25 * (p - 2.0));
    z.iter().map(|v| f * v).collect()
}

/// Result of one flux evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxValue {
    pub value: Vec<f64>,
    /// True when `z = 0` in the singular range `p < 2, s = 0` and the
    /// continuous extension `a(0) = 0` was used.
    pub singular: bool,
}

impl OperatorModel {
    /// Validates parameters and fills in missing structure constants.
    pub fn new(mut self) -> Result<Self> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(invalid("p", format!("{} must exceed 1", self.p)));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(invalid("s", format!("{} must be nonnegative", self.s)));
        }
        if self.variant == Variant::PLaplace && self.profile != Profile::Power {
            return Err(Error::UnsupportedVariant(
                "the p-Laplace variant has no profile; use uhlenbeck or general-growth".into(),
            ));
        }
        if self.variant == Variant::GeneralGrowth {
            let (lo, hi) = self.growth_index_range();
            let d0 = *self.delta0.get_or_insert(lo);
            let lam = *self.lambda.get_or_insert(hi);
            if !(d0 > 0.0 && d0 <= lo * (1.0 + 1e-12) && lam >= hi * (1.0 - 1e-12)) {
                return Err(invalid(
                    "delta0/Lambda",
                    format!("h'(t)t/h(t) ranges over [{lo:.6}, {hi:.6}], outside [{d0}, {lam}]"),
                ));
            }
        }
        let (nu, l) = match (self.variant, self.profile) {
            (Variant::GeneralGrowth, _) | (_, Profile::Power) => {
                // eigenvalues of ∂a relative to (|z|²+s²)^{(p-2)/2} lie between
                // min(1, p-1) and max(1, p-1)
                let lo = (self.p - 1.0).min(1.0);
                let hi = (self.p - 1.0).max(1.0);
                (1.0 / lo, 1.0 + hi)
            }
            _ => {
                let (nu, l) = sampled_structure_constants(&self.radial(), self.s, self.p, 2, 4000, 7);
                (nu, l)
            }
        };
        let nu = *self.nu.get_or_insert(nu);
        let l = *self.l.get_or_insert(l.max(nu));
        if !(nu > 0.0 && l >= nu) {
            return Err(invalid("nu/L", format!("need 0 < nu <= L, got nu = {nu}, L = {l}")));
        }
        Ok(self)
    }

    pub fn p_laplace(p: f64, s: f64) -> Result<Self> {
        Self::with(Variant::PLaplace, Profile::Power, p, s)
    }

    pub fn with(variant: Variant, profile: Profile, p: f64, s: f64) -> Result<Self> {
        OperatorModel {
            variant,
            p,
            s,
            profile,
            nu: None,
            l: None,
            delta0: None,
            lambda: None,
        }
        .new()
    }

    pub fn nu(&self) -> f64 {
        self.nu.unwrap_or(1.0)
    }

    pub fn big_l(&self) -> f64 {
        self.l.unwrap_or(1.0)
    }

    fn radial(&self) -> Radial {
        Radial {
            p: self.p,
            c: self.s * self.s,
            kappa: if self.variant == Variant::GeneralGrowth { 0.5 } else { 1.0 },
            log: self.profile == Profile::PowerLog,
        }
    }

    /// `h(t) = t^{p-1} ℓ(t)` of the general-growth form.
    pub fn growth_h(&self, t: f64) -> f64 {
        let ell = if self.profile == Profile::PowerLog { (E + t).ln() } else { 1.0 };
        t.powf(self.p - 1.0) * ell
    }

    /// `h'(t)`.
    pub fn growth_h_prime(&self, t: f64) -> f64 {
        match self.profile {
            Profile::Power => (self.p - 1.0) * t.powf(self.p - 2.0),
            Profile::PowerLog => {
                t.powf(self.p - 2.0) * ((self.p - 1.0) * (E + t).ln() + t / (E + t))
            }
        }
    }

    /// Range of `h'(t)t/h(t)` over `t ∈ [1e-6, 1e6]` sampled logarithmically.
    pub fn growth_index_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=1200 {
            let t = 10f64.powf(-6.0 + i as f64 / 100.0);
            let r = self.growth_h_prime(t) * t / self.growth_h(t);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    /// `a(z)`; the continuous extension `a(0) = 0` is flagged in the singular range.
    pub fn a_eval(&self, z: &[f64]) -> FluxValue {
        let mut value = vec![0.0; z.len()];
        let radial = self.radial();
        radial.flux(z, &mut value);
        FluxValue {
            singular: radial.singular_at_zero() && norm2(z) == 0.0,
            value,
        }
    }

    /// `∂a(z)` as a row-major `k × k` matrix (`k = z.len()`).
    pub fn jacobian(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len() * z.len()];
        self.radial().add_jacobian(z, 1.0, 0.0, &mut out);
        out
    }

    /// Energy density `A(z)` with `∂A = a`, `A(0) = 0`.
    pub fn density(&self, z: &[f64]) -> f64 {
        self.radial().density(z)
    }

    /// Builds `a_ε`: exact shift `g(ε² + t)` for Uhlenbeck fields, otherwise a
    /// mollification over `B_ε ⊂ R^{components}` by a fixed tensor rule.
    pub fn regularize(&self, epsilon: f64, components: usize) -> Result<RegularizedModel> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("{epsilon} must be positive")));
        }
        let base = self.radial();
        let smoothing = match self.variant {
            Variant::Uhlenbeck => Smoothing::Shift(Radial {
                c: base.c + epsilon * epsilon,
                ..base
            }),
            Variant::PLaplace | Variant::GeneralGrowth => {
                if components == 0 || components > MAX_MOLLIFIED_COMPONENTS {
                    return Err(Error::UnsupportedVariant(format!(
                        "mollification in R^{components} is limited to {MAX_MOLLIFIED_COMPONENTS} components; \
                         use the uhlenbeck variant for systems"
                    )));
                }
                let (nodes, weights) = mollifier_rule(components);
                Smoothing::Mollified {
                    base,
                    nodes: nodes.iter().map(|y| epsilon * y).collect(),
                    weights,
                    floor: if base.singular_at_zero() { HESSIAN_FLOOR * epsilon } else { 0.0 },
                }
            }
        };
        Ok(RegularizedModel {
            base: self.clone(),
            epsilon,
            s_eps: self.s + epsilon,
            components,
            smoothing,
        })
    }

    /// Smallest constants in the (V), monotonicity and coercivity inequalities
    /// over `samples` seeded pairs.
    pub fn check_monotonicity(&self, samples: usize, seed: u64, components: usize) -> MonotonicityReport {
        let k = components.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = self.p;
        let mut rep = MonotonicityReport {
            samples,
            c_w_lower: 1.0,
            c_w_upper: 1.0,
            c_mon3: 0.0,
            c_mon2: (p >= 2.0).then_some(0.0),
            c_mony: 0.0,
        };
        for i in 0..samples {
            let z1 = random_matrix(&mut rng, k, -2.0, 2.0);
            let z2 = if i % 3 == 2 {
                let mut d = random_matrix(&mut rng, k, -4.0, 0.0);
                let scale = norm2(&z1).sqrt().max(1e-300);
                for (dv, zv) in d.iter_mut().zip(&z1) {
                    *dv = zv + scale * *dv;
                }
                d
            } else {
                random_matrix(&mut rng, k, -2.0, 2.0)
            };
            rep.absorb(self, &z1, &z2);
        }
        rep
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, k: usize, lo_exp: f64, hi_exp: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = norm2(&dir).sqrt().max(1e-300);
    let radius = 10f64.powf(rng.gen_range(lo_exp..hi_exp));
    dir.iter().map(|v| v * radius / norm).collect()
}

/// Smallest working constants found by [`OperatorModel::check_monotonicity`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// `c` with `c^{-1}(|z1|²+|z2|²)^{(p-2)/2} ≤ |W(z2)-W(z1)|²/|z2-z1|²`.
    pub c_w_lower: f64,
    /// `c` with `|W(z2)-W(z1)|²/|z2-z1|² ≤ c(|z1|²+|z2|²)^{(p-2)/2}`.
    pub c_w_upper: f64,
    /// `c` with `c^{-1}|W(z2)-W(z1)|² ≤ ⟨a(z2)-a(z1), z2-z1⟩`.
    pub c_mon3: f64,
    /// `c` with `c^{-1}|z2-z1|^p ≤ ⟨a(z2)-a(z1), z2-z1⟩`, for `p ≥ 2`.
    pub c_mon2: Option<f64>,
    /// `c` with `|z|^p ≤ c⟨a(z), z⟩ + c s^p`.
    pub c_mony: f64,
}

impl MonotonicityReport {
    /// Largest of the reported constants.
    pub fn worst(&self) -> f64 {
        [self.c_w_lower, self.c_w_upper, self.c_mon3, self.c_mon2.unwrap_or(0.0), self.c_mony]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn absorb(&mut self, model: &OperatorModel, z1: &[f64], z2: &[f64]) {
        let p = model.p;
        let dz: Vec<f64> = z2.iter().zip(z1).map(|(a, b)| a - b).collect();
        let dz2 = norm2(&dz);
        let w1 = w_map(p, z1);
        let w2 = w_map(p, z2);
        let dw2: f64 = w2.iter().zip(&w1).map(|(a, b)| (a - b).powi(2)).sum();
        let a1 = model.a_eval(z1).value;
        let a2 = model.a_eval(z2).value;
        let da: Vec<f64> = a2.iter().zip(&a1).map(|(a, b)| a - b).collect();
        let mono = dot(&da, &dz);
        if dz2 > 0.0 {
            let weight = (norm2(z1) + norm2(z2)).powf(0.5 * (p - 2.0));
            let ratio = dw2 / (dz2 * weight);
            if ratio.is_finite() && ratio > 0.0 {
                self.c_w_upper = self.c_w_upper.max(ratio);
                self.c_w_lower = self.c_w_lower.max(1.0 / ratio);
            }
            if mono > 0.0 {
                self.c_mon3 = self.c_mon3.max(dw2 / mono);
                if let Some(c) = self.c_mon2.as_mut() {
                    *c = c.max(dz2.powf(0.5 * p) / mono);
                }
            }
        }
        for z in [z1, z2] {
            let a = model.a_eval(z).value;
            let rhs = dot(&a, z) + model.s.powf(p);
            if rhs > 0.0 {
                self.c_mony = self.c_mony.max(norm2(z).powf(0.5 * p) / rhs);
            }
        }
    }
}

/// Nodes (flattened, `k` per node) and normalized weights of the mollifier rule.
fn mollifier_rule(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let total = MOLLIFIER_NODES.len().pow(k as u32);
    for idx in 0..total {
        let mut rest = idx;
        let mut y = Vec::with_capacity(k);
        for _ in 0..k {
            y.push(MOLLIFIER_NODES[rest % MOLLIFIER_NODES.len()]);
            rest /= MOLLIFIER_NODES.len();
        }
        let r2 = norm2(&y);
        if r2 < 1.0 {
            weights.push((-1.0 / (1.0 - r2)).exp());
            nodes.extend(y);
        }
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    (nodes, weights)
}

#[derive(Debug, Clone, PartialEq)]
enum Smoothing {
    Shift(Radial),
    Mollified {
        base: Radial,
        /// Node offsets `ε y_j`, `k` values per node.
        nodes: Vec<f64>,
        weights: Vec<f64>,
        floor: f64,
    },
}

/// The regularized field `a_ε` with `s_ε = s + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedModel {
    pub base: OperatorModel,
    pub epsilon: f64,
    pub s_eps: f64,
    components: usize,
    smoothing: Smoothing,
}

impl RegularizedModel {
    pub fn p(&self) -> f64 {
        self.base.p
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of base-field evaluations per call.
    pub fn cost(&self) -> usize {
        match &self.smoothing {
            Smoothing::Shift(_) => 1,
            Smoothing::Mollified { weights, .. } => weights.len(),
        }
    }

    fn for_each_shift(&self, z: &[f64], mut f: impl FnMut(&Radial, &[f64], f64, f64)) {
        match &self.smoothing {
            Smoothing::Shift(r) => f(r, z, 1.0, 0.0),
            Smoothing::Mollified {
                base,
                nodes,
                weights,
                floor,
            } => {
                let k = z.len();
                let mut w = vec![0.0; k];
                for (j, &weight) in weights.iter().enumerate() {
                    for i in 0..k {
                        w[i] = z[i] - nodes[j * k + i];
                    }
                    f(base, &w, weight, *floor);
                }
            }
        }
    }

    /// `a_ε(z)` written into `out`.
    pub fn flux(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.components);
        out.fill(0.0);
        let mut tmp = vec![0.0; z.len()];
        self.for_each_shift(z, |r, w, weight, _| {
            r.flux(w, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += weight * t;
            }
        });
    }

    pub fn a_eval(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.flux(z, &mut out);
        out
    }

    /// `∂a_ε(z)` added with factor `scale` into the row-major matrix `out`.
    pub fn add_jacobian(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        self.for_each_shift(z, |r, w, weight, floor| r.add_jacobian(w, scale * weight, floor, out));
    }

    pub fn jacobian(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len() * z.len()];
        self.add_jacobian(z, 1.0, &mut out);
        out
    }

    /// Energy density `A_ε(z)` with `∂A_ε = a_ε`.
    pub fn density(&self, z: &[f64]) -> f64 {
        let zero = vec![0.0; z.len()];
        self.density_increment(&zero, z) + self.density_at_zero()
    }

    fn density_at_zero(&self) -> f64 {
        let mut total = 0.0;
        let zero = vec![0.0; self.components];
        self.for_each_shift(&zero, |r, w, weight, _| total += weight * r.density(w));
        total
    }

    /// `A_ε(z + dz) - A_ε(z)` computed term by term without cancellation.
    pub fn density_increment(&self, z: &[f64], dz: &[f64]) -> f64 {
        let mut total = 0.0;
        self.for_each_shift(z, |r, w, weight, _| total += weight * r.density_increment(w, dz));
        total
    }

    /// `A_ε(z + dz) - A_ε(z) - ⟨a_ε(z), dz⟩`, accurate for small `dz`.
    pub fn bregman(&self, z: &[f64], dz: &[f64]) -> f64 {
        let mut total = 0.0;
        self.for_each_shift(z, |r, w, weight, _| total += weight * r.bregman(w, dz));
        total
    }

    /// Sampled constants `(ν₀, L₀)` of the regularized growth and ellipticity bounds.
    pub fn sample_constants(&self, samples: usize, seed: u64) -> (f64, f64) {
        let k = self.components;
        let p = self.p();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nu0: f64 = 0.0;
        let mut l0: f64 = 0.0;
        for _ in 0..samples {
            let z = random_matrix(&mut rng, k, -3.0, 3.0)
                .into_iter()
                .map(|v| v * self.s_eps)
                .collect::<Vec<_>>();
            let (lo, hi) = eig_range(&self.jacobian(&z), k);
            let sigma = norm2(&z) + self.s_eps * self.s_eps;
            let a = norm2(&self.a_eval(&z)).sqrt();
            nu0 = nu0.max(sigma.powf(0.5 * (p - 2.0)) / lo);
            l0 = l0.max((a + hi * sigma.sqrt()) / sigma.powf(0.5 * (p - 1.0)));
        }
        (nu0, l0)
    }
}

/// Smallest and largest eigenvalue of a symmetric `k × k` matrix.
fn eig_range(m: &[f64], k: usize) -> (f64, f64) {
    let mat = DMatrix::from_row_slice(k, k, m);
    let eig = SymmetricEigen::new(mat).eigenvalues;
    (eig.min(), eig.max())
}

/// Sampled `(ν, L)` for a radial field with parameter `s`.
fn sampled_structure_constants(r: &Radial, s: f64, p: f64, k: usize, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nu: f64 = 0.0;
    let mut l: f64 = 0.0;
    let scale = if s > 0.0 { s } else { 1.0 };
    for _ in 0..samples {
        let z: Vec<f64> = random_matrix(&mut rng, k, -3.0, 3.0).into_iter().map(|v| v * scale).collect();
        let mut jac = vec![0.0; k * k];
        r.add_jacobian(&z, 1.0, 0.0, &mut jac);
        let (lo, hi) = eig_range(&jac, k);
        let mut a = vec![0.0; k];
        r.flux(&z, &mut a);
        let sigma = norm2(&z) + s * s;
        nu = nu.max(sigma.powf(0.5 * (p - 2.0)) / lo);
        l = l.max((norm2(&a).sqrt() + hi * sigma.sqrt()) / sigma.powf(0.5 * (p - 1.0)));
    }
    (nu, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn laplacean_flux_is_identity() {
        let m = OperatorModel::p_laplace(2.0, 0.0).unwrap();
        let z = [0.3, -1.7, 2.5];
        assert_eq!(m.a_eval(&z).value, z.to_vec());
        assert_eq!(w_map(2.0, &z), z.to_vec());
    }

    #[test]
    fn quartic_flux_and_w_map() {
        let m = OperatorModel::p_laplace(4.0, 0.0).unwrap();
        assert_eq!(m.a_eval(&[2.0, 0.0]).value, vec![8.0, 0.0]);
        assert_eq!(w_map(4.0, &[2.0, 0.0]), vec![4.0, 0.0]);
        assert_eq!(w_map(3.0, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gradient() {
        let m = OperatorModel::p_laplace(1.5, 0.3).unwrap();
        let v = m.a_eval(&[0.0, 0.0]);
        assert_eq!(v.value, vec![0.0, 0.0]);
        assert!(!v.singular);
        let sing = OperatorModel::p_laplace(1.5, 0.0).unwrap().a_eval(&[0.0, 0.0]);
        assert!(sing.singular);
        assert_eq!(sing.value, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(OperatorModel::p_laplace(1.0, 0.0).is_err());
        assert!(OperatorModel::p_laplace(2.0, -1.0).is_err());
        assert!(OperatorModel::p_laplace(3.0, 0.0).unwrap().regularize(0.0, 2).is_err());
        let mut m = OperatorModel::with(Variant::GeneralGrowth, Profile::PowerLog, 3.0, 0.0).unwrap();
        m.lambda = Some(2.0);
        assert!(m.new().is_err());
    }

    #[test]
    fn density_gradient_matches_flux() {
        for (variant, profile, p, s) in [
            (Variant::PLaplace, Profile::Power, 1.5, 0.2),
            (Variant::Uhlenbeck, Profile::PowerLog, 3.0, 0.1),
            (Variant::GeneralGrowth, Profile::PowerLog, 2.5, 0.0),
        ] {
            let m = OperatorModel::with(variant, profile, p, s).unwrap();
            let z = [0.7, -0.4];
            let a = m.a_eval(&z).value;
            for i in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += 1e-5;
                zm[i] -= 1e-5;
                let fd = (m.density(&zp) - m.density(&zm)) / 2e-5;
                assert_relative_eq!(fd, a[i], max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn density_closed_form() {
        let m = OperatorModel::p_laplace(3.0, 0.0).unwrap();
        assert_relative_eq!(m.density(&[3.0, 4.0]), 125.0 / 3.0, max_relative = 1e-14);
        let log = OperatorModel::with(Variant::GeneralGrowth, Profile::PowerLog, 2.0, 0.0).unwrap();
        // p = 2: A(z) = ½∫_0^{|z|²} ln(e + √t) dt = ∫_0^{|z|} r ln(e + r) dr
        let r: f64 = 1.3;
        let exact = 0.5 * (r * r - E * E) * (E + r).ln() - 0.25 * r * r + 0.5 * E * r + 0.5 * E * E;
        assert_relative_eq!(log.density(&[r, 0.0]), exact, max_relative = 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = OperatorModel::with(Variant::Uhlenbeck, Profile::PowerLog, 3.5, 0.5).unwrap();
        let z = [0.4, 1.1, -0.3];
        let jac = m.jacobian(&z);
        for j in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            let ap = m.a_eval(&zp).value;
            let am = m.a_eval(&zm).value;
            for i in 0..3 {
                assert_relative_eq!(jac[i * 3 + j], (ap[i] - am[i]) / 2e-6, epsilon = 1e-7, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn homogeneity_without_s() {
        let m = OperatorModel::p_laplace(3.3, 0.0).unwrap();
        let z = [0.25, -0.6];
        let a = m.a_eval(&z).value;
        let lam: f64 = 2.7;
        let az = m.a_eval(&[lam * z[0], lam * z[1]]).value;
        for i in 0..2 {
            assert_relative_eq!(az[i], lam.powf(2.3) * a[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn monotonicity_constants_at_p_two_are_one() {
        let m = OperatorModel::p_laplace(2.0, 0.0).unwrap();
        let rep = m.check_monotonicity(500, 1, 2);
        assert_relative_eq!(rep.c_w_lower, 1.0, max_relative = 1e-9);
        assert_relative_eq!(rep.c_w_upper, 1.0, max_relative = 1e-9);
        assert_relative_eq!(rep.c_mon3, 1.0, max_relative = 1e-9);
        assert_relative_eq!(rep.c_mony, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn monotonicity_constants_finite_at_p_four() {
        let m = OperatorModel::p_laplace(4.0, 0.0).unwrap();
        let rep = m.check_monotonicity(10_000, 3, 2);
        assert!(rep.worst().is_finite() && rep.worst() < 100.0, "{rep:?}");
        assert!(rep.c_mon2.unwrap() > 0.0);
    }

    #[test]
    fn uhlenbeck_regularization_is_a_shift() {
        let m = OperatorModel::with(Variant::Uhlenbeck, Profile::Power, 1.7, 0.0).unwrap();
        let eps = 0.05;
        let r = m.regularize(eps, 2).unwrap();
        let z = [0.3, 0.1];
        let tau: f64 = 0.1;
        let expected = (eps * eps + tau).powf(-0.15);
        let a = r.a_eval(&z);
        assert_relative_eq!(a[0], expected * 0.3, max_relative = 1e-14);
        assert_relative_eq!(r.s_eps, 0.05);
    }

    #[test]
    fn mollified_laplacean_is_identity() {
        let m = OperatorModel::p_laplace(2.0, 0.0).unwrap();
        for eps in [0.1, 0.01] {
            let r = m.regularize(eps, 3).unwrap();
            let z = [0.2, -0.5, 1.5];
            let a = r.a_eval(&z);
            for i in 0..3 {
                assert!((a[i] - z[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mollified_flux_converges_on_compacts() {
        let m = OperatorModel::p_laplace(1.5, 0.0).unwrap();
        let mut last = f64::INFINITY;
        for eps in [0.1, 0.01, 0.001] {
            let r = m.regularize(eps, 2).unwrap();
            let mut worst: f64 = 0.0;
            for i in -10..=10 {
                for j in -10..=10 {
                    let z = [0.1 * i as f64, 0.1 * j as f64];
                    let a = m.a_eval(&z).value;
                    let ae = r.a_eval(&z);
                    worst = worst.max(((a[0] - ae[0]).powi(2) + (a[1] - ae[1]).powi(2)).sqrt());
                }
            }
            assert!(worst < last);
            last = worst;
        }
        assert!(last < 0.05);
    }

    #[test]
    fn mollified_increment_is_consistent() {
        let m = OperatorModel::with(Variant::GeneralGrowth, Profile::PowerLog, 1.6, 0.0).unwrap();
        let r = m.regularize(0.05, 2).unwrap();
        let z = [0.31, -0.12];
        let dz = [1e-9, 2e-9];
        let inc = r.density_increment(&z, &dz);
        let a = r.a_eval(&z);
        assert_relative_eq!(inc, a[0] * dz[0] + a[1] * dz[1], max_relative = 1e-6);
        let big = [0.2, 0.3];
        let zb = [z[0] + big[0], z[1] + big[1]];
        assert_relative_eq!(r.density_increment(&z, &big), r.density(&zb) - r.density(&z), max_relative = 1e-10);
    }

    #[test]
    fn bregman_matches_direct_difference() {
        for (variant, profile, p, s) in [
            (Variant::PLaplace, Profile::Power, 1.5, 0.0),
            (Variant::PLaplace, Profile::Power, 4.0, 0.0),
            (Variant::Uhlenbeck, Profile::PowerLog, 3.0, 0.2),
            (Variant::GeneralGrowth, Profile::PowerLog, 1.7, 0.0),
        ] {
            let r = OperatorModel::with(variant, profile, p, s).unwrap().regularize(0.1, 2).unwrap();
            let z = [0.4, -0.9];
            for scale in [1.0, 1e-2, 1e-4] {
                let dz = [0.3 * scale, 0.2 * scale];
                let zb = [z[0] + dz[0], z[1] + dz[1]];
                let a = r.a_eval(&z);
                let direct = r.density(&zb) - r.density(&z) - a[0] * dz[0] - a[1] * dz[1];
                let b = r.bregman(&z, &dz);
                assert!(b >= 0.0);
                assert_relative_eq!(b, direct, max_relative = 1e-5, epsilon = 1e-13);
            }
            // quadratic regime: B ≈ ½ dzᵀ ∂a dz
            let dz = [3e-7, -2e-7];
            let jac = r.jacobian(&z);
            let quad = 0.5 * (dz[0] * (jac[0] * dz[0] + jac[1] * dz[1]) + dz[1] * (jac[2] * dz[0] + jac[3] * dz[1]));
            assert_relative_eq!(r.bregman(&z, &dz), quad, max_relative = 1e-4);
        }
    }

    #[test]
    fn sampled_constants_do_not_depend_on_epsilon() {
        for p in [1.5, 3.0] {
            let m = OperatorModel::p_laplace(p, 0.0).unwrap();
            let vals: Vec<(f64, f64)> = [0.1, 0.01, 0.001]
                .iter()
                .map(|&e| m.regularize(e, 2).unwrap().sample_constants(2000, 11))
                .collect();
            for v in &vals {
                assert!(v.0 / vals[0].0 < 2.0 && vals[0].0 / v.0 < 2.0, "{vals:?}");
                assert!(v.1 / vals[0].1 < 2.0 && vals[0].1 / v.1 < 2.0, "{vals:?}");
            }
        }
    }
}
