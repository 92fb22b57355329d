//! Regularized Dirichlet solves and the outer fixed-point loop for
//! right-hand sides `b(x, u, Du) V`.
//!
//! The discrete energy is `Σ_cells Σ_corners (h^n/2^n) A_ε(g_c) - Σ h^n f·u`,
//! where `g_c` is the corner gradient built from the cell edges meeting at
//! that corner. At `p = 2` this is the standard 5-point (7-point) Laplacian and
//! it reproduces affine functions exactly. Unknowns are the masked points
//! whose surrounding cells all lie in Ω; every other point carries Dirichlet
//! data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{gradient, lp_norm, Grid, Point, Region, ScalarField, VectorField};
use crate::linalg::{dot, pcg};
use crate::models::RegularizedModel;
use crate::potentials::{potential_sup_weighted, QuadratureSpec};

/// Armijo sufficient-decrease parameter.
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

/// Iteration limits and tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Residual tolerance, relative to `1 + ‖f‖_∞`.
    pub tol: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    /// Outer stopping tolerance on `‖Du^{k+1} - Du^k‖_{L^p}`.
    pub outer_tol: f64,
    /// Relative tolerance of the inner conjugate-gradient solves.
    pub cg_tol: f64,
    /// Outer iterates with `‖Du‖_{L^p}` above this cap count towards divergence.
    pub divergence_cap: f64,
    /// Consecutive capped iterates that declare divergence.
    pub divergence_patience: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_newton: 200,
            max_outer: 50,
            outer_tol: 1e-8,
            cg_tol: 1e-10,
            divergence_cap: 1e4,
            divergence_patience: 5,
        }
    }
}

/// Clamps every component of `V` to `[-1/ε, 1/ε]`.
pub fn truncate_v(v: &VectorField, epsilon: f64) -> Result<VectorField> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("{epsilon} must be positive")));
    }
    let cap = 1.0 / epsilon;
    let values = v.values().iter().map(|x| x.clamp(-cap, cap)).collect();
    VectorField::new(v.grid().clone(), v.components(), values)
}

/// `b / (1 + ε|b|)`.
pub fn truncate_b(b: f64, epsilon: f64) -> f64 {
    b / (1.0 + epsilon * b.abs())
}

/// Concrete laws `b(x, u, Du)` with `|b| ≤ (Γ + |Du|)^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BLaw {
    /// `b ≡ 0`.
    Zero,
    /// `b ≡ 1` (growth exponent `q = 0`).
    Unit,
    /// `(Γ + |Du|)^q`.
    Power { gamma: f64, q: f64 },
    /// `(Γ + |Du|)^q cos(2π x₁)`.
    Modulated { gamma: f64, q: f64 },
}

impl BLaw {
    pub fn q(&self) -> f64 {
        match self {
            BLaw::Zero | BLaw::Unit => 0.0,
            BLaw::Power { q, .. } | BLaw::Modulated { q, .. } => *q,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            BLaw::Zero => 0.0,
            BLaw::Unit => 1.0,
            BLaw::Power { gamma, .. } | BLaw::Modulated { gamma, .. } => *gamma,
        }
    }

    pub fn eval(&self, x: &Point, du_norm: f64) -> f64 {
        match *self {
            BLaw::Zero => 0.0,
            BLaw::Unit => 1.0,
            BLaw::Power { gamma, q } => (gamma + du_norm).powf(q),
            BLaw::Modulated { gamma, q } => (gamma + du_norm).powf(q) * (2.0 * std::f64::consts::PI * x[0]).cos(),
        }
    }

    pub fn validate(&self, p: f64) -> Result<()> {
        let q = self.q();
        if !(0.0..=p - 1.0 + 1e-12).contains(&q) {
            return Err(invalid("q", format!("{q} outside the growth window [0, p-1] = [0, {}]", p - 1.0)));
        }
        if self.gamma() < 0.0 {
            return Err(invalid("gamma", "Γ must be nonnegative"));
        }
        Ok(())
    }

    /// True when `q = p - 1`.
    pub fn is_critical(&self, p: f64) -> bool {
        !matches!(self, BLaw::Zero) && (self.q() - (p - 1.0)).abs() < 1e-12
    }
}

/// Smallness thresholds `(c₀, ε₀)` for the critical case and the radius used
/// for `sup P^V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Smallness {
    pub c0: f64,
    pub eps0: f64,
    /// Radius `R` in `sup_x P^V(x, R)`; `None` uses a quarter of the shortest box side.
    pub radius: Option<f64>,
}

impl Default for Smallness {
    fn default() -> Self {
        Smallness {
            c0: 0.5,
            eps0: 0.5,
            radius: None,
        }
    }
}

/// A Dirichlet problem `-div a_ε(Du) = b_ε(x, u, Du) V_ε`, `u = u₀` on the boundary.
#[derive(Debug, Clone)]
pub struct DirichletProblem {
    pub model: RegularizedModel,
    pub v: VectorField,
    pub boundary: VectorField,
    pub b: BLaw,
    pub settings: SolverSettings,
    pub smallness: Smallness,
}

impl DirichletProblem {
    pub fn new(model: RegularizedModel, v: VectorField, boundary: VectorField, b: BLaw) -> Result<Self> {
        let n = v.grid().dim();
        if v.grid() != boundary.grid() {
            return Err(Error::ShapeMismatch("V and the boundary data live on different grids".into()));
        }
        if v.components() != boundary.components() {
            return Err(Error::ShapeMismatch(format!(
                "V has {} components, boundary data {}",
                v.components(),
                boundary.components()
            )));
        }
        if model.components() != v.components() * n {
            return Err(Error::ShapeMismatch(format!(
                "model regularized for {} gradient components, problem has N·n = {}",
                model.components(),
                v.components() * n
            )));
        }
        b.validate(model.p())?;
        Ok(DirichletProblem {
            model,
            v,
            boundary,
            b,
            settings: SolverSettings::default(),
            smallness: Smallness::default(),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.model.epsilon
    }
}

/// Outcome of one regularized solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Discrete energy after the initial guess and after each accepted step.
    pub energy_trace: Vec<f64>,
    /// Energy change of each accepted step.
    pub energy_steps: Vec<f64>,
    pub fallback_steps: usize,
    pub cg_iterations: usize,
    pub truncation_level: f64,
}

impl SolveReport {
    /// Number of accepted steps that did not decrease the energy.
    pub fn energy_increases(&self) -> usize {
        self.energy_steps.iter().filter(|&&d| !(d < 0.0)).count()
    }
}

/// Cell and unknown bookkeeping for the corner-gradient energy.
struct Mesh {
    grid: Grid,
    dim: usize,
    comps: usize,
    corners: usize,
    corner_offset: Vec<usize>,
    /// Flat index of the lower corner of every active cell.
    cells: Vec<usize>,
    unknown: Vec<bool>,
    h: f64,
    weight: f64,
}

impl Mesh {
    fn new(grid: &Grid, comps: usize) -> Self {
        let dim = grid.dim();
        let corners = 1usize << dim;
        let corner_offset: Vec<usize> = (0..corners)
            .map(|c| (0..dim).filter(|k| c >> k & 1 == 1).map(|k| grid.stride(k)).sum())
            .collect();
        let shape = grid.shape();
        let mask = grid.mask();
        let mut cells = Vec::new();
        let mut active = vec![false; grid.len()];
        for flat in 0..grid.len() {
            let ijk = grid.multi_index(flat);
            if (0..dim).any(|k| ijk[k] + 1 >= shape[k]) {
                continue;
            }
            if corner_offset.iter().all(|&o| mask[flat + o]) {
                cells.push(flat);
                active[flat] = true;
            }
        }
        // a point is free when all 2^n cells around it are active
        let mut unknown = vec![false; grid.len()];
        for flat in 0..grid.len() {
            if !mask[flat] {
                continue;
            }
            let ijk = grid.multi_index(flat);
            if (0..dim).any(|k| ijk[k] == 0 || ijk[k] + 1 >= shape[k]) {
                continue;
            }
            unknown[flat] = corner_offset.iter().all(|&o| active[flat - o]);
        }
        let h = grid.spacing();
        Mesh {
            grid: grid.clone(),
            dim,
            comps,
            corners,
            corner_offset,
            cells,
            unknown,
            h,
            weight: grid.cell_volume() / corners as f64,
        }
    }

    fn nz(&self) -> usize {
        self.comps * self.dim
    }

    /// Corner gradient of `u` at corner `c` of the cell with lower corner `base`.
    fn corner_gradient(&self, u: &[f64], base: usize, c: usize, out: &mut [f64]) {
        let n = self.dim;
        for k in 0..n {
            let lo = base + self.corner_offset[c & !(1 << k)];
            let hi = base + self.corner_offset[c | (1 << k)];
            for a in 0..self.comps {
                out[a * n + k] = (u[hi * self.comps + a] - u[lo * self.comps + a]) / self.h;
            }
        }
    }

    /// Adds `scale · Σ_k flux_k ∂g_k/∂u` for one corner into `out`.
    fn scatter(&self, flux: &[f64], base: usize, c: usize, scale: f64, out: &mut [f64]) {
        let n = self.dim;
        for k in 0..n {
            let lo = base + self.corner_offset[c & !(1 << k)];
            let hi = base + self.corner_offset[c | (1 << k)];
            for a in 0..self.comps {
                let v = scale * flux[a * n + k] / self.h;
                out[hi * self.comps + a] += v;
                out[lo * self.comps + a] -= v;
            }
        }
    }

    fn gradients(&self, u: &[f64]) -> Vec<f64> {
        let nz = self.nz();
        let per_cell = self.corners * nz;
        let mut g = vec![0.0; self.cells.len() * per_cell];
        g.par_chunks_mut(per_cell).zip(&self.cells).for_each(|(chunk, &base)| {
            for c in 0..self.corners {
                self.corner_gradient(u, base, c, &mut chunk[c * nz..(c + 1) * nz]);
            }
        });
        g
    }

    fn zero_fixed(&self, v: &mut [f64]) {
        for (i, free) in self.unknown.iter().enumerate() {
            if !free {
                for a in 0..self.comps {
                    v[i * self.comps + a] = 0.0;
                }
            }
        }
    }

    /// Gradient of the energy with respect to the free values.
    fn residual(&self, model: &RegularizedModel, u: &[f64], f: &[f64]) -> Vec<f64> {
        let nz = self.nz();
        let grads = self.gradients(u);
        let fluxes: Vec<f64> = grads
            .par_chunks(nz)
            .flat_map_iter(|g| model.a_eval(g))
            .collect();
        let mut r = vec![0.0; u.len()];
        let per_cell = self.corners * nz;
        for (ci, &base) in self.cells.iter().enumerate() {
            for c in 0..self.corners {
                let off = ci * per_cell + c * nz;
                self.scatter(&fluxes[off..off + nz], base, c, self.weight, &mut r);
            }
        }
        let vol = self.grid.cell_volume();
        for (ri, fi) in r.iter_mut().zip(f) {
            *ri -= vol * fi;
        }
        self.zero_fixed(&mut r);
        r
    }

    fn energy(&self, model: &RegularizedModel, u: &[f64], f: &[f64]) -> f64 {
        let nz = self.nz();
        let grads = self.gradients(u);
        let dens: Vec<f64> = grads.par_chunks(nz).map(|g| model.density(g)).collect();
        let vol = self.grid.cell_volume();
        let mut e = self.weight * dens.iter().sum::<f64>();
        for (i, free) in self.unknown.iter().enumerate() {
            if *free {
                for a in 0..self.comps {
                    e -= vol * f[i * self.comps + a] * u[i * self.comps + a];
                }
            }
        }
        e
    }

    fn jacobians(&self, model: &RegularizedModel, grads: &[f64]) -> Vec<f64> {
        let nz = self.nz();
        grads.par_chunks(nz).flat_map_iter(|g| model.jacobian(g)).collect()
    }

    fn apply_hessian(&self, jacs: &[f64], d: &[f64], out: &mut [f64]) {
        let nz = self.nz();
        out.fill(0.0);
        let mut g = vec![0.0; nz];
        let mut flux = vec![0.0; nz];
        for (ci, &base) in self.cells.iter().enumerate() {
            for c in 0..self.corners {
                self.corner_gradient(d, base, c, &mut g);
                let jac = &jacs[(ci * self.corners + c) * nz * nz..][..nz * nz];
                for i in 0..nz {
                    flux[i] = (0..nz).map(|j| jac[i * nz + j] * g[j]).sum();
                }
                self.scatter(&flux, base, c, self.weight, out);
            }
        }
        self.zero_fixed(out);
    }

    fn hessian_diagonal(&self, jacs: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let nz = self.nz();
        let h2 = self.h * self.h;
        let mut diag = vec![0.0; self.grid.len() * self.comps];
        for (ci, &base) in self.cells.iter().enumerate() {
            for c in 0..self.corners {
                let jac = &jacs[(ci * self.corners + c) * nz * nz..][..nz * nz];
                let node = base + self.corner_offset[c];
                for a in 0..self.comps {
                    let mut own = 0.0;
                    for k in 0..n {
                        let sk = if c >> k & 1 == 1 { 1.0 } else { -1.0 };
                        for l in 0..n {
                            let sl = if c >> l & 1 == 1 { 1.0 } else { -1.0 };
                            own += sk * sl * jac[(a * n + k) * nz + a * n + l];
                        }
                        let other = base + self.corner_offset[c ^ (1 << k)];
                        diag[other * self.comps + a] += self.weight * jac[(a * n + k) * nz + a * n + k] / h2;
                    }
                    diag[node * self.comps + a] += self.weight * own / h2;
                }
            }
        }
        diag
    }

    /// `E(u + t d) - E(u)` as `Σ w B(g, t δg) + t ⟨r, d⟩` with Bregman terms `B ≥ 0`.
    fn energy_change(&self, model: &RegularizedModel, grads: &[f64], dgrads: &[f64], t: f64, r_dot_d: f64) -> f64 {
        let nz = self.nz();
        let bregman: f64 = grads
            .par_chunks(nz)
            .zip(dgrads.par_chunks(nz))
            .map(|(g, dg)| {
                let step: Vec<f64> = dg.iter().map(|v| t * v).collect();
                model.bregman(g, &step)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        self.weight * bregman + t * r_dot_d
    }

    fn max_norm_per_volume(&self, r: &[f64]) -> f64 {
        let vol = self.grid.cell_volume();
        r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / vol
    }
}

/// Minimizes the discrete energy with Dirichlet data from `boundary` and a
/// fixed right-hand side `f` (one value per component and grid point).
pub fn solve_dirichlet(
    model: &RegularizedModel,
    boundary: &VectorField,
    f: &VectorField,
    settings: &SolverSettings,
) -> Result<(VectorField, SolveReport)> {
    solve_from(model, boundary, f, settings, None)
}

fn solve_from(
    model: &RegularizedModel,
    boundary: &VectorField,
    f: &VectorField,
    settings: &SolverSettings,
    warm: Option<&VectorField>,
) -> Result<(VectorField, SolveReport)> {
    let grid = boundary.grid();
    let comps = boundary.components();
    if f.grid() != grid || f.components() != comps {
        return Err(Error::ShapeMismatch("right-hand side does not match the boundary data".into()));
    }
    if model.components() != comps * grid.dim() {
        return Err(Error::ShapeMismatch("model components differ from N·n".into()));
    }
    let mesh = Mesh::new(grid, comps);
    let fv = f.values();
    let f_scale = 1.0 + fv.iter().zip(mesh.unknown.iter().flat_map(|&u| std::iter::repeat(u).take(comps)))
        .filter(|(_, free)| *free)
        .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    let threshold = settings.tol * f_scale;
    let max_cg = 50 * grid.shape().iter().max().copied().unwrap_or(1) + 500;

    let mut u = boundary.values().to_vec();
    let mut cg_total = 0;
    match warm {
        Some(w) => {
            for (i, free) in mesh.unknown.iter().enumerate() {
                if *free {
                    for a in 0..comps {
                        u[i * comps + a] = w.values()[i * comps + a];
                    }
                }
            }
        }
        None => {
            for (i, free) in mesh.unknown.iter().enumerate() {
                if *free {
                    for a in 0..comps {
                        u[i * comps + a] = 0.0;
                    }
                }
            }
            // harmonic extension of the data as the starting point
            let nz = mesh.nz();
            let identity: Vec<f64> = (0..mesh.cells.len() * mesh.corners)
                .flat_map(|_| (0..nz * nz).map(move |i| if i % (nz + 1) == 0 { 1.0 } else { 0.0 }))
                .collect();
            let mut rhs = linear_residual(&mesh, &identity, &u, fv);
            rhs.iter_mut().for_each(|v| *v = -*v);
            let diag = mesh.hessian_diagonal(&identity);
            let mut du = vec![0.0; u.len()];
            let out = pcg(|x, y| mesh.apply_hessian(&identity, x, y), &diag, &rhs, &mut du, settings.cg_tol, max_cg);
            cg_total += out.iterations;
            for (ui, di) in u.iter_mut().zip(&du) {
                *ui += di;
            }
        }
    }

    let mut energy = mesh.energy(model, &u, fv);
    let mut report = SolveReport {
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
        energy_trace: vec![energy],
        energy_steps: Vec::new(),
        fallback_steps: 0,
        cg_iterations: 0,
        truncation_level: 1.0 / model.epsilon,
    };
    let mut r = mesh.residual(model, &u, fv);
    loop {
        report.residual = mesh.max_norm_per_volume(&r);
        if report.residual <= threshold {
            report.converged = true;
            break;
        }
        if report.iterations >= settings.max_newton {
            break;
        }
        let grads = mesh.gradients(&u);
        let jacs = mesh.jacobians(model, &grads);
        let diag = mesh.hessian_diagonal(&jacs);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut d = vec![0.0; u.len()];
        let out = pcg(|x, y| mesh.apply_hessian(&jacs, x, y), &diag, &neg, &mut d, settings.cg_tol, max_cg);
        cg_total += out.iterations;
        mesh.zero_fixed(&mut d);
        let mut r_dot_d = dot(&r, &d);
        if out.indefinite || !(r_dot_d < 0.0) || d.iter().any(|v| !v.is_finite()) {
            // preconditioned steepest descent
            report.fallback_steps += 1;
            d = r.iter().zip(&diag).map(|(ri, di)| if *di > 0.0 { -ri / di } else { -ri }).collect();
            mesh.zero_fixed(&mut d);
            r_dot_d = dot(&r, &d);
        }
        let dgrads = mesh.gradients(&d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let change = mesh.energy_change(model, &grads, &dgrads, t, r_dot_d);
            if change < 0.0 && change <= ARMIJO * t * r_dot_d {
                accepted = Some(change);
                break;
            }
            t *= 0.5;
        }
        report.iterations += 1;
        let Some(change) = accepted else {
            // no decrease resolvable along the search direction
            break;
        };
        for (ui, di) in u.iter_mut().zip(&d) {
            *ui += t * di;
        }
        energy += change;
        report.energy_trace.push(energy);
        report.energy_steps.push(change);
        r = mesh.residual(model, &u, fv);
    }
    report.cg_iterations = cg_total;
    let solution = VectorField::new(grid.clone(), comps, u)?;
    Ok((solution, report))
}

/// Residual of the quadratic energy with per-corner matrices `jacs` (used for the initial guess).
fn linear_residual(mesh: &Mesh, jacs: &[f64], u: &[f64], f: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; u.len()];
    mesh.apply_hessian_unmasked(jacs, u, &mut r);
    let vol = mesh.grid.cell_volume();
    for (ri, fi) in r.iter_mut().zip(f) {
        *ri -= vol * fi;
    }
    mesh.zero_fixed(&mut r);
    r
}

impl Mesh {
    fn apply_hessian_unmasked(&self, jacs: &[f64], d: &[f64], out: &mut [f64]) {
        let nz = self.nz();
        out.fill(0.0);
        let mut g = vec![0.0; nz];
        let mut flux = vec![0.0; nz];
        for (ci, &base) in self.cells.iter().enumerate() {
            for c in 0..self.corners {
                self.corner_gradient(d, base, c, &mut g);
                let jac = &jacs[(ci * self.corners + c) * nz * nz..][..nz * nz];
                for i in 0..nz {
                    flux[i] = (0..nz).map(|j| jac[i * nz + j] * g[j]).sum();
                }
                self.scatter(&flux, base, c, self.weight, out);
            }
        }
    }
}

/// Corner gradients of `u` on the active cells, `(values, quadrature weight)`.
/// Values are laid out cell by cell, corner by corner, `N·n` entries each.
pub(crate) fn corner_gradients(u: &VectorField) -> (Vec<f64>, f64) {
    let mesh = Mesh::new(u.grid(), u.components());
    (mesh.gradients(u.values()), mesh.weight)
}

/// Least-squares projection of a corner field onto discrete gradients.
pub(crate) struct CornerProjection {
    pub phi: VectorField,
    /// `F - Dφ` per corner.
    pub remainder: Vec<f64>,
    /// Max over free points of `|Dᵀ(w H)| / h^n`.
    pub divergence: f64,
    pub converged: bool,
}

/// Minimizes `Σ w |Dφ - F|²` over `φ` with Dirichlet values from `boundary`.
pub(crate) fn project_corner_field(boundary: &VectorField, targets: &[f64], cg_tol: f64) -> Result<CornerProjection> {
    let grid = boundary.grid();
    let comps = boundary.components();
    let mesh = Mesh::new(grid, comps);
    let nz = mesh.nz();
    if targets.len() != mesh.cells.len() * mesh.corners * nz {
        return Err(Error::ShapeMismatch("corner field does not match the grid".into()));
    }
    let identity: Vec<f64> = (0..mesh.cells.len() * mesh.corners)
        .flat_map(|_| (0..nz * nz).map(move |i| if i % (nz + 1) == 0 { 1.0 } else { 0.0 }))
        .collect();
    let defect = |phi: &[f64]| -> Vec<f64> {
        let g = mesh.gradients(phi);
        targets.iter().zip(&g).map(|(f, g)| f - g).collect()
    };
    let scatter = |h: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; grid.len() * comps];
        for (ci, &base) in mesh.cells.iter().enumerate() {
            for c in 0..mesh.corners {
                let off = (ci * mesh.corners + c) * nz;
                mesh.scatter(&h[off..off + nz], base, c, mesh.weight, &mut out);
            }
        }
        mesh.zero_fixed(&mut out);
        out
    };
    let mut phi = boundary.values().to_vec();
    for (i, free) in mesh.unknown.iter().enumerate() {
        if *free {
            for a in 0..comps {
                phi[i * comps + a] = 0.0;
            }
        }
    }
    let rhs = scatter(&defect(&phi));
    let diag = mesh.hessian_diagonal(&identity);
    let mut d = vec![0.0; phi.len()];
    let max_cg = 50 * grid.shape().iter().max().copied().unwrap_or(1) + 500;
    let out = pcg(|x, y| mesh.apply_hessian(&identity, x, y), &diag, &rhs, &mut d, cg_tol, max_cg);
    for (p, di) in phi.iter_mut().zip(&d) {
        *p += di;
    }
    let remainder = defect(&phi);
    let divergence = mesh.max_norm_per_volume(&scatter(&remainder));
    Ok(CornerProjection {
        phi: VectorField::new(grid.clone(), comps, phi)?,
        remainder,
        divergence,
        converged: out.converged,
    })
}

/// Regime of an outer loop with respect to the growth exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Subcritical,
    /// `q = p - 1` with both smallness conditions met.
    CriticalSmall,
    /// `q = p - 1` without verified smallness.
    CriticalUnverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterStatus {
    Converged,
    Diverged,
    MaxIterations,
    InnerFailure,
}

/// Trace of the outer Picard loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub status: OuterStatus,
    pub regime: Regime,
    pub outer_iterations: usize,
    /// `‖Du^{k+1} - Du^k‖_{L^p}` per outer step.
    pub distances: Vec<f64>,
    /// Ratios of consecutive distances.
    pub contraction_factors: Vec<f64>,
    /// `‖Du^k‖_{L^p}` per outer step.
    pub gradient_norms: Vec<f64>,
    pub v_ln_norm: f64,
    pub sup_potential: f64,
    pub inner: Vec<SolveReport>,
}

impl FixedPointReport {
    pub fn converged(&self) -> bool {
        self.status == OuterStatus::Converged
    }

    pub fn energy_increases(&self) -> usize {
        self.inner.iter().map(SolveReport::energy_increases).sum()
    }
}

/// Right-hand side `truncate_b(b(x, u, Du), ε) · truncate_V(V, ε)`.
pub fn forcing(problem: &DirichletProblem, u: &VectorField) -> Result<VectorField> {
    let eps = problem.epsilon();
    let v = truncate_v(&problem.v, eps)?;
    let grid = u.grid();
    let du = gradient(u)?.norm_field();
    let comps = v.components();
    let mut out = vec![0.0; grid.len() * comps];
    for i in 0..grid.len() {
        if !grid.mask()[i] {
            continue;
        }
        let b = truncate_b(problem.b.eval(&grid.point(i), du.values()[i]), eps);
        for a in 0..comps {
            out[i * comps + a] = b * v.values()[i * comps + a];
        }
    }
    VectorField::new(grid.clone(), comps, out)
}

/// `‖|Du - Dw|‖_{L^p}` with the centered gradient.
fn gradient_distance(u: &VectorField, w: &VectorField, p: f64) -> Result<f64> {
    let diff: Vec<f64> = u.values().iter().zip(w.values()).map(|(a, b)| a - b).collect();
    let d = VectorField::new(u.grid().clone(), u.components(), diff)?;
    lp_norm(&gradient(&d)?.norm_field(), p, &Region::All)
}

/// `‖V‖_{L^n}` and `sup_x P^V(x, R)` used to label the critical regime.
pub fn smallness_quantities(v: &VectorField, radius: Option<f64>) -> Result<(f64, f64)> {
    let grid = v.grid();
    let n = grid.dim() as f64;
    let mag = v.norm_field();
    let ln = lp_norm(&mag, n, &Region::All)?;
    let r = radius.unwrap_or_else(|| {
        let side = grid.shape().iter().min().copied().unwrap_or(3) - 1;
        0.25 * side as f64 * grid.spacing()
    });
    let weights = mag.map(|x| x * x);
    let (sup, _) = potential_sup_weighted(&weights, &Region::All, r, QuadratureSpec::default());
    Ok((ln, sup))
}

/// Outer Picard loop `u^{k+1} = solve(f = b_ε(x, u^k, Du^k) V_ε)` with warm starts.
pub fn fixed_point_solve(problem: &DirichletProblem) -> Result<(VectorField, FixedPointReport)> {
    let p = problem.model.p();
    let s = &problem.settings;
    let critical = problem.b.is_critical(p);
    let (v_ln, sup_p) = if critical {
        smallness_quantities(&problem.v, problem.smallness.radius)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let regime = if !critical {
        Regime::Subcritical
    } else if v_ln < problem.smallness.c0 && sup_p <= problem.smallness.eps0 {
        Regime::CriticalSmall
    } else {
        Regime::CriticalUnverified
    };
    let mut report = FixedPointReport {
        status: OuterStatus::MaxIterations,
        regime,
        outer_iterations: 0,
        distances: Vec::new(),
        contraction_factors: Vec::new(),
        gradient_norms: Vec::new(),
        v_ln_norm: v_ln,
        sup_potential: sup_p,
        inner: Vec::new(),
    };
    // first iterate: b evaluated on the boundary data's extension
    let zero = VectorField::zeros(problem.boundary.grid(), problem.boundary.components());
    let (mut u, first) = solve_dirichlet(&problem.model, &problem.boundary, &zero, s)?;
    report.inner.push(first);
    let mut capped = 0;
    for _ in 0..s.max_outer {
        let f = forcing(problem, &u)?;
        let (next, inner) = solve_from(&problem.model, &problem.boundary, &f, s, Some(&u))?;
        let inner_ok = inner.converged;
        report.inner.push(inner);
        report.outer_iterations += 1;
        let dist = gradient_distance(&next, &u, p)?;
        let norm = lp_norm(&gradient(&next)?.norm_field(), p, &Region::All)?;
        if let Some(&prev) = report.distances.last() {
            if prev > 0.0 {
                report.contraction_factors.push(dist / prev);
            }
        }
        report.distances.push(dist);
        report.gradient_norms.push(norm);
        u = next;
        if !norm.is_finite() || norm > s.divergence_cap {
            capped += 1;
            if capped >= s.divergence_patience || !norm.is_finite() {
                report.status = OuterStatus::Diverged;
                return Ok((u, report));
            }
        } else {
            capped = 0;
        }
        if !inner_ok {
            report.status = OuterStatus::InnerFailure;
            return Ok((u, report));
        }
        if dist <= s.outer_tol {
            report.status = OuterStatus::Converged;
            return Ok((u, report));
        }
    }
    Ok((u, report))
}

/// Gradient norm and right-hand-side mass for one ε of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityRow {
    pub epsilon: f64,
    pub gradient_lp: f64,
    /// `Σ (Γ + |Du_ε|)^q |V_ε| h^n`.
    pub mass: f64,
    /// `∫ (1 + Γ + |Du_ε|)^p + 1 + |V_ε|^{max(p, n)}`, which dominates the mass by Young's inequality.
    pub young_bound: f64,
    pub status: OuterStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub rows: Vec<CoercivityRow>,
    /// Gradient norms strictly increasing along the whole family.
    pub monotone_blowup: bool,
}

/// Solves `problem` for each ε (model and truncation together) and tabulates
/// the uniform-bound quantities.
pub fn coercivity_check(problem: &DirichletProblem, epsilons: &[f64]) -> Result<CoercivityReport> {
    let p = problem.model.p();
    let n = problem.v.grid().dim() as f64;
    let mut rows = Vec::new();
    for &eps in epsilons {
        let model = problem.model.base.regularize(eps, problem.model.components())?;
        let mut prob = problem.clone();
        prob.model = model;
        let (u, rep) = fixed_point_solve(&prob)?;
        let du = gradient(&u)?.norm_field();
        let v = truncate_v(&prob.v, eps)?.norm_field();
        let grid = u.grid();
        let vol = grid.cell_volume();
        let (gamma, q) = (prob.b.gamma(), prob.b.q());
        let mut mass = 0.0;
        let mut bound = 0.0;
        for i in 0..grid.len() {
            if !grid.mask()[i] {
                continue;
            }
            let g = du.values()[i];
            mass += (gamma + g).powf(q) * v.values()[i] * vol;
            bound += ((1.0 + gamma + g).powf(p) + 1.0 + v.values()[i].powf(p.max(n))) * vol;
        }
        rows.push(CoercivityRow {
            epsilon: eps,
            gradient_lp: lp_norm(&du, p, &Region::All)?,
            mass,
            young_bound: bound,
            status: rep.status,
        });
    }
    let monotone_blowup = rows.len() > 2 && rows.windows(2).all(|w| w[1].gradient_lp > w[0].gradient_lp * (1.0 + 1e-3));
    Ok(CoercivityReport { rows, monotone_blowup })
}

/// `u = |x|²/2` with `f = -div a(x)` for the unregularized p-Laplace field
/// `a(z) = (s² + |z|²)^{(p-2)/2} z`.
pub struct Paraboloid {
    pub exact: ScalarField,
    pub f: ScalarField,
}

impl Paraboloid {
    pub fn new(grid: &Grid, p: f64, s: f64) -> Self {
        let n = grid.dim() as f64;
        let m = 0.5 * (p - 2.0);
        let exact = ScalarField::from_fn(grid, |x| 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]));
        let f = ScalarField::from_fn(grid, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            let sig = r2 + s * s;
            -(n * sig.powf(m) + 2.0 * m * sig.powf(m - 1.0) * r2)
        });
        Paraboloid { exact, f }
    }
}
