//! The potential `P^V(x,R) = ∫_0^R (|V|²(B(x,ρ))/ρ^{n-2})^{1/2} dρ/ρ`, its
//! dyadic sum, the Wolff potential and the Lorentz-side bounds.
//!
//! Ball measures use the exact volume of each grid cell inside the ball, so
//! they are continuous and nondecreasing in `ρ`. Radii are log-spaced and
//! anchored at `R` (so every dyadic radius `2^{-j}R` is a node), stopping at
//! the smallest node `ρ_min ≥ h`. Between nodes the integrand is interpolated
//! as a power of `ρ`, which is exact for constant densities; below `ρ_min` the
//! measure is continued as `m(ρ_min)(ρ/ρ_min)^n`, which makes the `P^V`
//! integrand constant there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{ball_measures, cell_ball_overlap, unit_ball_volume, Grid, Point, Region, ScalarField, VectorField};
use crate::lorentz::{lorentz_norm, rearrange, LorentzParams};

/// Log-spacing of the radius nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Nodes per doubling of `ρ`; 20 gives about 66 per decade.
    pub nodes_per_octave: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { nodes_per_octave: 20 }
    }
}

/// Samples of `ρ ↦ (|V|²(B(x,ρ))/ρ^{n-2})^{1/2}/ρ` and the integral over `(0, R]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialCurve {
    pub center: Point,
    /// Increasing radii, the last one equal to `R`.
    pub radii: Vec<f64>,
    pub integrand: Vec<f64>,
    pub value: f64,
}

/// Radii `R 2^{-k/m}` for `k = 0, 1, ...` down to the smallest one `≥ h`, ascending.
pub fn radius_nodes(r: f64, h: f64, spec: QuadratureSpec) -> Vec<f64> {
    let m = spec.nodes_per_octave.max(1) as f64;
    let mut nodes = vec![r];
    let mut k = 1;
    loop {
        let rho = r * (-(k as f64) / m).exp2();
        if rho < h * (1.0 - 1e-12) {
            break;
        }
        nodes.push(rho);
        k += 1;
    }
    nodes.reverse();
    nodes
}

/// Integral of `J(ρ) dρ/ρ` over `(0, R]` from nodal values of `J`, with `J`
/// interpolated geometrically between nodes and continued as `J(ρ_min)(ρ/ρ_min)^e`
/// below the first node.
fn integrate_curve(radii: &[f64], j: &[f64], tail_exponent: f64) -> f64 {
    let mut total = j[0] / tail_exponent;
    for i in 1..radii.len() {
        let dt = (radii[i] / radii[i - 1]).ln();
        let (a, b) = (j[i - 1], j[i]);
        let mean = if a > 0.0 && b > 0.0 {
            let lr = (b / a).ln();
            if lr.abs() < 1e-9 {
                0.5 * (a + b)
            } else {
                (b - a) / lr
            }
        } else {
            0.5 * (a + b)
        };
        total += mean * dt;
    }
    total
}

/// Precomputed cell/ball overlaps for centers sitting on grid points.
pub struct BallStencil {
    dim: usize,
    radii: Vec<f64>,
    cell: f64,
    entries: Vec<StencilEntry>,
    partials: Vec<(u32, f64)>,
}

struct StencilEntry {
    offset: [i64; 3],
    first_full: u32,
    partial_start: u32,
    partial_end: u32,
}

impl BallStencil {
    pub fn new(grid: &Grid, radii: &[f64]) -> Self {
        let dim = grid.dim();
        let h = grid.spacing();
        let r_max = radii.last().copied().unwrap_or(0.0);
        let reach = (r_max / h).ceil() as i64 + 1;
        let mut entries = Vec::new();
        let mut partials = Vec::new();
        let span = |a: usize| if a < dim { -reach..=reach } else { 0..=0 };
        for i in span(0) {
            for j in span(1) {
                for k in span(2) {
                    let offset = [i, j, k];
                    let mut lo = [0.0; 3];
                    let mut near2 = 0.0;
                    let mut far2 = 0.0;
                    for a in 0..dim {
                        lo[a] = offset[a] as f64 * h - 0.5 * h;
                        let (p, q) = (lo[a], lo[a] + h);
                        let near = if p > 0.0 {
                            p
                        } else if q < 0.0 {
                            -q
                        } else {
                            0.0
                        };
                        near2 += near * near;
                        far2 += p.abs().max(q.abs()).powi(2);
                    }
                    let (near, far) = (near2.sqrt(), far2.sqrt());
                    if near >= r_max {
                        continue;
                    }
                    let first_partial = radii.partition_point(|&r| r <= near);
                    let first_full = radii.partition_point(|&r| r < far);
                    let start = partials.len() as u32;
                    for (idx, &r) in radii.iter().enumerate().take(first_full).skip(first_partial) {
                        partials.push((idx as u32, cell_ball_overlap(dim, &lo, h, r)));
                    }
                    entries.push(StencilEntry {
                        offset,
                        first_full: first_full as u32,
                        partial_start: start,
                        partial_end: partials.len() as u32,
                    });
                }
            }
        }
        BallStencil {
            dim,
            radii: radii.to_vec(),
            cell: grid.cell_volume(),
            entries,
            partials,
        }
    }

    /// Ball measures of `weights` around the grid point `center`.
    pub fn measures(&self, weights: &ScalarField, center: usize) -> Vec<f64> {
        let grid = weights.grid();
        let shape = grid.shape();
        let c = grid.multi_index(center);
        let m = self.radii.len();
        let mut full = vec![0.0; m + 1];
        let mut partial = vec![0.0; m];
        'entries: for e in &self.entries {
            let mut ijk = [0usize; 3];
            for a in 0..self.dim {
                let v = c[a] as i64 + e.offset[a];
                if v < 0 || v >= shape[a] as i64 {
                    continue 'entries;
                }
                ijk[a] = v as usize;
            }
            let flat = grid.index(ijk);
            let w = weights.values()[flat];
            if !grid.mask()[flat] || w == 0.0 {
                continue;
            }
            full[e.first_full as usize] += w * self.cell;
            for &(idx, vol) in &self.partials[e.partial_start as usize..e.partial_end as usize] {
                partial[idx as usize] += w * vol;
            }
        }
        let mut acc = 0.0;
        (0..m)
            .map(|i| {
                acc += full[i];
                acc + partial[i]
            })
            .collect()
    }
}

fn squared_magnitude(v: &VectorField) -> ScalarField {
    v.norm_field().map(|x| x * x)
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid("R", format!("radius {r} must be positive")));
    }
    Ok(())
}

/// Measures around `center`, through the stencil when the center is a grid point.
fn measures_at(weights: &ScalarField, center: &Point, radii: &[f64], stencil: Option<&BallStencil>) -> Vec<f64> {
    let grid = weights.grid();
    let node = grid.nearest(center);
    let on_node = crate::fields::dist2(&grid.point(node), center) <= (1e-12 * grid.spacing()).powi(2);
    match stencil {
        Some(s) if on_node => s.measures(weights, node),
        _ => ball_measures(weights, center, radii),
    }
}

fn curve_from_measures(n: usize, center: Point, radii: Vec<f64>, measures: &[f64]) -> PotentialCurve {
    let j: Vec<f64> = radii
        .iter()
        .zip(measures)
        .map(|(r, m)| (m / r.powi(n as i32 - 2)).max(0.0).sqrt())
        .collect();
    let value = integrate_curve(&radii, &j, 1.0);
    let integrand = j.iter().zip(&radii).map(|(j, r)| j / r).collect();
    PotentialCurve {
        center,
        radii,
        integrand,
        value,
    }
}

/// `P^V(x, R)` for `V` zero-extended outside Ω.
pub fn p_potential(v: &VectorField, x: &Point, r: f64, spec: QuadratureSpec) -> Result<PotentialCurve> {
    check_radius(r)?;
    let weights = squared_magnitude(v);
    Ok(p_potential_weighted(&weights, x, r, spec, None))
}

fn p_potential_weighted(
    weights: &ScalarField,
    x: &Point,
    r: f64,
    spec: QuadratureSpec,
    stencil: Option<&BallStencil>,
) -> PotentialCurve {
    let grid = weights.grid();
    let radii = radius_nodes(r, grid.spacing(), spec);
    let m = measures_at(weights, x, &radii, stencil);
    curve_from_measures(grid.dim(), *x, radii, &m)
}

/// `c(n) = log 2 / 2^{(n-2)/2}`.
pub fn dyadic_constant(n: usize) -> f64 {
    std::f64::consts::LN_2 / 2f64.powf(0.5 * (n as f64 - 2.0))
}

/// `Σ_{j≥1} (|V|²(B(x,R_j))/R_j^{n-2})^{1/2}` over `R_j = 2^{1-j}R ≥ h`.
pub fn p_potential_dyadic(v: &VectorField, x: &Point, r: f64) -> Result<f64> {
    check_radius(r)?;
    let weights = squared_magnitude(v);
    Ok(dyadic_weighted(&weights, x, r))
}

fn dyadic_weighted(weights: &ScalarField, x: &Point, r: f64) -> f64 {
    let grid = weights.grid();
    let h = grid.spacing();
    let n = grid.dim() as i32;
    let mut radii = Vec::new();
    let mut rj = r;
    while rj >= h * (1.0 - 1e-12) {
        radii.push(rj);
        rj *= 0.5;
    }
    radii.reverse();
    let m = ball_measures(weights, x, &radii);
    radii.iter().zip(&m).map(|(r, m)| (m / r.powi(n - 2)).sqrt()).sum()
}

/// `W^V_{β,p}(x,R) = ∫_0^R (|V|(B(x,ρ))/ρ^{n-βp})^{1/(p-1)} dρ/ρ` for a
/// nonnegative density (absolute values are used).
pub fn wolff_potential(v: &ScalarField, x: &Point, r: f64, beta: f64, p: f64, spec: QuadratureSpec) -> Result<f64> {
    check_radius(r)?;
    let n = v.grid().dim() as f64;
    if !(p > 1.0) {
        return Err(invalid("p", format!("{p} must exceed 1")));
    }
    if !(beta > 0.0 && beta < n / p) {
        return Err(invalid("beta", format!("need 0 < β < n/p = {}, got {beta}", n / p)));
    }
    let weights = v.map(f64::abs);
    let radii = radius_nodes(r, v.grid().spacing(), spec);
    let m = ball_measures(&weights, x, &radii);
    let j: Vec<f64> = radii
        .iter()
        .zip(&m)
        .map(|(rho, m)| (m / rho.powf(n - beta * p)).max(0.0).powf(1.0 / (p - 1.0)))
        .collect();
    Ok(integrate_curve(&radii, &j, beta * p / (p - 1.0)))
}

/// `sup_x P^V(x, R)` over the masked grid points in `region`, with the maximizing point.
pub fn potential_sup(v: &VectorField, region: &Region, r: f64, spec: QuadratureSpec) -> Result<(f64, Option<Point>)> {
    check_radius(r)?;
    let weights = squared_magnitude(v);
    Ok(potential_sup_weighted(&weights, region, r, spec))
}

pub(crate) fn potential_sup_weighted(weights: &ScalarField, region: &Region, r: f64, spec: QuadratureSpec) -> (f64, Option<Point>) {
    let grid = weights.grid();
    let centers: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.mask()[i] && region.contains(&grid.point(i)))
        .collect();
    let values = potential_field_values(weights, &centers, r, spec);
    let mut best = (0.0, None);
    for (c, v) in centers.iter().zip(values) {
        if best.1.is_none() || v > best.0 {
            best = (v, Some(grid.point(*c)));
        }
    }
    best
}

/// `P^V(x_i, R)` at the given grid points, evaluated in parallel.
pub(crate) fn potential_field_values(weights: &ScalarField, centers: &[usize], r: f64, spec: QuadratureSpec) -> Vec<f64> {
    let grid = weights.grid();
    let radii = radius_nodes(r, grid.spacing(), spec);
    let stencil = BallStencil::new(grid, &radii);
    centers
        .par_iter()
        .map(|&c| {
            let m = stencil.measures(weights, c);
            curve_from_measures(grid.dim(), grid.point(c), radii.clone(), &m).value
        })
        .collect()
}

/// `P^V(·, R)` at every grid point of Ω (zero elsewhere).
pub fn potential_field(v: &VectorField, r: f64, spec: QuadratureSpec) -> Result<ScalarField> {
    check_radius(r)?;
    let weights = squared_magnitude(v);
    let grid = v.grid();
    let centers: Vec<usize> = (0..grid.len()).filter(|&i| grid.mask()[i]).collect();
    let vals = potential_field_values(&weights, &centers, r, spec);
    let mut out = ScalarField::zeros(grid);
    for (c, val) in centers.iter().zip(vals) {
        out.values_mut()[*c] = val;
    }
    Ok(out)
}

/// `sup P^V`, the Hunt-side bound and `‖V‖_{L(n,1)}` with their ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzBoundReport {
    pub sup_potential: f64,
    pub hunt_bound: f64,
    pub lorentz_norm: f64,
    /// `sup P^V / hunt_bound`.
    pub ratio_hunt: f64,
    /// `sup P^V / ‖V‖_{L(n,1)}`.
    pub ratio_lorentz: f64,
}

pub fn lorentz_bound_check(v: &VectorField, r: f64, spec: QuadratureSpec) -> Result<LorentzBoundReport> {
    check_radius(r)?;
    let n = v.grid().dim();
    if n <= 2 {
        return Err(invalid("n", format!("the Lorentz bound is stated for n > 2, got {n}")));
    }
    let weights = squared_magnitude(v);
    let (sup, _) = potential_sup_weighted(&weights, &Region::All, r, spec);
    let upper = 2.0 * unit_ball_volume(n) * r.powi(n as i32);
    let hunt = rearrange(&weights).maximal_power_integral(0.5, 1.0 / n as f64, upper)?;
    let norm = lorentz_norm(&rearrange(&v.norm_field()), LorentzParams::new(n as f64, 1.0)?)?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(LorentzBoundReport {
        sup_potential: sup,
        hunt_bound: hunt,
        lorentz_norm: norm,
        ratio_hunt: ratio(sup, hunt),
        ratio_lorentz: ratio(sup, norm),
    })
}

/// One row of the potential report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialRow {
    pub x: Vec<f64>,
    pub r: f64,
    pub potential: f64,
    pub dyadic: f64,
    pub wolff: Option<f64>,
}

/// `P^V`, its dyadic sum and optionally the Wolff potential of `|V|` at each center.
pub fn potential_rows(
    v: &VectorField,
    centers: &[Point],
    r: f64,
    wolff: Option<(f64, f64)>,
    spec: QuadratureSpec,
) -> Result<Vec<PotentialRow>> {
    check_radius(r)?;
    let weights = squared_magnitude(v);
    let magnitude = v.norm_field();
    let grid = v.grid();
    let radii = radius_nodes(r, grid.spacing(), spec);
    let stencil = BallStencil::new(grid, &radii);
    centers
        .par_iter()
        .map(|x| {
            let m = measures_at(&weights, x, &radii, Some(&stencil));
            let curve = curve_from_measures(grid.dim(), *x, radii.clone(), &m);
            let wolff = match wolff {
                Some((beta, p)) => Some(wolff_potential(&magnitude, x, r, beta, p, spec)?),
                None => None,
            };
            Ok(PotentialRow {
                x: x[..grid.dim()].to_vec(),
                r,
                potential: curve.value,
                dyadic: dyadic_weighted(&weights, x, r),
                wolff,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Domain;
    use approx::assert_relative_eq;

    fn constant(dim: usize, points: usize, c: f64) -> VectorField {
        let g = Grid::new(&vec![points; dim], 1.0 / (points - 1) as f64, &vec![0.0; dim], Domain::Box).unwrap();
        ScalarField::from_fn(&g, |_| c).to_vector()
    }

    #[test]
    fn constant_density_closed_form() {
        for dim in [2, 3] {
            let v = constant(dim, 33, 1.7);
            let x = [0.5, 0.5, if dim == 3 { 0.5 } else { 0.0 }];
            let r = 0.3;
            let curve = p_potential(&v, &x, r, QuadratureSpec::default()).unwrap();
            let exact = 1.7 * unit_ball_volume(dim).sqrt() * r;
            assert_relative_eq!(curve.value, exact, max_relative = 1e-6);
            assert!(curve.integrand.iter().all(|&i| i >= 0.0));
            let w = wolff_potential(&v.component(0), &x, r, 0.5, 2.0, QuadratureSpec::default()).unwrap();
            let p: f64 = 2.0;
            let beta = 0.5;
            let exact_w = (1.7 * unit_ball_volume(dim)).powf(1.0 / (p - 1.0)) * (p - 1.0) / (beta * p)
                * r.powf(beta * p / (p - 1.0));
            assert_relative_eq!(w, exact_w, max_relative = 1e-6);
        }
    }

    #[test]
    fn zero_field_and_homogeneity() {
        let v = constant(2, 17, 0.0);
        let x = [0.5, 0.5, 0.0];
        assert_eq!(p_potential(&v, &x, 0.2, QuadratureSpec::default()).unwrap().value, 0.0);
        assert_eq!(p_potential_dyadic(&v, &x, 0.2).unwrap(), 0.0);
        assert!(p_potential(&v, &x, 0.0, QuadratureSpec::default()).is_err());
        let g = v.grid().clone();
        let f = ScalarField::from_fn(&g, |y| (3.0 * y[0]).sin() + y[1]).to_vector();
        let a = p_potential(&f, &x, 0.3, QuadratureSpec::default()).unwrap().value;
        let b = p_potential(&f.scale(-2.5), &x, 0.3, QuadratureSpec::default()).unwrap().value;
        assert_relative_eq!(b, 2.5 * a, max_relative = 1e-14);
    }

    #[test]
    fn wolff_rejects_large_beta() {
        let v = constant(2, 9, 1.0);
        assert!(wolff_potential(&v.component(0), &[0.5, 0.5, 0.0], 0.2, 1.0, 2.0, QuadratureSpec::default()).is_err());
    }

    #[test]
    fn stencil_agrees_with_direct_measures() {
        let g = Grid::cube(3, 13, 0.0, 1.0).unwrap();
        let w = ScalarField::from_fn(&g, |x| 1.0 + x[0] * x[1] - x[2]);
        let radii = radius_nodes(0.31, g.spacing(), QuadratureSpec::default());
        let stencil = BallStencil::new(&g, &radii);
        let center = g.index([2, 6, 11]);
        let a = stencil.measures(&w, center);
        let b = ball_measures(&w, &g.point(center), &radii);
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn sup_is_monotone_on_shared_nodes() {
        let g = Grid::cube(2, 21, 0.0, 1.0).unwrap();
        let v = ScalarField::from_fn(&g, |x| (-(x[0] - 0.3).powi(2) * 30.0).exp() * x[1]).to_vector();
        let spec = QuadratureSpec::default();
        let (a, _) = potential_sup(&v, &Region::All, 0.2, spec).unwrap();
        let (b, _) = potential_sup(&v, &Region::All, 0.4, spec).unwrap();
        assert!(a <= b);
    }

    #[test]
    fn dyadic_inequality_on_concentrated_field() {
        let g = Grid::cube(2, 41, 0.0, 1.0).unwrap();
        let v = ScalarField::from_fn(&g, |x| if (x[0] - 0.52).abs() < 0.05 && (x[1] - 0.47).abs() < 0.03 { 4.0 } else { 0.1 * x[0] })
            .to_vector();
        let x = [0.5, 0.5, 0.0];
        let r = 0.2;
        let sum = p_potential_dyadic(&v, &x, r).unwrap();
        let big = p_potential(&v, &x, 2.0 * r, QuadratureSpec::default()).unwrap().value;
        assert!(dyadic_constant(2) * sum <= big * (1.0 + 1e-12));
    }
}
