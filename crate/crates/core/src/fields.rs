//! Uniform grids over a box or a discretized ball, sampled fields, discrete
//! calculus and ball-restricted integrals.
//!
//! Every grid point `x_i` carries the cell `x_i + [-h/2, h/2]^n`; integrals
//! are midpoint sums `Σ f(x_i) h^n` over the masked points.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A point in R^n stored with three slots; unused slots are zero.
pub type Point = [f64; 3];

/// Relative slack used when deciding strict ball membership, so points that
/// lie on the sphere up to roundoff are consistently excluded.
const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Shape of the domain Ω carried by a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    /// Every grid point belongs to Ω.
    Box,
    /// Grid points whose centers lie inside the ball.
    Ball { center: Vec<f64>, radius: f64 },
}

/// An open ball `B(center, radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: &[f64], radius: f64) -> Self {
        Ball {
            center: to_point(center),
            radius,
        }
    }

    /// Concentric ball with the radius scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Ball {
            center: self.center,
            radius: self.radius * factor,
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        dist2(x, &self.center) < self.radius * self.radius * (1.0 - MEMBERSHIP_SLACK)
    }
}

/// A subset of the grid used to restrict norms and sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    All,
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
}

impl Region {
    pub fn ball(b: Ball) -> Self {
        Region::Ball {
            center: b.center,
            radius: b.radius,
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        match self {
            Region::All => true,
            Region::Ball { center, radius } => Ball {
                center: *center,
                radius: *radius,
            }
            .contains(x),
            Region::Box { lo, hi } => (0..3).all(|k| x[k] >= lo[k] && x[k] <= hi[k]),
        }
    }
}

pub(crate) fn to_point(v: &[f64]) -> Point {
    let mut p = [0.0; 3];
    for (slot, x) in p.iter_mut().zip(v) {
        *slot = *x;
    }
    p
}

pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Volume of the unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => {
            // ω_n = π^{n/2} / Γ(n/2 + 1), via the two-step recursion
            let mut w = if n % 2 == 0 { 1.0 } else { 2.0 };
            let mut k = if n % 2 == 0 { 0 } else { 1 };
            while k < n {
                k += 2;
                w *= 2.0 * std::f64::consts::PI / k as f64;
            }
            w
        }
    }
}

/// Uniform isotropic grid on a box, with the mask of Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: [usize; 3],
    spacing: f64,
    origin: Point,
    domain: Domain,
    mask: Arc<[bool]>,
}

impl Grid {
    pub fn new(shape: &[usize], spacing: f64, origin: &[f64], domain: Domain) -> Result<Self> {
        let dim = shape.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if origin.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "origin has {} entries for a {dim}-dimensional grid",
                origin.len()
            )));
        }
        if shape.iter().any(|&s| s < 3) {
            return Err(Error::InvalidGrid(format!("shape {shape:?} has an axis with fewer than 3 points")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        let mut s = [1usize; 3];
        s[..dim].copy_from_slice(shape);
        let mut grid = Grid {
            dim,
            shape: s,
            spacing,
            origin: to_point(origin),
            domain: Domain::Box,
            mask: Arc::from(Vec::new()),
        };
        let mask: Vec<bool> = match &domain {
            Domain::Box => vec![true; grid.len()],
            Domain::Ball { center, radius } => {
                if center.len() != dim || !(*radius > 0.0) {
                    return Err(Error::InvalidGrid("ball domain needs a center in R^n and a positive radius".into()));
                }
                let ball = Ball::new(center, *radius);
                (0..grid.len()).map(|i| ball.contains(&grid.point(i))).collect()
            }
        };
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidGrid("domain contains no grid points".into()));
        }
        grid.domain = domain;
        grid.mask = Arc::from(mask);
        Ok(grid)
    }

    /// Box grid on `[lo, lo + extent]^n` with `points` per axis.
    pub fn cube(dim: usize, points: usize, lo: f64, extent: f64) -> Result<Self> {
        let h = extent / (points.max(2) - 1) as f64;
        Grid::new(&vec![points; dim], h, &vec![lo; dim], Domain::Box)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Measure of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Measure of Ω (number of masked cells times `h^n`).
    pub fn domain_volume(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 * self.cell_volume()
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.shape[1] + ijk[1]) * self.shape[2] + ijk[2]
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let k = flat % self.shape[2];
        let rest = flat / self.shape[2];
        [rest / self.shape[1], rest % self.shape[1], k]
    }

    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => self.shape[1] * self.shape[2],
            1 => self.shape[2],
            _ => 1,
        }
    }

    pub fn point(&self, flat: usize) -> Point {
        let ijk = self.multi_index(flat);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.origin[k] + ijk[k] as f64 * self.spacing;
        }
        x
    }

    /// Neighbor `flat ± e_axis`, if it exists on the grid.
    pub fn neighbor(&self, flat: usize, axis: usize, forward: bool) -> Option<usize> {
        let i = self.multi_index(flat)[axis];
        if forward {
            (i + 1 < self.shape[axis]).then(|| flat + self.stride(axis))
        } else {
            (i > 0).then(|| flat - self.stride(axis))
        }
    }

    fn masked_neighbor(&self, flat: usize, axis: usize, forward: bool) -> Option<usize> {
        self.neighbor(flat, axis, forward).filter(|&j| self.mask[j])
    }

    /// Index of the grid point nearest to `x` (clamped to the grid).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut ijk = [0usize; 3];
        for k in 0..self.dim {
            let t = ((x[k] - self.origin[k]) / self.spacing).round();
            ijk[k] = t.clamp(0.0, (self.shape[k] - 1) as f64) as usize;
        }
        self.index(ijk)
    }

    /// Indices of the grid points whose coordinates lie in the closed box `[lo, hi]`.
    pub(crate) fn index_range(&self, lo: &Point, hi: &Point) -> Option<[(usize, usize); 3]> {
        let mut r = [(0usize, 0usize); 3];
        for k in 0..3 {
            if k >= self.dim {
                r[k] = (0, 0);
                continue;
            }
            let a = ((lo[k] - self.origin[k]) / self.spacing).ceil().max(0.0);
            let b = ((hi[k] - self.origin[k]) / self.spacing).floor().min((self.shape[k] - 1) as f64);
            if a > b {
                return None;
            }
            r[k] = (a as usize, b as usize);
        }
        Some(r)
    }

    /// Calls `f(flat, point)` for every masked grid point inside `ball`.
    pub fn for_each_in_ball(&self, ball: &Ball, mut f: impl FnMut(usize, &Point)) {
        let mut lo = ball.center;
        let mut hi = ball.center;
        for k in 0..self.dim {
            lo[k] -= ball.radius;
            hi[k] += ball.radius;
        }
        let Some(r) = self.index_range(&lo, &hi) else {
            return;
        };
        for i in r[0].0..=r[0].1 {
            for j in r[1].0..=r[1].1 {
                for k in r[2].0..=r[2].1 {
                    let flat = self.index([i, j, k]);
                    if !self.mask[flat] {
                        continue;
                    }
                    let x = self.point(flat);
                    if ball.contains(&x) {
                        f(flat, &x);
                    }
                }
            }
        }
    }

    /// Distance from `x` to the complement of the closed cell union of Ω's
    /// bounding box, in the continuum sense (centers, not grid counts).
    pub fn distance_to_boundary(&self, x: &Point) -> f64 {
        let mut d = f64::INFINITY;
        for k in 0..self.dim {
            let lo = self.origin[k];
            let hi = self.origin[k] + (self.shape[k] - 1) as f64 * self.spacing;
            d = d.min(x[k] - lo).min(hi - x[k]);
        }
        if let Domain::Ball { center, radius } = &self.domain {
            d = d.min(radius - dist2(x, &to_point(center)).sqrt());
        }
        d
    }

    /// Whether `ball` is contained in Ω (continuum distance of centers).
    pub fn contains_ball(&self, ball: &Ball) -> bool {
        self.distance_to_boundary(&ball.center) >= ball.radius
    }
}

/// Real values per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().zip(grid.mask()).any(|(v, &m)| m && !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite value at a masked point".into()));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            values: vec![0.0; grid.len()],
            grid: grid.clone(),
        }
    }

    /// Samples `f` at masked points; unmasked points hold zero.
    pub fn from_fn(grid: &Grid, f: impl Fn(&Point) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| if grid.mask()[i] { f(&grid.point(i)) } else { 0.0 })
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        self.grid.mask()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn to_vector(&self) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            components: 1,
            values: self.values.clone(),
        }
    }

    /// Masked maximum of the values.
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .zip(self.mask())
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `components` reals per grid point, point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != grid.len() * components {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} points with {components} components",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite vector entry".into()));
        }
        Ok(VectorField {
            grid,
            components,
            values,
        })
    }

    pub fn zeros(grid: &Grid, components: usize) -> Self {
        VectorField {
            grid: grid.clone(),
            components,
            values: vec![0.0; grid.len() * components],
        }
    }

    pub fn from_fn(grid: &Grid, components: usize, f: impl Fn(&Point, &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.len() * components];
        for (i, chunk) in values.chunks_mut(components).enumerate() {
            if grid.mask()[i] {
                f(&grid.point(i), chunk);
            }
        }
        VectorField {
            grid: grid.clone(),
            components,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.components..(flat + 1) * self.components]
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.chunks(self.components).map(|v| v[c]).collect(),
        }
    }

    /// Pointwise Euclidean (Frobenius) norm.
    pub fn norm_field(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .chunks(self.components)
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        VectorField {
            grid: self.grid.clone(),
            components: self.components,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// The single component as a scalar field; errors if `components != 1`.
    pub fn into_scalar(self) -> Result<ScalarField> {
        if self.components != 1 {
            return Err(Error::ShapeMismatch(format!("{} components, expected 1", self.components)));
        }
        Ok(ScalarField {
            grid: self.grid,
            values: self.values,
        })
    }
}

/// Derivative of `values` (stride `comps`, component `c`) along `axis` at `flat`.
///
/// Centered where both neighbors are in Ω, second-order one-sided where two
/// points on one side are available, first-order one-sided otherwise.
fn axis_derivative(grid: &Grid, values: &[f64], comps: usize, c: usize, flat: usize, axis: usize) -> Result<f64> {
    let h = grid.spacing;
    let at = |i: usize| values[i * comps + c];
    let fwd = grid.masked_neighbor(flat, axis, true);
    let bwd = grid.masked_neighbor(flat, axis, false);
    match (bwd, fwd) {
        (Some(b), Some(f)) => Ok((at(f) - at(b)) / (2.0 * h)),
        (None, Some(f)) => match grid.masked_neighbor(f, axis, true) {
            Some(ff) => Ok((-3.0 * at(flat) + 4.0 * at(f) - at(ff)) / (2.0 * h)),
            None => Ok((at(f) - at(flat)) / h),
        },
        (Some(b), None) => match grid.masked_neighbor(b, axis, false) {
            Some(bb) => Ok((3.0 * at(flat) - 4.0 * at(b) + at(bb)) / (2.0 * h)),
            None => Ok((at(flat) - at(b)) / h),
        },
        (None, None) => Err(Error::Geometry(format!(
            "point {:?} has no neighbor in Ω along axis {axis}",
            grid.multi_index(flat)
        ))),
    }
}

/// Discrete gradient: `N` components in, `N·n` components out (row `α`,
/// column `k` at slot `α·n + k`). Unmasked points get zero.
pub fn gradient(u: &VectorField) -> Result<VectorField> {
    let grid = &u.grid;
    let n = grid.dim;
    let comps = u.components;
    let mut out = vec![0.0; grid.len() * comps * n];
    for flat in 0..grid.len() {
        if !grid.mask[flat] {
            continue;
        }
        for a in 0..comps {
            for k in 0..n {
                out[(flat * comps + a) * n + k] = axis_derivative(grid, &u.values, comps, a, flat, k)?;
            }
        }
    }
    Ok(VectorField {
        grid: grid.clone(),
        components: comps * n,
        values: out,
    })
}

/// Gradient of a scalar field.
pub fn gradient_scalar(u: &ScalarField) -> Result<VectorField> {
    gradient(&u.to_vector())
}

/// Discrete divergence of an `N·n`-component field, giving `N` components.
/// Uses the same stencils as [`gradient`], so on functions supported away
/// from the mask boundary it is the negative adjoint of the gradient.
pub fn divergence(field: &VectorField) -> Result<VectorField> {
    let grid = &field.grid;
    let n = grid.dim;
    if field.components % n != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} components is not a multiple of the dimension {n}",
            field.components
        )));
    }
    let rows = field.components / n;
    let mut out = vec![0.0; grid.len() * rows];
    for flat in 0..grid.len() {
        if !grid.mask[flat] {
            continue;
        }
        for a in 0..rows {
            let mut acc = 0.0;
            for k in 0..n {
                acc += axis_derivative(grid, &field.values, field.components, a * n + k, flat, k)?;
            }
            out[flat * rows + a] = acc;
        }
    }
    Ok(VectorField {
        grid: grid.clone(),
        components: rows,
        values: out,
    })
}

/// Midpoint-rule integral of `f` over the masked points inside `ball`.
pub fn ball_integral(f: &ScalarField, ball: &Ball) -> Result<f64> {
    let (sum, count) = ball_sum(f, ball);
    if count == 0 {
        return Err(Error::EmptyBall(format!("{ball:?}")));
    }
    Ok(sum * f.grid.cell_volume())
}

/// Average of `f` over the masked points inside `ball`.
pub fn ball_average(f: &ScalarField, ball: &Ball) -> Result<f64> {
    let (sum, count) = ball_sum(f, ball);
    if count == 0 {
        return Err(Error::EmptyBall(format!("{ball:?}")));
    }
    Ok(sum / count as f64)
}

fn ball_sum(f: &ScalarField, ball: &Ball) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    f.grid.for_each_in_ball(ball, |i, _| {
        sum += f.values[i];
        count += 1;
    });
    (sum, count)
}

/// Number of masked points inside `ball`.
pub fn ball_count(grid: &Grid, ball: &Ball) -> usize {
    let mut count = 0;
    grid.for_each_in_ball(ball, |_, _| count += 1);
    count
}

/// `(Σ |f|^t h^n)^{1/t}` over masked points in `region`; `t = ∞` gives the sup norm.
pub fn lp_norm(f: &ScalarField, t: f64, region: &Region) -> Result<f64> {
    if t.is_infinite() && t > 0.0 {
        return sup_norm(f, region);
    }
    if !(t > 0.0) {
        return Err(invalid("t", format!("exponent {t} must be positive")));
    }
    let grid = &f.grid;
    let sum: f64 = (0..grid.len())
        .filter(|&i| grid.mask[i] && region.contains(&grid.point(i)))
        .map(|i| f.values[i].abs().powf(t))
        .sum();
    Ok((sum * grid.cell_volume()).powf(1.0 / t))
}

/// Max of `|f|` over masked points in `region` (zero if none).
pub fn sup_norm(f: &ScalarField, region: &Region) -> Result<f64> {
    let grid = &f.grid;
    Ok((0..grid.len())
        .filter(|&i| grid.mask[i] && region.contains(&grid.point(i)))
        .map(|i| f.values[i].abs())
        .fold(0.0, f64::max))
}

/// Measure of the masked cells whose centers lie in `region`.
pub fn region_volume(grid: &Grid, region: &Region) -> f64 {
    (0..grid.len())
        .filter(|&i| grid.mask[i] && region.contains(&grid.point(i)))
        .count() as f64
        * grid.cell_volume()
}

/// Area of `[0, x] × [0, y] ∩ B(0, r)`, odd in `x` and `y`.
fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
    let sign = x.signum() * y.signum();
    let (x, y) = (x.abs().min(r), y.abs().min(r));
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    if x * x + y * y <= r * r {
        return sign * x * y;
    }
    let prim = |u: f64| 0.5 * (u * (r * r - u * u).max(0.0).sqrt() + r * r * (u / r).clamp(-1.0, 1.0).asin());
    let u_star = (r * r - y * y).max(0.0).sqrt();
    sign * (y * u_star + prim(x) - prim(u_star))
}

/// Exact area of the rectangle `[x0,x1]×[y0,y1]` (relative to the disk center) inside the disk.
fn rect_disk_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let a = quadrant_area(x1, y1, r) - quadrant_area(x0, y1, r) - quadrant_area(x1, y0, r) + quadrant_area(x0, y0, r);
    a.max(0.0)
}

/// Volume of the axis-aligned cell `lo + [0, h]^n` (relative to the ball
/// center) inside `B(0, r)`: closed form for `n = 2`, Gauss-Legendre over
/// exact disk slices for `n = 3` with panels split at the slice breakpoints.
pub(crate) fn cell_ball_overlap(dim: usize, lo: &Point, h: f64, r: f64) -> f64 {
    if dim == 2 {
        return rect_disk_area(lo[0], lo[0] + h, lo[1], lo[1] + h, r);
    }
    let (x0, x1, y0, y1) = (lo[0], lo[0] + h, lo[1], lo[1] + h);
    let z0 = lo[2].max(-r);
    let z1 = (lo[2] + h).min(r);
    if z0 >= z1 {
        return 0.0;
    }
    let mut cuts = vec![z0, z1];
    let d2s = [
        x0 * x0 + y0 * y0,
        x0 * x0 + y1 * y1,
        x1 * x1 + y0 * y0,
        x1 * x1 + y1 * y1,
        x0 * x0,
        x1 * x1,
        y0 * y0,
        y1 * y1,
    ];
    for d2 in d2s {
        if d2 < r * r {
            let w = (r * r - d2).sqrt();
            for cut in [w, -w] {
                if cut > z0 && cut < z1 {
                    cuts.push(cut);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let rule = crate::quadrature::gl8();
    let mut vol = 0.0;
    for pair in cuts.windows(2) {
        if pair[1] - pair[0] <= 0.0 {
            continue;
        }
        vol += crate::quadrature::integrate(rule, pair[0], pair[1], |w| {
            rect_disk_area(x0, x1, y0, y1, (r * r - w * w).max(0.0).sqrt())
        });
    }
    vol.clamp(0.0, h * h * h)
}

/// Ball measures `Σ_i w_i |cell_i ∩ B(center, ρ_k)|` for nondecreasing radii
/// `ρ_k`, where `w` is a nonnegative density zero-extended outside Ω and each
/// grid point carries its own cell.
pub fn ball_measures(weights: &ScalarField, center: &Point, radii: &[f64]) -> Vec<f64> {
    let grid = &weights.grid;
    let n = grid.dim;
    let h = grid.spacing;
    let cell = grid.cell_volume();
    let m = radii.len();
    let mut full = vec![0.0; m + 1];
    let mut partial = vec![0.0; m];
    let Some(&r_max) = radii.last() else {
        return Vec::new();
    };
    let reach = r_max + h;
    let mut lo = *center;
    let mut hi = *center;
    for k in 0..n {
        lo[k] -= reach;
        hi[k] += reach;
    }
    let Some(range) = grid.index_range(&lo, &hi) else {
        return vec![0.0; m];
    };
    for i in range[0].0..=range[0].1 {
        for j in range[1].0..=range[1].1 {
            for k in range[2].0..=range[2].1 {
                let flat = grid.index([i, j, k]);
                let w = weights.values[flat];
                if !grid.mask[flat] || w == 0.0 {
                    continue;
                }
                let x = grid.point(flat);
                let mut rel = [0.0; 3];
                let mut near2 = 0.0;
                let mut far2 = 0.0;
                for a in 0..n {
                    rel[a] = x[a] - 0.5 * h - center[a];
                    let (p, q) = (rel[a], rel[a] + h);
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
                full[first_full] += w * cell;
                for idx in first_partial..first_full {
                    partial[idx] += w * cell_ball_overlap(n, &rel, h, radii[idx]);
                }
            }
        }
    }
    let mut acc = 0.0;
    (0..m)
        .map(|idx| {
            acc += full[idx];
            acc + partial[idx]
        })
        .collect()
}

pub mod io {
    //! The portable `PLFIELD1` binary format and CSV slice export.
    //!
    //! Layout: the 8 magic bytes `PLFIELD1`, then little-endian 64-bit words
    //! `dim`, `N`, `shape[0..dim]` (unsigned), `spacing`, `origin[0..dim]`
    //! (IEEE doubles), then the values as little-endian doubles, row-major over
    //! the grid (last axis fastest) with the `N` components of a point
    //! adjacent. The mask is not stored; files load onto box domains.

    use std::fs::File;
    use std::io::{BufReader, BufWriter, Read, Write};
    use std::path::Path;

    use super::{Domain, Grid, VectorField};
    use crate::error::{Error, Result};

    pub const MAGIC: &[u8; 8] = b"PLFIELD1";

    pub fn encode(field: &VectorField) -> Vec<u8> {
        let grid = field.grid();
        let mut out = Vec::with_capacity(64 + 8 * field.values().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(grid.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(field.components() as u64).to_le_bytes());
        for &s in grid.shape() {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        out.extend_from_slice(&grid.spacing().to_le_bytes());
        for &o in grid.origin() {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for &v in field.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<VectorField, String> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cursor.len() < n {
                return Err("truncated file".into());
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err("bad magic, expected PLFIELD1".into());
        }
        let word = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let dim = word(take(8)?) as usize;
        let comps = word(take(8)?) as usize;
        if !(2..=3).contains(&dim) || comps == 0 || comps > 64 {
            return Err(format!("implausible header: dim {dim}, components {comps}"));
        }
        let mut shape = Vec::with_capacity(dim);
        for _ in 0..dim {
            shape.push(word(take(8)?) as usize);
        }
        let spacing = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut origin = Vec::with_capacity(dim);
        for _ in 0..dim {
            origin.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let grid = Grid::new(&shape, spacing, &origin, Domain::Box).map_err(|e| e.to_string())?;
        let count = grid.len() * comps;
        let body = take(8 * count)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cursor.is_empty() {
            return Err(format!("{} trailing bytes", cursor.len()));
        }
        VectorField::new(grid, comps, values).map_err(|e| e.to_string())
    }

    pub fn write(path: &Path, field: &VectorField) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&encode(field))?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<VectorField> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::FieldFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?)
        .read_to_end(&mut bytes)?;
        decode(&bytes).map_err(|reason| Error::FieldFile {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Writes the plane `x_axis = index` (or the whole grid for `n = 2`) as
    /// CSV rows `x, y[, z], c0, c1, ...`.
    pub fn write_slice_csv<W: Write>(out: W, field: &VectorField, axis: usize, index: usize) -> Result<()> {
        let grid = field.grid();
        let n = grid.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["x", "y", "z"][..n].iter().map(|s| s.to_string()).collect();
        header.extend((0..field.components()).map(|c| format!("c{c}")));
        w.write_record(&header)?;
        for flat in 0..grid.len() {
            if n == 3 && grid.multi_index(flat)[axis] != index {
                continue;
            }
            let x = grid.point(flat);
            let mut row: Vec<String> = x[..n].iter().map(|v| format!("{v}")).collect();
            row.extend(field.at(flat).iter().map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(points: usize) -> Grid {
        Grid::cube(2, points, -1.0, 2.0).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(&[2, 5], 0.1, &[0.0, 0.0], Domain::Box).is_err());
        assert!(Grid::new(&[5, 5], 0.0, &[0.0, 0.0], Domain::Box).is_err());
        assert!(Grid::new(&[5, 5, 5, 5], 0.1, &[0.0; 4], Domain::Box).is_err());
        assert!(Grid::new(&[5, 5], 0.1, &[0.0], Domain::Box).is_err());
    }

    #[test]
    fn linear_and_constant_gradients_are_exact() {
        let g = unit(9);
        let u = ScalarField::from_fn(&g, |x| x[0]);
        let du = gradient_scalar(&u).unwrap();
        for i in 0..g.len() {
            assert!((du.at(i)[0] - 1.0).abs() < 1e-13);
            assert!(du.at(i)[1].abs() < 1e-13);
        }
        let c = ScalarField::from_fn(&g, |_| 3.5);
        let dc = gradient_scalar(&c).unwrap();
        assert!(dc.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn identity_field_has_divergence_n() {
        let g = Grid::cube(3, 7, 0.0, 1.0).unwrap();
        let f = VectorField::from_fn(&g, 3, |x, out| out.copy_from_slice(&x[..3]));
        let d = divergence(&f).unwrap();
        assert!(d.values().iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn thin_ball_mask_is_unusable() {
        let g = Grid::new(&[5, 5], 1.0, &[0.0, 0.0], Domain::Ball { center: vec![2.0, 2.0], radius: 0.5 }).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0]);
        assert!(matches!(gradient_scalar(&u), Err(Error::Geometry(_))));
    }

    #[test]
    fn empty_ball_is_an_error() {
        let g = unit(9);
        let f = ScalarField::from_fn(&g, |_| 1.0);
        assert!(ball_average(&f, &Ball::new(&[5.0, 5.0], 0.1)).is_err());
        assert!((ball_average(&f, &Ball::new(&[0.0, 0.0], 0.6)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn norms_of_indicator() {
        let g = Grid::cube(2, 11, 0.0, 1.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| if x[0] < 0.25 { 2.0 } else { 0.0 });
        let count = f.values().iter().filter(|&&v| v > 0.0).count() as f64;
        let measure = count * g.cell_volume();
        for t in [0.5, 1.0, 3.0] {
            let v = lp_norm(&f, t, &Region::All).unwrap();
            assert!((v - 2.0 * measure.powf(1.0 / t)).abs() < 1e-12);
        }
        assert!(lp_norm(&f, 0.0, &Region::All).is_err());
        assert!(lp_norm(&f, -1.0, &Region::All).is_err());
        assert_eq!(lp_norm(&f, f64::INFINITY, &Region::All).unwrap(), 2.0);
    }

    #[test]
    fn disk_rectangle_area_matches_full_disk() {
        // four quadrant squares tile the disk
        let r = 0.7;
        let a: f64 = [(-1.0, 0.0, -1.0, 0.0), (0.0, 1.0, -1.0, 0.0), (-1.0, 0.0, 0.0, 1.0), (0.0, 1.0, 0.0, 1.0)]
            .iter()
            .map(|&(a, b, c, d)| rect_disk_area(a, b, c, d, r))
            .sum();
        assert!((a - std::f64::consts::PI * r * r).abs() < 1e-14);
        // half-strip: area of the disk with x > 0.3
        let seg = rect_disk_area(0.3, 2.0, -2.0, 2.0, 1.0);
        let exact = (1.0f64).acos() * 0.0 + (0.3f64.acos() - 0.3 * (1.0 - 0.09f64).sqrt());
        assert!((seg - exact).abs() < 1e-14, "{seg} vs {exact}");
    }

    #[test]
    fn sliced_overlap_recovers_ball_volume() {
        let r = 0.83;
        let h = 0.25;
        let mut vol = 0.0;
        for i in -4..4 {
            for j in -4..4 {
                for k in -4..4 {
                    let lo = [i as f64 * h, j as f64 * h, k as f64 * h];
                    vol += cell_ball_overlap(3, &lo, h, r);
                }
            }
        }
        let exact = unit_ball_volume(3) * r.powi(3);
        assert!((vol - exact).abs() < 1e-6 * exact, "{vol} vs {exact}");
    }

    #[test]
    fn field_file_roundtrip() {
        let g = Grid::new(&[4, 3, 5], 0.5, &[1.0, -2.0, 0.25], Domain::Box).unwrap();
        let f = VectorField::from_fn(&g, 2, |x, out| {
            out[0] = x[0] * x[1];
            out[1] = x[2] - 1.0;
        });
        let bytes = io::encode(&f);
        assert_eq!(&bytes[..8], b"PLFIELD1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 8 + 8 * (2 + 3 + 1 + 3) + 8 * 60 * 2);
        let back = io::decode(&bytes).unwrap();
        assert_eq!(back, f);
        assert!(io::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
