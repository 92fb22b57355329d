//! Named data sources: potentials `V`, boundary data and seeded random fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{dist2, io, to_point, Grid, Point, ScalarField, VectorField};

/// Scalar profile `s(x)` of a potential. Vector potentials use `s(x)/√N` in
/// every component so that `|V| = |s|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VSource {
    Zero,
    Constant,
    /// `1_{B(center, radius)}`.
    Indicator { center: Vec<f64>, radius: f64 },
    /// `|x - center|^{-alpha}`, evaluated at distance `h/2` at the center itself.
    Singular { center: Vec<f64>, alpha: f64 },
    /// `exp(σ Z)` with i.i.d. standard normal `Z` per grid point.
    RandomLognormal { sigma: f64 },
    /// Sum of `count` Gaussian bumps of width `width` at random centers.
    Bumps { count: usize, width: f64 },
    /// A field file written by [`io::write`].
    File { path: String },
}

/// `amplitude · source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VSpec {
    pub source: VSource,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl VSpec {
    pub fn new(source: VSource, amplitude: f64) -> Self {
        VSpec { source, amplitude }
    }

    pub fn build(&self, grid: &Grid, components: usize, seed: u64) -> Result<VectorField> {
        if let VSource::File { path } = &self.source {
            let f = io::read(std::path::Path::new(path))?;
            if f.grid() != grid || f.components() != components {
                return Err(Error::FieldFile {
                    path: path.into(),
                    reason: format!(
                        "field has shape {:?} with {} components, expected {:?} with {}",
                        f.grid().shape(),
                        f.components(),
                        grid.shape(),
                        components
                    ),
                });
            }
            return Ok(f.scale(self.amplitude));
        }
        let profile = scalar_profile(&self.source, grid, seed)?;
        let c = self.amplitude / (components as f64).sqrt();
        let values = profile
            .values()
            .iter()
            .flat_map(|&s| std::iter::repeat(c * s).take(components))
            .collect();
        VectorField::new(grid.clone(), components, values)
    }
}

fn center_point(grid: &Grid, center: &[f64]) -> Result<Point> {
    if center.len() != grid.dim() {
        return Err(invalid("center", format!("needs {} coordinates", grid.dim())));
    }
    Ok(to_point(center))
}

fn scalar_profile(source: &VSource, grid: &Grid, seed: u64) -> Result<ScalarField> {
    Ok(match source {
        VSource::Zero => ScalarField::zeros(grid),
        VSource::Constant => ScalarField::from_fn(grid, |_| 1.0),
        VSource::Indicator { center, radius } => {
            let c = center_point(grid, center)?;
            let r2 = radius * radius;
            ScalarField::from_fn(grid, |x| if dist2(x, &c) < r2 { 1.0 } else { 0.0 })
        }
        VSource::Singular { center, alpha } => {
            if !(*alpha >= 0.0) {
                return Err(invalid("alpha", "must be nonnegative"));
            }
            let c = center_point(grid, center)?;
            let floor = 0.5 * grid.spacing();
            ScalarField::from_fn(grid, |x| dist2(x, &c).sqrt().max(floor).powf(-alpha))
        }
        VSource::RandomLognormal { sigma } => lognormal_field(grid, *sigma, seed),
        VSource::Bumps { count, width } => bump_field(grid, *count, *width, seed)?,
        VSource::File { .. } => unreachable!("handled by VSpec::build"),
    })
}

/// `exp(σ Z)` on Ω, zero outside.
pub fn lognormal_field(grid: &Grid, sigma: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.len())
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            if grid.mask()[i] {
                (sigma * z).exp()
            } else {
                0.0
            }
        })
        .collect();
    ScalarField::new(grid.clone(), values).expect("finite")
}

/// Sum of Gaussian bumps `exp(-|x-c|²/w²)` with uniform random centers in the bounding box.
pub fn bump_field(grid: &Grid, count: usize, width: f64, seed: u64) -> Result<ScalarField> {
    if !(width > 0.0) {
        return Err(invalid("width", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.dim();
    let h = grid.spacing();
    let centers: Vec<(Point, f64)> = (0..count)
        .map(|_| {
            let mut c = [0.0; 3];
            for k in 0..n {
                let lo = grid.origin()[k];
                c[k] = lo + rng.gen::<f64>() * h * (grid.shape()[k] - 1) as f64;
            }
            (c, rng.gen_range(0.5..1.5))
        })
        .collect();
    Ok(ScalarField::from_fn(grid, |x| {
        centers.iter().map(|(c, a)| a * (-dist2(x, c) / (width * width)).exp()).sum()
    }))
}

/// Seeded field with many repeated values: integers in `0..levels` on Ω.
pub fn level_field(grid: &Grid, levels: u32, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.len())
        .map(|i| {
            let v = rng.gen_range(0..levels) as f64;
            if grid.mask()[i] {
                v
            } else {
                0.0
            }
        })
        .collect();
    ScalarField::new(grid.clone(), values).expect("finite")
}

/// The `index`-th member of the seeded test family: cycles through
/// lognormal, bumps, level sets and singular profiles.
pub fn seeded_field(grid: &Grid, seed: u64, index: usize) -> ScalarField {
    let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    match index % 4 {
        0 => lognormal_field(grid, rng.gen_range(0.2..1.0), s),
        1 => bump_field(grid, rng.gen_range(1..6), rng.gen_range(0.05..0.3), s).expect("positive width"),
        2 => level_field(grid, rng.gen_range(2..8), s),
        _ => {
            let n = grid.dim();
            let mut c = vec![0.0; n];
            for (k, ck) in c.iter_mut().enumerate() {
                *ck = grid.origin()[k] + rng.gen::<f64>() * grid.spacing() * (grid.shape()[k] - 1) as f64;
            }
            let alpha = rng.gen_range(0.1..0.9);
            scalar_profile(&VSource::Singular { center: c, alpha }, grid, s).expect("valid center")
        }
    }
}

/// Boundary data, extended to the whole grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundarySpec {
    Zero,
    /// `u_α(x) = Σ_k matrix[α·n + k] x_k + offset[α]`.
    Affine {
        matrix: Vec<f64>,
        #[serde(default)]
        offset: Vec<f64>,
    },
    /// `|x|²/2` in every component.
    Paraboloid,
    /// `Π_k sin(π x_k)` in every component.
    SineProduct,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::Zero
    }
}

impl BoundarySpec {
    pub fn build(&self, grid: &Grid, components: usize) -> Result<VectorField> {
        let n = grid.dim();
        match self {
            BoundarySpec::Zero => Ok(VectorField::zeros(grid, components)),
            BoundarySpec::Affine { matrix, offset } => {
                if matrix.len() != components * n {
                    return Err(invalid("matrix", format!("needs N·n = {} entries", components * n)));
                }
                if !offset.is_empty() && offset.len() != components {
                    return Err(invalid("offset", format!("needs {components} entries")));
                }
                Ok(VectorField::from_fn(grid, components, |x, out| {
                    for (a, o) in out.iter_mut().enumerate() {
                        *o = (0..n).map(|k| matrix[a * n + k] * x[k]).sum::<f64>() + offset.get(a).copied().unwrap_or(0.0);
                    }
                }))
            }
            BoundarySpec::Paraboloid => Ok(VectorField::from_fn(grid, components, |x, out| {
                out.fill(0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
            })),
            BoundarySpec::SineProduct => Ok(VectorField::from_fn(grid, components, |x, out| {
                out.fill((0..n).map(|k| (std::f64::consts::PI * x[k]).sin()).product())
            })),
        }
    }
}

/// Smooth random function vanishing on the boundary of the box: a random
/// combination of the first sine modes, with coefficients decaying like `1/|m|²`.
pub fn random_sine_series(grid: &Grid, components: usize, modes: usize, seed: u64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.dim();
    let lo: Vec<f64> = grid.origin().to_vec();
    let len: Vec<f64> = (0..n).map(|k| grid.spacing() * (grid.shape()[k] - 1) as f64).collect();
    let count = modes.pow(n as u32);
    let coeffs: Vec<f64> = (0..count * components)
        .map(|i| {
            let m = i / components;
            let mut rest = m;
            let mut norm2 = 0.0;
            for _ in 0..n {
                let mk = (rest % modes + 1) as f64;
                norm2 += mk * mk;
                rest /= modes;
            }
            let z: f64 = rng.sample(StandardNormal);
            z / norm2
        })
        .collect();
    VectorField::from_fn(grid, components, |x, out| {
        out.fill(0.0);
        for m in 0..count {
            let mut rest = m;
            let mut basis = 1.0;
            for k in 0..n {
                let mk = (rest % modes + 1) as f64;
                basis *= (std::f64::consts::PI * mk * (x[k] - lo[k]) / len[k]).sin();
                rest /= modes;
            }
            for (a, o) in out.iter_mut().enumerate() {
                *o += coeffs[m * components + a] * basis;
            }
        }
    })
}
