//! Batch driver: JSON experiment configs in, JSON/CSV reports out.
//!
//! Exit status is 0 iff every report passed and no solve failed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{random_sine_series, seeded_field, BoundarySpec, VSource, VSpec};
use crate::error::{invalid, Error, Result};
use crate::estimates::{
    bernstein_v, caccioppoli_check, check_gradient_bound, check_lorentz_lipschitz, degiorgi_iterate,
    hodge_rigidity_check, oscillation_check, tilde_v, BoundVariant, Caps, DeGiorgiReport, EstimateReport,
    ExcessDatum, HodgeReport, TildeVariant,
};
use crate::fields::{ball_integral, io, Ball, Domain, Grid, Point, Region, ScalarField, VectorField};
use crate::lorentz::{layer_cake_quasinorm, lorentz_row, rearrange, square_identity_check, LorentzParams};
use crate::models::{OperatorModel, RegularizedModel};
use crate::potentials::{potential_rows, PotentialRow, QuadratureSpec};
use crate::solver::{
    coercivity_check, fixed_point_solve, solve_dirichlet, BLaw, CoercivityReport, DirichletProblem,
    FixedPointReport, OuterStatus, Paraboloid, Smallness, SolveReport, SolverSettings,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub points: usize,
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "one")]
    pub extent: f64,
    #[serde(default)]
    pub domain: Option<Domain>,
}

fn one() -> f64 {
    1.0
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        self.build_with_points(self.points)
    }

    pub fn build_with_points(&self, points: usize) -> Result<Grid> {
        if points < 3 {
            return Err(invalid("grid.points", "need at least 3 points per axis"));
        }
        let h = self.extent / (points - 1) as f64;
        Grid::new(
            &vec![points; self.dim],
            h,
            &vec![self.lo; self.dim],
            self.domain.clone().unwrap_or(Domain::Box),
        )
    }

    fn center(&self) -> Point {
        let mut c = [0.0; 3];
        for ci in c.iter_mut().take(self.dim) {
            *ci = self.lo + 0.5 * self.extent;
        }
        c
    }
}

/// Right-hand side of the `solve` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RhsSpec {
    /// `u = |x|²/2` with its exact right-hand side; the boundary spec is ignored.
    Manufactured,
    /// `b(x, u, Du) V` through the fixed-point loop.
    Coupled { b: BLaw },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default = "one_usize")]
    pub components: usize,
    pub v: VSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    pub rhs: RhsSpec,
    #[serde(default)]
    pub settings: SolverSettings,
    #[serde(default)]
    pub smallness: Smallness,
    /// Coupled ε-schedule for the coercivity report; empty runs one solve.
    #[serde(default)]
    pub epsilon_schedule: Vec<f64>,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WolffSpec {
    pub beta: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub radius: f64,
    /// Explicit centers; when empty (and no file), `samples` seeded grid
    /// points are used, and `samples = 0` sweeps every point of Ω.
    #[serde(default)]
    pub centers: Vec<Vec<f64>>,
    /// Headerless CSV of center coordinates, one center per row.
    #[serde(default)]
    pub centers_file: Option<String>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub wolff: Option<WolffSpec>,
}

fn default_samples() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorentzSpec {
    #[serde(default = "default_samples")]
    pub fields: usize,
    #[serde(default = "default_lorentz_params")]
    pub params: Vec<LorentzParams>,
    /// Exponent `n` of the square identity `[|V|²]_{L(n/2,1/2)} = [V]²_{L(n,1)}`.
    #[serde(default = "three")]
    pub n: usize,
}

fn three() -> usize {
    3
}

fn default_lorentz_params() -> Vec<LorentzParams> {
    let mut out = Vec::new();
    for gamma in [2.0, 3.0] {
        for q in [1.0, 2.0] {
            out.push(LorentzParams { gamma, q });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateName {
    Linear,
    Apl,
    Aes1,
    Aes2,
    GeneralGrowth,
    Caccioppoli,
    Oscillation,
    Degiorgi,
    LorentzLipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub estimate: EstimateName,
    /// Ball radius as a fraction of the box side.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "ten")]
    pub levels: usize,
    #[serde(default = "hundred")]
    pub centers: usize,
    #[serde(default = "half")]
    pub delta: f64,
    #[serde(default)]
    pub t: Option<f64>,
    /// Grid refinements (points per axis); empty uses the grid block only.
    #[serde(default)]
    pub refinements: Vec<usize>,
}

fn default_radius() -> f64 {
    0.4
}

fn ten() -> usize {
    10
}

fn hundred() -> usize {
    100
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HodgeSpec {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "four")]
    pub modes: usize,
}

fn default_deltas() -> Vec<f64> {
    vec![0.05, 0.1, 0.2]
}

fn default_t() -> f64 {
    2.5
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub p: Vec<f64>,
    pub points: Vec<usize>,
    /// Regularization levels; empty uses `h²` per grid.
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default = "unit_list")]
    pub amplitude: Vec<f64>,
}

fn unit_list() -> Vec<f64> {
    vec![1.0]
}

/// A full experiment description. Blocks not needed by a command may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub grid: GridSpec,
    #[serde(default)]
    pub model: Option<OperatorModel>,
    /// Regularization level; defaults to `h²`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    #[serde(default)]
    pub lorentz: Option<LorentzSpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
    #[serde(default)]
    pub hodge: Option<HodgeSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: origin.to_string(),
            reason: format!("at `{}`: {}", e.path(), e.inner()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let cfg = Self::from_json(&text, &path.display().to_string())?;
        cfg.check_files(path)?;
        Ok(cfg)
    }

    fn check_files(&self, origin: &Path) -> Result<()> {
        if let Some(ProblemSpec { v: VSpec { source: VSource::File { path }, .. }, .. }) = &self.problem {
            if !Path::new(path).exists() {
                return Err(Error::Config {
                    path: origin.display().to_string(),
                    reason: format!("at `problem.v.source.path`: field file {path} does not exist"),
                });
            }
        }
        if let Some(PotentialSpec { centers_file: Some(path), .. }) = &self.potential {
            if !Path::new(path).exists() {
                return Err(Error::Config {
                    path: origin.display().to_string(),
                    reason: format!("at `potential.centers_file`: {path} does not exist"),
                });
            }
        }
        Ok(())
    }

    fn model(&self) -> Result<OperatorModel> {
        self.model
            .clone()
            .ok_or_else(|| missing("model"))?
            .new()
    }

    fn block<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| missing(name))
    }
}

fn missing(name: &str) -> Error {
    Error::Config {
        path: "<config>".into(),
        reason: format!("missing `{name}` block"),
    }
}

/// Summary of one command run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn field(&mut self, name: &str, field: &VectorField) -> Result<()> {
        let path = self.dir.join(name);
        io::write(&path, field)?;
        self.files.push(path);
        Ok(())
    }
}

fn regularize(model: &OperatorModel, grid: &Grid, components: usize, epsilon: Option<f64>) -> Result<RegularizedModel> {
    let h = grid.spacing();
    model.regularize(epsilon.unwrap_or(h * h), components * grid.dim())
}

// ---------------------------------------------------------------- solve

/// Result of a manufactured solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManufacturedRun {
    pub p: f64,
    pub points: usize,
    pub h: f64,
    pub epsilon: f64,
    pub max_error: f64,
    pub report: SolveReport,
}

/// Regularized solve of the `|x|²/2` family; returns `u`, the exact-data
/// right-hand side `f` and the run summary.
pub fn manufactured_solve(
    grid: &Grid,
    model: &OperatorModel,
    epsilon: Option<f64>,
    settings: &SolverSettings,
) -> Result<(VectorField, ScalarField, ManufacturedRun)> {
    let reg = regularize(model, grid, 1, epsilon)?;
    let m = Paraboloid::new(grid, model.p, model.s);
    let (u, report) = solve_dirichlet(&reg, &m.exact.to_vector(), &m.f.to_vector(), settings)?;
    let max_error = u
        .values()
        .iter()
        .zip(m.exact.values())
        .fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
    let run = ManufacturedRun {
        p: model.p,
        points: grid.shape()[0],
        h: grid.spacing(),
        epsilon: reg.epsilon,
        max_error,
        report,
    };
    Ok((u, m.f, run))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SolveOutput {
    Manufactured(ManufacturedRun),
    FixedPoint(FixedPointReport),
    Coercivity(CoercivityReport),
}

impl SolveOutput {
    pub fn passed(&self) -> bool {
        match self {
            SolveOutput::Manufactured(r) => r.report.converged && r.report.energy_increases() == 0,
            SolveOutput::FixedPoint(r) => r.converged() && r.energy_increases() == 0,
            SolveOutput::Coercivity(r) => r.rows.iter().all(|row| row.status == OuterStatus::Converged),
        }
    }
}

pub fn build_problem(cfg: &ExperimentConfig, grid: &Grid, b: BLaw, amplitude: f64) -> Result<DirichletProblem> {
    let spec = ExperimentConfig::block(&cfg.problem, "problem")?;
    let model = regularize(&cfg.model()?, grid, spec.components, cfg.epsilon)?;
    let mut vspec = spec.v.clone();
    vspec.amplitude *= amplitude;
    let v = vspec.build(grid, spec.components, cfg.seed)?;
    let boundary = spec.boundary.build(grid, spec.components)?;
    let mut problem = DirichletProblem::new(model, v, boundary, b)?;
    problem.settings = spec.settings;
    problem.smallness = spec.smallness;
    Ok(problem)
}

pub fn run_solve(cfg: &ExperimentConfig) -> Result<(Option<VectorField>, SolveOutput)> {
    let grid = cfg.grid.build()?;
    let spec = ExperimentConfig::block(&cfg.problem, "problem")?;
    match spec.rhs {
        RhsSpec::Manufactured => {
            if spec.components != 1 {
                return Err(invalid("problem.components", "the manufactured family is scalar"));
            }
            let (u, _, run) = manufactured_solve(&grid, &cfg.model()?, cfg.epsilon, &spec.settings)?;
            Ok((Some(u), SolveOutput::Manufactured(run)))
        }
        RhsSpec::Coupled { b } => {
            let problem = build_problem(cfg, &grid, b, 1.0)?;
            if spec.epsilon_schedule.is_empty() {
                let (u, rep) = fixed_point_solve(&problem)?;
                Ok((Some(u), SolveOutput::FixedPoint(rep)))
            } else {
                Ok((None, SolveOutput::Coercivity(coercivity_check(&problem, &spec.epsilon_schedule)?)))
            }
        }
    }
}

// ------------------------------------------------------------ potential

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialCsvRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
    pub potential: f64,
    pub dyadic: f64,
    pub dyadic_bound: f64,
    pub wolff: Option<f64>,
}

/// Seeded grid points `x` with `B(x, margin)` inside Ω.
pub fn sample_centers(grid: &Grid, count: usize, margin: f64, seed: u64) -> Vec<Point> {
    let candidates: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.mask()[i] && grid.distance_to_boundary(&grid.point(i)) > margin)
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| grid.point(candidates[rng.gen_range(0..candidates.len())]))
        .collect()
}

pub fn run_potential(cfg: &ExperimentConfig) -> Result<(Vec<PotentialRow>, Vec<PotentialCsvRow>, bool)> {
    let grid = cfg.grid.build()?;
    let spec = ExperimentConfig::block(&cfg.potential, "potential")?;
    let problem = ExperimentConfig::block(&cfg.problem, "problem")?;
    let v = problem.v.build(&grid, problem.components, cfg.seed)?;
    let mut listed = spec.centers.clone();
    if let Some(path) = &spec.centers_file {
        listed.extend(read_centers(Path::new(path))?);
    }
    let centers: Vec<Point> = if !listed.is_empty() {
        listed
            .iter()
            .map(|c| {
                if c.len() != grid.dim() {
                    return Err(invalid("potential.centers", format!("each center needs {} coordinates", grid.dim())));
                }
                let mut p = [0.0; 3];
                p[..c.len()].copy_from_slice(c);
                Ok(p)
            })
            .collect::<Result<_>>()?
    } else if spec.samples == 0 {
        (0..grid.len()).filter(|&i| grid.mask()[i]).map(|i| grid.point(i)).collect()
    } else {
        sample_centers(&grid, spec.samples, 0.0, cfg.seed)
    };
    let wolff = spec.wolff.as_ref().map(|w| (w.beta, w.p));
    // P^V(x, 2R) against the dyadic sum at scale R
    let full = potential_rows(&v, &centers, spec.radius, wolff, QuadratureSpec::default())?;
    let doubled = potential_rows(&v, &centers, 2.0 * spec.radius, None, QuadratureSpec::default())?;
    let c = crate::potentials::dyadic_constant(grid.dim());
    let mut passed = true;
    let rows = full
        .iter()
        .zip(&doubled)
        .enumerate()
        .map(|(i, (row, dbl))| {
            let bound = c * row.dyadic;
            passed &= dbl.potential >= bound * (1.0 - 1e-12);
            PotentialCsvRow {
                index: i,
                x: row.x[0],
                y: row.x.get(1).copied().unwrap_or(0.0),
                z: row.x.get(2).copied().unwrap_or(0.0),
                r: row.r,
                potential: row.potential,
                dyadic: row.dyadic,
                dyadic_bound: dbl.potential,
                wolff: row.wolff,
            }
        })
        .collect();
    Ok((full, rows, passed))
}

fn read_centers(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    rdr.records()
        .map(|rec| {
            rec?.iter()
                .map(|x| {
                    x.parse::<f64>().map_err(|e| Error::Config {
                        path: path.display().to_string(),
                        reason: format!("bad coordinate `{x}`: {e}"),
                    })
                })
                .collect()
        })
        .collect()
}

// -------------------------------------------------------------- lorentz

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzCsvRow {
    pub field: usize,
    pub gamma: f64,
    pub q: f64,
    pub quasinorm: f64,
    pub layer_cake: f64,
    pub layer_cake_discrepancy: f64,
    pub norm: f64,
    pub ratio: f64,
    pub square_discrepancy: f64,
}

pub fn run_lorentz(cfg: &ExperimentConfig) -> Result<(Vec<LorentzCsvRow>, bool)> {
    let grid = cfg.grid.build()?;
    let spec = ExperimentConfig::block(&cfg.lorentz, "lorentz")?;
    let rows: Vec<Vec<LorentzCsvRow>> = (0..spec.fields)
        .into_par_iter()
        .map(|i| {
            let f = seeded_field(&grid, cfg.seed, i);
            let profile = rearrange(&f);
            let square = square_identity_check(&f, spec.n)?;
            spec.params
                .iter()
                .map(|&params| {
                    let row = lorentz_row(&profile, params)?;
                    let cake = layer_cake_quasinorm(&f, params)?;
                    let rel = if row.quasinorm > 0.0 { (cake - row.quasinorm).abs() / row.quasinorm } else { cake.abs() };
                    Ok(LorentzCsvRow {
                        field: i,
                        gamma: params.gamma,
                        q: params.q,
                        quasinorm: row.quasinorm,
                        layer_cake: cake,
                        layer_cake_discrepancy: rel,
                        norm: row.norm,
                        ratio: row.ratio,
                        square_discrepancy: square.relative_discrepancy,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<LorentzCsvRow> = rows.into_iter().flatten().collect();
    let passed = rows
        .iter()
        .all(|r| r.layer_cake_discrepancy <= 1e-8 && r.square_discrepancy <= 1e-8 && hunt_window(r));
    Ok((rows, passed))
}

/// `[f] ≤ ‖f‖ ≤ γ' [f]` for `γ > 1`, `q ≥ 1`.
fn hunt_window(r: &LorentzCsvRow) -> bool {
    if r.gamma <= 1.0 || r.q < 1.0 {
        return true;
    }
    let conj = r.gamma / (r.gamma - 1.0);
    r.ratio >= 1.0 - 1e-12 && r.ratio <= conj * (1.0 + 1e-12)
}

// --------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub estimate: String,
    pub points: usize,
    pub parameter: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub empirical_constant: f64,
    pub cap: f64,
    pub applicable: bool,
    pub passed: bool,
}

impl VerifyRow {
    fn from_report(r: &EstimateReport, points: usize, parameter: f64) -> Self {
        VerifyRow {
            estimate: r.name.clone(),
            points,
            parameter,
            lhs: r.lhs,
            rhs: r.rhs(),
            empirical_constant: r.empirical_constant,
            cap: r.cap,
            applicable: r.applicable,
            passed: r.passed,
        }
    }

    fn from_degiorgi(r: &DeGiorgiReport, points: usize, index: usize) -> Self {
        VerifyRow {
            estimate: "degiorgi".into(),
            points,
            parameter: index as f64,
            lhs: r.value,
            rhs: r.mean_term + r.potential_term,
            empirical_constant: r.empirical_constant,
            cap: r.cap,
            applicable: true,
            passed: r.passed && r.levels_monotone(),
        }
    }
}

/// Full output of one verification suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOutput {
    pub estimate: EstimateName,
    pub rows: Vec<VerifyRow>,
    pub solves_converged: bool,
    pub max_constant: f64,
    pub passed: bool,
}

fn ball_fraction(cfg: &ExperimentConfig, fraction: f64) -> Ball {
    Ball {
        center: cfg.grid.center(),
        radius: fraction * cfg.grid.extent,
    }
}

/// Levels `k_i = i/levels · max_{B_R} v`, `i = 0..levels`.
fn level_sweep(v: &ScalarField, ball: &Ball, levels: usize) -> Result<Vec<f64>> {
    let top = crate::fields::sup_norm(v, &Region::ball(*ball))?;
    Ok((0..levels).map(|i| top * i as f64 / levels as f64).collect())
}

fn verify_on_grid(cfg: &ExperimentConfig, spec: &VerifySpec, caps: &Caps, grid: &Grid) -> Result<(Vec<VerifyRow>, bool)> {
    let points = grid.shape()[0];
    let model = cfg.model()?;
    let settings = cfg.problem.as_ref().map(|p| p.settings).unwrap_or_default();
    let ball = ball_fraction(cfg, spec.radius);
    let mut rows = Vec::new();
    let converged;
    match spec.estimate {
        EstimateName::Linear => {
            let reg = regularize(&model, grid, 1, cfg.epsilon)?;
            let n = grid.dim();
            let matrix: Vec<f64> = (0..n).map(|k| [0.6, 0.8, 0.0][k]).collect();
            let bd = BoundarySpec::Affine { matrix, offset: vec![0.1] }.build(grid, 1)?;
            let zero = VectorField::zeros(grid, 1);
            let (u, rep) = solve_dirichlet(&reg, &bd, &zero, &settings)?;
            converged = rep.converged;
            let r = check_gradient_bound(&u, &reg, &zero, &ball, BoundVariant::Apl, spec.t, caps.linear)?;
            rows.push(VerifyRow::from_report(&r, points, model.p));
        }
        EstimateName::Apl | EstimateName::Caccioppoli | EstimateName::Oscillation | EstimateName::Degiorgi => {
            let (u, f, run) = manufactured_solve(grid, &model, cfg.epsilon, &settings)?;
            converged = run.report.converged;
            let reg = regularize(&model, grid, 1, cfg.epsilon)?;
            let v = f.to_vector();
            match spec.estimate {
                EstimateName::Apl => {
                    let r = check_gradient_bound(&u, &reg, &v, &ball, BoundVariant::Apl, spec.t, caps.apl)?;
                    rows.push(VerifyRow::from_report(&r, points, model.p));
                }
                EstimateName::Caccioppoli | EstimateName::Oscillation => {
                    let bern = bernstein_v(&u, &reg)?;
                    let tv = tilde_v(&v, &u, &reg, &ball, TildeVariant::Standard)?;
                    let datum = ExcessDatum::new(bern.clone(), tv, ball, 0.0)?;
                    for k in level_sweep(&bern, &ball, spec.levels)? {
                        let d = datum.with_level(k)?;
                        let r = if spec.estimate == EstimateName::Caccioppoli {
                            caccioppoli_check(&d, caps.caccioppoli)?
                        } else {
                            oscillation_check(&d, admissible_d(&d)?, None, caps.oscillation)?
                        };
                        rows.push(VerifyRow::from_report(&r, points, k));
                    }
                }
                _ => {
                    let r = spec.radius * cfg.grid.extent * 0.25;
                    let centers = sample_centers(grid, spec.centers, 2.0 * r, cfg.seed);
                    let bern = bernstein_v(&u, &reg)?;
                    let reports: Vec<DeGiorgiReport> = centers
                        .par_iter()
                        .map(|x| {
                            let tv = tilde_v(&v, &u, &reg, &Ball { center: *x, radius: 2.0 * r }, TildeVariant::Standard)?;
                            degiorgi_iterate(&bern, &tv, x, r, spec.delta, caps.degiorgi)
                        })
                        .collect::<Result<_>>()?;
                    rows.extend(reports.iter().enumerate().map(|(i, r)| VerifyRow::from_degiorgi(r, points, i)));
                }
            }
        }
        EstimateName::Aes1 | EstimateName::Aes2 => {
            let problem_spec = ExperimentConfig::block(&cfg.problem, "problem")?;
            let RhsSpec::Coupled { b } = problem_spec.rhs else {
                return Err(invalid("problem.rhs", "aes checks need a coupled right-hand side"));
            };
            let problem = build_problem(cfg, grid, b, 1.0)?;
            let (u, rep) = fixed_point_solve(&problem)?;
            converged = rep.converged();
            let variant = if spec.estimate == EstimateName::Aes1 {
                BoundVariant::Aes1 { gamma: b.gamma() }
            } else {
                BoundVariant::Aes2 { gamma: b.gamma(), q: b.q() }
            };
            let cap = if spec.estimate == EstimateName::Aes1 { caps.aes1 } else { caps.aes2 };
            let v = crate::solver::truncate_v(&problem.v, problem.epsilon())?;
            let r = check_gradient_bound(&u, &problem.model, &v, &ball, variant, spec.t, cap)?;
            rows.push(VerifyRow::from_report(&r, points, b.q()));
        }
        EstimateName::GeneralGrowth => {
            let (u, f, run) = manufactured_solve(grid, &model, cfg.epsilon, &settings)?;
            converged = run.report.converged;
            let reg = regularize(&model, grid, 1, cfg.epsilon)?;
            let r = check_gradient_bound(&u, &reg, &f.to_vector(), &ball, BoundVariant::GeneralGrowth, spec.t, caps.general_growth)?;
            rows.push(VerifyRow::from_report(&r, points, model.p));
        }
        EstimateName::LorentzLipschitz => {
            let problem_spec = ExperimentConfig::block(&cfg.problem, "problem")?;
            let b = match problem_spec.rhs {
                RhsSpec::Coupled { b } => b,
                RhsSpec::Manufactured => BLaw::Unit,
            };
            let problem = build_problem(cfg, grid, b, 1.0)?;
            let (u, rep) = fixed_point_solve(&problem)?;
            converged = rep.converged();
            let inner = Region::ball(ball_fraction(cfg, 0.5 * spec.radius));
            let outer = Region::ball(ball);
            let r = check_lorentz_lipschitz(&u, &problem.model, &problem.v, &inner, &outer, caps.lorentz_lipschitz)?;
            rows.push(VerifyRow::from_report(&r, points, model.p));
        }
    }
    Ok((rows, converged))
}

/// Half of the largest `d` with `|½B ∩ {v > k}| ≤ d⁻² ∫_{½B} (v-k)₊²`.
pub fn admissible_d(datum: &ExcessDatum) -> Result<f64> {
    let half = datum.ball.scaled(0.5);
    let k = datum.k;
    let excess = datum.v.map(|x| (x - k).max(0.0).powi(2));
    let level = datum.v.map(|x| if x > k { 1.0 } else { 0.0 });
    let mass = ball_integral(&excess, &half)?;
    let measure = ball_integral(&level, &half)?;
    if measure == 0.0 || mass == 0.0 {
        return Ok(1.0);
    }
    Ok(0.5 * (mass / measure).sqrt())
}

pub fn run_verify(cfg: &ExperimentConfig, caps: &Caps) -> Result<VerifyOutput> {
    let spec = ExperimentConfig::block(&cfg.verify, "verify")?;
    let grids: Vec<Grid> = if spec.refinements.is_empty() {
        vec![cfg.grid.build()?]
    } else {
        spec.refinements.iter().map(|&p| cfg.grid.build_with_points(p)).collect::<Result<_>>()?
    };
    let mut rows = Vec::new();
    let mut converged = true;
    for g in &grids {
        let (r, c) = verify_on_grid(cfg, spec, caps, g)?;
        rows.extend(r);
        converged &= c;
    }
    let max_constant = rows.iter().map(|r| r.empirical_constant).fold(0.0, f64::max);
    let passed = converged && rows.iter().all(|r| r.passed);
    Ok(VerifyOutput {
        estimate: spec.estimate,
        rows,
        solves_converged: converged,
        max_constant,
        passed,
    })
}

// ---------------------------------------------------------------- hodge

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HodgeRow {
    pub sample: usize,
    pub delta: f64,
    pub t: f64,
    pub h_norm: f64,
    pub dw_norm: f64,
    pub ratio: Option<f64>,
    pub divergence: f64,
    pub passed: bool,
}

pub fn run_hodge(cfg: &ExperimentConfig, caps: &Caps) -> Result<(Vec<HodgeRow>, bool)> {
    let grid = cfg.grid.build()?;
    let spec = ExperimentConfig::block(&cfg.hodge, "hodge")?;
    let mut deltas = vec![0.0];
    deltas.extend(spec.deltas.iter().copied().filter(|&d| d != 0.0));
    let rows: Vec<Vec<HodgeRow>> = (0..spec.samples)
        .into_par_iter()
        .map(|i| {
            let w = random_sine_series(&grid, 1, spec.modes, cfg.seed.wrapping_add(i as u64));
            deltas
                .iter()
                .map(|&delta| {
                    let r: HodgeReport = hodge_rigidity_check(&w, delta, spec.t)?;
                    let passed = match r.ratio {
                        Some(ratio) => ratio <= caps.hodge,
                        None => r.h_norm <= 1e-8,
                    };
                    Ok(HodgeRow {
                        sample: i,
                        delta,
                        t: spec.t,
                        h_norm: r.h_norm,
                        dw_norm: r.dw_norm,
                        ratio: r.ratio,
                        divergence: r.divergence,
                        passed,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<HodgeRow> = rows.into_iter().flatten().collect();
    let passed = rows.iter().all(|r| r.passed);
    Ok((rows, passed))
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub p: f64,
    pub points: usize,
    pub h: f64,
    pub epsilon: f64,
    pub amplitude: f64,
    pub converged: bool,
    pub newton_iterations: usize,
    pub energy_increases: usize,
    pub max_error: Option<f64>,
    pub observed_order: Option<f64>,
    pub apl_constant: f64,
    pub passed: bool,
}

pub fn run_sweep(cfg: &ExperimentConfig, caps: &Caps) -> Result<(Vec<SweepRow>, bool)> {
    let spec = ExperimentConfig::block(&cfg.sweep, "sweep")?;
    let base = cfg.model()?;
    let problem = ExperimentConfig::block(&cfg.problem, "problem")?;
    let eps: Vec<Option<f64>> = if spec.epsilon.is_empty() { vec![None] } else { spec.epsilon.iter().map(|&e| Some(e)).collect() };
    let mut cells = Vec::new();
    for &p in &spec.p {
        for &e in &eps {
            for &a in &spec.amplitude {
                for &n in &spec.points {
                    cells.push((p, n, e, a));
                }
            }
        }
    }
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .enumerate()
        .map(|(cell, &(p, points, e, amplitude))| {
            let grid = cfg.grid.build_with_points(points)?;
            let model = OperatorModel { p, ..base.clone() }.new()?;
            let ball = ball_fraction(cfg, 0.4);
            let (converged, iters, increases, err, apl, eps_used) = match problem.rhs {
                RhsSpec::Manufactured => {
                    let (u, f, run) = manufactured_solve(&grid, &model, e, &problem.settings)?;
                    let reg = regularize(&model, &grid, 1, e)?;
                    let v = f.to_vector().scale(amplitude);
                    let r = check_gradient_bound(&u, &reg, &v, &ball, BoundVariant::Apl, None, caps.apl)?;
                    (
                        run.report.converged,
                        run.report.iterations,
                        run.report.energy_increases(),
                        Some(run.max_error),
                        r.empirical_constant,
                        run.epsilon,
                    )
                }
                RhsSpec::Coupled { b } => {
                    let mut local = cfg.clone();
                    local.model = Some(model.clone());
                    local.epsilon = e;
                    let prob = build_problem(&local, &grid, b, amplitude)?;
                    let (u, rep) = fixed_point_solve(&prob)?;
                    let v = crate::solver::truncate_v(&prob.v, prob.epsilon())?;
                    let r = check_gradient_bound(&u, &prob.model, &v, &ball, BoundVariant::Apl, None, caps.apl)?;
                    (
                        rep.converged(),
                        rep.inner.iter().map(|i| i.iterations).sum(),
                        rep.energy_increases(),
                        None,
                        r.empirical_constant,
                        prob.epsilon(),
                    )
                }
            };
            Ok(SweepRow {
                cell,
                p,
                points,
                h: grid.spacing(),
                epsilon: eps_used,
                amplitude,
                converged,
                newton_iterations: iters,
                energy_increases: increases,
                max_error: err,
                observed_order: None,
                apl_constant: apl,
                passed: converged && increases == 0 && apl <= caps.apl,
            })
        })
        .collect::<Result<_>>()?;
    // observed order between consecutive refinements of the same (p, ε, amplitude)
    for i in 1..rows.len() {
        let (a, b) = (&rows[i - 1], &rows[i]);
        if a.p == b.p && a.epsilon_group() == b.epsilon_group() && a.amplitude == b.amplitude && b.points > a.points {
            if let (Some(ea), Some(eb)) = (a.max_error, b.max_error) {
                if ea > 0.0 && eb > 0.0 {
                    let order = (ea / eb).ln() / (a.h / b.h).ln();
                    rows[i].observed_order = Some(order);
                }
            }
        }
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok((rows, passed))
}

impl SweepRow {
    fn epsilon_group(&self) -> Option<u64> {
        // rows regularized with h² share a group regardless of h
        if (self.epsilon - self.h * self.h).abs() <= 1e-15 {
            None
        } else {
            Some(self.epsilon.to_bits())
        }
    }
}

// ------------------------------------------------------------ frontend

#[derive(Debug, Parser)]
#[command(name = "plaplab", version, about = "Numerical laboratory for p-Laplacian systems with potentials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "PLAPLAB_THREADS")]
    pub threads: Option<usize>,
    /// Acceptance caps (JSON); defaults to the frozen caps.
    #[arg(long, global = true)]
    pub cap_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Dirichlet or fixed-point solve.
    Solve,
    /// P^V, dyadic and Wolff potentials at sampled centers.
    Potential,
    /// Rearrangements, Lorentz norms and the square identity on seeded fields.
    Lorentz,
    /// Estimate suite named in the `verify` block.
    Verify,
    /// Hodge rigidity δ-sweep.
    Hodge,
    /// Cross product of p, grid, ε and V amplitude.
    Sweep,
}

/// Runs one command with already loaded inputs.
pub fn execute(command: Command, cfg: &ExperimentConfig, caps: &Caps, out: &Path) -> Result<RunOutcome> {
    let mut w = Writer::new(out)?;
    let passed = match command {
        Command::Solve => {
            let (u, output) = run_solve(cfg)?;
            if let Some(u) = u {
                w.field("solution.plf", &u)?;
            }
            w.json("solve.json", &output)?;
            output.passed()
        }
        Command::Potential => {
            let (_, rows, passed) = run_potential(cfg)?;
            w.csv("potential.csv", &rows)?;
            w.json("potential.json", &serde_json::json!({ "dyadic_inequality_holds": passed, "rows": rows.len() }))?;
            passed
        }
        Command::Lorentz => {
            let (rows, passed) = run_lorentz(cfg)?;
            w.csv("lorentz.csv", &rows)?;
            w.json("lorentz.json", &serde_json::json!({ "passed": passed, "rows": rows.len() }))?;
            passed
        }
        Command::Verify => {
            let output = run_verify(cfg, caps)?;
            w.csv("verify.csv", &output.rows)?;
            w.json("verify.json", &output)?;
            output.passed
        }
        Command::Hodge => {
            let (rows, passed) = run_hodge(cfg, caps)?;
            w.csv("hodge.csv", &rows)?;
            let max_ratio = rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max);
            w.json("hodge.json", &serde_json::json!({ "passed": passed, "max_ratio": max_ratio }))?;
            passed
        }
        Command::Sweep => {
            let (rows, passed) = run_sweep(cfg, caps)?;
            w.csv("sweep.csv", &rows)?;
            w.json("sweep.json", &serde_json::json!({ "passed": passed, "cells": rows.len() }))?;
            passed
        }
    };
    Ok(RunOutcome { passed, files: w.files })
}

/// Parses arguments, runs and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(&cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.passed {
                0
            } else {
                eprintln!("plaplab: at least one report failed");
                1
            }
        }
        Err(e) => {
            eprintln!("plaplab: {e}");
            2
        }
    }
}

fn run_cli(cli: &Cli) -> Result<RunOutcome> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config {
        path: "<none>".into(),
        reason: "--config is required".into(),
    })?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let caps = match &cli.cap_file {
        Some(p) => Caps::from_file(p)?,
        None => Caps::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("plaplab-out"));
    let run = || execute(cli.command, &cfg, &caps, &out);
    match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| invalid("threads", e.to_string()))?
            .install(run),
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "seed": 3,
                "grid": {"dim": 2, "points": 17},
                "model": {"variant": "p-laplace", "p": 3.0},
                "problem": {"v": {"source": {"kind": "constant"}}, "rhs": {"kind": "manufactured"}}
            }"#,
            "inline",
        )
        .unwrap()
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"grid": {"dim": 2, "points": "x"}}"#, "inline").unwrap_err();
        assert!(err.to_string().contains("grid.points"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"grid": {"dim": 2, "points": 5, "bogus": 1}}"#, "inline").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn linear_verify_passes() {
        let mut cfg = base();
        cfg.verify = Some(VerifySpec {
            estimate: EstimateName::Linear,
            radius: 0.4,
            levels: 10,
            centers: 10,
            delta: 0.5,
            t: None,
            refinements: vec![],
        });
        let out = run_verify(&cfg, &Caps::default()).unwrap();
        assert!(out.passed, "{out:?}");
        assert!(out.max_constant <= 1.0);
    }

    #[test]
    fn sample_centers_respect_margin() {
        let g = Grid::cube(2, 21, 0.0, 1.0).unwrap();
        let c = sample_centers(&g, 30, 0.3, 1);
        assert_eq!(c.len(), 30);
        assert!(c.iter().all(|x| g.distance_to_boundary(x) > 0.3));
        assert_eq!(c, sample_centers(&g, 30, 0.3, 1));
    }
}
