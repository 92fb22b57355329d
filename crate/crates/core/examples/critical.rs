//! Fixed-point loop in the critical case q = p - 1 = 1, n = 2: a small V
//! converges, a large one does not.

use plaplab::catalog::{BoundarySpec, VSource, VSpec};
use plaplab::fields::Grid;
use plaplab::models::OperatorModel;
use plaplab::solver::{coercivity_check, fixed_point_solve, BLaw, DirichletProblem};

fn main() -> plaplab::Result<()> {
    let grid = Grid::cube(2, 33, 0.0, 1.0)?;
    let h = grid.spacing();
    let model = OperatorModel::p_laplace(2.0, 0.0)?.regularize(h * h, 2)?;
    let boundary = BoundarySpec::SineProduct.build(&grid, 1)?;
    let b = BLaw::Power { gamma: 1.0, q: 1.0 };
    for amplitude in [0.5, 5.0, 50.0] {
        let v = VSpec::new(VSource::Bumps { count: 3, width: 0.1 }, amplitude).build(&grid, 1, 11)?;
        let problem = DirichletProblem::new(model.clone(), v, boundary.clone(), b)?;
        let (_, rep) = fixed_point_solve(&problem)?;
        let worst = rep.contraction_factors.iter().copied().fold(0.0, f64::max);
        println!(
            "amplitude {amplitude:>5}: {:?} {:?} after {} steps, |V|_Ln = {:.3}, sup P = {:.3}, max contraction {worst:.3}",
            rep.regime, rep.status, rep.outer_iterations, rep.v_ln_norm, rep.sup_potential
        );
    }

    // uniform bounds along ε in a subcritical problem
    let v = VSpec::new(VSource::Bumps { count: 3, width: 0.1 }, 1.0).build(&grid, 1, 11)?;
    let sub = DirichletProblem::new(model, v, boundary, BLaw::Power { gamma: 1.0, q: 0.5 })?;
    let rep = coercivity_check(&sub, &[1e-1, 1e-2, 1e-3, 1e-4])?;
    for row in &rep.rows {
        println!(
            "eps {:.0e}: |Du|_Lp = {:.5}, mass {:.5} <= {:.5}",
            row.epsilon, row.gradient_lp, row.mass, row.young_bound
        );
    }
    Ok(())
}
