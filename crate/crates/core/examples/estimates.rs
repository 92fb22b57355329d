//! Caccioppoli, oscillation, De Giorgi and gradient bounds on a manufactured solution.

use plaplab::cli::{admissible_d, manufactured_solve, sample_centers};
use plaplab::estimates::{
    bernstein_v, caccioppoli_check, check_gradient_bound, degiorgi_iterate, oscillation_check, tilde_v, BoundVariant,
    Caps, ExcessDatum, TildeVariant,
};
use plaplab::fields::{Ball, Grid};
use plaplab::models::OperatorModel;
use plaplab::solver::SolverSettings;

fn main() -> plaplab::Result<()> {
    let caps = Caps::default();
    let grid = Grid::cube(2, 49, 0.25, 1.0)?;
    let model = OperatorModel::p_laplace(3.0, 0.0)?;
    let (u, f, run) = manufactured_solve(&grid, &model, None, &SolverSettings::default())?;
    let reg = model.regularize(run.epsilon, 2)?;
    let v = f.to_vector();
    let ball = Ball::new(&[0.75, 0.75], 0.3);

    let apl = check_gradient_bound(&u, &reg, &v, &ball, BoundVariant::Apl, None, caps.apl)?;
    println!("gradient bound: lhs {:.4}, rhs {:.4}, constant {:.4}", apl.lhs, apl.rhs(), apl.empirical_constant);

    let bern = bernstein_v(&u, &reg)?;
    let datum = ExcessDatum::new(bern.clone(), tilde_v(&v, &u, &reg, &ball, TildeVariant::Standard)?, ball, 0.0)?;
    let top = bern.max();
    for i in 0..5 {
        let d = datum.with_level(top * i as f64 / 5.0)?;
        let cac = caccioppoli_check(&d, caps.caccioppoli)?;
        let osc = oscillation_check(&d, admissible_d(&d)?, None, caps.oscillation)?;
        println!(
            "k = {:.3}: caccioppoli {:.4}, oscillation {}",
            d.k,
            cac.empirical_constant,
            if osc.applicable { format!("{:.4}", osc.empirical_constant) } else { "n/a".into() }
        );
    }

    for x in sample_centers(&grid, 5, 0.2, 1) {
        let tv = tilde_v(&v, &u, &reg, &Ball { center: x, radius: 0.2 }, TildeVariant::Standard)?;
        let rep = degiorgi_iterate(&bern, &tv, &x, 0.1, 0.5, caps.degiorgi)?;
        println!(
            "De Giorgi at ({:.3}, {:.3}): v = {:.4}, {} levels, constant {:.4}",
            x[0],
            x[1],
            rep.value,
            rep.levels.len(),
            rep.empirical_constant
        );
    }
    Ok(())
}
