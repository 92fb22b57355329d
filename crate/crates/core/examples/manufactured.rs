//! Convergence of the regularized solver on u = |x|²/2.
//!
//! `cargo run --release --example manufactured -- 9 17 33 65`

use plaplab::cli::manufactured_solve;
use plaplab::fields::Grid;
use plaplab::models::OperatorModel;
use plaplab::solver::SolverSettings;

fn main() -> plaplab::Result<()> {
    let mut sizes: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if sizes.is_empty() {
        sizes = vec![9, 17, 33];
    }
    println!("{:>4} {:>6} {:>10} {:>10} {:>7} {:>7}", "p", "points", "max error", "order", "newton", "cg");
    for p in [1.5, 2.0, 3.0, 4.0] {
        let model = OperatorModel::p_laplace(p, 0.0)?;
        let mut prev: Option<(f64, f64)> = None;
        for &points in &sizes {
            let grid = Grid::cube(2, points, 0.25, 1.0)?;
            let (_, _, run) = manufactured_solve(&grid, &model, None, &SolverSettings::default())?;
            let order = match prev {
                _ if run.max_error < 1e-10 => "exact".into(),
                Some((h, e)) if run.max_error > 0.0 => format!("{:.3}", (e / run.max_error).ln() / (h / run.h).ln()),
                _ => "-".into(),
            };
            println!(
                "{p:>4} {points:>6} {:>10.3e} {order:>10} {:>7} {:>7}",
                run.max_error, run.report.iterations, run.report.cg_iterations
            );
            prev = Some((run.h, run.max_error));
        }
    }
    Ok(())
}
