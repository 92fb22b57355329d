//! P^V, its dyadic sum and the Wolff potential for a singular V.

use plaplab::catalog::{VSource, VSpec};
use plaplab::fields::Grid;
use plaplab::potentials::{dyadic_constant, p_potential, potential_rows, QuadratureSpec};

fn main() -> plaplab::Result<()> {
    let grid = Grid::cube(2, 129, 0.0, 1.0)?;
    let v = VSpec::new(VSource::Singular { center: vec![0.5, 0.5], alpha: 0.6 }, 1.0).build(&grid, 1, 0)?;
    let centers = [[0.5, 0.5, 0.0], [0.55, 0.5, 0.0], [0.7, 0.4, 0.0], [0.9, 0.9, 0.0]];
    let r = 0.1;
    let rows = potential_rows(&v, &centers, r, Some((0.5, 2.0)), QuadratureSpec::default())?;
    let c = dyadic_constant(2);
    println!("{:>14} {:>10} {:>10} {:>10} {:>12}", "x", "P(x,R)", "dyadic", "Wolff", "P(x,2R)");
    for row in &rows {
        let x = [row.x[0], row.x[1], 0.0];
        let doubled = p_potential(&v, &x, 2.0 * r, QuadratureSpec::default())?.value;
        println!(
            "({:.2}, {:.2}) {:>10.4} {:>10.4} {:>10.4} {:>12.4}{}",
            row.x[0],
            row.x[1],
            row.potential,
            row.dyadic,
            row.wolff.unwrap_or(f64::NAN),
            doubled,
            if doubled >= c * row.dyadic { "" } else { "  dyadic bound violated" }
        );
    }
    Ok(())
}
