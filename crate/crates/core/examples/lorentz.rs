//! Rearrangement, Lorentz quasinorms and the square identity on a seeded field.

use plaplab::catalog::seeded_field;
use plaplab::fields::Grid;
use plaplab::lorentz::{layer_cake_quasinorm, lorentz_row, rearrange, square_identity_check, LorentzParams};

fn main() -> plaplab::Result<()> {
    let grid = Grid::cube(3, 17, 0.0, 1.0)?;
    for index in 0..4 {
        let f = seeded_field(&grid, 9, index);
        let profile = rearrange(&f);
        println!("field {index}: sup {:.4}, support {:.4}", profile.value(0.0), profile.support());
        for (gamma, q) in [(2.0, 1.0), (3.0, 1.0), (3.0, 2.0)] {
            let params = LorentzParams::new(gamma, q)?;
            let row = lorentz_row(&profile, params)?;
            let cake = layer_cake_quasinorm(&f, params)?;
            println!(
                "  L({gamma},{q}): [f] = {:.6}  layer cake = {cake:.6}  ||f|| = {:.6}  ratio {:.4}",
                row.quasinorm, row.norm, row.ratio
            );
        }
        let sq = square_identity_check(&f, 3)?;
        println!(
            "  [|f|²]_L(3/2,1/2) = {:.6}, [f]²_L(3,1) = {:.6}, rel {:.1e}",
            sq.squared_field, sq.squared_norm, sq.relative_discrepancy
        );
    }
    Ok(())
}
