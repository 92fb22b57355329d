//! Hodge decomposition of |Dw|^{-δ} Dw and the rigidity ratio as δ grows.

use plaplab::catalog::random_sine_series;
use plaplab::estimates::hodge_rigidity_check;
use plaplab::fields::Grid;

fn main() -> plaplab::Result<()> {
    let grid = Grid::cube(2, 49, 0.0, 1.0)?;
    let t = 2.5;
    for seed in 0..3 {
        let w = random_sine_series(&grid, 1, 4, seed);
        for delta in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let rep = hodge_rigidity_check(&w, delta, t)?;
            println!(
                "seed {seed} delta {delta:<4}: |H| = {:.3e}, |Dw| = {:.4}, ratio {}",
                rep.h_norm,
                rep.dw_norm,
                rep.ratio.map_or("-".into(), |r| format!("{r:.4}"))
            );
        }
    }
    Ok(())
}
