//! Sampled structure constants of the three operator families.

use plaplab::models::{OperatorModel, Profile, Variant};

fn main() -> plaplab::Result<()> {
    for (variant, profile) in [
        (Variant::PLaplace, Profile::Power),
        (Variant::Uhlenbeck, Profile::Power),
        (Variant::GeneralGrowth, Profile::PowerLog),
    ] {
        for p in [1.5, 2.0, 3.0] {
            let model = OperatorModel::with(variant, profile, p, 0.1)?;
            let rep = model.check_monotonicity(2000, 5, 4);
            let reg = model.regularize(1e-3, 4)?;
            let (nu, big_l) = reg.sample_constants(500, 5);
            println!(
                "{variant:?} p={p}: worst (V)/monotonicity constant {:.3}, regularized nu {:.3} L {:.3}",
                rep.worst(),
                nu,
                big_l
            );
        }
    }
    Ok(())
}
