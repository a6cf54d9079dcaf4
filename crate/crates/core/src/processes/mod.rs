//! Problem data: generators, terminal values, finite-variation drivers and barriers.

mod expr;
mod generator;
mod problem;
mod process;

pub use generator::{
    generator_structure_check, Generator, GeneratorForm, GeneratorSpec, SampleBox, Site,
    StructureReport, TimeFunction, ZCondition,
};
pub use problem::{ProblemData, ProblemSpec};
pub(crate) use problem::check_terminal;
pub use process::{BoundProcess, DriverPath, ProcessRole, ProcessSpec};

use crate::error::{Error, Result};

/// `T_k(x) = min(k, max(-k, x))`.
pub fn truncate(k: f64, x: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation level must be nonnegative, got {k}"
        )));
    }
    Ok(x.clamp(-k, k))
}

/// Sign with `sign_hat(0) = 0`.
pub fn sign_hat(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(1.0, 5.0).unwrap(), 1.0);
        assert_eq!(truncate(1.0, -5.0).unwrap(), -1.0);
        assert_eq!(truncate(2.0, 0.5).unwrap(), 0.5);
        assert!(matches!(truncate(-1.0, 0.5), Err(Error::InvalidArgument(_))));
        assert!(truncate(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn sign_hat_examples() {
        assert_eq!(sign_hat(3.2), 1.0);
        assert_eq!(sign_hat(0.0), 0.0);
        assert_eq!(sign_hat(-0.0), 0.0);
        assert_eq!(sign_hat(-7.0), -1.0);
    }

    proptest! {
        #[test]
        fn truncate_is_idempotent_and_one_lipschitz(
            k in 0.0f64..10.0, x in -50.0f64..50.0, y in -50.0f64..50.0,
        ) {
            let tx = truncate(k, x).unwrap();
            prop_assert_eq!(truncate(k, tx).unwrap(), tx);
            prop_assert!((tx - truncate(k, y).unwrap()).abs() <= (x - y).abs());
        }

        #[test]
        fn sign_hat_times_x_is_abs(x in -1e6f64..1e6) {
            prop_assert_eq!(sign_hat(x) * x, x.abs());
        }
    }
}
