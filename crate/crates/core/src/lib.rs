pub mod dist;
pub mod error;
pub mod fit;
pub mod fixed_point;
pub mod mean_field;
pub mod ph;
pub mod sim;

pub use dist::{parse_dist, DistSpec, PhDocument};
pub use error::{Error, Result};
pub use fixed_point::{FixedPointTable, ModelParams, Truncation};
pub use ph::{PhaseType, PhaseVector};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/phase-type.md")]
    mod phase_type {}
    #[doc = include_str!("../../../book/src/fixed-point.md")]
    mod fixed_point {}
    #[doc = include_str!("../../../book/src/moment-fitting.md")]
    mod moment_fitting {}
    #[doc = include_str!("../../../book/src/mean-field.md")]
    mod mean_field {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
