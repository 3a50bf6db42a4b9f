//! Teacher-student traffic-flow forecasting.
//!
//! A compact MLP student with identity embeddings and a Gaussian latent
//! bottleneck is trained against ground truth, a teacher-bounded distillation
//! term and spatial/temporal smoothness penalties. Teacher predictions come
//! from a binary file written by any external model, or from a synthetic
//! oracle built from the targets.
//!
//! Module map:
//! - [`gradcore`]: dense tensors, reverse-mode autodiff, finite-difference checks
//! - [`data`]: CSV ingestion, synthetic fields, calendar features, windows, splits
//! - [`model`]: the student network
//! - [`losses`]: every loss term and the weighted total
//! - [`teacher`]: teacher files, oracle teacher, instruction prompt export
//! - [`train`]: Adam, step-decay schedule, early stopping, checkpoints
//! - [`eval`]: metrics and the experiment harnesses

/// `FromStr` plus `as_str` for a fieldless enum with fixed spellings.
macro_rules! string_enum {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl ::std::str::FromStr for $ty {
            type Err = $crate::Error;
            fn from_str(s: &str) -> $crate::Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err($crate::Error::contract(format!(
                        concat!("unknown ", $what, " `{}` (", $($name, " ",)+ ")"),
                        other
                    ))),
                }
            }
        }

        impl $ty {
            pub fn as_str(self) -> &'static str {
                $(if self == $variant { return $name; })+
                unreachable!()
            }
        }
    };
}

mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcore;
pub mod losses;
pub mod model;
pub mod rng;
pub mod teacher;
pub mod train;

pub use error::{Error, Result};
pub use gradcore::{Graph, NodeId, Real, Tensor};
