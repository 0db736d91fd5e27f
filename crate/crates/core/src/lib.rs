//! Certified upper bounds on the worst-case loss of data-poisoning attacks
//! against linear SVMs protected by sphere and slab outlier removal.

pub mod attacks;
pub mod certify;
pub mod data;
pub mod defense;
pub mod error;
pub mod maxoracle;
pub mod model;
pub mod report;
pub mod sdp;
pub mod vecops;

pub use data::{ClassStats, Dataset, Format, GaussianSpec, Label, LabeledPoint};
pub use defense::{DefenseConfig, DefenseKind, FeasibleSet, SphereSlabParams};
pub use error::{Error, Result};
pub use model::{LinearModel, LossReport, TrainConfig};
