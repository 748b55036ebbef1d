//! Viscosity supersolutions of the p-Laplace equation checked numerically
//! through q-power infimal convolutions.

pub mod calculus;
pub mod envelope;
pub mod error;
pub mod field;
pub mod gallery;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
pub use field::{Grid, Point, ScalarField, ShrunkDomain};
pub use gallery::GalleryEntry;
pub use envelope::{EnvelopeParams, EnvelopeResult};
pub use report::VerificationReport;
