//! Shared-bandwidth kernel density estimation for event locations on a
//! playing field, compared with exact and entropic 1-Wasserstein distances.
//!
//! The crate is organised around the analysis flow:
//!
//! * [`ingest`] parses event CSVs, filters them and splits them into league,
//!   team and team-vs-opponent subsets.
//! * [`kde`] fits fixed-bandwidth bivariate Gaussian KDEs and evaluates them
//!   on regular grids.
//! * [`bandwidth`] selects a bandwidth per subset by k-fold likelihood
//!   cross-validation and pools the selections by geometric mean.
//! * [`transport`] discretizes grids and computes Wasserstein distances.
//! * [`pipeline`] runs the whole league / team / opponent comparison.
//! * [`render`] writes heatmaps and signed difference maps as PPM images.
//! * [`synth`] generates seeded synthetic seasons with known spatial habits.

pub mod bandwidth;
pub mod error;
pub mod ingest;
pub mod kde;
pub mod numeric;
pub mod pipeline;
pub mod render;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
pub use kde::{Bandwidth, DensityGrid, DensityModel, GridSpec, SampleSet, SignedGrid, Vec2};
