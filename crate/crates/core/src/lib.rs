//! Shape-based forecasting of gridded monthly conflict fatalities.
//!
//! The pipeline detects active conflict zones in a cell-month fatality
//! field, turns each zone's recent history into a normalized density cube,
//! searches the full history for windows with a similar shape using an
//! exact Earth Mover's Distance, and forecasts the zone from the most
//! frequent cluster of what followed those windows.
//!
//! Module map:
//! - [`grid`]: loading, aggregating and writing cell-month tables
//! - [`zones`]: active-cell masks, zone labeling, erosion/dilation, coverage
//! - [`cube`]: sequence extraction, density cubes, quarter-turn rotations
//! - [`transport`]: optimal transport, EMD, active-cell ratio, similarity gate
//! - [`matcher`]: rolling-window historical search
//! - [`forecaster`]: reshaping, clustering into scenarios, forecast assembly
//! - [`evaluator`]: metrics, baselines and benchmark comparison tables
//! - [`cli`]: command orchestration behind the `shapegrid` binary

pub mod cli;
pub mod config;
pub mod cube;
pub mod error;
pub mod evaluator;
pub mod forecaster;
pub mod grid;
pub mod matcher;
pub mod params;
pub mod pipeline;
mod simplex;
pub mod toy;
pub mod transport;
mod union_find;
pub mod zones;

pub use error::{Error, Result};
pub use params::{CoordMode, ModelParams};
