use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Coordinate convention used when a sequence becomes a density cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordMode {
    /// Every axis rescaled to `[0, 1]`.
    #[default]
    Normalized,
    /// Raw lattice indices, one unit per cell or month.
    Raw,
}

impl FromStr for CoordMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "normalized" => Ok(CoordMode::Normalized),
            "raw" => Ok(CoordMode::Raw),
            other => Err(Error::config(
                "coords",
                format!("expected `normalized` or `raw`, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for CoordMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoordMode::Normalized => "normalized",
            CoordMode::Raw => "raw",
        })
    }
}

/// Tunable model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// EMD threshold; candidates need `emd < thr1`.
    pub thr1: f64,
    /// Active-cell ratio threshold; candidates need `r < thr2`.
    pub thr2: f64,
    /// Cluster distance is `clu_coef * W_lat * W_lon * H`.
    pub clu_coef: f64,
    /// Chebyshev radius for zone labeling.
    pub radius: usize,
    /// Months aggregated to detect zones and to build input sequences.
    pub input_window: usize,
    /// Forecast horizon in months.
    pub horizon: usize,
    /// Window shift as a fraction of the window dimension.
    pub stride_frac: f64,
    /// Relative spread of candidate window dimensions around the input.
    pub dim_var_frac: f64,
    pub min_matches: usize,
    pub relax_factor: f64,
    pub max_relax_steps: usize,
    /// Retry the search with looser thresholds when too few matches are found.
    pub relax: bool,
    pub coords: CoordMode,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            thr1: 0.15,
            thr2: 0.05,
            clu_coef: 0.0054,
            radius: 2,
            input_window: 12,
            horizon: 6,
            stride_frac: 0.5,
            dim_var_frac: 0.25,
            min_matches: 1,
            relax_factor: 1.5,
            max_relax_steps: 3,
            relax: false,
            coords: CoordMode::Normalized,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("thr1", self.thr1),
            ("thr2", self.thr2),
            ("clu_coef", self.clu_coef),
            ("stride_frac", self.stride_frac),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(name, format!("must be > 0, got {value}")));
            }
        }
        if !(self.dim_var_frac.is_finite() && (0.0..1.0).contains(&self.dim_var_frac)) {
            return Err(Error::config("dim_var_frac", "must lie in [0, 1)"));
        }
        if self.radius == 0 {
            return Err(Error::config("radius", "must be >= 1"));
        }
        if self.input_window == 0 {
            return Err(Error::config("input_window", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        if !(self.relax_factor.is_finite() && self.relax_factor > 1.0) {
            return Err(Error::config("relax_factor", "must be > 1"));
        }
        Ok(())
    }

    /// Single-linkage distance cut for a forecast box with `n_dim` cell-months.
    pub fn cluster_distance(&self, n_dim: usize) -> f64 {
        self.clu_coef * n_dim as f64
    }

    /// `key = value` lines recording every parameter, in a fixed order.
    pub fn manifest_lines(&self) -> Vec<String> {
        vec![
            format!("thr1 = {}", self.thr1),
            format!("thr2 = {}", self.thr2),
            format!("clu_coef = {}", self.clu_coef),
            format!("radius = {}", self.radius),
            format!("input_window = {}", self.input_window),
            format!("horizon = {}", self.horizon),
            format!("stride_frac = {}", self.stride_frac),
            format!("dim_var_frac = {}", self.dim_var_frac),
            format!("min_matches = {}", self.min_matches),
            format!("relax_factor = {}", self.relax_factor),
            format!("max_relax_steps = {}", self.max_relax_steps),
            format!("relax = {}", if self.relax { "on" } else { "off" }),
            format!("coords = {}", self.coords),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_non_positive_threshold() {
        let params = ModelParams {
            thr1: 0.0,
            ..ModelParams::default()
        };
        let err = params.validate().unwrap_err();
        assert!(err.to_string().contains("thr1"));
    }

    #[test]
    fn rejects_zero_horizon() {
        let params = ModelParams {
            horizon: 0,
            ..ModelParams::default()
        };
        assert!(params.validate().is_err());
    }

    #[test]
    fn cluster_distance_scales_with_box() {
        let params = ModelParams::default();
        assert!((params.cluster_distance(4 * 4 * 6) - 0.0054 * 96.0).abs() < 1e-15);
    }

    #[test]
    fn coord_mode_parses() {
        assert_eq!("raw".parse::<CoordMode>().unwrap(), CoordMode::Raw);
        assert_eq!("normalized".parse::<CoordMode>().unwrap(), CoordMode::Normalized);
        assert!("degrees".parse::<CoordMode>().is_err());
    }
}
