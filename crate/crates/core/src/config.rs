//! Flat `key = value` parameter files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the
//! [`ModelParams`] field names; unknown or repeated keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::ModelParams;

pub fn parse_config(text: &str, source: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line: i as u64 + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim().to_string();
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(parse_err(format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

pub fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(Error::config(key, format!("expected `on` or `off`, got `{other}`"))),
    }
}

/// Sets one parameter from its textual value.
pub fn apply_entry(params: &mut ModelParams, key: &str, value: &str) -> Result<()> {
    match key {
        "thr1" => params.thr1 = parse_field(key, value)?,
        "thr2" => params.thr2 = parse_field(key, value)?,
        "clu_coef" => params.clu_coef = parse_field(key, value)?,
        "radius" => params.radius = parse_field(key, value)?,
        "input_window" => params.input_window = parse_field(key, value)?,
        "horizon" => params.horizon = parse_field(key, value)?,
        "stride_frac" => params.stride_frac = parse_field(key, value)?,
        "dim_var_frac" => params.dim_var_frac = parse_field(key, value)?,
        "min_matches" => params.min_matches = parse_field(key, value)?,
        "relax_factor" => params.relax_factor = parse_field(key, value)?,
        "max_relax_steps" => params.max_relax_steps = parse_field(key, value)?,
        "relax" => params.relax = parse_switch(key, value)?,
        "coords" => params.coords = value.parse()?,
        other => return Err(Error::config(other, "unknown parameter")),
    }
    Ok(())
}

/// Defaults overridden by the file at `path`, if any.
pub fn load_params(path: Option<&Path>) -> Result<ModelParams> {
    let mut params = ModelParams::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        for (k, v) in parse_config(&text, path)? {
            apply_entry(&mut params, &k, &v)?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::CoordMode;

    #[test]
    fn parses_and_applies() {
        let text = "# tuned\nthr1 = 0.2\n\nhorizon=3\ncoords = raw\nrelax = on\n";
        let entries = parse_config(text, Path::new("c.cfg")).unwrap();
        let mut p = ModelParams::default();
        for (k, v) in &entries {
            apply_entry(&mut p, k, v).unwrap();
        }
        assert_eq!(p.thr1, 0.2);
        assert_eq!(p.horizon, 3);
        assert_eq!(p.coords, CoordMode::Raw);
        assert!(p.relax);
        assert_eq!(p.thr2, ModelParams::default().thr2);
    }

    #[test]
    fn errors_name_the_field() {
        let mut p = ModelParams::default();
        match apply_entry(&mut p, "radius", "two") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "radius"),
            other => panic!("{other:?}"),
        }
        match apply_entry(&mut p, "speed", "1") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "speed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_config("thr1 0.2", Path::new("c")),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("thr1 = 1\nthr1 = 2", Path::new("c")),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
