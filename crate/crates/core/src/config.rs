//! Configuration files.
//!
//! Configs are flat `key = value` text grouped in sections:
//!
//! ```text
//! [geometry]
//! n_cells_per_axis = 55
//! energy_threshold = 0.3
//!
//! [shower]
//! hits_per_gev = 200.0
//! ```
//!
//! A file may also hold a single section's keys at top level. Missing keys take
//! their defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::GeometrySpec;
use crate::showergen::ShowerModelParams;

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Loads section `section` of `path`, falling back to top-level keys.
pub fn load_section<T: DeserializeOwned>(path: &Path, section: &str) -> Result<T> {
    let table = read_table(path)?;
    let body = match table.get(section) {
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => return Err(Error::Config(format!("[{section}] is not a section"))),
        None => table.into_iter().filter(|(_, v)| !v.is_table()).collect(),
    };
    toml::Value::Table(body)
        .try_into()
        .map_err(|e| Error::Config(format!("{} [{section}]: {e}", path.display())))
}

pub fn load_geometry(path: Option<&Path>) -> Result<GeometrySpec> {
    let g: GeometrySpec = match path {
        Some(p) => load_section(p, "geometry")?,
        None => GeometrySpec::default(),
    };
    g.validate()?;
    Ok(g)
}

pub fn load_shower_params(path: Option<&Path>) -> Result<ShowerModelParams> {
    let p: ShowerModelParams = match path {
        Some(p) => load_section(p, "shower")?,
        None => ShowerModelParams::default(),
    };
    p.validate()?;
    Ok(p)
}

/// Renders `value` as a `[section]` block.
pub fn render_section<T: Serialize>(section: &str, value: &T) -> Result<String> {
    let body = toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    Ok(format!("[{section}]\n{body}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[geometry]\nenergy_threshold = 0.5\n\n[shower]\nhits_per_gev = 100.0\n",
        )
        .unwrap();
        let g = load_geometry(Some(&path)).unwrap();
        assert_eq!(g.energy_threshold, 0.5);
        assert_eq!(g.n_cells_per_axis, 55);
        assert_eq!(load_shower_params(Some(&path)).unwrap().hits_per_gev, 100.0);
    }

    #[test]
    fn flat_file_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        std::fs::write(&path, "max_points = 150\n").unwrap();
        assert_eq!(load_geometry(Some(&path)).unwrap().max_points, 150);

        std::fs::write(&path, "n_cells_per_axis = 54\n").unwrap();
        assert!(load_geometry(Some(&path)).is_err());
        std::fs::write(&path, "bogus_key = 1\n").unwrap();
        assert!(load_geometry(Some(&path)).is_err());
        assert!(matches!(
            load_geometry(Some(&dir.path().join("none.toml"))),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn rendered_defaults_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("defaults.toml");
        let text = format!(
            "{}\n{}",
            render_section("geometry", &GeometrySpec::default()).unwrap(),
            render_section("shower", &ShowerModelParams::default()).unwrap()
        );
        std::fs::write(&path, text).unwrap();
        assert_eq!(load_geometry(Some(&path)).unwrap(), GeometrySpec::default());
        assert_eq!(load_shower_params(Some(&path)).unwrap(), ShowerModelParams::default());
    }
}
