//! Optional TOML run config. Command-line flags take precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use promise_core::{fsio, BoosterParams, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    /// Feature recipe file, relative to the config file.
    pub recipe: Option<PathBuf>,
    /// Booster settings per leg name.
    pub params: BTreeMap<String, BoosterParams>,
    pub breach_cutoff: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = String::from_utf8(fsio::read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c: RunConfig = toml::from_str(&text)?;
        if let Some(r) = &c.recipe {
            c.recipe = Some(path.parent().unwrap_or(Path::new(".")).join(r));
        }
        for leg in c.params.keys() {
            if !["vendor", "warehouse", "shipping"].contains(&leg.as_str()) {
                return Err(Error::Config(format!("params for unknown leg {leg:?}")));
            }
        }
        if let Some(cut) = c.breach_cutoff {
            if !(cut > 0.0 && cut < 1.0) {
                return Err(Error::Config(format!("breach_cutoff must lie in (0, 1), got {cut}")));
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_recipe_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 4\nrecipe = \"r.toml\"\nbreach_cutoff = 0.05\n[params.shipping]\nboosting_iterations = 10\n").unwrap();
        let c = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.recipe.unwrap(), dir.path().join("r.toml"));
        assert_eq!(c.params["shipping"].boosting_iterations, 10);
        assert_eq!(c.params["shipping"].learning_rate, BoosterParams::default().learning_rate);
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        for text in ["breach_cutoff = 1.5", "[params.truck]\nnum_leaves = 3", "colour = 1"] {
            std::fs::write(&p, text).unwrap();
            assert!(RunConfig::load(Some(&p)).is_err(), "{text}");
        }
    }
}
