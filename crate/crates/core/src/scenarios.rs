//! Builtin scenarios, embedded from the shipped example configs so that
//! every builtin is also a worked example of the file format.

use std::path::Path;

use crate::config::{load_config, parse_config, ScenarioConfig};
use crate::error::{Error, Result};

pub const BUILTINS: &[(&str, &str)] = &[
    ("planewave", include_str!("../configs/planewave.toml")),
    ("two-mode-neg-density", include_str!("../configs/two-mode-neg-density.toml")),
    ("two-mode-boosted", include_str!("../configs/two-mode-boosted.toml")),
    ("nonrel-packet", include_str!("../configs/nonrel-packet.toml")),
    ("entangled-pair", include_str!("../configs/entangled-pair.toml")),
    ("offshell-fixture", include_str!("../configs/offshell-fixture.toml")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_config(text).unwrap_or_else(|e| panic!("builtin {n} does not parse: {e}")))
}

/// A path to a config file if one exists there, otherwise a builtin name.
pub fn resolve(arg: &str) -> Result<ScenarioConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return load_config(path);
    }
    builtin(arg).ok_or_else(|| {
        Error::Config(format!(
            "`{arg}` is neither a readable file nor a builtin scenario ({})",
            builtin_names().collect::<Vec<_>>().join(", ")
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::to_toml;

    #[test]
    fn every_builtin_validates_and_round_trips() {
        for (name, _) in BUILTINS {
            let cfg = builtin(name).unwrap();
            assert_eq!(cfg.name, *name);
            let sc = cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = parse_config(&to_toml(&cfg)).unwrap();
            assert_eq!(again, cfg, "{name}");
            let sc2 = again.validate().unwrap();
            assert_eq!(sc2.psi, sc.psi);
            assert_eq!(sc2.controls, sc.controls);
            assert_eq!(sc2.patch, sc.patch);
            assert_eq!(sc2.patch0, sc.patch0);
            assert_eq!(sc2.starts, sc.starts);
        }
    }

    #[test]
    fn shipped_files_match_the_embedded_copies() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        for (name, text) in BUILTINS {
            let on_disk = std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap();
            assert_eq!(&on_disk, text);
        }
        assert_eq!(std::fs::read_dir(&dir).unwrap().count(), BUILTINS.len());
    }

    #[test]
    fn unknown_name_is_a_config_error() {
        assert!(matches!(resolve("no-such-scenario"), Err(Error::Config(_))));
        assert_eq!(resolve("planewave").unwrap().name, "planewave");
    }
}
