//! Replays the fuzz corpus seeds and throws random strings at the parsers.

use std::fs;
use std::path::PathBuf;

use phasekit::config::{parse_set_override, PhaseList, RunConfig};
use phasekit::model::builtin::ModelRegistry;
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let text = fs::read_to_string(&path).unwrap();
            (path, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn toml_seeds_validate_and_round_trip() {
    let reg = ModelRegistry::builtin();
    for (path, text) in seeds("config_toml") {
        let cfg = RunConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.resolve(&reg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let encoded = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml_str(&encoded).unwrap(), cfg, "{}", path.display());
    }
}

#[test]
fn json_seeds_validate() {
    let reg = ModelRegistry::builtin();
    for (path, text) in seeds("config_json") {
        let cfg = RunConfig::from_json_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.resolve(&reg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn override_seeds_apply() {
    let reg = ModelRegistry::builtin();
    for (path, text) in seeds("set_override") {
        let mut cfg = RunConfig::default();
        for item in text.lines() {
            cfg.apply(&parse_set_override(item).unwrap()).unwrap_or_else(|e| panic!("{item}: {e}"));
        }
        cfg.resolve(&reg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn phase_list_seeds_round_trip() {
    for (_, text) in seeds("phase_list") {
        let list = PhaseList::parse(&text).unwrap();
        assert_eq!(PhaseList::parse(&list.to_string()).unwrap(), list);
    }
}

proptest! {
    #[test]
    fn parsers_never_panic(s in "\\PC{0,64}") {
        let _ = PhaseList::parse(&s);
        let _ = RunConfig::from_toml_str(&s);
        let _ = RunConfig::from_json_str(&s);
        if let Ok(ov) = parse_set_override(&s) {
            let _ = RunConfig::default().apply(&ov);
        }
    }

    #[test]
    fn overrides_with_structured_keys(
        key in prop::sample::select(vec!["grid", "tol", "prc.phases", "prc.epsilon", "input", "a", "params.n", "groups.a", "parameters", "format"]),
        value in "[-0-9a-z.,e]{0,12}",
    ) {
        let mut cfg = RunConfig::default();
        if cfg.apply(&parse_set_override(&format!("{key}={value}")).unwrap()).is_ok() {
            let _ = cfg.resolve(&ModelRegistry::builtin());
        }
    }

    #[test]
    fn phase_lists_round_trip(v in prop::collection::vec(0.0..6.28f64, 1..10)) {
        let text = v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",");
        let list = PhaseList::parse(&text).unwrap();
        prop_assert_eq!(PhaseList::parse(&list.to_string()).unwrap(), list);
    }
}
