#![no_main]

use libfuzzer_sys::fuzz_target;
use phasekit::config::RunConfig;
use phasekit::model::builtin::ModelRegistry;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::from_toml_str(text) else { return };
    if cfg.resolve(&ModelRegistry::builtin()).is_ok() {
        // a valid config must survive a round trip
        let encoded = toml::to_string(&cfg).expect("valid config serializes");
        assert_eq!(RunConfig::from_toml_str(&encoded).expect("re-parses"), cfg);
    }
});
