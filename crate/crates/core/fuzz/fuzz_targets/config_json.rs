#![no_main]

use libfuzzer_sys::fuzz_target;
use phasekit::config::RunConfig;
use phasekit::model::builtin::ModelRegistry;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        let _ = cfg.resolve(&ModelRegistry::builtin());
    }
});
