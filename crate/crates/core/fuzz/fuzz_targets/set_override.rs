#![no_main]

use libfuzzer_sys::fuzz_target;
use phasekit::config::{parse_set_override, RunConfig};
use phasekit::model::builtin::ModelRegistry;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut cfg = RunConfig::default();
    for item in text.split('\n') {
        if let Ok(ov) = parse_set_override(item) {
            let _ = cfg.apply(&ov);
        }
    }
    let _ = cfg.resolve(&ModelRegistry::builtin());
});
