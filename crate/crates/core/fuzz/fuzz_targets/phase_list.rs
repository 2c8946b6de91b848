#![no_main]

use libfuzzer_sys::fuzz_target;
use phasekit::config::PhaseList;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(list) = PhaseList::parse(text) {
        let phases = list.phases();
        assert!(!phases.is_empty());
        assert!(phases.iter().all(|p| (0.0..2.0 * std::f64::consts::PI).contains(p)));
        assert_eq!(PhaseList::parse(&list.to_string()).ok(), Some(list));
    }
});
