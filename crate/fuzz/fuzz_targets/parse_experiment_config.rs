#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use oversub::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml(text, Path::new("/base")) {
        assert!(cfg.validate().is_ok());
        assert!(cfg.resolved_policies().is_ok());
        let _ = cfg.hash();
    }
});
