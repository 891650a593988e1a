#![no_main]

use libfuzzer_sys::fuzz_target;
use oversub::trace::GenConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = GenConfig::from_toml(text) {
        assert!(cfg.validate().is_ok());
    }
});
