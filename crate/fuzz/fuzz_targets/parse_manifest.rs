#![no_main]

use libfuzzer_sys::fuzz_target;
use oversub::experiment::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<Manifest>(data) {
        let again = serde_json::to_vec(&m).unwrap();
        assert_eq!(serde_json::from_slice::<Manifest>(&again).unwrap(), m);
    }
});
