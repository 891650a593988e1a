#![no_main]

use libfuzzer_sys::fuzz_target;
use oversub::trace::parse_servers;

fuzz_target!(|data: &[u8]| {
    if let Ok(servers) = parse_servers(data, "servers.csv") {
        for s in &servers {
            assert!(s.capacity.is_nonnegative() && s.capacity.is_finite());
        }
    }
});
