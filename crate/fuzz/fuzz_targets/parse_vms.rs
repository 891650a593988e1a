#![no_main]

use libfuzzer_sys::fuzz_target;
use oversub::trace::parse_vms;

fuzz_target!(|data: &[u8]| {
    if let Ok(vms) = parse_vms(data, "vms.csv") {
        for vm in &vms {
            assert!(vm.end > vm.start);
            assert!(vm.requested.is_nonnegative() && vm.requested.is_finite());
        }
    }
});
