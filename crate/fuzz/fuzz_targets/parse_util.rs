#![no_main]

use libfuzzer_sys::fuzz_target;
use oversub::trace::{parse_util, parse_vms};

// Two VMs, one hour each, so util rows can match or miss.
const VMS: &str = "vm_id,subscription_id,vm_config,cpu_cores,mem_gb,net_gbps,ssd_gb,start_unix,end_unix,offering\n\
vm-a,s1,D2,2,8,1,32,0,3600,iaas\n\
vm-b,s1,D2,2,8,1,32,300,3900,paas\n";

fuzz_target!(|data: &[u8]| {
    let vms = parse_vms(VMS.as_bytes(), "vms.csv").expect("fixed vms parse");
    if let Ok(series) = parse_util(data, "util.csv", &vms) {
        assert_eq!(series.len(), vms.len());
        for (vm, s) in vms.iter().zip(&series) {
            for r in s {
                assert_eq!(r.len(), vm.num_steps());
            }
        }
    }
});
