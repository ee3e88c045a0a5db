#![no_main]

use automan::scheduler::JobStatus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(status) = JobStatus::parse(text) {
        let again = JobStatus::parse(&status.to_json()).expect("written status parses");
        assert_eq!(again, status);
    }
});
