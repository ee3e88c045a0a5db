#![no_main]

use automan::remote::sync::parse_find_output;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    let manifest = parse_find_output(bytes);
    assert!(manifest.len() <= bytes.iter().filter(|b| **b == 0).count() + 1);
});
