#![no_main]

use automan::fnmatch::{fnmatch, Pattern};
use libfuzzer_sys::fuzz_target;

// Input is `pattern NUL name`.
fuzz_target!(|text: &str| {
    let (pattern, name) = text.split_once('\0').unwrap_or((text, ""));
    let matched = fnmatch(pattern, name);
    assert_eq!(Pattern::new(pattern).matches(name), matched);
    if !pattern.contains(['*', '?', '[', '\\']) {
        assert_eq!(matched, pattern == name);
    }
});
