#![no_main]

use automan::results::ComparisonTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(table) = ComparisonTable::parse(text) {
        let csv = table.to_csv();
        let again = ComparisonTable::parse(&csv).expect("written table parses");
        assert_eq!(again.to_csv(), csv);
    }
});
