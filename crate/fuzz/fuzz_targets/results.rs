#![no_main]

use automan::results::ResultTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(table) = ResultTable::parse(text, "results.csv") {
        let csv = table.to_csv();
        let again = ResultTable::parse(&csv, "results.csv").expect("written table parses");
        assert_eq!(again.to_csv(), csv);
    }
});
