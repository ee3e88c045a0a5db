#![no_main]

use std::path::Path;

use automan::config::ClusterConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let path = Path::new("config.json");
    if let Ok(cfg) = ClusterConfig::parse(text, path) {
        let again = ClusterConfig::parse(&cfg.to_json(), path).expect("written config parses");
        assert_eq!(again, cfg);
    }
});
