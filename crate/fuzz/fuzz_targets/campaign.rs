#![no_main]

use std::path::Path;

use automan::campaign::CampaignFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(c) = CampaignFile::parse(text, Path::new("root"), "campaign.toml") {
        for p in &c.problems {
            let _ = p.get_commands();
        }
        let _ = c.generated_dirs();
        let _ = c.programs();
    }
});
