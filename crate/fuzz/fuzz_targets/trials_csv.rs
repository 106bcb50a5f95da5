#![no_main]

use e91sim::report::parse_trials_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_trials_csv(text) {
            assert!(rows
                .iter()
                .all(|r| (-1..=1).contains(&r.alice) && (-1..=1).contains(&r.bob)));
        }
    }
});
