#![no_main]

use e91sim::config::parse_formats;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(formats) = parse_formats(text) {
            assert!(!formats.is_empty());
        }
    }
});
