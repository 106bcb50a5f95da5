#![no_main]

use e91sim::report::{parse_report_json, report_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(report) = parse_report_json(text) else {
        return;
    };
    let json = report_to_json(&report).expect("parsed reports serialize");
    assert_eq!(
        parse_report_json(&json).expect("serialized reports parse"),
        report
    );
});
