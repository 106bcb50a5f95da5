#![no_main]

use e91sim::config::ConfigDocument;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(doc) = ConfigDocument::from_toml(text) else {
        return;
    };
    let _ = doc.session_config();
    let again = doc.to_toml().expect("accepted documents serialize");
    let back = ConfigDocument::from_toml(&again).expect("serialized documents parse");
    assert_eq!(back, doc);
});
