#![no_main]

use libfuzzer_sys::fuzz_target;
use probattn::format;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = format::parse_model_bytes(data) {
        let text = format::model_to_text(&model);
        let again = format::parse_model(&text).expect("written model parses");
        assert_eq!(text, format::model_to_text(&again));
    }
});
