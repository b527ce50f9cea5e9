#![no_main]

use libfuzzer_sys::fuzz_target;
use probattn::format;

fuzz_target!(|data: &[u8]| {
    if let Ok(corrections) = format::parse_corrections_bytes(data) {
        let text = format::corrections_to_text(&corrections);
        let again = format::parse_corrections_bytes(text.as_bytes()).expect("written corrections parse");
        assert_eq!(text, format::corrections_to_text(&again));
    }
});
