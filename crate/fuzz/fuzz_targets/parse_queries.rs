#![no_main]

use libfuzzer_sys::fuzz_target;
use probattn::format;

fuzz_target!(|data: &[u8]| {
    if let Ok(queries) = format::parse_queries_unchecked(data) {
        let text = format::queries_to_text(&queries);
        assert_eq!(format::parse_queries_unchecked(text.as_bytes()).unwrap(), queries);
    }
});
