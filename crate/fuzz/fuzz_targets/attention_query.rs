#![no_main]

use libfuzzer_sys::fuzz_target;
use probattn_annotation_service::api;

fuzz_target!(|data: &[u8]| {
    if let Ok(query) = std::str::from_utf8(data) {
        if let Err(e) = api::parse_unit_param(Some(query)) {
            assert_eq!(e.status, 400);
        }
    }
});
