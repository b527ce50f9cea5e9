#![no_main]

use libfuzzer_sys::fuzz_target;
use probattn_annotation_service::api;

fuzz_target!(|data: &[u8]| {
    if let Err(e) = api::parse_create(data) {
        assert_eq!(e.status, 400);
    }
});
