#![no_main]

use libfuzzer_sys::fuzz_target;
use probattn_annotation_service::api;

fuzz_target!(|data: &[u8]| {
    match api::parse_corrections(data) {
        Ok(req) => assert!(req.sweeps != Some(0)),
        Err(e) => assert_eq!(e.status, 422),
    }
});
