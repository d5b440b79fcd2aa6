#![no_main]

use libfuzzer_sys::fuzz_target;
use ltt_core::student_field::{from_json, to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(params) = from_json(text) {
        if params
            .layers()
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
        {
            assert_eq!(from_json(&to_json(&params)).unwrap(), params);
        }
    }
});
