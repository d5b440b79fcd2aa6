#![no_main]

use libfuzzer_sys::fuzz_target;
use ltt_core::data_io::{encode_idx_images, parse_idx_images};

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = parse_idx_images(data) {
        let again = parse_idx_images(&encode_idx_images(&images)).expect("re-encoded images parse");
        assert_eq!(again, images);
    }
});
