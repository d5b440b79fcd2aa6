//! Replays the checked-in fuzz seeds through the parsers with the same
//! round-trip assertions the fuzz targets make, and pins each seed's outcome.

use std::fs;
use std::path::PathBuf;

use ltt_core::data_io::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels};
use ltt_core::student_field::{from_json, to_json};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn check(target: &str, accepted: &[&str], parse: impl Fn(&[u8]) -> bool) {
    for (name, bytes) in seeds(target) {
        let want = accepted.contains(&name.as_str());
        assert_eq!(parse(&bytes), want, "{target}/{name}");
    }
}

#[test]
fn idx_image_seeds() {
    check(
        "idx_images",
        &["two_3x2", "empty", "mnist_first"],
        |b| match parse_idx_images(b) {
            Ok(images) => {
                assert_eq!(parse_idx_images(&encode_idx_images(&images)).unwrap(), images);
                true
            }
            Err(_) => false,
        },
    );
}

#[test]
fn idx_label_seeds() {
    check("idx_labels", &["ten", "empty"], |b| match parse_idx_labels(b) {
        Ok(labels) => {
            assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
            true
        }
        Err(_) => false,
    });
}

#[test]
fn checkpoint_seeds() {
    check("checkpoint_json", &["valid_small.json"], |b| {
        let Ok(text) = std::str::from_utf8(b) else { return false };
        match from_json(text) {
            Ok(params) => {
                assert_eq!(from_json(&to_json(&params)).unwrap(), params);
                true
            }
            Err(_) => false,
        }
    });
}
