//! Replays the checked-in TOML config fuzz seeds.

use std::fs;
use std::path::PathBuf;

use ltt_cli::config::RunConfig;

#[test]
fn run_config_seeds() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/run_config_toml");
    let accepted = ["full.toml", "gmm.toml", "tiny_train.toml"];
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).unwrap();
        let parsed = RunConfig::from_toml(&text).and_then(|c| c.validate());
        assert_eq!(parsed.is_ok(), accepted.contains(&name.as_str()), "{name}: {parsed:?}");
        seen += 1;
    }
    assert!(seen >= accepted.len());
}
