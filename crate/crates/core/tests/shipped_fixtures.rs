//! The files under `fixtures/real_eval` must match their generators. Run
//! with `GRASPCHECK_BLESS=1` to rewrite them.

use std::path::PathBuf;

use graspcheck_core::fixtures::fixture_files;

#[test]
fn shipped_fixtures_match_generators() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/real_eval");
    let bless = std::env::var_os("GRASPCHECK_BLESS").is_some();
    if bless {
        std::fs::create_dir_all(&dir).unwrap();
    }
    for (name, expected) in fixture_files() {
        let path = dir.join(name);
        if bless {
            std::fs::write(&path, &expected).unwrap();
            continue;
        }
        let shipped = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(shipped == expected, "{name} is stale; rerun with GRASPCHECK_BLESS=1");
    }
}
