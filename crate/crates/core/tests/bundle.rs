mod common;

use std::path::Path;

use common::{seizure_contract_builtin, read_tree, Fixture};
use mlguard::bundle::{
    write_bundle, BuildError, EntryRole, LoadError, ADAPTER_FILE, CONTRACT_FILE, MANIFEST_FILE,
    WRAPPER_FILE,
};
use mlguard::{build_bundle, load_bundle, parse_contract, FsResolver};

fn build(fx: &Fixture, seed: u64, out: &Path) -> Result<mlguard::Manifest, BuildError> {
    let spec = parse_contract(&std::fs::read_to_string(fx.contract()).unwrap()).unwrap();
    build_bundle(&spec, &FsResolver::new(fx.root()), seed, out)
}

#[test]
fn seizure_contract_bundle_layout() {
    let fx = Fixture::seizure_contract(1);
    let out = fx.path("b");
    let manifest = build(&fx, 7, &out).unwrap();
    let paths: Vec<&str> = manifest.entries.iter().map(|e| e.path.as_str()).collect();
    assert_eq!(
        paths,
        [
            WRAPPER_FILE,
            ADAPTER_FILE,
            CONTRACT_FILE,
            "detectors/Distribution_Matches.json",
            "schemas/schema_eeg-10-20-system-256hz.json",
        ]
    );
    let roles: Vec<EntryRole> = manifest.entries.iter().map(|e| e.role).collect();
    assert_eq!(
        roles,
        [
            EntryRole::Documentation,
            EntryRole::ModelAdapterConfig,
            EntryRole::Contract,
            EntryRole::Detector,
            EntryRole::Schema,
        ]
    );
    assert_eq!(manifest.created_with_seed, 7);
    assert!(manifest.entries.iter().all(|e| e.digest.len() == 64));

    let bundle = load_bundle(&out).unwrap();
    assert_eq!(bundle.manifest, manifest);
    assert_eq!(bundle.contract, parse_contract(&seizure_contract_builtin()).unwrap());
    assert_eq!(bundle.detectors.len(), 1);
    assert_eq!(bundle.schemas.len(), 1);
    let wrapper = std::fs::read_to_string(out.join(WRAPPER_FILE)).unwrap();
    assert!(wrapper.contains("Distribution_Matches"));
}

#[test]
fn double_build_is_byte_identical() {
    let fx = Fixture::seizure_contract(2);
    build(&fx, 7, &fx.path("a")).unwrap();
    build(&fx, 7, &fx.path("b")).unwrap();
    let a = read_tree(&fx.path("a"));
    let b = read_tree(&fx.path("b"));
    assert_eq!(a, b);
    // Rebuilding into an existing bundle replaces it with the same bytes.
    build(&fx, 7, &fx.path("a")).unwrap();
    assert_eq!(read_tree(&fx.path("a")), b);
}

#[test]
fn seed_changes_the_detector() {
    let fx = Fixture::seizure_contract(3);
    let a = build(&fx, 1, &fx.path("a")).unwrap();
    let b = build(&fx, 2, &fx.path("b")).unwrap();
    let det = |m: &mlguard::Manifest| m.entry("detectors/Distribution_Matches.json").unwrap().digest.clone();
    assert_ne!(det(&a), det(&b));
    assert_eq!(a.contract_digest, b.contract_digest);
}

/// Overwrite one byte in place.
fn poke(path: &Path, pos: usize, byte: u8) {
    use std::io::{Seek, SeekFrom, Write};
    let mut f = std::fs::OpenOptions::new().write(true).open(path).unwrap();
    f.seek(SeekFrom::Start(pos as u64)).unwrap();
    f.write_all(&[byte]).unwrap();
}

#[test]
fn every_single_byte_flip_is_caught() {
    let fx = Fixture::seizure_contract(4);
    let out = fx.path("b");
    build(&fx, 0, &out).unwrap();
    let mut flips = 0;
    for (rel, bytes) in read_tree(&out) {
        // Every byte of files up to 4 KiB; 400 spread positions otherwise.
        let step = if bytes.len() <= 4096 { 1 } else { bytes.len() / 400 };
        let path = out.join(&rel);
        for pos in (0..bytes.len()).step_by(step) {
            poke(&path, pos, bytes[pos] ^ 0x01);
            let err = load_bundle(&out).expect_err(&format!("{rel} byte {pos} flip accepted"));
            let named = match &err {
                LoadError::DigestMismatch(p) | LoadError::MissingEntry(p) => p == &rel,
                LoadError::MalformedEntry { path, .. } => path == &rel,
                _ => false,
            };
            assert!(named, "{rel} byte {pos}: {err}");
            poke(&path, pos, bytes[pos]);
            flips += 1;
        }
    }
    assert!(flips > 3500, "{flips}");
    load_bundle(&out).unwrap();
}

#[test]
fn deleted_entry_is_named() {
    let fx = Fixture::seizure_contract(5);
    let out = fx.path("b");
    build(&fx, 0, &out).unwrap();
    std::fs::remove_file(out.join(CONTRACT_FILE)).unwrap();
    match load_bundle(&out) {
        Err(LoadError::MissingEntry(p)) => assert_eq!(p, CONTRACT_FILE),
        other => panic!("{other:?}"),
    }
}

#[test]
fn future_format_version_is_refused() {
    let fx = Fixture::seizure_contract(6);
    let out = fx.path("b");
    build(&fx, 0, &out).unwrap();
    let path = out.join(MANIFEST_FILE);
    let mut manifest: mlguard::Manifest =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    manifest.bundle_format_version = 2;
    manifest.manifest_digest = manifest.self_digest();
    std::fs::write(&path, manifest.to_json()).unwrap();
    assert!(matches!(load_bundle(&out), Err(LoadError::VersionUnsupported(2))));
}

#[test]
fn failed_build_leaves_output_alone() {
    let fx = Fixture::seizure_contract(7);
    let out = fx.path("b");
    build(&fx, 0, &out).unwrap();
    let before = read_tree(&out);
    std::fs::remove_file(fx.path("data/eeg_train.csv")).unwrap();
    let err = build(&fx, 0, &out).unwrap_err();
    assert!(matches!(err, BuildError::ValidationFailed(_)), "{err}");
    assert_eq!(read_tree(&out), before);
}

#[test]
fn foreign_directory_is_not_overwritten() {
    let fx = Fixture::seizure_contract(8);
    let out = fx.path("notes");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("todo.txt"), "keep me").unwrap();
    assert!(matches!(build(&fx, 0, &out), Err(BuildError::OutputOccupied(_))));
    assert_eq!(std::fs::read_to_string(out.join("todo.txt")).unwrap(), "keep me");
}

#[test]
fn too_little_training_data_fails_the_build() {
    let fx = Fixture::new(&seizure_contract_builtin(), 20, 9);
    let err = build(&fx, 0, &fx.path("b")).unwrap_err();
    assert!(
        matches!(&err, BuildError::TrainingFailed { condition, .. } if condition == "Distribution_Matches"),
        "{err}"
    );
    assert!(!fx.path("b").exists());
}

#[test]
fn rewritten_bundle_round_trips() {
    let fx = Fixture::seizure_contract(10);
    build(&fx, 5, &fx.path("a")).unwrap();
    let bundle = load_bundle(&fx.path("a")).unwrap();
    write_bundle(&bundle, &fx.path("b")).unwrap();
    assert_eq!(read_tree(&fx.path("a")), read_tree(&fx.path("b")));
}

