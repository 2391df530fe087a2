use std::path::{Path, PathBuf};

use gridflow_core::io::bundle::{load_bundle, Overrides};
use gridflow_core::io::schema::{insert_schema_keys, validate, write_schemas, DocumentKind};
use gridflow_core::Error;
use serde_json::Value;

const FIXTURES: [&str; 6] = [
    "one_pipeline",
    "y_junction",
    "three_bus",
    "coupled",
    "compressor_opt",
    "compressor_free",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn scratch_copy(name: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let dst = dir.path().join("problem");
    std::fs::create_dir_all(&dst).unwrap();
    for entry in std::fs::read_dir(fixture(name).join("problem")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
    }
    dir
}

fn problems(e: Error) -> Vec<String> {
    match e {
        Error::Invalid(list) => list,
        other => panic!("expected an input error, got {other}"),
    }
}

#[test]
fn every_fixture_loads_and_assembles() {
    for name in FIXTURES {
        let bundle = load_bundle(&fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let s = bundle
            .scenario(&Overrides::default())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s.x0.len(), s.model.len(), "{name}");
        assert_eq!(s.times.len(), 49, "{name}");
    }
}

#[test]
fn fixtures_validate_against_emitted_schemas() {
    let out = tempfile::tempdir().unwrap();
    write_schemas(out.path()).unwrap();
    for kind in DocumentKind::ALL {
        let text = std::fs::read_to_string(out.path().join(kind.schema_file_name())).unwrap();
        let schema: Value = serde_json::from_str(&text).unwrap();
        let validator = jsonschema::validator_for(&schema).unwrap();
        for name in FIXTURES {
            let path = fixture(name).join("problem").join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            assert!(validator.is_valid(&doc), "{}", path.display());
        }
    }
}

#[test]
fn missing_problem_directory() {
    let dir = tempfile::tempdir().unwrap();
    let list = problems(load_bundle(dir.path()).unwrap_err());
    assert!(list[0].contains("missing problem/ subdirectory"), "{list:?}");
}

#[test]
fn missing_required_files_are_listed_together() {
    let dir = scratch_copy("one_pipeline");
    std::fs::remove_file(dir.path().join("problem/topology.json")).unwrap();
    std::fs::remove_file(dir.path().join("problem/boundary.json")).unwrap();
    let list = problems(load_bundle(dir.path()).unwrap_err());
    assert_eq!(list.len(), 2, "{list:?}");
    assert!(list.iter().any(|m| m.contains("topology.json")));
    assert!(list.iter().any(|m| m.contains("boundary.json")));
}

#[test]
fn wrong_type_is_reported_with_its_path() {
    let dir = scratch_copy("one_pipeline");
    let path = dir.path().join("problem/topology.json");
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["connections"]["Pipe"][0]["diameter"] = Value::String("wide".into());
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let list = problems(load_bundle(dir.path()).unwrap_err());
    assert!(
        list.iter()
            .any(|m| m.contains("topology.json/connections/Pipe/0/diameter")),
        "{list:?}"
    );
}

#[test]
fn unknown_references_are_enumerated() {
    let dir = scratch_copy("y_junction");
    let path = dir.path().join("problem/topology.json");
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["connections"]["Pipe"][1]["to"] = Value::String("nowhere".into());
    doc["connections"]["Pipe"][2]["from"] = Value::String("elsewhere".into());
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let bundle = load_bundle(dir.path()).unwrap();
    let err = bundle.scenario(&Overrides::default()).unwrap_err().to_string();
    assert!(err.contains("nowhere") && err.contains("elsewhere"), "{err}");
}

#[test]
fn missing_initial_state_points_at_init_steady() {
    let dir = scratch_copy("one_pipeline");
    std::fs::remove_file(dir.path().join("problem/initial.json")).unwrap();
    let bundle = load_bundle(dir.path()).unwrap();
    let list = problems(bundle.scenario(&Overrides::default()).unwrap_err());
    assert!(list.iter().any(|m| m.contains("init-steady")), "{list:?}");
}

#[test]
fn uneven_time_step_is_rejected() {
    let bundle = load_bundle(&fixture("one_pipeline")).unwrap();
    let overrides = Overrides {
        delta_t: Some(1700.0),
        ..Default::default()
    };
    assert!(bundle.scenario(&overrides).is_err());
}

#[test]
fn schema_keys_are_idempotent_and_ignored_by_the_digest() {
    let dir = scratch_copy("compressor_opt");
    let before = load_bundle(dir.path()).unwrap().digest(&Overrides::default());
    let changed = insert_schema_keys(dir.path()).unwrap();
    assert_eq!(changed.len(), 5);
    let snapshot: Vec<String> = changed.iter().map(|p| std::fs::read_to_string(p).unwrap()).collect();
    assert!(insert_schema_keys(dir.path()).unwrap().is_empty());
    for (p, s) in changed.iter().zip(&snapshot) {
        assert_eq!(&std::fs::read_to_string(p).unwrap(), s);
    }
    for kind in DocumentKind::ALL {
        assert!(dir.path().join("schemas").join(kind.schema_file_name()).exists());
    }
    let bundle = load_bundle(dir.path()).unwrap();
    assert_eq!(
        bundle.problem_data.schema.as_deref(),
        Some("../schemas/problem_data.schema.json")
    );
    assert_eq!(bundle.digest(&Overrides::default()), before);
}

#[test]
fn digest_tracks_overrides() {
    let bundle = load_bundle(&fixture("coupled")).unwrap();
    let a = bundle.digest(&Overrides::default());
    let b = bundle.digest(&Overrides {
        seed: Some(1),
        ..Default::default()
    });
    assert_ne!(a, b);
    assert_eq!(a.len(), 64);
}

#[test]
fn emitted_schema_rejects_unknown_keys() {
    let doc =
        serde_json::json!({"time_evolution": {"start_time": 0.0, "end_time": 1.0, "delta_t": 1.0}, "colour": "red"});
    assert!(validate(DocumentKind::ProblemData, &doc).is_err());
}
