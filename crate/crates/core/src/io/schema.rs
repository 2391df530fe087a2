//! JSON schemas of the input documents.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::documents::{BoundaryDocument, ControlDocument, InitialDocument, ProblemDataDocument, TopologyDocument};

/// Directory, next to `problem/`, that holds the schema files.
pub const SCHEMA_DIR: &str = "schemas";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentKind {
    ProblemData,
    Topology,
    Boundary,
    Initial,
    Control,
}

impl DocumentKind {
    pub const ALL: [DocumentKind; 5] = [
        DocumentKind::ProblemData,
        DocumentKind::Topology,
        DocumentKind::Boundary,
        DocumentKind::Initial,
        DocumentKind::Control,
    ];

    pub fn stem(self) -> &'static str {
        match self {
            DocumentKind::ProblemData => "problem_data",
            DocumentKind::Topology => "topology",
            DocumentKind::Boundary => "boundary",
            DocumentKind::Initial => "initial",
            DocumentKind::Control => "control",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.stem())
    }

    pub fn schema_file_name(self) -> String {
        format!("{}.schema.json", self.stem())
    }

    pub fn schema(self) -> Value {
        let schema = match self {
            DocumentKind::ProblemData => schemars::schema_for!(ProblemDataDocument),
            DocumentKind::Topology => schemars::schema_for!(TopologyDocument),
            DocumentKind::Boundary => schemars::schema_for!(BoundaryDocument),
            DocumentKind::Initial => schemars::schema_for!(InitialDocument),
            DocumentKind::Control => schemars::schema_for!(ControlDocument),
        };
        serde_json::to_value(schema).expect("schemas serialize")
    }
}

/// Validates `instance`, returning one `path: message` line per error.
pub fn validate(kind: DocumentKind, instance: &Value) -> std::result::Result<(), Vec<String>> {
    let schema = kind.schema();
    let validator = jsonschema::validator_for(&schema).expect("generated schemas compile");
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| {
            let path = e.instance_path().as_str().to_string();
            let path = if path.is_empty() { "/".to_string() } else { path };
            format!("{}{path}: {e}", kind.file_name())
        })
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Writes every schema into `dir`.
pub fn write_schemas(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for kind in DocumentKind::ALL {
        let path = dir.join(kind.schema_file_name());
        let text = serde_json::to_string_pretty(&kind.schema()).expect("schemas serialize") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Adds a `$schema` reference to every input document in `<dir>/problem/`.
///
/// Missing documents are skipped. Running it twice leaves the files unchanged.
pub fn insert_schema_keys(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let problem = dir.join(super::bundle::PROBLEM_DIR);
    if !problem.is_dir() {
        return Err(Error::Invalid(vec![format!(
            "{}: missing problem/ subdirectory",
            dir.display()
        )]));
    }
    let mut changed = Vec::new();
    for kind in DocumentKind::ALL {
        let path = problem.join(kind.file_name());
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let Some(obj) = value.as_object_mut() else {
            return Err(Error::Invalid(vec![format!(
                "{}: top level must be an object",
                path.display()
            )]));
        };
        let reference = Value::String(format!("../{SCHEMA_DIR}/{}", kind.schema_file_name()));
        if obj.get("$schema") == Some(&reference) {
            continue;
        }
        obj.insert("$schema".into(), reference);
        let text = serde_json::to_string_pretty(&value).expect("json values serialize") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        changed.push(path);
    }
    write_schemas(&dir.join(SCHEMA_DIR))?;
    Ok(changed)
}
