use ontodesign_core::project::{Artifacts, Project, ProjectError};
use ontodesign_core::rules::{print_program, write_assignments_csv};
use ontodesign_core::schema::{validate, write_edit_log, DEFAULT_BALANCE_RATIO};

pub const FORMATS: &[&str] = &[
    "tree-json",
    "json",
    "dot",
    "csv",
    "typology-json",
    "typology-dot",
    "program",
    "assignments-csv",
    "features-csv",
    "edit-log",
    "validation",
    "project",
];

#[derive(Debug)]
pub enum ExportError {
    UnknownFormat(String),
    Project(ProjectError),
}

impl From<ProjectError> for ExportError {
    fn from(e: ProjectError) -> Self {
        ExportError::Project(e)
    }
}

impl std::fmt::Display for ExportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExportError::UnknownFormat(x) => write!(f, "unknown format {x:?}; expected one of {}", FORMATS.join(", ")),
            ExportError::Project(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ExportError {}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<String, ExportError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| ExportError::Project(ProjectError::Io {
        path: "<export>".into(),
        source: std::io::Error::other(e),
    }))?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

/// Renders `format`; returns the content type and body.
pub fn export(project: &Project, artifacts: &Artifacts, format: &str) -> Result<(&'static str, String), ExportError> {
    const JSON: &str = "application/json";
    const TEXT: &str = "text/plain; charset=utf-8";
    const CSV: &str = "text/csv; charset=utf-8";
    const DOT: &str = "text/vnd.graphviz";
    let ontology_format = |f: &str| -> Result<String, ExportError> {
        project
            .ontology()?
            .export(f)
            .map_err(|e| ExportError::Project(ProjectError::Edit(e)))
    };
    Ok(match format {
        "tree-json" | "json" => (JSON, ontology_format("tree-json")?),
        "dot" => (DOT, ontology_format("dot")?),
        "csv" => (CSV, ontology_format("csv")?),
        "typology-json" => (JSON, project.typology()?.to_json()),
        "typology-dot" => (DOT, project.typology()?.to_dot()),
        "program" => (TEXT, print_program(&project.program()?.rules)),
        "assignments-csv" => {
            let assignments = project.classification.as_ref().map(|c| c.assignments.as_slice()).unwrap_or(&[]);
            (CSV, csv_bytes(|b| write_assignments_csv(assignments, b).map_err(|e| e.to_string()))?)
        }
        "features-csv" => {
            let matrix = artifacts.matrix(&project.features)?;
            (CSV, csv_bytes(|b| matrix.write_triplets(b).map_err(|e| e.to_string()))?)
        }
        "edit-log" => (TEXT, write_edit_log(&project.edit_log)),
        "validation" => {
            let report = validate(project.ontology()?, artifacts.corpus.ids(), DEFAULT_BALANCE_RATIO);
            (JSON, serde_json::to_string_pretty(&report).expect("report serializes"))
        }
        "project" => (JSON, project.to_json()),
        other => return Err(ExportError::UnknownFormat(other.to_string())),
    })
}
