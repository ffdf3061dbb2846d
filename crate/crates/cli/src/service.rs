//! Local JSON-over-HTTP API over one project.
//!
//! Reads are served from the latest published project snapshot. Mutations
//! go through a single writer lock, are saved to disk, then published.
//! Clients may pass `?revision=N` on a mutation; a stale `N` yields 409.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use ontodesign_core::cluster::ClusterParams;
use ontodesign_core::project::{Artifacts, Project, ProjectError};
use ontodesign_core::rules::{compile_spec, print_program, CategoryRuleSpec, RuleError};
use ontodesign_core::schema::{EditError, EditRecord};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::export::{export, ExportError};

pub struct AppState {
    current: RwLock<Arc<Project>>,
    artifacts: Arc<Artifacts>,
    /// Where accepted mutations are saved; `None` keeps the project in memory.
    path: Option<PathBuf>,
    writer: Mutex<()>,
}

impl AppState {
    pub fn new(project: Project, artifacts: Artifacts, path: Option<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            current: RwLock::new(Arc::new(project)),
            artifacts: Arc::new(artifacts),
            path,
            writer: Mutex::new(()),
        })
    }

    pub fn snapshot(&self) -> Arc<Project> {
        self.current.read().expect("snapshot lock").clone()
    }

    /// Runs `f` on a copy of the current project under the writer lock and
    /// publishes the result if it succeeds.
    async fn mutate<T>(
        &self,
        expected: Option<u64>,
        f: impl FnOnce(&mut Project, &Artifacts) -> Result<T, ApiError>,
    ) -> Result<(T, Arc<Project>), ApiError> {
        let _guard = self.writer.lock().await;
        let mut project = (*self.snapshot()).clone();
        if let Some(r) = expected {
            if r != project.revision {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("stale revision {r}, current revision is {}", project.revision),
                ));
            }
        }
        let out = f(&mut project, &self.artifacts)?;
        if let Some(path) = &self.path {
            project.save(path)?;
        }
        let published = Arc::new(project);
        *self.current.write().expect("snapshot lock") = published.clone();
        Ok((out, published))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        let status = match &e {
            ProjectError::UnknownCategory(_) | ProjectError::Edit(EditError::UnknownNode(_)) => StatusCode::NOT_FOUND,
            ProjectError::Cluster(ontodesign_core::cluster::ClusterError::UnknownCode(_)) => StatusCode::NOT_FOUND,
            ProjectError::Io { .. } | ProjectError::Corpus(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ProjectError::Edit(EditError::Replay { .. }) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        let mut err = ApiError::new(status, e.to_string());
        if let ProjectError::Rules(r) = &e {
            if let Some((line, col)) = r.position() {
                err.body["line"] = json!(line);
                err.body["column"] = json!(col);
            }
        }
        err
    }
}

impl From<RuleError> for ApiError {
    fn from(e: RuleError) -> Self {
        ProjectError::Rules(e).into()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Debug, Default, Deserialize)]
struct RevisionQuery {
    revision: Option<u64>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/typology", get(get_typology))
        .route("/api/ontology", get(get_ontology))
        .route("/api/edits", post(post_edit))
        .route("/api/edits/undo", post(post_undo))
        .route("/api/rules/manual", get(get_manual).put(put_manual))
        .route("/api/rules/{category}", get(get_rules).put(put_rules))
        .route("/api/parent-child", put(put_parent_child))
        .route("/api/classify", post(post_classify))
        .route("/api/categories/{id}/documents", get(get_category_documents))
        .route("/api/documents/{id}", get(get_document))
        .route("/api/recluster", post(post_recluster))
        .route("/api/export/{format}", get(get_export))
        .with_state(state)
}

async fn get_typology(State(s): State<Arc<AppState>>) -> ApiResult {
    let p = s.snapshot();
    Ok(Json(json!({ "revision": p.revision, "typology": p.typology()? })))
}

fn ontology_body(p: &Project) -> ApiResult {
    Ok(Json(json!({ "revision": p.revision, "ontology": p.ontology()? })))
}

async fn get_ontology(State(s): State<Arc<AppState>>) -> ApiResult {
    ontology_body(&s.snapshot())
}

async fn post_edit(
    State(s): State<Arc<AppState>>,
    Query(q): Query<RevisionQuery>,
    body: Result<Json<EditRecord>, JsonRejection>,
) -> ApiResult {
    let Json(record) = body?;
    let (_, p) = s
        .mutate(q.revision, |p, _| {
            p.apply_edit(record)?;
            Ok(())
        })
        .await?;
    ontology_body(&p)
}

async fn post_undo(State(s): State<Arc<AppState>>, Query(q): Query<RevisionQuery>) -> ApiResult {
    let (undone, p) = s.mutate(q.revision, |p, _| Ok(p.undo()?)).await?;
    Ok(Json(json!({ "revision": p.revision, "undone": undone, "ontology": p.ontology()? })))
}

fn rules_body(p: &Project, label: &str) -> ApiResult {
    let spec = p.rule_specs.get(label).cloned().unwrap_or_else(|| CategoryRuleSpec {
        category: label.to_string(),
        ..CategoryRuleSpec::default()
    });
    let compiled = if spec.is_empty() {
        let rule = ontodesign_core::rules::match_rule(label, &p.tokenizer)?;
        print_program(&[rule, ontodesign_core::rules::default_success_rule(label)])
    } else {
        print_program(&compile_spec(&spec, &p.tokenizer)?)
    };
    Ok(Json(json!({ "revision": p.revision, "category": label, "spec": spec, "compiled": compiled })))
}

async fn get_rules(State(s): State<Arc<AppState>>, Path(category): Path<String>) -> ApiResult {
    let p = s.snapshot();
    let label = p.category_label(&category)?;
    rules_body(&p, &label)
}

async fn put_rules(
    State(s): State<Arc<AppState>>,
    Path(category): Path<String>,
    Query(q): Query<RevisionQuery>,
    body: Result<Json<CategoryRuleSpec>, JsonRejection>,
) -> ApiResult {
    let Json(mut spec) = body?;
    let (label, p) = s
        .mutate(q.revision, |p, _| {
            let label = p.category_label(&category)?;
            spec.category = label.clone();
            p.set_rule_spec(spec)?;
            Ok(label)
        })
        .await?;
    rules_body(&p, &label)
}

async fn get_manual(State(s): State<Arc<AppState>>) -> ApiResult {
    let p = s.snapshot();
    Ok(Json(json!({ "revision": p.revision, "text": p.manual_rules, "parent_child": p.parent_child })))
}

async fn put_manual(State(s): State<Arc<AppState>>, Query(q): Query<RevisionQuery>, body: Bytes) -> ApiResult {
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "body is not UTF-8"))?;
    let (_, p) = s
        .mutate(q.revision, |p, _| {
            p.set_manual_rules(&text)?;
            Ok(())
        })
        .await?;
    Ok(Json(json!({ "revision": p.revision, "text": p.manual_rules })))
}

#[derive(Debug, Deserialize)]
struct ParentChild {
    enabled: bool,
}

async fn put_parent_child(
    State(s): State<Arc<AppState>>,
    Query(q): Query<RevisionQuery>,
    body: Result<Json<ParentChild>, JsonRejection>,
) -> ApiResult {
    let Json(pc) = body?;
    let (_, p) = s
        .mutate(q.revision, |p, _| {
            p.set_parent_child(pc.enabled);
            Ok(())
        })
        .await?;
    Ok(Json(json!({ "revision": p.revision, "parent_child": p.parent_child })))
}

async fn post_classify(State(s): State<Arc<AppState>>) -> ApiResult {
    let (_, p) = s
        .mutate(None, |p, a| {
            p.classify(&a.index)?;
            Ok(())
        })
        .await?;
    let c = p.classification.as_ref().expect("just classified");
    Ok(Json(json!({
        "revision": p.revision,
        "counts": c.counts,
        "assignments": c.assignments.len(),
        "warnings": c.warnings,
    })))
}

async fn get_category_documents(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let p = s.snapshot();
    let label = p.category_label(&id)?;
    let hits = p.category_documents(&id, &s.artifacts)?;
    Ok(Json(json!({
        "revision": p.revision,
        "category": label,
        "stale": p.classification.is_none() || p.classification_stale,
        "documents": hits,
    })))
}

async fn get_document(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let p = s.snapshot();
    let doc = s
        .artifacts
        .corpus
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {id:?}")))?;
    let categories: Vec<&str> = p
        .classification
        .as_ref()
        .map(|c| c.categories_of(&id).into_iter().collect())
        .unwrap_or_default();
    Ok(Json(json!({
        "id": doc.id,
        "source": doc.source,
        "text": doc.text,
        "tokens": doc.tokens.len(),
        "categories": categories,
    })))
}

#[derive(Debug, Deserialize)]
struct ReclusterRequest {
    code: String,
    #[serde(default)]
    params: Option<ClusterParams>,
}

async fn post_recluster(
    State(s): State<Arc<AppState>>,
    Query(q): Query<RevisionQuery>,
    body: Result<Json<ReclusterRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let (_, p) = s
        .mutate(q.revision, |p, a| {
            let params = req.params.clone().unwrap_or_else(|| p.cluster.clone());
            p.recluster(a, &req.code, &params)?;
            Ok(())
        })
        .await?;
    Ok(Json(json!({ "revision": p.revision, "typology": p.typology()?, "ontology": p.ontology()? })))
}

async fn get_export(State(s): State<Arc<AppState>>, Path(format): Path<String>) -> Result<Response, ApiError> {
    let p = s.snapshot();
    match export(&p, &s.artifacts, &format) {
        Ok((content_type, body)) => Ok(([(header::CONTENT_TYPE, content_type)], body).into_response()),
        Err(ExportError::UnknownFormat(f)) => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown format {f:?}"))),
        Err(ExportError::Project(e)) => Err(e.into()),
    }
}
