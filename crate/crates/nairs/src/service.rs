//! HTTP API over a model snapshot, a dataset directory and the event log.
//!
//! All bodies are JSON and every response carries the `version` of the
//! snapshot it was computed from. Item and user ids are the dense ids of the
//! dataset directory; payloads add the raw id and display name.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | snapshot version and sizes |
//! | GET | `/bootstrap/items?k=10` | `k` distinct random items; header `x-nairs-seed` fixes the draw |
//! | POST | `/users` | mints a new user id |
//! | GET | `/users/{id}/profile` | current profile |
//! | POST | `/users/{id}/profile` | `{"add": [ids], "remove": [ids]}` |
//! | GET | `/users/{id}/recommendations?n=10` | top-`n` non-profile items with the profile tag cloud |
//! | GET | `/users/{id}/interpretation?target=i` | per-profile-item contributions to the score of `i` |
//! | GET | `/users/{id}/similar-users?k=10` | neighbors with their histories |
//! | GET | `/items/{id}/similar?k=10&threshold=1.0` | similar items |
//! | GET | `/items/search?q=text` | up to 10 name matches, prefix matches first |
//! | POST | `/feedback` | `{"user": u, "kind": "like", "payload": item}` |
//! | POST | `/admin/reload` | reloads the snapshot from disk and swaps it in |
//!
//! Errors are `{"error": <kind>, "message": ..., "version": ...}` with a 4xx
//! or 5xx status.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nairs_core::dataset::{build_user_histories, Histories};
use nairs_core::interpretation::{contribution_scores, profile_interpretation, tagcloud_scale, DEFAULT_FONT_MAX, DEFAULT_FONT_MIN};
use nairs_core::math;
use nairs_core::retrieval::{scan_vector, similar_items, Representations, SimilarityCache, DEFAULT_CACHE_DEPTH, DEFAULT_ITEM_THRESHOLD};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::cache;
use crate::error::{Error, Result};
use crate::events::{Event, EventKind, EventLog, NewEvent};
use crate::io::{load_dataset_dir, Dataset};
use crate::snapshot::Snapshot;

pub const SEED_HEADER: &str = "x-nairs-seed";
pub const MAX_SUGGESTIONS: usize = 10;
const DEFAULT_K: usize = 10;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub model_path: PathBuf,
    pub data_dir: PathBuf,
    pub log_path: PathBuf,
    /// Defaults to the model path with `.cache` appended.
    pub cache_path: Option<PathBuf>,
    pub cache_depth: usize,
    /// Base seed for bootstrap draws without a seed header; `None` draws
    /// from the operating system.
    pub seed: Option<u64>,
}

impl ServiceConfig {
    pub fn new(model_path: PathBuf, data_dir: PathBuf, log_path: PathBuf) -> Self {
        ServiceConfig {
            model_path,
            data_dir,
            log_path,
            cache_path: None,
            cache_depth: DEFAULT_CACHE_DEPTH,
            seed: None,
        }
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_path.clone().unwrap_or_else(|| {
            let mut p = self.model_path.as_os_str().to_owned();
            p.push(".cache");
            p.into()
        })
    }
}

/// Item names and the interaction histories of dataset users.
pub struct Catalog {
    pub dataset: Dataset,
    pub histories: Histories,
    lower_names: Vec<String>,
}

impl Catalog {
    pub fn new(dataset: Dataset) -> Self {
        let histories = build_user_histories(&dataset.interactions);
        let lower_names = (0..dataset.interactions.num_items())
            .map(|i| dataset.item_name(i).to_lowercase())
            .collect();
        Catalog {
            dataset,
            histories,
            lower_names,
        }
    }

    pub fn num_items(&self) -> u32 {
        self.dataset.interactions.num_items()
    }

    pub fn num_users(&self) -> u32 {
        self.dataset.interactions.num_users()
    }

    fn item(&self, id: u32) -> Value {
        json!({
            "item": id,
            "raw_id": self.dataset.item_ids.get(id as usize),
            "name": self.dataset.item_name(id),
        })
    }

    /// Case-insensitive prefix matches, then substring matches, each in id
    /// order, at most `limit` in total.
    pub fn search(&self, query: &str, limit: usize) -> Vec<u32> {
        let q = query.trim().to_lowercase();
        if q.is_empty() {
            return Vec::new();
        }
        let prefix = self.lower_names.iter().enumerate().filter(|(_, n)| n.starts_with(&q));
        let inner = self
            .lower_names
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.starts_with(&q) && n.contains(&q));
        prefix.chain(inner).take(limit).map(|(i, _)| i as u32).collect()
    }
}

/// One immutable snapshot with everything derived from it.
pub struct LoadedModel {
    pub version: String,
    pub snapshot: Snapshot,
    pub cache: SimilarityCache,
    alignment: Vec<f64>,
    user_reps: Representations,
    item_reps: Representations,
}

impl LoadedModel {
    /// Loads the snapshot and its similarity cache, rebuilding a stale cache.
    pub fn load(cfg: &ServiceConfig, catalog: &Catalog) -> Result<(LoadedModel, bool)> {
        let (snapshot, version) = Snapshot::load(&cfg.model_path)?;
        let params = &snapshot.params;
        let hp = &snapshot.hyperparams;
        if params.num_items() != catalog.num_items() as usize {
            return Err(Error::Config(format!(
                "snapshot has {} items but the dataset has {}",
                params.num_items(),
                catalog.num_items()
            )));
        }
        let (cache, rebuilt) =
            cache::load_or_build(&cfg.cache_path(), &version, cfg.cache_depth, params, &catalog.histories, hp)?;
        let model = LoadedModel {
            alignment: params.alignment_scores(hp.activation),
            user_reps: Representations::users(params, &catalog.histories, hp),
            item_reps: Representations::items(params),
            version,
            cache,
            snapshot,
        };
        Ok((model, rebuilt))
    }

    fn user_vector(&self, items: &[u32]) -> Option<Vec<f64>> {
        self.snapshot
            .params
            .user_vector_with_scores(items, &self.alignment, &self.snapshot.hyperparams)
            .ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Profile {
    items: Vec<u32>,
    created_at: Option<String>,
    /// Differs from the dataset history.
    edited: bool,
    /// Profile vector and the snapshot version it was computed with.
    vector: Option<(String, Vec<f64>)>,
}

struct Live {
    profiles: HashMap<u32, Profile>,
    log: EventLog,
    next_user: u32,
}

impl Live {
    fn known(&self, catalog: &Catalog, user: u32) -> bool {
        user < catalog.num_users() || self.profiles.contains_key(&user)
    }

    fn get(&mut self, catalog: &Catalog, user: u32) -> Option<&mut Profile> {
        if !self.known(catalog, user) {
            return None;
        }
        Some(self.profiles.entry(user).or_insert_with(|| Profile {
            items: catalog.histories.get(user).map(<[u32]>::to_vec).unwrap_or_default(),
            created_at: None,
            edited: false,
            vector: None,
        }))
    }

    fn apply(&mut self, catalog: &Catalog, ev: &Event) {
        self.next_user = self.next_user.max(ev.user.saturating_add(1));
        let fresh = !self.known(catalog, ev.user);
        let profile = self.profiles.entry(ev.user).or_insert_with(|| Profile {
            items: catalog.histories.get(ev.user).map(<[u32]>::to_vec).unwrap_or_default(),
            created_at: None,
            edited: false,
            vector: None,
        });
        if fresh {
            profile.created_at = Some(ev.ts.clone());
        }
        let Some(item) = ev.item else { return };
        if ev.kind.adds_item() && !profile.items.contains(&item) {
            profile.items.push(item);
        } else if ev.kind == EventKind::RemoveItem && profile.items.contains(&item) {
            profile.items.retain(|&i| i != item);
        } else {
            return;
        }
        profile.edited = true;
        profile.vector = None;
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    catalog: Catalog,
    model: RwLock<Arc<LoadedModel>>,
    live: Mutex<Live>,
    draws: AtomicU64,
}

impl AppState {
    /// Loads the dataset, snapshot and cache, and replays the event log.
    pub fn open(cfg: ServiceConfig) -> Result<Arc<AppState>> {
        let catalog = Catalog::new(load_dataset_dir(&cfg.data_dir)?);
        let (model, _) = LoadedModel::load(&cfg, &catalog)?;
        let (log, events) = EventLog::open(&cfg.log_path)?;
        let mut live = Live {
            profiles: HashMap::new(),
            log,
            next_user: catalog.num_users(),
        };
        for ev in &events {
            if ev.item.is_some_and(|i| i >= catalog.num_items()) {
                return Err(Error::Config(format!(
                    "event {} refers to item {} outside the dataset",
                    ev.seq,
                    ev.item.unwrap_or_default()
                )));
            }
            live.apply(&catalog, ev);
        }
        tracing::info!(events = events.len(), version = %model.version, "service state loaded");
        Ok(Arc::new(AppState {
            cfg,
            catalog,
            model: RwLock::new(Arc::new(model)),
            live: Mutex::new(live),
            draws: AtomicU64::new(0),
        }))
    }

    /// The current snapshot. Handlers take it once so a response never mixes
    /// two snapshots.
    pub fn model(&self) -> Arc<LoadedModel> {
        self.model.read().expect("model lock").clone()
    }

    /// Reloads the snapshot file and swaps it in. Returns the old and new
    /// versions and whether the cache was rebuilt.
    pub fn reload(&self) -> Result<(String, String, bool)> {
        let (model, rebuilt) = LoadedModel::load(&self.cfg, &self.catalog)?;
        let new = model.version.clone();
        let old = std::mem::replace(&mut *self.model.write().expect("model lock"), Arc::new(model));
        tracing::info!(old = %old.version, new = %new, "snapshot swapped");
        Ok((old.version.clone(), new, rebuilt))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn live(&self) -> MutexGuard<'_, Live> {
        self.live.lock().expect("live state lock")
    }

    /// Profile items of `user` and, when non-empty, the profile vector.
    fn profile_with_vector(&self, model: &LoadedModel, user: u32) -> Option<(Profile, Option<Vec<f64>>)> {
        let mut live = self.live();
        let profile = live.get(&self.catalog, user)?;
        if profile.items.is_empty() {
            return Some((profile.clone(), None));
        }
        let vector = match &profile.vector {
            Some((v, vec)) if *v == model.version => vec.clone(),
            _ => {
                let vec = model.user_vector(&profile.items)?;
                profile.vector = Some((model.version.clone(), vec.clone()));
                vec
            }
        };
        Some((profile.clone(), Some(vector)))
    }

    /// Every profile, for tests and diagnostics.
    pub fn profiles(&self) -> Vec<(u32, Vec<u32>)> {
        let live = self.live();
        let mut out: Vec<_> = live
            .profiles
            .iter()
            .filter(|(_, p)| p.edited || p.created_at.is_some())
            .map(|(&u, p)| (u, p.items.clone()))
            .collect();
        out.sort();
        out
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/bootstrap/items", get(bootstrap))
        .route("/users", post(create_user))
        .route("/users/{id}/profile", get(get_profile).post(edit_profile))
        .route("/users/{id}/recommendations", get(recommendations))
        .route("/users/{id}/interpretation", get(interpretation))
        .route("/users/{id}/similar-users", get(similar_users))
        .route("/items/search", get(search))
        .route("/items/{id}/similar", get(similar_items_handler))
        .route("/feedback", post(feedback))
        .route("/admin/reload", post(reload))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, version: &str, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": kind, "message": message.into(), "version": version }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = std::result::Result<Json<Value>, ApiError>;

fn unknown_user(version: &str, user: u32) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, version, "unknown_user", format!("user {user} does not exist")).with("user", json!(user))
}

fn unknown_item(version: &str, item: u32) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, version, "unknown_item", format!("item {item} does not exist")).with("item", json!(item))
}

fn bad_body(version: &str, e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, version, "bad_request", e.body_text())
}

fn internal(version: &str, e: Error) -> ApiError {
    tracing::error!(error = %e, "request failed");
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, version, e.kind(), e.to_string())
}

fn profile_json(state: &AppState, version: &str, user: u32, p: &Profile, warnings: Vec<String>) -> Value {
    let mut body = json!({
        "version": version,
        "user": user,
        "items": p.items.iter().map(|&i| state.catalog.item(i)).collect::<Vec<_>>(),
        "created_at": p.created_at,
    });
    if !warnings.is_empty() {
        body["warnings"] = json!(warnings);
    }
    body
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let model = state.model();
    Json(json!({
        "status": "ok",
        "version": model.version,
        "kind": model.snapshot.hyperparams.kind.name(),
        "num_users": state.catalog.num_users(),
        "num_items": state.catalog.num_items(),
    }))
}

#[derive(Deserialize)]
struct KQuery {
    k: Option<usize>,
    threshold: Option<f64>,
}

async fn bootstrap(State(state): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<KQuery>) -> ApiResult {
    let model = state.model();
    let n = state.catalog.num_items() as usize;
    let k = q.k.unwrap_or(DEFAULT_K).min(n);
    let header_seed = match headers.get(SEED_HEADER) {
        Some(v) => Some(v.to_str().ok().and_then(|s| s.trim().parse::<u64>().ok()).ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, &model.version, "bad_request", format!("{SEED_HEADER} must be an unsigned integer"))
        })?),
        None => None,
    };
    let mut rng = match (header_seed, state.cfg.seed) {
        (Some(seed), _) => StdRng::seed_from_u64(seed),
        (None, Some(base)) => StdRng::seed_from_u64(base ^ state.draws.fetch_add(1, Ordering::Relaxed)),
        (None, None) => StdRng::from_os_rng(),
    };
    let items: Vec<Value> = rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| state.catalog.item(i as u32))
        .collect();
    Ok(Json(json!({ "version": model.version, "items": items })))
}

async fn create_user(State(state): State<Arc<AppState>>) -> ApiResult {
    let model = state.model();
    let mut live = state.live();
    let user = live.next_user;
    let written = live
        .log
        .append(vec![NewEvent::new(user, EventKind::CreateUser)])
        .map_err(|e| internal(&model.version, e))?;
    live.apply(&state.catalog, &written[0]);
    let p = live.get(&state.catalog, user).expect("just created").clone();
    Ok(Json(profile_json(&state, &model.version, user, &p, Vec::new())))
}

async fn get_profile(State(state): State<Arc<AppState>>, Path(user): Path<u32>) -> ApiResult {
    let model = state.model();
    let mut live = state.live();
    let p = live.get(&state.catalog, user).ok_or_else(|| unknown_user(&model.version, user))?.clone();
    Ok(Json(profile_json(&state, &model.version, user, &p, Vec::new())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEdit {
    #[serde(default)]
    add: Vec<u32>,
    #[serde(default)]
    remove: Vec<u32>,
}

async fn edit_profile(
    State(state): State<Arc<AppState>>,
    Path(user): Path<u32>,
    body: std::result::Result<Json<ProfileEdit>, JsonRejection>,
) -> ApiResult {
    let model = state.model();
    let Json(edit) = body.map_err(|e| bad_body(&model.version, e))?;
    if let Some(&bad) = edit.add.iter().chain(&edit.remove).find(|&&i| i >= state.catalog.num_items()) {
        return Err(unknown_item(&model.version, bad));
    }
    let mut live = state.live();
    let current = live.get(&state.catalog, user).ok_or_else(|| unknown_user(&model.version, user))?.items.clone();

    let mut warnings = Vec::new();
    let mut after_adds = current;
    for &i in &edit.add {
        if after_adds.contains(&i) {
            warnings.push(format!("item {i} is already in the profile"));
        } else {
            after_adds.push(i);
        }
    }
    for &i in &edit.remove {
        if !after_adds.contains(&i) {
            warnings.push(format!("item {i} is not in the profile"));
        }
        after_adds.retain(|&x| x != i);
    }

    let events: Vec<NewEvent> = edit
        .add
        .iter()
        .map(|&i| NewEvent::item(user, EventKind::AddItem, i))
        .chain(edit.remove.iter().map(|&i| NewEvent::item(user, EventKind::RemoveItem, i)))
        .collect();
    if !events.is_empty() {
        let written = live.log.append(events).map_err(|e| internal(&model.version, e))?;
        for ev in &written {
            live.apply(&state.catalog, ev);
        }
    }
    let p = live.get(&state.catalog, user).expect("known user").clone();
    Ok(Json(profile_json(&state, &model.version, user, &p, warnings)))
}

#[derive(Deserialize)]
struct NQuery {
    n: Option<usize>,
}

fn cold_start(version: &str, user: u32) -> Json<Value> {
    Json(json!({
        "version": version,
        "user": user,
        "cold_start": true,
        "bootstrap": "/bootstrap/items",
        "message": "the profile is empty; add items picked from /bootstrap/items",
        "items": [],
        "profile": [],
    }))
}

async fn recommendations(State(state): State<Arc<AppState>>, Path(user): Path<u32>, Query(q): Query<NQuery>) -> ApiResult {
    let model = state.model();
    let (profile, vector) = state
        .profile_with_vector(&model, user)
        .ok_or_else(|| unknown_user(&model.version, user))?;
    let Some(uv) = vector else {
        return Ok(cold_start(&model.version, user));
    };
    let params = &model.snapshot.params;
    let hp = &model.snapshot.hyperparams;
    let n = q.n.unwrap_or(DEFAULT_K);

    let mut in_profile = vec![false; params.num_items()];
    for &i in &profile.items {
        in_profile[i as usize] = true;
    }
    let bias_u = params.user_bias_of(user);
    let mut scored: Vec<(u32, f64)> = (0..params.num_items())
        .filter(|&i| !in_profile[i])
        .map(|i| (i as u32, bias_u + params.item_bias[i] + math::dot(&uv, params.q.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);

    let items: Vec<Value> = scored
        .iter()
        .map(|&(i, s)| {
            let mut v = state.catalog.item(i);
            v["score"] = json!(s);
            v["probability"] = json!(math::sigmoid(s));
            v
        })
        .collect();
    let view = profile_interpretation(
        params,
        &profile.items,
        hp,
        |i| state.catalog.dataset.item_name(i).to_string(),
        DEFAULT_FONT_MIN,
        DEFAULT_FONT_MAX,
    )
    .map_err(|e| internal(&model.version, e.into()))?;
    let cloud: Vec<Value> = view
        .entries
        .iter()
        .map(|e| json!({ "item": e.item, "name": e.name, "weight": e.weight, "font_size": e.font_size }))
        .collect();
    Ok(Json(json!({
        "version": model.version,
        "user": user,
        "cold_start": false,
        "items": items,
        "profile": cloud,
    })))
}

#[derive(Deserialize)]
struct TargetQuery {
    target: Option<u32>,
}

async fn interpretation(State(state): State<Arc<AppState>>, Path(user): Path<u32>, Query(q): Query<TargetQuery>) -> ApiResult {
    let model = state.model();
    let target = q.target.ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, &model.version, "bad_request", "query parameter `target` is required")
    })?;
    if target >= state.catalog.num_items() {
        return Err(unknown_item(&model.version, target));
    }
    let (profile, _) = state
        .profile_with_vector(&model, user)
        .ok_or_else(|| unknown_user(&model.version, user))?;
    if profile.items.is_empty() {
        return Err(ApiError::new(StatusCode::CONFLICT, &model.version, "empty_profile", "the profile is empty"));
    }
    if profile.items.contains(&target) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            &model.version,
            "target_in_profile",
            format!("item {target} is already in the profile"),
        )
        .with("item", json!(target)));
    }
    let params = &model.snapshot.params;
    let hp = &model.snapshot.hyperparams;
    let breakdown =
        contribution_scores(params, user, &profile.items, target, hp).map_err(|e| internal(&model.version, e.into()))?;
    let sizes = tagcloud_scale(
        &breakdown.entries.iter().map(|c| c.contribution).collect::<Vec<_>>(),
        DEFAULT_FONT_MIN,
        DEFAULT_FONT_MAX,
    );
    let entries: Vec<Value> = breakdown
        .entries
        .iter()
        .zip(sizes)
        .map(|(c, size)| {
            json!({
                "item": c.item,
                "name": state.catalog.dataset.item_name(c.item),
                "weight": c.weight,
                "contribution": c.contribution,
                "font_size": size,
            })
        })
        .collect();
    let score = breakdown.total();
    Ok(Json(json!({
        "version": model.version,
        "user": user,
        "target": state.catalog.item(target),
        "bias": breakdown.bias_part,
        "score": score,
        "probability": math::sigmoid(score),
        "entries": entries,
    })))
}

async fn similar_users(State(state): State<Arc<AppState>>, Path(user): Path<u32>, Query(q): Query<KQuery>) -> ApiResult {
    let model = state.model();
    let k = q.k.unwrap_or(DEFAULT_K);
    let (profile, vector) = state
        .profile_with_vector(&model, user)
        .ok_or_else(|| unknown_user(&model.version, user))?;
    let Some(uv) = vector else {
        return Ok(Json(json!({
            "version": model.version,
            "user": user,
            "users": [],
            "warning": "the profile is empty",
        })));
    };
    let cached = (!profile.edited && model.cache.covers(k))
        .then(|| model.cache.similar_users(user, k).ok())
        .flatten();
    let neighbors = match cached {
        Some(r) => r.neighbors,
        None => scan_vector(&model.user_reps, &uv, Some(user), k, f64::NEG_INFINITY),
    };
    let users: Vec<Value> = neighbors
        .iter()
        .map(|&(u, s)| {
            let history: Vec<Value> = state
                .catalog
                .histories
                .get(u)
                .unwrap_or_default()
                .iter()
                .map(|&i| json!({ "item": i, "name": state.catalog.dataset.item_name(i) }))
                .collect();
            json!({
                "user": u,
                "raw_id": state.catalog.dataset.user_ids.get(u as usize),
                "similarity": s,
                "history": history,
            })
        })
        .collect();
    Ok(Json(json!({ "version": model.version, "user": user, "users": users })))
}

async fn similar_items_handler(State(state): State<Arc<AppState>>, Path(item): Path<u32>, Query(q): Query<KQuery>) -> ApiResult {
    let model = state.model();
    if item >= state.catalog.num_items() {
        return Err(unknown_item(&model.version, item));
    }
    let k = q.k.unwrap_or(DEFAULT_K);
    let threshold = q.threshold.unwrap_or(DEFAULT_ITEM_THRESHOLD);
    let result = if model.cache.covers(k) {
        model.cache.similar_items(item, k, threshold)
    } else {
        similar_items(&model.item_reps, item, k, threshold)
    }
    .map_err(|_| unknown_item(&model.version, item))?;
    let items: Vec<Value> = result
        .neighbors
        .iter()
        .map(|&(i, s)| {
            let mut v = state.catalog.item(i);
            v["similarity"] = json!(s);
            v
        })
        .collect();
    Ok(Json(json!({
        "version": model.version,
        "item": state.catalog.item(item),
        "threshold": threshold,
        "items": items,
    })))
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
}

async fn search(State(state): State<Arc<AppState>>, Query(q): Query<SearchQuery>) -> Json<Value> {
    let model = state.model();
    let hits = state.catalog.search(&q.q, MAX_SUGGESTIONS);
    let mut body = json!({
        "version": model.version,
        "query": q.q,
        "items": hits.iter().map(|&i| state.catalog.item(i)).collect::<Vec<_>>(),
    });
    if hits.is_empty() {
        body["warning"] = json!(format!("no item matches \"{}\"", q.q));
    }
    Json(body)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Feedback {
    user: u32,
    kind: String,
    payload: Value,
}

async fn feedback(State(state): State<Arc<AppState>>, body: std::result::Result<Json<Feedback>, JsonRejection>) -> ApiResult {
    let model = state.model();
    let version = model.version.as_str();
    let Json(fb) = body.map_err(|e| bad_body(version, e))?;
    let bad = |msg: String| ApiError::new(StatusCode::BAD_REQUEST, version, "bad_request", msg);
    let kind = EventKind::parse(&fb.kind)
        .filter(|&k| k != EventKind::CreateUser)
        .ok_or_else(|| bad(format!("unknown feedback kind `{}`", fb.kind)))?;

    let mut event = NewEvent::new(fb.user, kind);
    match kind {
        EventKind::SearchQuery => {
            let q = fb.payload.as_str().ok_or_else(|| bad("search_query payload must be a string".into()))?;
            event.query = Some(q.to_string());
        }
        EventKind::FollowUser => {
            let target = fb
                .payload
                .as_u64()
                .and_then(|u| u32::try_from(u).ok())
                .ok_or_else(|| bad("follow_user payload must be a user id".into()))?;
            event.target_user = Some(target);
        }
        _ => {
            let item = fb
                .payload
                .as_u64()
                .and_then(|i| u32::try_from(i).ok())
                .ok_or_else(|| bad(format!("{} payload must be an item id", fb.kind)))?;
            if item >= state.catalog.num_items() {
                return Err(unknown_item(version, item));
            }
            event.item = Some(item);
        }
    }

    let mut live = state.live();
    if !live.known(&state.catalog, fb.user) {
        return Err(unknown_user(version, fb.user));
    }
    if let Some(t) = event.target_user {
        if !live.known(&state.catalog, t) {
            return Err(unknown_user(version, t));
        }
    }
    let written = live.log.append(vec![event]).map_err(|e| internal(version, e))?;
    live.apply(&state.catalog, &written[0]);
    let p = live.get(&state.catalog, fb.user).expect("known user");
    Ok(Json(json!({
        "version": version,
        "ack": true,
        "seq": written[0].seq,
        "ts": written[0].ts,
        "user": fb.user,
        "profile": p.items,
    })))
}

async fn reload(State(state): State<Arc<AppState>>) -> ApiResult {
    let s = state.clone();
    let outcome = tokio::task::spawn_blocking(move || s.reload()).await.expect("reload task");
    match outcome {
        Ok((old, new, rebuilt)) => Ok(Json(json!({
            "version": new,
            "previous_version": old,
            "cache_rebuilt": rebuilt,
        }))),
        Err(e) => Err(internal(&state.model().version, e)),
    }
}

/// Binds, prints the address on stdout and serves until interrupted.
pub async fn serve(state: Arc<AppState>, bind: &str, port: u16) -> Result<()> {
    let listener = tokio::net::TcpListener::bind((bind, port))
        .await
        .map_err(|e| Error::io(format!("{bind}:{port}"), e))?;
    let addr = listener.local_addr().map_err(|e| Error::io(bind, e))?;
    println!("listening on http://{addr}");
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
