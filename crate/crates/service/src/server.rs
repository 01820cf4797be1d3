//! HTTP + WebSocket front end. Each connected session runs its own
//! fixed-rate tick loop; the socket reader only updates a latest-value
//! mailbox, and frames leave through an unbounded queue so a slow client
//! never stalls simulation time.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use gmreach::plant::{Input, PlantModel};
use gmreach::scenario::WorldConfig;
use gmreach::trajio::{Trajectory, TrialMeta};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::session::{persist, ClientMessage, Frame, Overlay, OverlayConfig, Session};
use crate::ServiceError;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub trials_dir: PathBuf,
    /// Wall-clock period of one tick; the plant's `dt` by default.
    pub tick_interval: Duration,
    pub plant: PlantModel,
    pub world: WorldConfig,
    pub overlay: Option<OverlayConfig>,
}

impl ServerConfig {
    pub fn new(
        trials_dir: PathBuf,
        plant: PlantModel,
        world: WorldConfig,
        overlay: Option<OverlayConfig>,
    ) -> Self {
        Self {
            trials_dir,
            tick_interval: Duration::from_secs_f64(plant.dt()),
            plant,
            world,
            overlay,
        }
    }
}

struct Entry {
    session: Mutex<Session>,
    mailbox: watch::Sender<Input>,
    running: AtomicBool,
    max_ticks: Option<u64>,
    trial: Mutex<Option<PathBuf>>,
}

struct Inner {
    config: ServerConfig,
    sessions: Mutex<HashMap<String, Arc<Entry>>>,
    next_id: AtomicU64,
    /// Serializes trial-index allocation in the trials directory.
    persist_lock: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self(Arc::new(Inner {
            config,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            persist_lock: Mutex::new(()),
        }))
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>, ServiceError> {
        lock(&self.0.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Ends the session if needed and writes its trial once.
    fn finalize(&self, entry: &Entry) -> Result<(PathBuf, Trajectory), ServiceError> {
        let traj = lock(&entry.session).end();
        let mut trial = lock(&entry.trial);
        if let Some(path) = trial.as_ref() {
            return Ok((path.clone(), traj));
        }
        let _guard = lock(&self.0.persist_lock);
        let path = persist(&traj, &self.0.config.trials_dir)?;
        log::info!("session trial written to {}", path.display());
        *trial = Some(path.clone());
        Ok((path, traj))
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateRequest {
    pub seed: Option<u64>,
    pub world: Option<WorldConfig>,
    /// End the flight automatically after this many ticks.
    pub max_ticks: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateResponse {
    pub id: String,
    pub channel: String,
    pub dt: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndResponse {
    pub id: String,
    pub path: String,
    pub outcome: gmreach::Outcome,
    pub samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialResponse {
    pub csv: String,
    pub meta: TrialMeta,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(end_session))
        .route("/sessions/{id}/trial", get(download_trial))
        .route("/sessions/{id}/ws", get(connect))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, config: ServerConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(config))).await
}

/// Binds `addr` and serves.
pub async fn run(addr: SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve(listener, config).await
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let n = lock(&state.0.sessions).len();
    Json(serde_json::json!({ "status": "ok", "sessions": n }))
}

async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?
    };
    let n = state.0.next_id.fetch_add(1, Ordering::SeqCst);
    let id = format!("s{n:04}");
    let cfg = &state.0.config;
    let world = req.world.unwrap_or_else(|| cfg.world.clone());
    let seed = req.seed.unwrap_or(n);
    let session = Session::create(
        id.clone(),
        world,
        cfg.plant.clone(),
        seed,
        cfg.overlay.clone(),
    )
    .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let dt = session.plant.dt();
    let (mailbox, _) = watch::channel(Input::zeros());
    let entry = Arc::new(Entry {
        session: Mutex::new(session),
        mailbox,
        running: AtomicBool::new(false),
        max_ticks: req.max_ticks,
        trial: Mutex::new(None),
    });
    lock(&state.0.sessions).insert(id.clone(), entry);
    let body = CreateResponse {
        channel: format!("/sessions/{id}/ws"),
        id,
        dt,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn end_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<EndResponse>, ServiceError> {
    let entry = state.entry(&id)?;
    let st = state.clone();
    let (path, traj) = tokio::task::spawn_blocking(move || st.finalize(&entry))
        .await
        .map_err(|e| ServiceError::Storage(e.to_string()))??;
    Ok(Json(EndResponse {
        id,
        path: path.display().to_string(),
        outcome: traj.outcome,
        samples: traj.samples.len(),
    }))
}

async fn download_trial(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TrialResponse>, ServiceError> {
    let entry = state.entry(&id)?;
    let path = lock(&entry.trial)
        .clone()
        .ok_or_else(|| ServiceError::Conflict(format!("session {id} has not ended")))?;
    let traj = Trajectory::load(&path)?;
    Ok(Json(TrialResponse {
        csv: std::fs::read_to_string(&path).map_err(|e| ServiceError::Storage(e.to_string()))?,
        meta: traj.meta(),
    }))
}

async fn connect(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    let entry = state.entry(&id)?;
    if entry.running.swap(true, Ordering::SeqCst) {
        return Err(ServiceError::Conflict(format!(
            "session {id} already has a pilot"
        )));
    }
    Ok(ws.on_upgrade(move |socket| fly(state, entry, socket)))
}

async fn fly(state: AppState, entry: Arc<Entry>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (frames_tx, mut frames_rx) = mpsc::unbounded_channel::<Option<String>>();

    let writer = tokio::spawn(async move {
        while let Some(Some(text)) = frames_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });

    let mailbox = entry.mailbox.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Input { alpha, thrust, .. }) => {
                        mailbox.send_replace(Input::new(alpha, thrust));
                    }
                    Err(e) => log::debug!("ignoring malformed client message: {e}"),
                },
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    let mut interval = tokio::time::interval(state.0.config.tick_interval);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let inputs = entry.mailbox.subscribe();
    let mut pending: Option<JoinHandle<gmreach::Result<Overlay>>> = None;
    interval.tick().await;
    loop {
        interval.tick().await;
        if reader.is_finished() {
            break;
        }
        let input = *inputs.borrow();
        let (mut frame, job) = {
            let mut session = lock(&entry.session);
            let frame: Frame = session.tick(input);
            let limit_hit = entry.max_ticks.is_some_and(|m| session.clock >= m);
            let frame = if limit_hit && !frame.terminal {
                session.end();
                Frame {
                    terminal: true,
                    outcome: session.outcome,
                    ..frame
                }
            } else {
                frame
            };
            (frame, session.overlay_job())
        };
        if pending.as_ref().is_some_and(JoinHandle::is_finished) {
            match pending.take().expect("checked").await {
                Ok(Ok(overlay)) => frame.overlay = Some(overlay),
                Ok(Err(e)) => log::warn!("overlay failed: {e}"),
                Err(e) => log::warn!("overlay task failed: {e}"),
            }
        }
        if let (Some(job), None) = (job, pending.as_ref()) {
            pending = Some(tokio::task::spawn_blocking(move || job.run()));
        }
        let terminal = frame.terminal;
        if terminal {
            let st = state.clone();
            let e = entry.clone();
            if let Err(err) = tokio::task::spawn_blocking(move || st.finalize(&e))
                .await
                .map_err(|e| ServiceError::Storage(e.to_string()))
                .and_then(|r| r)
            {
                log::error!("persisting trial failed: {err}");
            }
        }
        let text = serde_json::to_string(&frame).expect("frames serialize");
        if frames_tx.send(Some(text)).is_err() || terminal {
            break;
        }
    }
    let _ = frames_tx.send(None);
    let _ = writer.await;
    reader.abort();
    entry.running.store(false, Ordering::SeqCst);
}
