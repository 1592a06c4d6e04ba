//! Sessions: one pipeline state each, a background run worker and a
//! directory on disk.
//!
//! Layout of `<data_dir>/sessions/<id>/`: `session.json` (id, creation time,
//! backend, the run in flight), `state.json` (the pipeline state, rewritten
//! atomically after every step and evaluation), `deck/` (the uploaded deck
//! bundle), `observations.csv`, `evaluations.csv` and, once done,
//! `report/`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use petromatch_core::deck::Deck;
use petromatch_core::misfit::ObservationSet;
use petromatch_core::pipeline::{
    check_advance, checkpoint_apply, evaluation_log_csv, should_pause, step, write_report_bundle, ChatModelClient,
    CheckpointKind, Context, DocStore, Phase, PipelineError, PipelineState, RunOptions, ToolCall,
};
use petromatch_core::simulator::Backend;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::llm::{HttpChatClient, LlmConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Idle,
    Running,
    WaitingCheckpoint,
    Done,
    Failed,
}

/// What readers see: an immutable copy of the state plus the worker flag.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub state: PipelineState,
    pub running: bool,
}

impl Snapshot {
    pub fn status(&self) -> RunStatus {
        if self.running {
            RunStatus::Running
        } else {
            match self.state.phase {
                Phase::Done => RunStatus::Done,
                Phase::Failed => RunStatus::Failed,
                p if p.is_checkpoint() => RunStatus::WaitingCheckpoint,
                _ => RunStatus::Idle,
            }
        }
    }
}

/// A run in flight, kept in `session.json` so a restart can pick it up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub until: Option<Phase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SessionMeta {
    id: String,
    created_at: DateTime<Utc>,
    backend: Backend,
    #[serde(default)]
    run: Option<RunRequest>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("a run is already in progress")]
    Busy,
    #[error("{0}")]
    IllegalPhase(PipelineError),
    #[error("the session is not waiting at a checkpoint (status {0:?})")]
    NotAtCheckpoint(RunStatus),
    #[error("checkpoint version {given} is stale; the current version is {current}")]
    VersionConflict { given: u64, current: u64 },
    #[error("{0}")]
    InvalidEdit(String),
    #[error("the run has not finished (status {0:?})")]
    NotFinished(RunStatus),
    #[error("storage: {0}")]
    Io(#[from] io::Error),
}

pub struct Session {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub backend: Backend,
    dir: PathBuf,
    snapshot: watch::Sender<Arc<Snapshot>>,
    /// Serializes mutating requests; readers only borrow the snapshot.
    gate: tokio::sync::Mutex<()>,
    cancel: Arc<AtomicBool>,
    /// Serializes writes of the session files.
    disk: Mutex<()>,
}

impl Session {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<Snapshot>> {
        self.snapshot.subscribe()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir.join("report")
    }

    fn publish(&self, state: &PipelineState, running: bool) {
        self.snapshot.send_replace(Arc::new(Snapshot {
            state: state.clone(),
            running,
        }));
    }

    fn meta(&self, run: Option<RunRequest>) -> SessionMeta {
        SessionMeta {
            id: self.id.clone(),
            created_at: self.created_at,
            backend: self.backend.clone(),
            run,
        }
    }

    fn save_meta(&self, run: Option<RunRequest>) -> io::Result<()> {
        let _guard = self.disk.lock().unwrap_or_else(|p| p.into_inner());
        let json = serde_json::to_string_pretty(&self.meta(run)).expect("meta serializes");
        write_atomic(&self.dir.join("session.json"), json.as_bytes())
    }

    fn save_state(&self, state: &PipelineState) -> io::Result<()> {
        let _guard = self.disk.lock().unwrap_or_else(|p| p.into_inner());
        write_atomic(&self.dir.join("state.json"), state.to_json().as_bytes())?;
        write_atomic(&self.dir.join("evaluations.csv"), evaluation_log_csv(state).as_bytes())
    }

    /// Persist, then show the state to readers.
    fn commit(&self, state: &PipelineState, running: bool) {
        if let Err(e) = self.save_state(state) {
            tracing::error!(session = %self.id, error = %e, "cannot persist the session state");
        }
        self.publish(state, running);
    }
}

/// Write through a temporary file and rename, so a crash leaves either the
/// old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// The uploaded inputs of a new session.
pub struct NewSession {
    pub deck: Deck,
    pub deck_files: BTreeMap<String, String>,
    pub observations: ObservationSet,
    pub observations_csv: String,
    pub options: RunOptions,
    pub backend: Backend,
}

pub struct SessionManager {
    root: PathBuf,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    docs: Option<Arc<DocStore>>,
    llm: Option<LlmConfig>,
}

impl SessionManager {
    /// Open `data_dir`, reloading every stored session. Sessions whose run
    /// was cut short by a crash are resumed.
    pub fn open(data_dir: &Path, docs: Option<DocStore>, llm: Option<LlmConfig>) -> io::Result<Arc<Self>> {
        let root = data_dir.join("sessions");
        fs::create_dir_all(&root)?;
        let manager = Arc::new(Self {
            root: root.clone(),
            sessions: Mutex::new(BTreeMap::new()),
            docs: docs.map(Arc::new),
            llm,
        });
        let mut entries: Vec<PathBuf> = fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("session.json").is_file())
            .collect();
        entries.sort();
        for dir in entries {
            match load_session(&dir) {
                Ok((session, run)) => {
                    let session = Arc::new(session);
                    manager.insert(session.clone());
                    if let Some(run) = run {
                        tracing::info!(session = %session.id, "resuming an interrupted run");
                        manager.spawn_worker(session, run);
                    }
                }
                Err(e) => tracing::warn!(dir = %dir.display(), error = %e, "skipping unreadable session"),
            }
        }
        Ok(manager)
    }

    fn insert(&self, session: Arc<Session>) {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(session.id.clone(), session);
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn list(&self) -> Vec<Arc<Session>> {
        let mut all: Vec<Arc<Session>> = self
            .sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        all.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        all
    }

    pub fn create(&self, input: NewSession) -> Result<Arc<Session>, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.root.join(&id);
        fs::create_dir_all(dir.join("deck"))?;
        for (name, text) in &input.deck_files {
            let file = dir.join("deck").join(safe_file_name(name));
            fs::write(file, text)?;
        }
        fs::write(dir.join("observations.csv"), &input.observations_csv)?;
        let state = PipelineState::new(input.deck, input.observations, input.options);
        let (snapshot, _) = watch::channel(Arc::new(Snapshot {
            state: state.clone(),
            running: false,
        }));
        let session = Arc::new(Session {
            id,
            created_at: Utc::now(),
            backend: input.backend,
            dir,
            snapshot,
            gate: tokio::sync::Mutex::new(()),
            cancel: Arc::new(AtomicBool::new(false)),
            disk: Mutex::new(()),
        });
        session.save_state(&state)?;
        session.save_meta(None)?;
        self.insert(session.clone());
        Ok(session)
    }

    /// Start agents on a background thread; returns once the run is
    /// registered.
    pub async fn advance(&self, session: &Arc<Session>, until: Option<Phase>) -> Result<(), SessionError> {
        let _gate = session.gate.lock().await;
        let snap = session.snapshot();
        if snap.running {
            return Err(SessionError::Busy);
        }
        check_advance(&snap.state, until).map_err(SessionError::IllegalPhase)?;
        let run = RunRequest { until };
        session.save_meta(Some(run))?;
        session.cancel.store(false, Ordering::SeqCst);
        session.publish(&snap.state, true);
        self.spawn_worker(session.clone(), run);
        Ok(())
    }

    /// Ask a running matching loop to stop after the current evaluation.
    pub fn cancel(&self, session: &Session) {
        session.cancel.store(true, Ordering::SeqCst);
    }

    /// Apply checkpoint edits atomically; a stale `version` or an invalid
    /// edit leaves the session untouched.
    pub async fn checkpoint(
        &self,
        session: &Arc<Session>,
        version: u64,
        edits: &[ToolCall],
        approve: bool,
    ) -> Result<Arc<Snapshot>, SessionError> {
        let _gate = session.gate.lock().await;
        let snap = session.snapshot();
        if snap.running || CheckpointKind::of(snap.state.phase).is_none() {
            return Err(SessionError::NotAtCheckpoint(snap.status()));
        }
        if version != snap.state.checkpoint_version {
            return Err(SessionError::VersionConflict {
                given: version,
                current: snap.state.checkpoint_version,
            });
        }
        let mut state = snap.state.clone();
        checkpoint_apply(&mut state, edits, approve).map_err(|e| match e {
            PipelineError::InvalidEdit(m) => SessionError::InvalidEdit(m),
            other => SessionError::InvalidEdit(other.to_string()),
        })?;
        session.commit(&state, false);
        Ok(session.snapshot())
    }

    fn spawn_worker(&self, session: Arc<Session>, run: RunRequest) {
        let docs = self.docs.clone();
        let llm = self.llm.clone();
        session.publish(&session.snapshot().state, true);
        std::thread::spawn(move || {
            let mut state = session.snapshot().state.clone();
            run_worker(&session, &mut state, run, docs, llm.map(HttpChatClient::new));
            if state.phase == Phase::Done {
                if let Err(e) = write_report_bundle(&state, &session.report_dir()) {
                    tracing::error!(session = %session.id, error = %e, "cannot write the report bundle");
                }
            }
            if let Err(e) = session.save_meta(None) {
                tracing::error!(session = %session.id, error = %e, "cannot persist the session");
            }
            session.commit(&state, false);
        });
    }
}

fn run_worker(
    session: &Session,
    state: &mut PipelineState,
    run: RunRequest,
    docs: Option<Arc<DocStore>>,
    mut client: Option<HttpChatClient>,
) {
    let cancel = session.cancel.clone();
    let mut publish = |s: &PipelineState| session.commit(s, true);
    let mut ctx = Context::new(&session.backend);
    ctx.docs = docs.as_deref();
    if let Some(c) = client.as_mut() {
        ctx.client = Some(c as &mut dyn ChatModelClient);
    }
    ctx.cancel = Some(&cancel);
    ctx.on_evaluation = Some(&mut publish);
    if check_advance(state, run.until).is_err() {
        return;
    }
    while !should_pause(state, run.until) {
        step(state, &mut ctx);
        if let Some(f) = ctx.on_evaluation.as_deref_mut() {
            f(state);
        }
    }
}

fn safe_file_name(name: &str) -> String {
    let base = Path::new(name)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("deck.DATA");
    base.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn load_session(dir: &Path) -> Result<(Session, Option<RunRequest>), String> {
    let meta: SessionMeta =
        serde_json::from_str(&fs::read_to_string(dir.join("session.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let state = PipelineState::from_json(&fs::read_to_string(dir.join("state.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (snapshot, _) = watch::channel(Arc::new(Snapshot { state, running: false }));
    Ok((
        Session {
            id: meta.id,
            created_at: meta.created_at,
            backend: meta.backend,
            dir: dir.to_path_buf(),
            snapshot,
            gate: tokio::sync::Mutex::new(()),
            cancel: Arc::new(AtomicBool::new(false)),
            disk: Mutex::new(()),
        },
        meta.run,
    ))
}
