//! Session table shared by request handlers, with optional on-disk persistence.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use sketchdial_core::stroke::Polyline;

use crate::canvas::CanvasRendering;
use crate::engine::Engine;
use crate::error::{Result, ServiceError};
use crate::session::{AttentionView, ExportFile, InstructionResponse, SessionState, SessionView};

pub struct SessionService {
    pub engine: Arc<Engine>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
    persist_dir: Option<PathBuf>,
    base_seed: u64,
    created: AtomicU64,
}

impl SessionService {
    pub fn new(engine: Engine, persist_dir: Option<PathBuf>, base_seed: u64) -> Result<Self> {
        let svc = Self {
            engine: Arc::new(engine),
            sessions: RwLock::new(HashMap::new()),
            persist_dir,
            base_seed,
            created: AtomicU64::new(0),
        };
        if let Some(dir) = &svc.persist_dir {
            fs::create_dir_all(dir)?;
            svc.load_dir(dir)?;
        }
        Ok(svc)
    }

    fn load_dir(&self, dir: &Path) -> Result<()> {
        let mut map = self.sessions.write().expect("session table poisoned");
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let s = SessionState::from_json(&fs::read_to_string(&path)?)?;
                log::info!("restored session {}", s.id);
                map.insert(s.id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(())
    }

    fn persist(&self, s: &SessionState) -> Result<()> {
        let Some(dir) = &self.persist_dir else {
            return Ok(());
        };
        let tmp = dir.join(format!("{}.json.tmp", s.id));
        fs::write(&tmp, s.to_json()?)?;
        fs::rename(&tmp, dir.join(format!("{}.json", s.id)))?;
        Ok(())
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        let map = self.sessions.read().expect("session table poisoned");
        map.get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    /// Runs `f` on the session; a session already in use yields [`ServiceError::Busy`].
    /// Changes are persisted only when `f` succeeds.
    fn with_session<T>(
        &self,
        id: &str,
        mutate: bool,
        f: impl FnOnce(&mut SessionState) -> Result<T>,
    ) -> Result<T> {
        let handle = self.handle(id)?;
        let mut guard = match handle.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(ServiceError::Busy(id.to_string())),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        if !mutate {
            return f(&mut guard);
        }
        let before = guard.clone();
        let out = f(&mut guard)?;
        if let Err(e) = self.persist(&guard) {
            *guard = before;
            return Err(e);
        }
        Ok(out)
    }

    pub fn create(&self, seed: Option<u64>) -> Result<SessionView> {
        let n = self.created.fetch_add(1, Ordering::Relaxed);
        let seed = seed.unwrap_or(self.base_seed.wrapping_add(n));
        let state = SessionState::new(uuid::Uuid::new_v4().to_string(), seed);
        self.persist(&state)?;
        let view = state.view();
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(state.id.clone(), Arc::new(Mutex::new(state)));
        Ok(view)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .expect("session table poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    pub fn view(&self, id: &str) -> Result<SessionView> {
        self.with_session(id, false, |s| Ok(s.view()))
    }

    pub fn instruction(&self, id: &str, text: &str) -> Result<InstructionResponse> {
        let engine = Arc::clone(&self.engine);
        self.with_session(id, true, |s| s.apply_instruction(&engine, text))
    }

    pub fn redraw(
        &self,
        id: &str,
        object_id: u64,
        polylines: Vec<Polyline>,
    ) -> Result<CanvasRendering> {
        self.with_session(id, true, |s| s.redraw(object_id, polylines))
    }

    pub fn undo(&self, id: &str) -> Result<SessionView> {
        self.with_session(id, true, |s| s.undo())
    }

    pub fn attention(&self, id: &str, turn: Option<usize>) -> Result<AttentionView> {
        self.with_session(id, false, |s| s.attention(turn).cloned())
    }

    pub fn export(&self, id: &str) -> Result<ExportFile> {
        self.with_session(id, false, |s| Ok(s.export()))
    }

    /// Registers an exported session under its own id.
    pub fn import(&self, file: ExportFile) -> Result<SessionView> {
        let state = SessionState::import(file)?;
        let mut map = self.sessions.write().expect("session table poisoned");
        if map.contains_key(&state.id) {
            return Err(ServiceError::Conflict(format!(
                "session {} already exists",
                state.id
            )));
        }
        self.persist(&state)?;
        let view = state.view();
        map.insert(state.id.clone(), Arc::new(Mutex::new(state)));
        Ok(view)
    }
}
