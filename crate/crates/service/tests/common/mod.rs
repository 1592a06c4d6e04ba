#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use petromatch_service::api::router;
use petromatch_service::sessions::SessionManager;
use serde_json::{json, Value};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap()
}

/// An in-process server on an ephemeral port; lives until the test exits.
pub struct Server {
    pub base: String,
    pub data: tempfile::TempDir,
}

impl Server {
    pub fn start() -> Server {
        let data = tempfile::tempdir().unwrap();
        let manager = SessionManager::open(data.path(), None, None).unwrap();
        let base = serve(manager);
        Server { base, data }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        send(ureq::get(&self.url(path)), None)
    }

    pub fn get_text(&self, path: &str) -> (u16, String) {
        match ureq::get(&self.url(path)).call() {
            Ok(r) => (r.status(), r.into_string().unwrap()),
            Err(ureq::Error::Status(c, r)) => (c, r.into_string().unwrap()),
            Err(e) => panic!("{e}"),
        }
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        send(ureq::post(&self.url(path)), Some(body))
    }

    pub fn patch(&self, path: &str, body: Value) -> (u16, Value) {
        send(ureq::request("PATCH", &self.url(path)), Some(body))
    }

    /// Create a session on the SPE1 fixture and return its id.
    pub fn create_spe1(&self, seed: u64, budget: usize) -> String {
        let (code, body) = self.post("/api/v1/sessions", spe1_body(seed, budget));
        assert_eq!(code, 201, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    pub fn advance_wait(&self, id: &str, until: Option<&str>) -> Value {
        let (code, body) = self.post(
            &format!("/api/v1/sessions/{id}/advance"),
            json!({ "until": until, "wait": true }),
        );
        assert_eq!(code, 200, "{body}");
        body
    }

    pub fn approve(&self, id: &str) -> Value {
        let (_, s) = self.get(&format!("/api/v1/sessions/{id}"));
        let (code, body) = self.patch(
            &format!("/api/v1/sessions/{id}/checkpoint"),
            json!({ "version": s["checkpoint_version"], "approve": true }),
        );
        assert_eq!(code, 200, "{body}");
        body
    }

    /// Approve every checkpoint with no edits until the run ends.
    pub fn run_to_end(&self, id: &str) -> Value {
        loop {
            let s = self.advance_wait(id, None);
            match s["status"].as_str().unwrap() {
                "waiting_checkpoint" => {
                    self.approve(id);
                }
                "done" | "failed" => return s,
                other => panic!("unexpected status {other}"),
            }
        }
    }

    pub fn wait_status(&self, id: &str, want: &[&str], limit: Duration) -> Value {
        let start = Instant::now();
        loop {
            let (_, s) = self.get(&format!("/api/v1/sessions/{id}"));
            if want.contains(&s["status"].as_str().unwrap_or_default()) {
                return s;
            }
            assert!(start.elapsed() < limit, "still {s}");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

pub fn serve(manager: Arc<SessionManager>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(manager)).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

pub fn send(req: ureq::Request, body: Option<Value>) -> (u16, Value) {
    let reply = match body {
        Some(b) => req.send_json(b),
        None => req.call(),
    };
    match reply {
        Ok(r) => (r.status(), r.into_json().unwrap_or(Value::Null)),
        Err(ureq::Error::Status(c, r)) => (c, r.into_json().unwrap_or(Value::Null)),
        Err(e) => panic!("{e}"),
    }
}

pub fn spe1_body(seed: u64, budget: usize) -> Value {
    json!({
        "deck": read_fixture("decks/spe1.DATA"),
        "deck_name": "spe1.DATA",
        "observations": read_fixture("observations/spe1_pseudo.csv"),
        "seed": seed,
        "budget": budget,
    })
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_petromatch")
}

/// A `petromatch serve` child process.
pub struct ServeProcess {
    pub child: std::process::Child,
    pub base: String,
}

impl ServeProcess {
    pub fn spawn(data_dir: &Path) -> ServeProcess {
        use std::io::{BufRead, BufReader};
        let mut child = std::process::Command::new(bin())
            .args(["serve", "--bind", "127.0.0.1:0", "--data-dir"])
            .arg(data_dir)
            .env_remove("PETROMATCH_LLM_URL")
            .env_remove("PETROMATCH_DOCS_DIR")
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line {line:?}"))
            .to_string();
        ServeProcess { child, base }
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        send(ureq::get(&format!("{}{path}", self.base)), None)
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        send(ureq::post(&format!("{}{path}", self.base)), Some(body))
    }

    pub fn patch(&self, path: &str, body: Value) -> (u16, Value) {
        send(ureq::request("PATCH", &format!("{}{path}", self.base)), Some(body))
    }

    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct Recovery {
    /// Evaluations on disk when the service was killed.
    pub killed_after: usize,
    pub log_at_kill: String,
    pub final_log: String,
    pub final_status: Value,
}

/// Start a run through a live service, SIGKILL it once at least `k`
/// evaluations are logged, restart on the same data directory and wait for
/// the resumed run to finish.
pub fn crash_and_resume(seed: u64, budget: usize, k: usize) -> Recovery {
    let data = tempfile::tempdir().unwrap();
    let first = ServeProcess::spawn(data.path());
    let (code, s) = first.post("/api/v1/sessions", spe1_body(seed, budget));
    assert_eq!(code, 201, "{s}");
    let id = s["id"].as_str().unwrap().to_string();
    let session = format!("/api/v1/sessions/{id}");
    loop {
        let (code, s) = first.post(&format!("{session}/advance"), json!({ "wait": true }));
        assert_eq!(code, 200, "{s}");
        if s["status"] != "waiting_checkpoint" || s["checkpoint"] == "optimizer" {
            break;
        }
        let (code, s) = first.patch(
            &format!("{session}/checkpoint"),
            json!({ "version": s["checkpoint_version"], "approve": true }),
        );
        assert_eq!(code, 200, "{s}");
    }
    let (_, s) = first.get(&session);
    let (code, s) = first.patch(
        &format!("{session}/checkpoint"),
        json!({ "version": s["checkpoint_version"], "approve": true }),
    );
    assert_eq!(code, 200, "{s}");
    let (code, s) = first.post(&format!("{session}/advance"), json!({}));
    assert_eq!(code, 202, "{s}");
    let (_, m) = first.get(&format!("{session}/metrics?since={}&wait=120", k - 1));
    assert!(!m["rows"].as_array().unwrap().is_empty(), "{m}");
    first.kill();

    let dir = data.path().join("sessions").join(&id);
    let log_at_kill = std::fs::read_to_string(dir.join("evaluations.csv")).unwrap();
    let killed_after = log_at_kill.lines().count() - 1;

    let second = ServeProcess::spawn(data.path());
    let start = Instant::now();
    let final_status = loop {
        let (_, s) = second.get(&session);
        if matches!(s["status"].as_str(), Some("done" | "failed")) {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(240), "no progress: {s}");
        std::thread::sleep(Duration::from_millis(100));
    };
    let final_log = std::fs::read_to_string(dir.join("evaluations.csv")).unwrap();
    Recovery {
        killed_after,
        log_at_kill,
        final_log,
        final_status,
    }
}
