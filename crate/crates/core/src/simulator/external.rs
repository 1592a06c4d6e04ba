use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::deck::Deck;
use crate::misfit::{read_csv_path, Series};

const LOG_FILE: &str = "runner.log";
const TAIL_BYTES: usize = 2000;
const POLL: Duration = Duration::from_millis(10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkdirPolicy {
    /// Run the command inside the output directory.
    #[default]
    Outdir,
    /// Keep the caller's working directory.
    Inherit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    /// Program and arguments, shell-quoted, containing `{deck}` and `{outdir}`.
    pub command: String,
    pub timeout_secs: f64,
    /// Results CSV, relative to the output directory.
    #[serde(default = "default_results")]
    pub results_file: String,
    #[serde(default)]
    pub workdir: WorkdirPolicy,
    /// Cap on concurrently running simulator processes.
    #[serde(default = "default_processes")]
    pub max_processes: usize,
}

fn default_results() -> String {
    "results.csv".into()
}

fn default_processes() -> usize {
    1
}

impl RunnerConfig {
    pub fn new(command: impl Into<String>, timeout_secs: f64) -> Self {
        Self {
            command: command.into(),
            timeout_secs,
            results_file: default_results(),
            workdir: WorkdirPolicy::default(),
            max_processes: default_processes(),
        }
    }

    pub fn check(&self) -> Result<(), SimError> {
        for slot in ["{deck}", "{outdir}"] {
            if !self.command.contains(slot) {
                return Err(SimError::InvalidRunner(format!("command template lacks {slot}")));
            }
        }
        if !(self.timeout_secs > 0.0) {
            return Err(SimError::InvalidRunner("timeout must be positive".into()));
        }
        if self.max_processes == 0 {
            return Err(SimError::InvalidRunner("process cap must be at least 1".into()));
        }
        if shlex::split(&self.command).is_none_or(|v| v.is_empty()) {
            return Err(SimError::InvalidRunner("command template does not parse".into()));
        }
        Ok(())
    }
}

struct Slots {
    busy_dirs: BTreeSet<PathBuf>,
    running: usize,
}

static SLOTS: Mutex<Slots> = Mutex::new(Slots {
    busy_dirs: BTreeSet::new(),
    running: 0,
});
static FREED: Condvar = Condvar::new();

/// Holds one process slot and exclusive use of an output directory.
struct Lease(PathBuf);

impl Lease {
    fn acquire(dir: PathBuf, cap: usize) -> Lease {
        let mut slots = SLOTS.lock().unwrap_or_else(|e| e.into_inner());
        while slots.running >= cap || slots.busy_dirs.contains(&dir) {
            slots = FREED.wait(slots).unwrap_or_else(|e| e.into_inner());
        }
        slots.running += 1;
        slots.busy_dirs.insert(dir.clone());
        Lease(dir)
    }
}

impl Drop for Lease {
    fn drop(&mut self) {
        let mut slots = SLOTS.lock().unwrap_or_else(|e| e.into_inner());
        slots.running -= 1;
        slots.busy_dirs.remove(&self.0);
        FREED.notify_all();
    }
}

fn io_err(path: &Path, e: std::io::Error) -> SimError {
    SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn tail(path: &Path) -> String {
    let bytes = fs::read(path).unwrap_or_default();
    let start = bytes.len().saturating_sub(TAIL_BYTES);
    String::from_utf8_lossy(&bytes[start..]).into_owned()
}

/// Write the deck into `outdir`, run the command, parse its results CSV.
pub fn run_external(runner: &RunnerConfig, deck: &Deck, outdir: &Path) -> Result<Vec<Series>, SimError> {
    runner.check()?;
    fs::create_dir_all(outdir).map_err(|e| io_err(outdir, e))?;
    let outdir = outdir.canonicalize().map_err(|e| io_err(outdir, e))?;
    let _lease = Lease::acquire(outdir.clone(), runner.max_processes);

    for (name, text) in deck.render_files() {
        let path = outdir.join(&name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    let results = outdir.join(&runner.results_file);
    if results.exists() {
        fs::remove_file(&results).map_err(|e| io_err(&results, e))?;
    }
    let deck_path = outdir.join(deck.main_file());
    let args: Vec<String> = shlex::split(&runner.command)
        .expect("checked")
        .into_iter()
        .map(|a| {
            a.replace("{deck}", &deck_path.to_string_lossy())
                .replace("{outdir}", &outdir.to_string_lossy())
        })
        .collect();

    let log_path = outdir.join(LOG_FILE);
    let log = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let log_err = log.try_clone().map_err(|e| io_err(&log_path, e))?;
    let mut cmd = Command::new(&args[0]);
    cmd.args(&args[1..]).stdin(Stdio::null()).stdout(log).stderr(log_err);
    if runner.workdir == WorkdirPolicy::Outdir {
        cmd.current_dir(&outdir);
    }
    let mut child = cmd.spawn().map_err(|e| SimError::LaunchFailure {
        command: args[0].clone(),
        message: e.to_string(),
    })?;
    let deadline = Instant::now() + Duration::from_secs_f64(runner.timeout_secs);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(SimError::Timeout {
                    seconds: runner.timeout_secs,
                });
            }
            Ok(None) => std::thread::sleep(POLL),
            Err(e) => return Err(io_err(&outdir, e)),
        }
    };
    if !status.success() {
        return Err(SimError::NonZeroExit {
            code: status.code(),
            output: tail(&log_path),
        });
    }
    read_csv_path(&results).map_err(|e| SimError::MalformedResults(e.to_string()))
}
