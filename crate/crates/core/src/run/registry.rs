//! Append-only run registry: one JSON record per line. A run appears once
//! when it starts and once more when it reaches a final status.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::run::{RunRecord, RunStatus};

struct Inner {
    latest: HashMap<String, RunRecord>,
    order: Vec<String>,
    counter: u64,
}

pub(crate) struct RunRegistry {
    path: PathBuf,
    inner: Mutex<Inner>,
}

fn counter_of(run_id: &str) -> Option<u64> {
    run_id.strip_prefix('r')?.split('-').next()?.parse().ok()
}

impl RunRegistry {
    pub fn open(path: PathBuf) -> Result<RunRegistry> {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io("reading run registry", e)),
        };
        let mut inner = Inner {
            latest: HashMap::new(),
            order: Vec::new(),
            counter: 0,
        };
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: RunRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                // a torn final line from a crash mid-append
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
                Err(e) => return Err(Error::Corrupt(format!("run registry line {}: {e}", i + 1))),
            };
            inner.counter = inner.counter.max(counter_of(&rec.run_id).unwrap_or(0));
            if !inner.latest.contains_key(&rec.run_id) {
                inner.order.push(rec.run_id.clone());
            }
            inner.latest.insert(rec.run_id.clone(), rec);
        }
        Ok(RunRegistry {
            path,
            inner: Mutex::new(inner),
        })
    }

    /// Reserves the next run counter.
    pub fn next_counter(&self) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        inner.counter += 1;
        inner.counter
    }

    pub fn append(&self, rec: &RunRecord) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(prev) = inner.latest.get(&rec.run_id) {
            if prev.status.is_final() {
                return Err(Error::RegistryImmutable(rec.run_id.clone()));
            }
        }
        let mut line = serde_json::to_string(rec).expect("run records serialize");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io("opening run registry", e))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.sync_data())
            .map_err(|e| Error::io("appending to run registry", e))?;
        if !inner.latest.contains_key(&rec.run_id) {
            inner.order.push(rec.run_id.clone());
        }
        inner.latest.insert(rec.run_id.clone(), rec.clone());
        Ok(())
    }

    pub fn get(&self, run_id: &str) -> Option<RunRecord> {
        self.inner.lock().unwrap().latest.get(run_id).cloned()
    }

    /// All runs in start order, each in its latest state.
    pub fn list(&self) -> Vec<RunRecord> {
        let inner = self.inner.lock().unwrap();
        inner.order.iter().map(|id| inner.latest[id].clone()).collect()
    }

    pub fn running(&self) -> Vec<RunRecord> {
        self.list()
            .into_iter()
            .filter(|r| r.status == RunStatus::Running)
            .collect()
    }
}
