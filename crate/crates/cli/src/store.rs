//! Append-only JSONL stores for probe results.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use skillprobe_core::agents::ProbeResult;
use skillprobe_core::Variant;

/// One stored probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub agent_id: String,
    #[serde(flatten)]
    pub result: ProbeResult,
}

pub type StoreKey = (String, String, String, Variant);

impl ResultRecord {
    pub fn key(&self) -> StoreKey {
        (self.config_hash.clone(), self.agent_id.clone(), self.result.episode_id.clone(), self.result.variant)
    }
}

/// Results keyed by (config hash, agent id, episode id, variant). Records of
/// other configurations may share the file and are ignored by queries.
#[derive(Debug)]
pub struct ResultStore {
    path: PathBuf,
    records: Vec<ResultRecord>,
    keys: HashSet<StoreKey>,
}

impl ResultStore {
    /// Loads `path` if it exists. A truncated final line left by an
    /// interrupted run is dropped; corruption elsewhere is an error.
    pub fn open(path: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let path = path.into();
        let mut store = ResultStore { path, records: Vec::new(), keys: HashSet::new() };
        if !store.path.exists() {
            return Ok(store);
        }
        let file = File::open(&store.path).with_context(|| format!("opening {}", store.path.display()))?;
        let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
        let mut valid_bytes = 0u64;
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                valid_bytes += line.len() as u64 + 1;
                continue;
            }
            match serde_json::from_str::<ResultRecord>(line) {
                Ok(rec) => {
                    valid_bytes += line.len() as u64 + 1;
                    if store.keys.insert(rec.key()) {
                        store.records.push(rec);
                    }
                }
                Err(_) if i + 1 == lines.len() => {
                    log::warn!("{}: dropping truncated last line", store.path.display());
                    break;
                }
                Err(e) => bail!("{}:{}: {e}", store.path.display(), i + 1),
            }
        }
        let len = std::fs::metadata(&store.path)?.len();
        if valid_bytes < len {
            OpenOptions::new().write(true).open(&store.path)?.set_len(valid_bytes)?;
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, key: &StoreKey) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends and flushes a batch of records, skipping keys already present.
    pub fn append(&mut self, batch: impl IntoIterator<Item = ResultRecord>) -> anyhow::Result<usize> {
        let mut out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .with_context(|| format!("opening {}", self.path.display()))?;
        let mut n = 0;
        for rec in batch {
            if !self.keys.insert(rec.key()) {
                continue;
            }
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            out.write_all(line.as_bytes())?;
            self.records.push(rec);
            n += 1;
        }
        out.flush()?;
        Ok(n)
    }

    /// Results stored under `config_hash` for `agent_id`.
    pub fn results(&self, config_hash: &str, agent_id: &str) -> Vec<ProbeResult> {
        self.records
            .iter()
            .filter(|r| r.config_hash == config_hash && r.agent_id == agent_id)
            .map(|r| r.result.clone())
            .collect()
    }
}
