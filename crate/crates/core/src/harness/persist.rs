//! Checkpoint container and run output files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::{MetricsEvent, MetricsRecord};
use super::model::{ModelConfig, ModelParams};
use crate::error::{Result, TentError};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"TENTC1";
pub const CHECKPOINT_FILE: &str = "model.tentc";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Layout (all integers u64 little-endian):
/// `TENTC1 | json_len | config JSON | group_count | { name_len | name | len | f64 × len }*`.
pub fn encode_checkpoint(model: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let json = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let groups = model.groups();
    out.extend_from_slice(&(groups.len() as u64).to_le_bytes());
    for (name, p) in groups {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for x in p.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TentError::Schema(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != CHECKPOINT_MAGIC {
        return Err(TentError::Schema("missing TENTC1 magic".into()));
    }
    let json_len = r.u64()?;
    let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)?;
    let count = r.u64()?;
    let mut groups = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let name_len = r.u64()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| TentError::Schema("group name is not UTF-8".into()))?;
        let len = r.u64()?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| TentError::Schema("group length overflow".into()))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        groups.push((name, values));
    }
    if r.pos != bytes.len() {
        return Err(TentError::Schema("trailing bytes after last parameter group".into()));
    }
    ModelParams::from_groups(config, groups)
}

pub fn save_checkpoint(path: &Path, model: &ModelParams) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| TentError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| TentError::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn write_metrics(path: &Path, events: &[MetricsEvent]) -> Result<()> {
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| TentError::io(path, e))
}

pub fn write_summary(path: &Path, record: &MetricsRecord) -> Result<()> {
    fs::write(path, record.to_summary_json()).map_err(|e| TentError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<MetricsRecord> {
    let text = fs::read_to_string(path).map_err(|e| TentError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `model.tentc`, `metrics.jsonl` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, model: &ModelParams, record: &MetricsRecord, events: &[MetricsEvent]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TentError::io(dir, e))?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), model)?;
    write_metrics(&dir.join(METRICS_FILE), events)?;
    write_summary(&dir.join(SUMMARY_FILE), record)
}

/// CSV rows `variant,seed,accuracy_mean,accuracy_std` sorted by variant then
/// seed.
pub fn render_report(records: &[MetricsRecord]) -> String {
    let mut rows: Vec<&MetricsRecord> = records.iter().collect();
    rows.sort_by_key(|r| (r.variant, r.seed));
    let mut out = String::from("variant,seed,accuracy_mean,accuracy_std\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.variant,
            r.seed,
            r.test_accuracy_mean,
            r.test_accuracy_std
        );
    }
    out
}
