//! Named parameter storage, the checkpoint file format, and the per-step
//! [`Session`] that turns stored values into graph leaves.
//!
//! A checkpoint is little-endian binary:
//!
//! ```text
//! b"GVOSCKPT"  u32 version
//! u64 n, n bytes of JSON metadata
//! tensor section (parameters), tensor section (optimizer state)
//! ```
//!
//! where a tensor section is `u32 count` followed by, per entry, `u32` name
//! length, UTF-8 name, `u32` rank, `rank × u64` dims, and `f64` values.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{batch_norm, NormMode, RunningStats, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GVOSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered map from parameter name to value. Names ending in
/// `.running_mean` or `.running_var` are batch-norm buffers: stored and
/// checkpointed, never trained.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "ParamStore::insert",
                format!("{name}: shape {shape:?} does not hold {} values", data.len()),
            ));
        }
        self.entries.insert(name, ParamEntry { shape: shape.to_vec(), data });
        Ok(())
    }

    /// Registers the four batch-norm entries under `prefix`.
    pub fn insert_norm(&mut self, prefix: &str, channels: usize) {
        let stats = RunningStats::new(channels);
        let c = [channels];
        self.entries.insert(format!("{prefix}.gamma"), ParamEntry { shape: c.to_vec(), data: vec![1.0; channels] });
        self.entries.insert(format!("{prefix}.beta"), ParamEntry { shape: c.to_vec(), data: vec![0.0; channels] });
        self.entries.insert(format!("{prefix}.running_mean"), ParamEntry { shape: c.to_vec(), data: stats.mean });
        self.entries.insert(format!("{prefix}.running_var"), ParamEntry { shape: c.to_vec(), data: stats.var });
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copies every entry of `other`, replacing existing ones.
    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|e| e.data.len()).sum()
    }
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    /// Momentum buffers keyed by parameter name.
    pub optimizer: ParamStore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Number of completed epochs.
    pub epoch: usize,
    pub val_j: Option<f64>,
    pub config_hash: String,
    /// Network and training configuration as serialized by the writer.
    pub config: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_section(out: &mut Vec<u8>, store: &ParamStore) {
    put_u32(out, store.len() as u32);
    for (name, e) in store.iter() {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(out, e.shape.len() as u32);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated at byte {}: wanted {n} more, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for _ in 0..self.u32()? {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("{name}: absurd shape")))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            store.entries.insert(name, ParamEntry { shape, data });
        }
        Ok(store)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + 8 * (self.params.total_values() + self.optimizer.total_values()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        write_section(&mut out, &self.params);
        write_section(&mut out, &self.optimizer);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = r.u64()? as usize;
        let meta = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let params = r.section()?;
        let optimizer = r.section()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { meta, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| Error::file(path, e))
    }
}

/// One forward (and possibly backward) pass over a [`ParamStore`].
///
/// Parameters become graph leaves on first use. Names matching a frozen
/// prefix are plain constants and receive no gradient. Train-mode batch
/// norms record their batch statistics; [`Session::into_stats`] hands them over to be folded
/// into the store's running buffers.
///
/// ```
/// use guidevos::params::{ParamStore, Session};
///
/// let mut store = ParamStore::new();
/// store.insert("w", &[2], vec![1.0, 2.0]).unwrap();
/// let mut s = Session::new(&store);
/// let w = s.param("w").unwrap();
/// w.mul(&w).unwrap().sum().backward().unwrap();
/// assert_eq!(s.grads()["w"], vec![2.0, 4.0]);
/// ```
pub struct Session<'a> {
    store: &'a ParamStore,
    frozen: Vec<String>,
    leaves: HashMap<String, Tensor>,
    stat_updates: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session {
            store,
            frozen: Vec::new(),
            leaves: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    /// Marks every name starting with one of `prefixes` as non-trainable.
    pub fn freeze<S: AsRef<str>>(mut self, prefixes: &[S]) -> Self {
        self.frozen.extend(prefixes.iter().map(|p| p.as_ref().to_string()));
        self
    }

    /// No parameter is trainable (inference).
    pub fn frozen_all(self) -> Self {
        self.freeze(&[""])
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        is_buffer(name) || self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Tensor> {
        if let Some(t) = self.leaves.get(name) {
            return Ok(t.clone());
        }
        let e = self.store.get(name)?;
        let t = if self.is_frozen(name) {
            Tensor::new(&e.shape, e.data.clone())?
        } else {
            Tensor::param(&e.shape, e.data.clone())?
        };
        self.leaves.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Batch norm with parameters at `prefix.{gamma,beta,running_mean,running_var}`,
    /// followed by ReLU.
    pub fn bn_relu(&mut self, prefix: &str, input: &Tensor, mode: NormMode) -> Result<Tensor> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let mut stats = RunningStats::new(0);
        stats.mean = self.store.get(&format!("{prefix}.running_mean"))?.data.clone();
        stats.var = self.store.get(&format!("{prefix}.running_var"))?.data.clone();
        let bn = batch_norm(input, &gamma, &beta, &stats, mode)?;
        if let (Some(m), Some(v)) = (bn.batch_mean, bn.batch_var) {
            self.stat_updates.push((prefix.to_string(), m, v));
        }
        Ok(bn.output.relu())
    }

    /// Gradients of every trainable leaf touched in this session. Leaves the
    /// backward pass never reached get a zero gradient.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.leaves
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(k, t)| (k.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.len()])))
            .collect()
    }

    /// Running-statistic updates recorded by train-mode batch norms.
    pub fn into_stats(self) -> StatUpdates {
        StatUpdates(self.stat_updates)
    }
}

/// Batch statistics waiting to be folded into a store's running buffers.
#[must_use]
pub struct StatUpdates(Vec<(String, Vec<f64>, Vec<f64>)>);

impl StatUpdates {
    /// Applies the updates in the order the batch norms ran.
    pub fn apply(self, store: &mut ParamStore) -> Result<()> {
        for (prefix, m, v) in self.0 {
            let mut stats = RunningStats::new(0);
            stats.mean = store.get(&format!("{prefix}.running_mean"))?.data.clone();
            stats.var = store.get(&format!("{prefix}.running_var"))?.data.clone();
            stats.update(&m, &v);
            store.get_mut(&format!("{prefix}.running_mean"))?.data = stats.mean;
            store.get_mut(&format!("{prefix}.running_var"))?.data = stats.var;
        }
        Ok(())
    }
}

/// First 16 hex digits of the SHA-256 of the value's compact JSON form.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
