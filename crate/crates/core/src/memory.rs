//! Per-class instance memory.
//!
//! Each class keeps two bounded FIFO stores, one of foreground and one of
//! background features. New features are appended; once a store holds more
//! than `capacity` entries the oldest are released. A sample exposes the
//! stored sets plus their foreground mean (the class's general feature), and
//! the memory loss contrasts a live query feature against them:
//!
//! ```text
//! L = −log( exp(g·f/τ) / (Σ_j exp(g·b_j/τ) + exp(g·f/τ)) )
//! ```
//!
//! Stored entries are plain [`Vector`]s copied off the tape, so they never
//! carry gradient.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ensure_dim, Tape, Var, VarVec, Vector};
use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 512;
pub const DEFAULT_TAU: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub tau: f64,
    pub capacity: usize,
    /// L2-normalize features before storing and before the dot products of
    /// the loss.
    pub normalize: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            tau: DEFAULT_TAU,
            capacity: DEFAULT_CAPACITY,
            normalize: true,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must be finite and positive, got {}",
                self.tau
            )));
        }
        if self.capacity == 0 {
            return Err(Error::InvalidConfig("memory capacity must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMemoryBank {
    class_id: u64,
    capacity: usize,
    fg: VecDeque<Vector>,
    bg: VecDeque<Vector>,
    #[serde(skip, default = "default_true")]
    normalize: bool,
}

fn default_true() -> bool {
    true
}

impl ClassMemoryBank {
    pub fn new(class_id: u64, capacity: usize, normalize: bool) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("memory capacity must be >= 1".into()));
        }
        Ok(ClassMemoryBank {
            class_id,
            capacity,
            fg: VecDeque::new(),
            bg: VecDeque::new(),
            normalize,
        })
    }

    pub fn class_id(&self) -> u64 {
        self.class_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fg(&self) -> &VecDeque<Vector> {
        &self.fg
    }

    pub fn bg(&self) -> &VecDeque<Vector> {
        &self.bg
    }

    /// Feature dimension, once anything has been stored.
    pub fn dim(&self) -> Option<usize> {
        self.fg.front().or(self.bg.front()).map(Vector::dim)
    }

    /// Appends both sets in order and evicts from the front down to
    /// capacity. Nothing is stored if any vector is rejected.
    pub fn store(&mut self, fg_new: &[Vector], bg_new: &[Vector]) -> Result<()> {
        let dim = self
            .dim()
            .or_else(|| fg_new.first().or(bg_new.first()).map(Vector::dim));
        if let Some(dim) = dim {
            for v in fg_new.iter().chain(bg_new) {
                ensure_dim(dim, v.dim())?;
            }
        }
        let prep = |v: &Vector| {
            if self.normalize {
                v.normalized()
            } else {
                Ok(v.clone())
            }
        };
        let fg_new = fg_new.iter().map(prep).collect::<Result<Vec<_>>>()?;
        let bg_new = bg_new.iter().map(prep).collect::<Result<Vec<_>>>()?;
        push_bounded(&mut self.fg, fg_new, self.capacity);
        push_bounded(&mut self.bg, bg_new, self.capacity);
        Ok(())
    }

    pub fn sample(&self) -> Result<MemorySample> {
        if self.fg.is_empty() {
            return Err(Error::MissingBank(self.class_id));
        }
        let fg: Vec<Vector> = self.fg.iter().cloned().collect();
        let general = Vector::mean_of(&fg)?;
        Ok(MemorySample {
            fg,
            bg: self.bg.iter().cloned().collect(),
            general,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bank: ClassMemoryBank = serde_json::from_str(&s).map_err(|e| Error::json(path, e))?;
        if bank.capacity == 0 || bank.fg.len() > bank.capacity || bank.bg.len() > bank.capacity {
            return Err(Error::InvalidConfig(format!(
                "{}: stored features exceed capacity",
                path.display()
            )));
        }
        Ok(bank)
    }
}

fn push_bounded(store: &mut VecDeque<Vector>, new: Vec<Vector>, capacity: usize) {
    store.extend(new);
    while store.len() > capacity {
        store.pop_front();
    }
}

/// The three elements the memory loss needs for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySample {
    pub fg: Vec<Vector>,
    pub bg: Vec<Vector>,
    pub general: Vector,
}

/// Banks for every class seen so far, created on first store.
#[derive(Debug, Clone, Default)]
pub struct MemoryBanks {
    banks: BTreeMap<u64, ClassMemoryBank>,
    capacity: usize,
    normalize: bool,
}

impl MemoryBanks {
    pub fn new(cfg: &MemoryConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MemoryBanks {
            banks: BTreeMap::new(),
            capacity: cfg.capacity,
            normalize: cfg.normalize,
        })
    }

    pub fn store(&mut self, class_id: u64, fg: &[Vector], bg: &[Vector]) -> Result<()> {
        if !self.banks.contains_key(&class_id) {
            let bank = ClassMemoryBank::new(class_id, self.capacity, self.normalize)?;
            self.banks.insert(class_id, bank);
        }
        self.banks
            .get_mut(&class_id)
            .expect("inserted above")
            .store(fg, bg)
    }

    pub fn get(&self, class_id: u64) -> Option<&ClassMemoryBank> {
        self.banks.get(&class_id)
    }

    pub fn sample(&self, class_id: u64) -> Result<MemorySample> {
        self.banks
            .get(&class_id)
            .ok_or(Error::MissingBank(class_id))?
            .sample()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassMemoryBank> {
        self.banks.values()
    }
}

/// Memory loss for one query feature. `general` and `bg` are tape inputs so
/// the loss is differentiable in them too; pass leaves built from a
/// [`MemorySample`] to keep the bank detached.
pub fn memory_loss(
    tape: &mut Tape,
    general: &VarVec,
    bg: &[VarVec],
    query: &VarVec,
    cfg: &MemoryConfig,
) -> Result<Var> {
    cfg.validate()?;
    ensure_dim(general.dim(), query.dim())?;
    for b in bg {
        ensure_dim(general.dim(), b.dim())?;
    }
    let (g, f, bg) = if cfg.normalize {
        let g = tape.normalize(general)?;
        let f = tape.normalize(query)?;
        let bg = bg
            .iter()
            .map(|b| tape.normalize(b))
            .collect::<Result<Vec<_>>>()?;
        (g, f, bg)
    } else {
        (general.clone(), query.clone(), bg.to_vec())
    };
    let inv_tau = 1.0 / cfg.tau;
    let pos = tape.dot(&g, &f)?;
    let pos = tape.scale(pos, inv_tau);
    let mut logits = bg
        .iter()
        .map(|b| {
            let s = tape.dot(&g, b)?;
            Ok(tape.scale(s, inv_tau))
        })
        .collect::<Result<Vec<_>>>()?;
    logits.push(pos);
    let lse = tape.log_sum_exp(&logits)?;
    Ok(tape.sub(lse, pos))
}

/// Memory loss of a live query against a detached bank sample. Same value
/// as [`memory_loss`], but the negative logits do not involve the query, so
/// they are computed off-tape and enter as constants.
pub fn memory_loss_for_sample(
    tape: &mut Tape,
    sample: &MemorySample,
    query: &VarVec,
    cfg: &MemoryConfig,
) -> Result<Var> {
    cfg.validate()?;
    let dim = sample.general.dim();
    ensure_dim(dim, query.dim())?;
    let g = if cfg.normalize {
        sample.general.normalized()?
    } else {
        sample.general.clone()
    };
    let inv_tau = 1.0 / cfg.tau;
    let mut logits = Vec::with_capacity(sample.bg.len() + 1);
    for b in &sample.bg {
        ensure_dim(dim, b.dim())?;
        let dot: f64 = g
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .sum();
        let scale = if cfg.normalize {
            let n = b.norm();
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            inv_tau / n
        } else {
            inv_tau
        };
        logits.push(tape.constant(dot * scale));
    }
    let g = tape.var_vec(&g);
    let f = if cfg.normalize {
        tape.normalize(query)?
    } else {
        query.clone()
    };
    let pos = tape.dot(&g, &f)?;
    let pos = tape.scale(pos, inv_tau);
    logits.push(pos);
    let lse = tape.log_sum_exp(&logits)?;
    Ok(tape.sub(lse, pos))
}

/// Forward value only, on a scratch tape.
pub fn memory_loss_value(sample: &MemorySample, query: &Vector, cfg: &MemoryConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.var_vec(query);
    let l = memory_loss_for_sample(&mut tape, sample, &q, cfg)?;
    Ok(tape.value(l))
}

/// Mean memory loss over `(class_id, query)` pairs; every queried class
/// must have stored foreground features.
pub fn batch_memory_loss(
    tape: &mut Tape,
    banks: &MemoryBanks,
    queries: &[(u64, VarVec)],
    cfg: &MemoryConfig,
) -> Result<Var> {
    if queries.is_empty() {
        return Err(Error::Empty("memory queries"));
    }
    let mut samples: BTreeMap<u64, MemorySample> = BTreeMap::new();
    let mut losses = Vec::with_capacity(queries.len());
    for (class_id, q) in queries {
        if !samples.contains_key(class_id) {
            samples.insert(*class_id, banks.sample(*class_id)?);
        }
        losses.push(memory_loss_for_sample(tape, &samples[class_id], q, cfg)?);
    }
    tape.mean(&losses)
}
