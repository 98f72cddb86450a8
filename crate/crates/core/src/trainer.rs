//! Synthetic end-to-end training of a linear feature projection under the
//! composite objective.
//!
//! Each RoI is an H×W grid of D-dimensional features. Foreground locations
//! are `μ_c + noise`, background locations are `μ_c + ε·u_c + noise`, so the
//! two sets are barely separable at the start. The only learned parameter is
//! a D×D matrix applied to every location, initialised to the identity.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, VarVec, Vector};
use crate::composite::{final_loss, BaseLossTerm, CompositeConfig};
use crate::error::{Error, Result};
use crate::memory::{batch_memory_loss, MemoryBanks};
use crate::roi::{partition, partition_on_tape, FgBgPartition, InstanceMask, RoiFeaturePatch};
use crate::stats::{read_records, write_records};
use crate::triplet::batch_triplet_loss;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub dim: usize,
    pub patches_per_class: usize,
    pub height: usize,
    pub width: usize,
    /// Background offset along the class direction `u_c`.
    pub separation: f64,
    /// Per-coordinate standard deviation of the additive noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            num_classes: 2,
            dim: 8,
            patches_per_class: 8,
            height: 4,
            width: 4,
            separation: 0.05,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub class_id: u64,
    pub patch: RoiFeaturePatch,
    pub mask: InstanceMask,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.patches_per_class == 0 {
            return Err(Error::InvalidConfig(
                "num_classes and patches_per_class must be >= 1".into(),
            ));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "dim must be >= 2, got {}",
                self.dim
            )));
        }
        if self.height * self.width < 2 {
            return Err(Error::InvalidConfig(
                "a patch needs at least two locations".into(),
            ));
        }
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.separation) && ok(self.noise) && self.noise > 0.0) {
            return Err(Error::InvalidConfig(
                "separation must be >= 0 and noise > 0".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic in `seed`. Every mask has at least one foreground and
    /// one background location.
    pub fn generate(&self) -> Result<Vec<LabeledPatch>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let locs = self.height * self.width;
        let mut out = Vec::with_capacity(self.num_classes * self.patches_per_class);
        for c in 0..self.num_classes {
            let mu = unit(gaussian(&mut rng, self.dim));
            // direction orthogonal to the class mean
            let mut u = gaussian(&mut rng, self.dim);
            let proj: f64 = u.iter().zip(&mu).map(|(a, b)| a * b).sum();
            u.iter_mut().zip(&mu).for_each(|(a, b)| *a -= proj * b);
            let u = unit(u);
            for _ in 0..self.patches_per_class {
                let mut bits: Vec<bool> = (0..locs).map(|_| rng.random_bool(0.5)).collect();
                if !bits.iter().any(|&b| b) {
                    bits[rng.random_range(0..locs)] = true;
                }
                if bits.iter().all(|&b| b) {
                    bits[rng.random_range(0..locs)] = false;
                }
                let features = bits
                    .iter()
                    .map(|&fg| {
                        let noise = gaussian(&mut rng, self.dim);
                        let v = (0..self.dim)
                            .map(|i| {
                                let shift = if fg { 0.0 } else { self.separation * u[i] };
                                mu[i] + shift + self.noise * noise[i]
                            })
                            .collect();
                        Vector::new(v)
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(LabeledPatch {
                    class_id: c as u64,
                    patch: RoiFeaturePatch::from_locations(self.height, self.width, &features)?,
                    mask: InstanceMask::new(self.height, self.width, bits)?,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: SyntheticTask,
    pub loss: CompositeConfig,
    pub steps: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: SyntheticTask::default(),
            loss: CompositeConfig::default(),
            steps: 200,
            lr: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.loss.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&s).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub triplet: f64,
    pub memory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `final_loss / initial_loss`; null when the initial loss is zero.
    pub final_initial_ratio: Option<f64>,
    /// Per-class discrimination gap before and after training.
    pub initial_gap: Vec<f64>,
    pub final_gap: Vec<f64>,
    pub wall_time_secs: f64,
    /// Row-major D×D projection after training.
    pub projection: Vec<f64>,
    pub trace: Vec<StepRecord>,
}

impl TrainReport {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loss).collect()
    }

    pub fn mean_gap(gaps: &[f64]) -> f64 {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self).map_err(|e| Error::json(path, e))?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        write_records(&self.trace, path)
    }
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<StepRecord>> {
    read_records(path)
}

pub fn read_report(path: &Path) -> Result<TrainReport> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

fn project(w: &[f64], dim: usize, v: &Vector) -> Result<Vector> {
    let x = v.as_slice();
    Vector::new(
        (0..dim)
            .map(|i| (0..dim).map(|j| w[i * dim + j] * x[j]).sum())
            .collect(),
    )
}

fn project_partition(w: &[f64], dim: usize, lp: &LabeledPatch) -> Result<FgBgPartition<Vector>> {
    let part = partition(&lp.patch, &lp.mask)?;
    let fg = part
        .fg
        .iter()
        .map(|v| project(w, dim, v))
        .collect::<Result<Vec<_>>>()?;
    let bg = part
        .bg
        .iter()
        .map(|v| project(w, dim, v))
        .collect::<Result<Vec<_>>>()?;
    let avg = Vector::mean_of(&fg)?;
    Ok(FgBgPartition { fg, bg, avg })
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum();
    dot / (a.norm() * b.norm())
}

/// Per class: mean over its RoIs of
/// `mean cos(F_avg, fg) − mean cos(F_avg, bg)` under projection `w`.
pub fn discrimination_gap(
    data: &[LabeledPatch],
    w: &[f64],
    dim: usize,
    num_classes: usize,
) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for lp in data {
        let p = match project_partition(w, dim, lp) {
            Ok(p) if !p.bg.is_empty() => p,
            Ok(_) | Err(Error::EmptyForeground) => continue,
            Err(e) => return Err(e),
        };
        let pos = p.fg.iter().map(|f| cosine(&p.avg, f)).sum::<f64>() / p.fg.len() as f64;
        let neg = p.bg.iter().map(|b| cosine(&p.avg, b)).sum::<f64>() / p.bg.len() as f64;
        sums[lp.class_id as usize] += pos - neg;
        counts[lp.class_id as usize] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect())
}

fn store_detached(
    banks: &mut MemoryBanks,
    data: &[LabeledPatch],
    w: &[f64],
    dim: usize,
) -> Result<()> {
    for lp in data {
        match project_partition(w, dim, lp) {
            Ok(p) => banks.store(lp.class_id, &p.fg, &p.bg)?,
            Err(Error::EmptyForeground) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

struct StepOutput {
    record: StepRecord,
    grad: Vec<f64>,
}

fn step(
    data: &[LabeledPatch],
    w: &[f64],
    dim: usize,
    banks: &MemoryBanks,
    cfg: &CompositeConfig,
    index: usize,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let weights: Vec<Var> = w.iter().map(|&x| tape.var(x)).collect();
    let mut parts = Vec::with_capacity(data.len());
    let mut classes = Vec::with_capacity(data.len());
    for lp in data {
        let (h, wd) = (lp.patch.height(), lp.patch.width());
        let mut locs = Vec::with_capacity(h * wd);
        for r in 0..h {
            for c in 0..wd {
                let x = tape.var_vec(&lp.patch.feature_at(r, c));
                locs.push(tape.matvec(&weights, dim, &x)?);
            }
        }
        match partition_on_tape(&mut tape, h, wd, &locs, &lp.mask) {
            Ok(p) => {
                parts.push(p);
                classes.push(lp.class_id);
            }
            Err(Error::EmptyForeground) => {
                log::warn!(
                    "step {index}: skipping RoI of class {} with empty foreground",
                    lp.class_id
                );
            }
            Err(e) => return Err(e),
        }
    }
    // a term with no eligible RoI is absent, not an error
    let triplet = if cfg.alpha > 0.0 && parts.iter().any(|p| p.has_negatives()) {
        Some(batch_triplet_loss(&mut tape, &parts, &cfg.triplet)?)
    } else {
        None
    };
    let memory = if cfg.beta > 0.0 && !parts.is_empty() {
        let queries: Vec<(u64, VarVec)> = classes
            .iter()
            .zip(&parts)
            .map(|(&c, p)| (c, p.avg.clone()))
            .collect();
        Some(batch_memory_loss(&mut tape, banks, &queries, &cfg.memory)?)
    } else {
        None
    };
    let base = tape.constant(0.0);
    let total = match final_loss(&mut tape, BaseLossTerm(base), triplet, memory, cfg) {
        Err(Error::NonFinite(_)) => return Err(Error::Diverged(index)),
        other => other?,
    };
    let loss = tape.value(total);
    if !loss.is_finite() {
        return Err(Error::Diverged(index));
    }
    let grads = tape.backward(total)?;
    let grad: Vec<f64> = weights.iter().map(|&v| grads.wrt(v)).collect();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged(index));
    }
    Ok(StepOutput {
        record: StepRecord {
            step: index,
            loss,
            triplet: triplet.map_or(0.0, |t| tape.value(t)),
            memory: memory.map_or(0.0, |m| tape.value(m)),
        },
        grad,
    })
}

/// Full-batch gradient descent on the projection. The base loss is zero.
///
/// Banks are primed with the initial projected features, and after every
/// step the features computed in that step are pushed (detached).
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let task = &cfg.task;
    let dim = task.dim;
    let data = task.generate()?;
    let mut w = vec![0.0; dim * dim];
    for i in 0..dim {
        w[i * dim + i] = 1.0;
    }
    let initial_gap = discrimination_gap(&data, &w, dim, task.num_classes)?;
    let mut banks = MemoryBanks::new(&cfg.loss.memory)?;
    store_detached(&mut banks, &data, &w, dim)?;

    let mut trace = Vec::with_capacity(cfg.steps);
    for i in 0..cfg.steps {
        let out = step(&data, &w, dim, &banks, &cfg.loss, i)?;
        store_detached(&mut banks, &data, &w, dim)?;
        for (p, g) in w.iter_mut().zip(&out.grad) {
            *p -= cfg.lr * g;
        }
        // an unrepresentable parameter norm makes every cosine NaN downstream
        if !w.iter().map(|p| p * p).sum::<f64>().is_finite() {
            return Err(Error::Diverged(i));
        }
        log::debug!("step {i} loss {:.6}", out.record.loss);
        trace.push(out.record);
    }
    let final_gap = discrimination_gap(&data, &w, dim, task.num_classes)?;
    let initial_loss = trace.first().map_or(0.0, |r| r.loss);
    let final_loss = trace.last().map_or(0.0, |r| r.loss);
    Ok(TrainReport {
        steps: cfg.steps,
        initial_loss,
        final_loss,
        final_initial_ratio: (initial_loss != 0.0).then(|| final_loss / initial_loss),
        initial_gap,
        final_gap,
        wall_time_secs: start.elapsed().as_secs_f64(),
        projection: w,
        trace,
    })
}
