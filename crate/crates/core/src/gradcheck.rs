//! Central finite-difference checks of the loss gradients.
//!
//! The FD estimate is the central difference at `h = 1e-4` with one
//! Richardson step, `(4·D(h/2) − D(h)) / 3`, which cancels the `h²` term.
//! A coordinate is compared only when `|FD| > 1e-6`; the error there is
//! `|analytic − FD| / |FD|`. Triplet configurations within `1e-3` of the
//! hinge are resampled because the loss is not differentiable there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, VarVec, Vector};
use crate::composite::{final_loss, BaseLossTerm, CompositeConfig};
use crate::error::{Error, Result};
use crate::memory::{memory_loss, MemoryConfig};
use crate::roi::FgBgPartition;
use crate::triplet::{triplet_loss, TripletConfig};

pub const STEP: f64 = 1e-4;
pub const MIN_FD: f64 = 1e-6;
pub const HINGE_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Compares reverse-mode gradients of `f` against central differences over
/// every coordinate of every input vector.
pub fn compare<F>(inputs: &[Vector], f: F) -> Result<Comparison>
where
    F: Fn(&mut Tape, &[VarVec]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<VarVec> = inputs.iter().map(|v| tape.var_vec(v)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |vs: &[Vector]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<VarVec> = vs.iter().map(|v| t.var_vec(v)).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out))
    };

    let mut checked = 0;
    let mut max_rel_err: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt_vec(var);
        for (i, a) in analytic.iter().enumerate() {
            let central = |h: f64| -> Result<f64> {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                plus[k] = nudge(&inputs[k], i, h)?;
                minus[k] = nudge(&inputs[k], i, -h)?;
                Ok((eval(&plus)? - eval(&minus)?) / (2.0 * h))
            };
            let fd = (4.0 * central(STEP / 2.0)? - central(STEP)?) / 3.0;
            if fd.abs() > MIN_FD {
                checked += 1;
                max_rel_err = max_rel_err.max((a - fd).abs() / fd.abs());
            }
        }
    }
    Ok(Comparison {
        checked,
        max_rel_err,
    })
}

fn nudge(v: &Vector, i: usize, h: f64) -> Result<Vector> {
    let mut x = v.as_slice().to_vec();
    x[i] += h;
    Vector::new(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Triplet,
    Memory,
    Composite,
}

pub const ALL_LOSSES: [LossKind; 3] = [LossKind::Triplet, LossKind::Memory, LossKind::Composite];

/// A random loss configuration: the input vectors and how to combine them.
#[derive(Debug, Clone)]
pub struct Trial {
    pub kind: LossKind,
    pub inputs: Vec<Vector>,
    n_fg: usize,
    n_bg: usize,
    triplet: TripletConfig,
    memory: MemoryConfig,
    weights: CompositeConfig,
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-2 {
            return Vector::new(v).expect("finite");
        }
    }
}

fn pre_hinge(fg: &[Vector], bg: &[Vector], margin: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let part = FgBgPartition {
        fg: fg.to_vec(),
        bg: bg.to_vec(),
        avg: Vector::mean_of(fg)?,
    }
    .to_tape(&mut tape)?;
    let pos = part
        .fg
        .iter()
        .map(|f| tape.cosine_distance(&part.avg, f).map(|v| tape.value(v)))
        .collect::<Result<Vec<_>>>()?;
    let neg = part
        .bg
        .iter()
        .map(|b| tape.cosine_distance(&part.avg, b).map(|v| tape.value(v)))
        .collect::<Result<Vec<_>>>()?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(mean(&pos) - mean(&neg) + margin)
}

impl Trial {
    pub fn random(kind: LossKind, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dim = rng.random_range(2..=6);
        let n_fg = rng.random_range(1..=4);
        let n_bg = rng.random_range(1..=4);
        let memory = MemoryConfig {
            tau: rng.random_range(0.1..2.0),
            normalize: rng.random_bool(0.5),
            ..MemoryConfig::default()
        };
        let weights = CompositeConfig {
            alpha: rng.random_range(0.0..1.0),
            beta: rng.random_range(0.0..1.0),
            ..CompositeConfig::default()
        };
        loop {
            let margin = rng.random_range(0.0..2.0);
            let fg: Vec<Vector> = (0..n_fg).map(|_| random_vector(rng, dim)).collect();
            let bg: Vec<Vector> = (0..n_bg).map(|_| random_vector(rng, dim)).collect();
            if matches!(kind, LossKind::Triplet | LossKind::Composite)
                && pre_hinge(&fg, &bg, margin)?.abs() <= HINGE_GUARD
            {
                continue;
            }
            let mut inputs = fg;
            inputs.extend(bg);
            if matches!(kind, LossKind::Memory | LossKind::Composite) {
                // bank general feature and the query
                inputs.push(random_vector(rng, dim));
                inputs.push(random_vector(rng, dim));
            }
            if kind == LossKind::Composite {
                inputs.push(Vector::new(vec![rng.random_range(-2.0..2.0)])?);
            }
            return Ok(Trial {
                kind,
                inputs,
                n_fg,
                n_bg,
                triplet: TripletConfig { margin },
                memory,
                weights,
            });
        }
    }

    fn loss(&self, tape: &mut Tape, x: &[VarVec]) -> Result<Var> {
        let (fg, rest) = x.split_at(self.n_fg);
        let (bg, rest) = rest.split_at(self.n_bg);
        let triplet = |tape: &mut Tape| -> Result<Var> {
            let avg = tape.vec_mean(fg)?;
            let part = FgBgPartition {
                fg: fg.to_vec(),
                bg: bg.to_vec(),
                avg,
            };
            triplet_loss(tape, &part, &self.triplet)
        };
        match self.kind {
            LossKind::Triplet => triplet(tape),
            LossKind::Memory => memory_loss(tape, &rest[0], bg, &rest[1], &self.memory),
            LossKind::Composite => {
                let t = triplet(tape)?;
                let m = memory_loss(tape, &rest[0], bg, &rest[1], &self.memory)?;
                let base = rest[2].elems()[0];
                let cfg = CompositeConfig {
                    triplet: self.triplet,
                    memory: self.memory,
                    ..self.weights
                };
                final_loss(tape, BaseLossTerm(base), Some(t), Some(m), &cfg)
            }
        }
    }

    pub fn compare(&self) -> Result<Comparison> {
        compare(&self.inputs, |t, x| self.loss(t, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub kind: LossKind,
    pub trials: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Configurations per loss.
    pub trials: usize,
    /// Configurations (over all losses) with some coordinate above tolerance.
    pub failures: usize,
    pub tolerance: f64,
    pub per_loss: Vec<LossSummary>,
}

/// Runs `trials` random configurations for each loss.
pub fn run(trials: usize, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be finite and >= 0, got {tolerance}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_loss = Vec::new();
    for kind in ALL_LOSSES {
        let mut failures = 0;
        let mut max_rel_err: f64 = 0.0;
        for _ in 0..trials {
            let c = Trial::random(kind, &mut rng)?.compare()?;
            max_rel_err = max_rel_err.max(c.max_rel_err);
            // a trial with nothing to compare is only accepted at a positive tolerance
            if c.max_rel_err > tolerance || (tolerance == 0.0 && c.checked == 0) {
                failures += 1;
            }
        }
        per_loss.push(LossSummary {
            kind,
            trials,
            failures,
            max_rel_err,
        });
    }
    Ok(GradCheckReport {
        trials,
        failures: per_loss.iter().map(|l| l.failures).sum(),
        tolerance,
        per_loss,
    })
}
