//! Total training objective: `base + α·triplet + β·memory`.
//!
//! The base term stands for the detector's own loss and is supplied by the
//! caller as an opaque tape scalar.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::memory::MemoryConfig;
use crate::triplet::TripletConfig;

pub const DEFAULT_ALPHA: f64 = 1e-1;
pub const DEFAULT_BETA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub triplet: TripletConfig,
    pub memory: MemoryConfig,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        CompositeConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            triplet: TripletConfig::default(),
            memory: MemoryConfig::default(),
        }
    }
}

impl CompositeConfig {
    pub fn triplet_only(alpha: f64) -> Self {
        CompositeConfig {
            alpha,
            beta: 0.0,
            ..Self::default()
        }
    }

    pub fn memory_only(beta: f64) -> Self {
        CompositeConfig {
            alpha: 0.0,
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        self.triplet.validate()?;
        self.memory.validate()
    }
}

/// Caller-supplied base loss.
#[derive(Debug, Clone, Copy)]
pub struct BaseLossTerm(pub Var);

/// Combines the terms. An absent novel term contributes exactly zero.
pub fn final_loss(
    tape: &mut Tape,
    base: BaseLossTerm,
    triplet: Option<Var>,
    memory: Option<Var>,
    cfg: &CompositeConfig,
) -> Result<Var> {
    cfg.validate()?;
    let finite = |tape: &Tape, v: Var, what| {
        if tape.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    };
    finite(tape, base.0, "base loss")?;
    let mut total = base.0;
    if let Some(t) = triplet {
        finite(tape, t, "triplet loss")?;
        let w = tape.scale(t, cfg.alpha);
        total = tape.add(total, w);
    }
    if let Some(m) = memory {
        finite(tape, m, "memory loss")?;
        let w = tape.scale(m, cfg.beta);
        total = tape.add(total, w);
    }
    Ok(total)
}
