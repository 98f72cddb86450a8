//! Instance triplet loss.
//!
//! Per RoI, the foreground mean is the anchor, foreground locations are the
//! positives and background locations the negatives:
//!
//! ```text
//! L = max( mean_i d(avg, fg_i) − mean_j d(avg, bg_j) + margin, 0 )
//! ```
//!
//! with `d` the cosine distance. Set-valued terms are reduced by the mean
//! distance over the set.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, VarVec, Vector};
use crate::error::{Error, Result};
use crate::roi::FgBgPartition;

pub const DEFAULT_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: DEFAULT_MARGIN,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.margin) {
            return Err(Error::InvalidConfig(format!(
                "margin must lie in [0, 2], got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Triplet loss of one RoI, recorded on `tape`.
pub fn triplet_loss(
    tape: &mut Tape,
    part: &FgBgPartition<VarVec>,
    cfg: &TripletConfig,
) -> Result<Var> {
    cfg.validate()?;
    if part.fg.is_empty() {
        return Err(Error::Empty("triplet positives"));
    }
    if part.bg.is_empty() {
        return Err(Error::Empty("triplet negatives"));
    }
    let pos = part
        .fg
        .iter()
        .map(|f| tape.cosine_distance(&part.avg, f))
        .collect::<Result<Vec<_>>>()?;
    let neg = part
        .bg
        .iter()
        .map(|b| tape.cosine_distance(&part.avg, b))
        .collect::<Result<Vec<_>>>()?;
    let pos = tape.mean(&pos)?;
    let neg = tape.mean(&neg)?;
    let diff = tape.sub(pos, neg);
    let pre = tape.add_const(diff, cfg.margin);
    Ok(tape.relu(pre))
}

/// Mean triplet loss over the partitions that have both positives and
/// negatives. Others are skipped.
pub fn batch_triplet_loss(
    tape: &mut Tape,
    parts: &[FgBgPartition<VarVec>],
    cfg: &TripletConfig,
) -> Result<Var> {
    let losses = parts
        .iter()
        .filter(|p| p.has_negatives())
        .map(|p| triplet_loss(tape, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    if losses.is_empty() {
        return Err(Error::Empty("eligible triplet partitions"));
    }
    tape.mean(&losses)
}

/// Forward value only, on a scratch tape.
pub fn triplet_loss_value(part: &FgBgPartition<Vector>, cfg: &TripletConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let on_tape = part.to_tape(&mut tape)?;
    let loss = triplet_loss(&mut tape, &on_tape, cfg)?;
    Ok(tape.value(loss))
}
