//! Foreground/background partition of RoI feature grids.
//!
//! The instance mask, resampled to the RoI grid, decides for every spatial
//! location whether its C-channel feature vector belongs to the foreground
//! set or the background set. The foreground mean is the anchor used by both
//! the triplet and the memory losses.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarVec, Vector};
use crate::error::{Error, Result};

/// C×H×W feature grid, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiFeaturePatch {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RoiFeaturePatch {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "patch dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("roi patch"));
        }
        Ok(RoiFeaturePatch {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a patch from per-location feature vectors given in row-major
    /// (h, w) order.
    pub fn from_locations(height: usize, width: usize, features: &[Vector]) -> Result<Self> {
        let channels = features.first().ok_or(Error::Empty("roi locations"))?.dim();
        if features.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                actual: features.len(),
            });
        }
        let mut data = vec![0.0; channels * height * width];
        for (loc, f) in features.iter().enumerate() {
            crate::autodiff::ensure_dim(channels, f.dim())?;
            for (c, &v) in f.as_slice().iter().enumerate() {
                data[c * height * width + loc] = v;
            }
        }
        RoiFeaturePatch::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Feature vector at grid location (h, w).
    pub fn feature_at(&self, h: usize, w: usize) -> Vector {
        let plane = self.height * self.width;
        let loc = h * self.width + w;
        let v = (0..self.channels)
            .map(|c| self.data[c * plane + loc])
            .collect();
        Vector::new(v).expect("patch data validated on construction")
    }
}

/// H×W binary instance mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "mask dimensions must be >= 1, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(InstanceMask {
            height,
            width,
            bits,
        })
    }

    /// Parses rows of 0/1 values.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(height * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    actual: r.len(),
                });
            }
            bits.extend(r.iter().map(|&b| b != 0));
        }
        InstanceMask::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, h: usize, w: usize) -> bool {
        self.bits[h * self.width + w]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Foreground set, background set, and the foreground mean (anchor).
#[derive(Debug, Clone, PartialEq)]
pub struct FgBgPartition<V> {
    pub fg: Vec<V>,
    pub bg: Vec<V>,
    pub avg: V,
}

impl<V> FgBgPartition<V> {
    /// A triplet term needs at least one positive and one negative.
    pub fn has_negatives(&self) -> bool {
        !self.fg.is_empty() && !self.bg.is_empty()
    }
}

impl FgBgPartition<Vector> {
    /// Puts the partition on a tape; `avg` is recomputed there so that
    /// gradients reach the foreground features through it.
    pub fn to_tape(&self, tape: &mut Tape) -> Result<FgBgPartition<VarVec>> {
        let fg: Vec<VarVec> = self.fg.iter().map(|v| tape.var_vec(v)).collect();
        let bg: Vec<VarVec> = self.bg.iter().map(|v| tape.var_vec(v)).collect();
        let avg = tape.vec_mean(&fg)?;
        Ok(FgBgPartition { fg, bg, avg })
    }
}

/// Splits grid locations by mask bit. Location (h, w) is foreground iff the
/// mask bit there is set.
pub fn partition(patch: &RoiFeaturePatch, mask: &InstanceMask) -> Result<FgBgPartition<Vector>> {
    let (fg_idx, bg_idx) = split_locations(patch.height, patch.width, mask)?;
    let at = |&(h, w): &(usize, usize)| patch.feature_at(h, w);
    let fg: Vec<Vector> = fg_idx.iter().map(at).collect();
    let bg: Vec<Vector> = bg_idx.iter().map(at).collect();
    let avg = Vector::mean_of(&fg)?;
    Ok(FgBgPartition { fg, bg, avg })
}

/// Same split applied to per-location tape vectors in row-major order. Used
/// when the features are themselves outputs of a differentiable map.
pub fn partition_on_tape(
    tape: &mut Tape,
    height: usize,
    width: usize,
    locations: &[VarVec],
    mask: &InstanceMask,
) -> Result<FgBgPartition<VarVec>> {
    if locations.len() != height * width {
        return Err(Error::DimensionMismatch {
            expected: height * width,
            actual: locations.len(),
        });
    }
    let (fg_idx, bg_idx) = split_locations(height, width, mask)?;
    let at = |&(h, w): &(usize, usize)| locations[h * width + w].clone();
    let fg: Vec<VarVec> = fg_idx.iter().map(at).collect();
    let bg: Vec<VarVec> = bg_idx.iter().map(at).collect();
    let avg = tape.vec_mean(&fg)?;
    Ok(FgBgPartition { fg, bg, avg })
}

type Locations = Vec<(usize, usize)>;

fn split_locations(
    height: usize,
    width: usize,
    mask: &InstanceMask,
) -> Result<(Locations, Locations)> {
    if mask.height != height || mask.width != width {
        return Err(Error::DimensionMismatch {
            expected: height * width,
            actual: mask.height * mask.width,
        });
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for h in 0..height {
        for w in 0..width {
            if mask.get(h, w) {
                fg.push((h, w));
            } else {
                bg.push((h, w));
            }
        }
    }
    if fg.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok((fg, bg))
}

/// Nearest-neighbour resampling: target (i, j) reads source
/// (⌊i·H/th⌋, ⌊j·W/tw⌋).
pub fn downsample_mask(
    mask: &InstanceMask,
    target_h: usize,
    target_w: usize,
) -> Result<InstanceMask> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "target dimensions must be >= 1, got {target_h}x{target_w}"
        )));
    }
    let mut bits = Vec::with_capacity(target_h * target_w);
    for i in 0..target_h {
        let si = i * mask.height / target_h;
        for j in 0..target_w {
            let sj = j * mask.width / target_w;
            bits.push(mask.get(si, sj));
        }
    }
    InstanceMask::new(target_h, target_w, bits)
}
