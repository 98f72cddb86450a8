//! Instance masks: polygon rasterization and COCO run-length encoding.
//!
//! Run-length counts follow the COCO convention: column-major pixel order,
//! alternating runs starting with a (possibly empty) run of zeros. Both the
//! plain integer list and the compressed string form are accepted.
//!
//! Polygons are filled with the even-odd rule sampled at pixel centres, so an
//! axis-aligned rectangle with integer corners covers exactly `w·h` pixels.
//! Separate rings of one segmentation are unioned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(RleJson),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleJson {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: RleCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Raw(Vec<u32>),
    Compressed(String),
}

impl Segmentation {
    /// Rectangle polygon covering `[x, y, w, h]`.
    pub fn from_bbox(bbox: [f64; 4]) -> Self {
        let [x, y, w, h] = bbox;
        Segmentation::Polygons(vec![vec![x, y, x + w, y, x + w, y + h, x, y + h]])
    }

    /// Decodes or rasterizes onto a `height × width` canvas.
    pub fn to_rle(&self, height: u32, width: u32) -> Result<Rle> {
        match self {
            Segmentation::Polygons(rings) => rasterize_polygons(rings, height, width),
            Segmentation::Rle(json) => {
                let rle = Rle::from_json(json)?;
                if (rle.height, rle.width) != (height, width) {
                    return Err(Error::MalformedMask(format!(
                        "rle size {}x{} does not match canvas {height}x{width}",
                        rle.height, rle.width
                    )));
                }
                Ok(rle)
            }
        }
    }
}

/// Binary mask as alternating run lengths in column-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rle {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl Rle {
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != height as u64 * width as u64 {
            return Err(Error::MalformedMask(format!(
                "run lengths sum to {total}, expected {}",
                height as u64 * width as u64
            )));
        }
        Ok(Rle {
            height,
            width,
            counts,
        })
    }

    /// Encodes a row-major bitmap.
    pub fn from_row_major(height: u32, width: u32, bits: &[bool]) -> Result<Self> {
        let (h, w) = (height as usize, width as usize);
        if bits.len() != h * w {
            return Err(Error::DimensionMismatch {
                expected: h * w,
                actual: bits.len(),
            });
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                let b = bits[y * w + x];
                if b != current {
                    counts.push(run);
                    run = 0;
                    current = b;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle::new(height, width, counts)
    }

    pub fn from_json(json: &RleJson) -> Result<Self> {
        let [h, w] = json.size;
        let counts = match &json.counts {
            RleCounts::Raw(c) => c.clone(),
            RleCounts::Compressed(s) => decode_counts(s)?,
        };
        Rle::new(h, w, counts)
    }

    pub fn to_json(&self, compressed: bool) -> RleJson {
        RleJson {
            size: [self.height, self.width],
            counts: if compressed {
                RleCounts::Compressed(encode_counts(&self.counts))
            } else {
                RleCounts::Raw(self.counts.clone())
            },
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn to_row_major(&self) -> Vec<bool> {
        let (h, w) = (self.height as usize, self.width as usize);
        let mut bits = vec![false; h * w];
        for (start, end) in self.runs() {
            for idx in start..end {
                let (x, y) = (idx as usize / h, idx as usize % h);
                bits[y * w + x] = true;
            }
        }
        bits
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }

    /// Half-open foreground intervals in column-major linear index.
    fn runs(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::with_capacity(self.counts.len() / 2);
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let next = pos + c as u64;
            if i % 2 == 1 && c > 0 {
                out.push((pos, next));
            }
            pos = next;
        }
        out
    }

    pub fn intersection_area(&self, other: &Rle) -> Result<u64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::MalformedMask(format!(
                "cannot compare {}x{} mask with {}x{} mask",
                self.height, self.width, other.height, other.width
            )));
        }
        let (a, b) = (self.runs(), other.runs());
        let (mut i, mut j, mut inter) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                inter += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(inter)
    }

    /// Pixel IoU; 0 when both masks are empty.
    pub fn iou(&self, other: &Rle) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }
}

/// Even-odd fill of each ring at pixel centres, unioned across rings.
pub fn rasterize_polygons(rings: &[Vec<f64>], height: u32, width: u32) -> Result<Rle> {
    let (h, w) = (height as usize, width as usize);
    let mut bits = vec![false; h * w];
    for ring in rings {
        if ring.len() < 6 || ring.len() % 2 != 0 {
            return Err(Error::MalformedMask(format!(
                "polygon ring needs an even number (>= 6) of coordinates, got {}",
                ring.len()
            )));
        }
        if ring.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedMask("non-finite polygon coordinate".into()));
        }
        let pts: Vec<(f64, f64)> = ring.chunks(2).map(|p| (p[0], p[1])).collect();
        let mut xs = Vec::new();
        for y in 0..h {
            let yc = y as f64 + 0.5;
            xs.clear();
            for k in 0..pts.len() {
                let (x0, y0) = pts[k];
                let (x1, y1) = pts[(k + 1) % pts.len()];
                if (y0 <= yc) != (y1 <= yc) {
                    xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                // pixel j is inside iff pair[0] <= j + 0.5 < pair[1]
                let lo = (pair[0] - 0.5).ceil().max(0.0);
                let hi = (pair[1] - 0.5).ceil().min(w as f64);
                if hi <= lo {
                    continue;
                }
                for x in lo as usize..hi as usize {
                    bits[y * w + x] = true;
                }
            }
        }
    }
    Rle::from_row_major(height, width, &bits)
}

/// COCO compressed-string decoding of run lengths.
pub fn decode_counts(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&byte) = bytes.get(p) else {
                return Err(Error::MalformedMask("truncated rle string".into()));
            };
            if !(48..48 + 64).contains(&byte) {
                return Err(Error::MalformedMask(format!(
                    "invalid rle character {:?}",
                    byte as char
                )));
            }
            let c = (byte - 48) as i64;
            if k >= 12 {
                return Err(Error::MalformedMask("rle value too long".into()));
            }
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| {
            u32::try_from(c).map_err(|_| Error::MalformedMask(format!("invalid run length {c}")))
        })
        .collect()
}

/// COCO compressed-string encoding of run lengths.
pub fn encode_counts(counts: &[u32]) -> String {
    let mut out = String::new();
    for i in 0..counts.len() {
        let mut x = counts[i] as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut c = x & 0x1f;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c as u8 + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

/// `[x, y, w, h]` IoU; 0 when the union is empty.
pub fn iou_bbox(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0.0);
    let ih = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Pixel IoU of two segmentations on a shared canvas.
pub fn iou_mask(a: &Segmentation, b: &Segmentation, height: u32, width: u32) -> Result<f64> {
    a.to_rle(height, width)?.iou(&b.to_rle(height, width)?)
}
