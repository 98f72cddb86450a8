//! COCO-style detection and instance-segmentation evaluation.
//!
//! Semantics follow the reference COCO evaluator:
//!
//! * IoU thresholds 0.50:0.05:0.95, 101 recall points, detection caps
//!   1/10/100, area buckets split at 32² and 96² pixels.
//! * Per image and category, detections are taken in descending score order
//!   (stable for ties) and each is matched to the still-unmatched ground truth
//!   with the highest IoU at or above the threshold, preferring ground truth
//!   inside the current area bucket.
//! * Precision is made monotone from the right and sampled at the recall
//!   points; AP is the mean of those samples. A category with no ground truth
//!   in a bucket scores −1 there and is left out of the means.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::AnnotationSet;
use crate::error::{Error, Result};
use crate::mask::{iou_bbox, Rle, Segmentation};

pub const UNDEFINED: f64 = -1.0;
pub const MAX_DETS: [usize; 3] = [1, 10, 100];
pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const LARGE_AREA: f64 = 96.0 * 96.0;
const AREA_RANGES: [(f64, f64); 4] = [
    (0.0, 1e10),
    (0.0, SMALL_AREA),
    (SMALL_AREA, LARGE_AREA),
    (LARGE_AREA, 1e10),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouType {
    Bbox,
    Segm,
}

impl FromStr for IouType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bbox" => Ok(IouType::Bbox),
            "segm" => Ok(IouType::Segm),
            other => Err(Error::InvalidConfig(format!(
                "iou type must be bbox or segm, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for IouType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IouType::Bbox => "bbox",
            IouType::Segm => "segm",
        })
    }
}

/// One scored prediction. The mask is read from `segmentation` (COCO result
/// files) or `mask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub bbox: [f64; 4],
    #[serde(
        default,
        rename = "segmentation",
        alias = "mask",
        skip_serializing_if = "Option::is_none"
    )]
    pub mask: Option<Segmentation>,
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub ar_small: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
}

impl EvalResult {
    fn undefined() -> Self {
        EvalResult {
            ap: UNDEFINED,
            ap50: UNDEFINED,
            ap75: UNDEFINED,
            ap_small: UNDEFINED,
            ap_medium: UNDEFINED,
            ap_large: UNDEFINED,
            ar1: UNDEFINED,
            ar10: UNDEFINED,
            ar_small: UNDEFINED,
            ar_medium: UNDEFINED,
            ar_large: UNDEFINED,
        }
    }

    pub fn fields(&self) -> [(&'static str, f64); 11] {
        [
            ("ap", self.ap),
            ("ap50", self.ap50),
            ("ap75", self.ap75),
            ("ap_small", self.ap_small),
            ("ap_medium", self.ap_medium),
            ("ap_large", self.ap_large),
            ("ar1", self.ar1),
            ("ar10", self.ar10),
            ("ar_small", self.ar_small),
            ("ar_medium", self.ar_medium),
            ("ar_large", self.ar_large),
        ]
    }

    fn fields_mut(&mut self) -> [&mut f64; 11] {
        [
            &mut self.ap,
            &mut self.ap50,
            &mut self.ap75,
            &mut self.ap_small,
            &mut self.ap_medium,
            &mut self.ap_large,
            &mut self.ar1,
            &mut self.ar10,
            &mut self.ar_small,
            &mut self.ar_medium,
            &mut self.ar_large,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_type: IouType,
    pub mean: EvalResult,
    pub per_category: BTreeMap<u64, EvalResult>,
}

/// `[0.50, 0.55, …, 0.95]`, spaced like `linspace(0.5, 0.95, 10)`.
pub fn iou_thresholds() -> Vec<f64> {
    let step = (0.95 - 0.5) / 9.0;
    (0..10).map(|i| 0.5 + i as f64 * step).collect()
}

/// `[0.00, 0.01, …, 1.00]`.
pub fn recall_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 * 0.01).collect()
}

struct Gt {
    area: f64,
}

struct Dt {
    score: f64,
    area: f64,
}

/// Ground truth and detections of one (image, category) cell, detections
/// already sorted and capped, plus their IoU matrix `[dt][gt]`.
struct Cell {
    gts: Vec<Gt>,
    dts: Vec<Dt>,
    ious: Vec<Vec<f64>>,
}

struct ImageEval {
    scores: Vec<f64>,
    /// `[threshold][dt]`
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    num_gt: usize,
}

/// Runs the full evaluation and returns per-category and mean summaries.
pub fn evaluate(
    gt: &AnnotationSet,
    dets: &[DetectionRecord],
    iou_type: IouType,
) -> Result<EvalReport> {
    let images: HashMap<u64, (u32, u32)> = gt
        .images
        .iter()
        .map(|i| (i.id, (i.height, i.width)))
        .collect();
    let categories = gt.category_ids();
    if let Some(a) = gt.annotations.iter().find(|a| a.iscrowd != 0) {
        return Err(Error::CrowdAnnotation(a.id));
    }
    for (i, d) in dets.iter().enumerate() {
        if !categories.contains(&d.category_id) {
            return Err(Error::UnknownCategory(d.category_id));
        }
        if !images.contains_key(&d.image_id) {
            return Err(Error::UnknownImage(d.image_id));
        }
        if !d.score.is_finite() {
            return Err(Error::NonFinite("detection score"));
        }
        if d.bbox[2] < 0.0 || d.bbox[3] < 0.0 || d.bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAnnotations(format!(
                "detection {i} has invalid bbox {:?}",
                d.bbox
            )));
        }
        if iou_type == IouType::Segm && d.mask.is_none() {
            return Err(Error::MissingMask(i));
        }
    }

    let max_det = *MAX_DETS.last().unwrap();
    let mut cells: BTreeMap<(u64, u64), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, a) in gt.annotations.iter().enumerate() {
        cells
            .entry((a.category_id, a.image_id))
            .or_default()
            .0
            .push(i);
    }
    for (i, d) in dets.iter().enumerate() {
        cells
            .entry((d.category_id, d.image_id))
            .or_default()
            .1
            .push(i);
    }

    let mut by_category: BTreeMap<u64, Vec<Cell>> =
        categories.iter().map(|&c| (c, Vec::new())).collect();
    for (&(cat, img), (gt_idx, dt_idx)) in &cells {
        let (h, w) = images[&img];
        let mut dt_idx = dt_idx.clone();
        // stable: equal scores keep input order
        dt_idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
        dt_idx.truncate(max_det);
        let cell = build_cell(gt, dets, gt_idx, &dt_idx, iou_type, h, w)?;
        by_category.get_mut(&cat).expect("validated").push(cell);
    }

    let thresholds = iou_thresholds();
    let rec_thrs = recall_thresholds();
    let mut per_category = BTreeMap::new();
    for (&cat, cells) in &by_category {
        per_category.insert(cat, summarize_category(cells, &thresholds, &rec_thrs));
    }

    let mut mean = EvalResult::undefined();
    for (k, slot) in mean.fields_mut().into_iter().enumerate() {
        let defined: Vec<f64> = per_category
            .values()
            .map(|r| r.fields()[k].1)
            .filter(|&v| v > UNDEFINED)
            .collect();
        if !defined.is_empty() {
            *slot = defined.iter().sum::<f64>() / defined.len() as f64;
        }
    }
    Ok(EvalReport {
        iou_type,
        mean,
        per_category,
    })
}

fn build_cell(
    gt: &AnnotationSet,
    dets: &[DetectionRecord],
    gt_idx: &[usize],
    dt_idx: &[usize],
    iou_type: IouType,
    height: u32,
    width: u32,
) -> Result<Cell> {
    let gts: Vec<Gt> = gt_idx
        .iter()
        .map(|&i| Gt {
            area: gt.annotations[i].area,
        })
        .collect();
    let (dts, ious) = match iou_type {
        IouType::Bbox => {
            let dts = dt_idx
                .iter()
                .map(|&i| Dt {
                    score: dets[i].score,
                    area: dets[i].bbox[2] * dets[i].bbox[3],
                })
                .collect();
            let ious = dt_idx
                .iter()
                .map(|&d| {
                    gt_idx
                        .iter()
                        .map(|&g| iou_bbox(dets[d].bbox, gt.annotations[g].bbox))
                        .collect()
                })
                .collect();
            (dts, ious)
        }
        IouType::Segm => {
            let gt_rles = gt_idx
                .iter()
                .map(|&g| {
                    let a = &gt.annotations[g];
                    a.segmentation
                        .as_ref()
                        .ok_or_else(|| {
                            Error::MalformedMask(format!("annotation {} has no segmentation", a.id))
                        })?
                        .to_rle(height, width)
                })
                .collect::<Result<Vec<Rle>>>()?;
            let dt_rles = dt_idx
                .iter()
                .map(|&d| {
                    dets[d]
                        .mask
                        .as_ref()
                        .ok_or(Error::MissingMask(d))?
                        .to_rle(height, width)
                })
                .collect::<Result<Vec<Rle>>>()?;
            let dts = dt_idx
                .iter()
                .zip(&dt_rles)
                .map(|(&i, r)| Dt {
                    score: dets[i].score,
                    area: r.area() as f64,
                })
                .collect();
            let ious = dt_rles
                .iter()
                .map(|d| gt_rles.iter().map(|g| d.iou(g)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            (dts, ious)
        }
    };
    Ok(Cell { gts, dts, ious })
}

fn evaluate_cell(cell: &Cell, range: (f64, f64), thresholds: &[f64]) -> Option<ImageEval> {
    if cell.gts.is_empty() && cell.dts.is_empty() {
        return None;
    }
    let outside = |a: f64| a < range.0 || a > range.1;
    let gt_ignore: Vec<bool> = cell.gts.iter().map(|g| outside(g.area)).collect();
    // in-range ground truth first, stable
    let mut order: Vec<usize> = (0..cell.gts.len()).collect();
    order.sort_by_key(|&g| gt_ignore[g]);

    let nd = cell.dts.len();
    let mut matched = vec![vec![false; nd]; thresholds.len()];
    let mut ignored = vec![vec![false; nd]; thresholds.len()];
    for (t, &thr) in thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; cell.gts.len()];
        for d in 0..nd {
            let mut best_iou = thr.min(1.0 - 1e-10);
            let mut best: Option<usize> = None;
            for &g in &order {
                if gt_taken[g] {
                    continue;
                }
                // once matched to an in-range gt, out-of-range ones cannot win
                if let Some(b) = best {
                    if !gt_ignore[b] && gt_ignore[g] {
                        break;
                    }
                }
                if cell.ious[d][g] < best_iou {
                    continue;
                }
                best_iou = cell.ious[d][g];
                best = Some(g);
            }
            match best {
                Some(g) => {
                    gt_taken[g] = true;
                    matched[t][d] = true;
                    ignored[t][d] = gt_ignore[g];
                }
                None => ignored[t][d] = outside(cell.dts[d].area),
            }
        }
    }
    Some(ImageEval {
        scores: cell.dts.iter().map(|d| d.score).collect(),
        matched,
        ignored,
        num_gt: gt_ignore.iter().filter(|&&i| !i).count(),
    })
}

/// Precision samples `[t][r]` and final recall `[t]` for one bucket and cap,
/// or `None` when there is no ground truth to recall.
fn accumulate(
    evals: &[ImageEval],
    max_det: usize,
    n_thr: usize,
    rec_thrs: &[f64],
) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let num_gt: usize = evals.iter().map(|e| e.num_gt).sum();
    if num_gt == 0 {
        return None;
    }
    // (score, image, dt) in image order, so a stable sort breaks ties the
    // same way the reference implementation does
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in evals.iter().enumerate() {
        for d in 0..e.scores.len().min(max_det) {
            pool.push((e.scores[d], i, d));
        }
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut precision = vec![vec![0.0; rec_thrs.len()]; n_thr];
    let mut recall = vec![0.0; n_thr];
    for t in 0..n_thr {
        let (mut tp, mut fp) = (0.0, 0.0);
        let mut rc = Vec::with_capacity(pool.len());
        let mut pr = Vec::with_capacity(pool.len());
        for &(_, i, d) in &pool {
            let e = &evals[i];
            if e.ignored[t][d] {
                // ignored detections neither help nor hurt
            } else if e.matched[t][d] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            rc.push(tp / num_gt as f64);
            pr.push(if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 });
        }
        recall[t] = rc.last().copied().unwrap_or(0.0);
        for k in (1..pr.len()).rev() {
            if pr[k] > pr[k - 1] {
                pr[k - 1] = pr[k];
            }
        }
        let mut ptr = 0;
        for (r, &thr) in rec_thrs.iter().enumerate() {
            while ptr < rc.len() && rc[ptr] < thr {
                ptr += 1;
            }
            if ptr < rc.len() {
                precision[t][r] = pr[ptr];
            }
        }
    }
    Some((precision, recall))
}

fn summarize_category(cells: &[Cell], thresholds: &[f64], rec_thrs: &[f64]) -> EvalResult {
    let n_thr = thresholds.len();
    let t50 = thresholds
        .iter()
        .position(|&t| (t - 0.5).abs() < 1e-12)
        .unwrap();
    let t75 = thresholds
        .iter()
        .position(|&t| (t - 0.75).abs() < 1e-12)
        .unwrap();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    };

    let mut out = EvalResult::undefined();
    for (a, &range) in AREA_RANGES.iter().enumerate() {
        let evals: Vec<ImageEval> = cells
            .iter()
            .filter_map(|c| evaluate_cell(c, range, thresholds))
            .collect();
        let at = |m: usize| accumulate(&evals, m, n_thr, rec_thrs);
        let Some((precision, recall_100)) = at(MAX_DETS[2]) else {
            continue;
        };
        let ap = mean(&mut precision.iter().flatten().copied());
        let ar = mean(&mut recall_100.iter().copied());
        match a {
            0 => {
                out.ap = ap;
                out.ap50 = mean(&mut precision[t50].iter().copied());
                out.ap75 = mean(&mut precision[t75].iter().copied());
                let (_, r1) = at(MAX_DETS[0]).expect("same ground truth");
                let (_, r10) = at(MAX_DETS[1]).expect("same ground truth");
                out.ar1 = mean(&mut r1.iter().copied());
                out.ar10 = mean(&mut r10.iter().copied());
            }
            1 => (out.ap_small, out.ar_small) = (ap, ar),
            2 => (out.ap_medium, out.ar_medium) = (ap, ar),
            _ => (out.ap_large, out.ar_large) = (ap, ar),
        }
    }
    out
}
