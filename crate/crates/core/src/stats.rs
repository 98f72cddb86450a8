//! Dataset statistics: instances per image, instance-centre density,
//! image resolutions and per-class counts.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{category_counts, AnnotationSet};
use crate::error::{Error, Result};

pub const DEFAULT_GRID: usize = 64;
pub const HISTOGRAM_KEYS: [&str; 4] = ["1", "2", "3", "3+"];

/// Images bucketed by instance count; "3+" means more than three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceHistogram {
    pub counts: BTreeMap<String, usize>,
    /// Percentages of `total_images`, recomputed from the counts.
    pub ratios: BTreeMap<String, f64>,
    pub total_images: usize,
}

pub fn instance_histogram(set: &AnnotationSet) -> InstanceHistogram {
    let mut per_image: HashMap<u64, usize> = HashMap::new();
    for a in &set.annotations {
        *per_image.entry(a.image_id).or_default() += 1;
    }
    let mut counts: BTreeMap<String, usize> =
        HISTOGRAM_KEYS.iter().map(|k| (k.to_string(), 0)).collect();
    for &n in per_image.values() {
        let key = match n {
            1 => "1",
            2 => "2",
            3 => "3",
            _ => "3+",
        };
        *counts.get_mut(key).expect("all keys present") += 1;
    }
    let total = per_image.len();
    let ratios = counts
        .iter()
        .map(|(k, &c)| {
            let r = if total == 0 {
                0.0
            } else {
                100.0 * c as f64 / total as f64
            };
            (k.clone(), r)
        })
        .collect();
    InstanceHistogram {
        counts,
        ratios,
        total_images: total,
    }
}

/// G×G counts of bounding-box centres in normalized image coordinates.
/// A centre at normalized `c` falls in bin `min(⌊c·G⌋, G−1)`, so the image
/// midpoint lands in bin G/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterBiasGrid {
    /// `bins[row][col]`, rows along y.
    pub bins: Vec<Vec<u64>>,
    pub total: u64,
}

impl CenterBiasGrid {
    pub fn size(&self) -> usize {
        self.bins.len()
    }

    /// One CSV row per grid row, no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e| Error::csv(path, e);
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(err)?;
        for row in &self.bins {
            w.serialize(row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let bins = r
            .deserialize::<Vec<u64>>()
            .map(|row| row.map_err(|e| Error::csv(path, e)))
            .collect::<Result<Vec<_>>>()?;
        let total = bins.iter().flatten().sum();
        Ok(CenterBiasGrid { bins, total })
    }
}

pub fn center_bias(set: &AnnotationSet, grid: usize) -> Result<CenterBiasGrid> {
    if grid == 0 {
        return Err(Error::InvalidConfig("grid size must be >= 1".into()));
    }
    let dims: HashMap<u64, (u32, u32)> = set
        .images
        .iter()
        .map(|i| (i.id, (i.width, i.height)))
        .collect();
    let mut bins = vec![vec![0u64; grid]; grid];
    let bin = |c: f64| ((c * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    for a in &set.annotations {
        let &(w, h) = dims.get(&a.image_id).ok_or_else(|| {
            Error::InvalidAnnotations(format!("annotation {} has unknown image", a.id))
        })?;
        if w == 0 || h == 0 {
            return Err(Error::InvalidAnnotations(format!(
                "image {} has zero extent",
                a.image_id
            )));
        }
        let cx = (a.bbox[0] + a.bbox[2] / 2.0) / w as f64;
        let cy = (a.bbox[1] + a.bbox[3] / 2.0) / h as f64;
        bins[bin(cy)][bin(cx)] += 1;
    }
    Ok(CenterBiasGrid {
        bins,
        total: set.annotations.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

pub fn resolutions(set: &AnnotationSet) -> Vec<Resolution> {
    set.images
        .iter()
        .map(|i| Resolution {
            width: i.width,
            height: i.height,
        })
        .collect()
}

/// Header row taken from the field names of `T`.
pub(crate) fn write_records<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let err = |e| Error::csv(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_resolutions(rows: &[Resolution], path: &Path) -> Result<()> {
    write_records(rows, path)
}

pub fn read_resolutions(path: &Path) -> Result<Vec<Resolution>> {
    read_records(path)
}

pub fn read_class_counts(path: &Path) -> Result<Vec<ClassCount>> {
    read_records(path)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub images: usize,
    pub instances: usize,
    pub annotated_images: usize,
    pub categories: usize,
    pub instances_per_image: f64,
}

pub fn summary(set: &AnnotationSet) -> Summary {
    let annotated = instance_histogram(set).total_images;
    Summary {
        images: set.images.len(),
        instances: set.annotations.len(),
        annotated_images: annotated,
        categories: set.categories.len(),
        instances_per_image: if annotated == 0 {
            0.0
        } else {
            set.annotations.len() as f64 / annotated as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub category_id: u64,
    pub name: String,
    pub images: usize,
    pub instances: usize,
}

pub fn class_counts(set: &AnnotationSet) -> Vec<ClassCount> {
    let counts = category_counts(set);
    let mut rows: Vec<ClassCount> = set
        .categories
        .iter()
        .map(|c| {
            let (images, instances) = counts[&c.id];
            ClassCount {
                category_id: c.id,
                name: c.name.clone(),
                images,
                instances,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.category_id);
    rows
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::json(path, e))?;
    writeln!(f).map_err(|e| Error::io(path, e))
}

pub fn read_histogram(path: &Path) -> Result<InstanceHistogram> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

/// Writes `instance_histogram.json`, `center_bias.csv`, `resolution.csv`,
/// `class_counts.csv` and `summary.json` into `out_dir`.
pub fn write_reports(set: &AnnotationSet, out_dir: &Path, grid: usize) -> Result<Summary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(
        &instance_histogram(set),
        &out_dir.join("instance_histogram.json"),
    )?;
    center_bias(set, grid)?.write_csv(&out_dir.join("center_bias.csv"))?;
    write_resolutions(&resolutions(set), &out_dir.join("resolution.csv"))?;
    write_records(&class_counts(set), &out_dir.join("class_counts.csv"))?;
    let s = summary(set);
    write_json(&s, &out_dir.join("summary.json"))?;
    Ok(s)
}
