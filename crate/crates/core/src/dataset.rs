//! COCO-style annotation files and nested K-shot benchmark splits.
//!
//! For every novel class a single seeded draw of up to `max_k` instance
//! annotations is made; the K-shot set is the first K entries of that draw.
//! Lower-shot sets are therefore always contained in higher-shot ones, and
//! whatever was not drawn forms the test pool.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Segmentation;

/// Shot counts reported by the benchmark.
pub const STANDARD_SHOTS: [usize; 4] = [1, 2, 3, 5];
pub const DEFAULT_MAX_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl AnnotationSet {
    /// Checks id uniqueness, that every reference resolves, and that
    /// extents are non-negative.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidAnnotations(msg));
        let mut images = HashSet::new();
        for img in &self.images {
            if !images.insert(img.id) {
                return bad(format!("duplicate image id {}", img.id));
            }
        }
        let mut cats = HashSet::new();
        for c in &self.categories {
            if !cats.insert(c.id) {
                return bad(format!("duplicate category id {}", c.id));
            }
        }
        let mut anns = HashSet::new();
        for a in &self.annotations {
            if !anns.insert(a.id) {
                return bad(format!("duplicate annotation id {}", a.id));
            }
            if !images.contains(&a.image_id) {
                return bad(format!(
                    "annotation {} references unknown image_id {}",
                    a.id, a.image_id
                ));
            }
            if !cats.contains(&a.category_id) {
                return bad(format!(
                    "annotation {} references unknown category_id {}",
                    a.id, a.category_id
                ));
            }
            let [x, y, w, h] = a.bbox;
            if ![x, y, w, h].iter().all(|v| v.is_finite()) || w < 0.0 || h < 0.0 {
                return bad(format!("annotation {} has invalid bbox {:?}", a.id, a.bbox));
            }
            if !a.area.is_finite() || a.area < 0.0 {
                return bad(format!("annotation {} has invalid area {}", a.id, a.area));
            }
            if a.iscrowd > 1 {
                return bad(format!("annotation {} has iscrowd {}", a.id, a.iscrowd));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let set: AnnotationSet = serde_json::from_str(s)
            .map_err(|e| Error::InvalidAnnotations(format!("parse error: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidAnnotations(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category_ids(&self) -> BTreeSet<u64> {
        self.categories.iter().map(|c| c.id).collect()
    }

    /// Annotation ids per category, ascending.
    pub fn annotations_by_category(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut by_cat: BTreeMap<u64, Vec<u64>> =
            self.categories.iter().map(|c| (c.id, Vec::new())).collect();
        for a in &self.annotations {
            by_cat.entry(a.category_id).or_default().push(a.id);
        }
        for ids in by_cat.values_mut() {
            ids.sort_unstable();
        }
        by_cat
    }

    /// Resolves category names or numeric ids.
    pub fn resolve_category(&self, key: &str) -> Result<u64> {
        let key = key.trim();
        if let Some(c) = self.categories.iter().find(|c| c.name == key) {
            return Ok(c.id);
        }
        match key.parse::<u64>() {
            Ok(id) if self.categories.iter().any(|c| c.id == id) => Ok(id),
            _ => Err(Error::InvalidAnnotations(format!(
                "unknown category {key:?}"
            ))),
        }
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationSet::from_json_str(&s).map_err(|e| match e {
        Error::InvalidAnnotations(msg) => {
            Error::InvalidAnnotations(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

/// Base/novel bookkeeping plus, per shot count K, the selected annotation
/// ids of every novel class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub base_classes: BTreeSet<u64>,
    pub novel_classes: BTreeSet<u64>,
    pub seed: u64,
    pub max_k: usize,
    pub shots: BTreeMap<usize, BTreeMap<u64, Vec<u64>>>,
}

impl FewShotSplit {
    pub fn shot(&self, k: usize) -> Result<&BTreeMap<u64, Vec<u64>>> {
        self.shots.get(&k).ok_or(Error::MissingShot(k))
    }

    /// Union of the K-shot selections over all novel classes.
    pub fn annotation_ids(&self, k: usize) -> Result<BTreeSet<u64>> {
        Ok(self.shot(k)?.values().flatten().copied().collect())
    }

    /// Novel-class annotations that no shot setting uses.
    pub fn test_pool(&self, set: &AnnotationSet) -> BTreeSet<u64> {
        let used: BTreeSet<u64> = self
            .shots
            .get(&self.max_k)
            .map(|m| m.values().flatten().copied().collect())
            .unwrap_or_default();
        set.annotations
            .iter()
            .filter(|a| self.novel_classes.contains(&a.category_id) && !used.contains(&a.id))
            .map(|a| a.id)
            .collect()
    }
}

/// Seeded nested K-shot selection for `novel` classes, K = 1..=max_k.
///
/// Each class gets its own ChaCha stream (stream id = class id) so a class's
/// draw depends only on the seed and its own instances.
pub fn build_nested_shots(
    set: &AnnotationSet,
    novel: &BTreeSet<u64>,
    max_k: usize,
    seed: u64,
) -> Result<FewShotSplit> {
    if max_k == 0 {
        return Err(Error::InvalidConfig("max_k must be >= 1".into()));
    }
    let all = set.category_ids();
    if let Some(unknown) = novel.iter().find(|c| !all.contains(c)) {
        return Err(Error::InvalidAnnotations(format!(
            "novel class {unknown} is not a category"
        )));
    }
    let by_cat = set.annotations_by_category();
    let empty: Vec<u64> = novel
        .iter()
        .copied()
        .filter(|c| by_cat.get(c).is_none_or(|ids| ids.is_empty()))
        .collect();
    if !empty.is_empty() {
        return Err(Error::NoInstances(empty));
    }

    let mut draws = BTreeMap::new();
    for &class in novel {
        let mut ids = by_cat[&class].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class);
        let take = max_k.min(ids.len());
        let (chosen, _) = ids.partial_shuffle(&mut rng, take);
        draws.insert(class, chosen.to_vec());
    }

    let shots = (1..=max_k)
        .map(|k| {
            let per_class = draws
                .iter()
                .map(|(&c, d): (&u64, &Vec<u64>)| (c, d[..k.min(d.len())].to_vec()))
                .collect();
            (k, per_class)
        })
        .collect();

    Ok(FewShotSplit {
        base_classes: all.difference(novel).copied().collect(),
        novel_classes: novel.clone(),
        seed,
        max_k,
        shots,
    })
}

/// Annotation subset holding exactly the K-shot annotations and the images
/// they sit on; categories are kept whole.
pub fn filter_split(set: &AnnotationSet, split: &FewShotSplit, k: usize) -> Result<AnnotationSet> {
    let keep = split.annotation_ids(k)?;
    let mut annotations: Vec<Annotation> = set
        .annotations
        .iter()
        .filter(|a| keep.contains(&a.id))
        .cloned()
        .collect();
    annotations.sort_by_key(|a| a.id);
    let image_ids: HashSet<u64> = annotations.iter().map(|a| a.image_id).collect();
    let mut images: Vec<ImageInfo> = set
        .images
        .iter()
        .filter(|i| image_ids.contains(&i.id))
        .cloned()
        .collect();
    images.sort_by_key(|i| i.id);
    let mut categories = set.categories.clone();
    categories.sort_by_key(|c| c.id);
    Ok(AnnotationSet {
        images,
        annotations,
        categories,
    })
}

pub fn export_split(set: &AnnotationSet, split: &FewShotSplit, k: usize, out: &Path) -> Result<()> {
    filter_split(set, split, k)?.save(out)
}

/// Instances per category and images per category.
pub fn category_counts(set: &AnnotationSet) -> BTreeMap<u64, (usize, usize)> {
    let mut images: HashMap<u64, HashSet<u64>> = HashMap::new();
    let mut instances: HashMap<u64, usize> = HashMap::new();
    for a in &set.annotations {
        images.entry(a.category_id).or_default().insert(a.image_id);
        *instances.entry(a.category_id).or_default() += 1;
    }
    set.categories
        .iter()
        .map(|c| {
            (
                c.id,
                (
                    images.get(&c.id).map_or(0, HashSet::len),
                    instances.get(&c.id).copied().unwrap_or(0),
                ),
            )
        })
        .collect()
}
