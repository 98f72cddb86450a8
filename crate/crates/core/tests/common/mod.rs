//! Synthetic COCO-style annotation sets with a ground-truth manifest.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use camofs_core::dataset::{Annotation, AnnotationSet, Category, ImageInfo};
use camofs_core::mask::Segmentation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What the generator put in, counted independently of the library.
#[derive(Debug, Default)]
pub struct Manifest {
    pub instances_per_image: BTreeMap<u64, usize>,
    pub images_per_class: BTreeMap<u64, BTreeSet<u64>>,
    pub instances_per_class: BTreeMap<u64, usize>,
    pub instances: usize,
}

pub fn synthetic_set(images: usize, classes: usize, seed: u64) -> (AnnotationSet, Manifest) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = AnnotationSet {
        categories: (1..=classes as u64)
            .map(|id| Category {
                id,
                name: format!("class_{id}"),
                supercategory: None,
            })
            .collect(),
        ..Default::default()
    };
    let mut m = Manifest::default();
    let mut ann_id = 1;
    for img in 1..=images as u64 {
        let (w, h) = (rng.random_range(64..640u32), rng.random_range(64..480u32));
        set.images.push(ImageInfo {
            id: img,
            width: w,
            height: h,
            file_name: format!("{img:05}.jpg"),
        });
        let n = match rng.random_range(0..10) {
            0 => 0,
            1..=5 => 1,
            6 | 7 => 2,
            8 => 3,
            _ => rng.random_range(4..8),
        };
        if n > 0 {
            m.instances_per_image.insert(img, n);
        }
        for _ in 0..n {
            let cat = rng.random_range(1..=classes as u64);
            let bw = rng.random_range(1.0..w as f64 / 2.0);
            let bh = rng.random_range(1.0..h as f64 / 2.0);
            let x = rng.random_range(0.0..w as f64 - bw);
            let y = rng.random_range(0.0..h as f64 - bh);
            let bbox = [x, y, bw, bh];
            set.annotations.push(Annotation {
                id: ann_id,
                image_id: img,
                category_id: cat,
                bbox,
                segmentation: Some(Segmentation::from_bbox(bbox)),
                area: bw * bh,
                iscrowd: 0,
            });
            ann_id += 1;
            m.instances += 1;
            m.images_per_class.entry(cat).or_default().insert(img);
            *m.instances_per_class.entry(cat).or_default() += 1;
        }
    }
    (set, m)
}
