#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camofs_core::dataset::{Annotation, AnnotationSet, Category, ImageInfo};
use camofs_core::mask::Segmentation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn camofs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camofs"))
        .args(args)
        .env_remove("CAMOFS_ANN")
        .output()
        .expect("spawn camofs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn annotation(id: u64, image_id: u64, category_id: u64, bbox: [f64; 4]) -> Annotation {
    Annotation {
        id,
        image_id,
        category_id,
        bbox,
        segmentation: Some(Segmentation::from_bbox(bbox)),
        area: bbox[2] * bbox[3],
        iscrowd: 0,
    }
}

pub fn image(id: u64, width: u32, height: u32) -> ImageInfo {
    ImageInfo {
        id,
        width,
        height,
        file_name: format!("{id}.jpg"),
    }
}

pub fn categories(n: u64) -> Vec<Category> {
    (1..=n)
        .map(|id| Category {
            id,
            name: format!("class_{id}"),
            supercategory: None,
        })
        .collect()
}

/// `classes` categories, each with between 1 and 9 instances spread over
/// 100×100 images.
pub fn random_set(classes: u64, seed: u64) -> AnnotationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = AnnotationSet {
        categories: categories(classes),
        ..Default::default()
    };
    let mut ann = 1;
    for c in 1..=classes {
        for _ in 0..rng.random_range(1..10) {
            let img = set.images.len() as u64 + 1;
            set.images.push(image(img, 100, 100));
            let x = rng.random_range(0..60) as f64;
            let y = rng.random_range(0..60) as f64;
            set.annotations
                .push(annotation(ann, img, c, [x, y, 30.0, 30.0]));
            ann += 1;
        }
    }
    set
}

pub fn write_set(set: &AnnotationSet, dir: &Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    set.save(&p).unwrap();
    p
}
