//! Minimal COCO annotation subset: images, boxes and categories.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::detect::{BBox, GroundTruthBox};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    image_id: u64,
    bbox: [f64; 4],
    category_id: u64,
}

#[derive(Debug, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Deserialize)]
struct RawFile {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<RawCategory>,
}

/// Metadata of one annotated image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMeta {
    pub image_id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    pub gts: Vec<GroundTruthBox>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CocoSubset {
    pub images: Vec<ImageMeta>,
    /// `(original id, name)`, indexed by contiguous class id.
    pub categories: Vec<(u64, String)>,
    /// Annotations dropped for a non-positive width or height.
    pub skipped: usize,
}

/// Parses the subset; category ids are remapped to `0..C` in ascending
/// order of the original ids.
pub fn load_coco_subset(json: &str) -> Result<CocoSubset> {
    let raw: RawFile = serde_json::from_str(json)?;
    let mut cats: Vec<(u64, String)> = raw.categories.into_iter().map(|c| (c.id, c.name)).collect();
    cats.sort_by_key(|c| c.0);
    if cats.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Annotation("duplicate category id".into()));
    }
    let class_of: HashMap<u64, usize> = cats.iter().enumerate().map(|(i, c)| (c.0, i)).collect();

    let mut images: Vec<ImageMeta> = raw
        .images
        .into_iter()
        .map(|im| ImageMeta { image_id: im.id, file_name: im.file_name, width: im.width, height: im.height, gts: vec![] })
        .collect();
    let index_of: HashMap<u64, usize> = images.iter().enumerate().map(|(i, im)| (im.image_id, i)).collect();
    if index_of.len() != images.len() {
        return Err(Error::Annotation("duplicate image id".into()));
    }

    let mut skipped = 0;
    for ann in raw.annotations {
        let &idx = index_of
            .get(&ann.image_id)
            .ok_or_else(|| Error::Annotation(format!("annotation references unknown image {}", ann.image_id)))?;
        let &class_id = class_of
            .get(&ann.category_id)
            .ok_or_else(|| Error::Annotation(format!("annotation references unknown category {}", ann.category_id)))?;
        let [x, y, w, h] = ann.bbox;
        if !(w > 0.0 && h > 0.0) {
            skipped += 1;
            continue;
        }
        images[idx].gts.push(GroundTruthBox { bbox: BBox::new(x, y, x + w, y + h), class_id });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} annotations with non-positive width or height");
    }
    Ok(CocoSubset { images, categories: cats, skipped })
}

#[derive(Serialize)]
struct OutImage<'a> {
    id: u64,
    file_name: &'a str,
    width: usize,
    height: usize,
}

#[derive(Serialize)]
struct OutAnnotation {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
    area: f64,
    category_id: u64,
    iscrowd: u8,
}

#[derive(Serialize)]
struct OutCategory<'a> {
    id: u64,
    name: &'a str,
}

#[derive(Serialize)]
struct OutFile<'a> {
    images: Vec<OutImage<'a>>,
    annotations: Vec<OutAnnotation>,
    categories: Vec<OutCategory<'a>>,
}

/// Serializes images and boxes in the same subset schema; class `k` is
/// written as category id `k + 1`.
pub fn to_coco_json(images: &[ImageMeta], class_names: &[&str]) -> String {
    let mut annotations = Vec::new();
    for im in images {
        for g in &im.gts {
            let b = g.bbox;
            annotations.push(OutAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: im.image_id,
                bbox: [b.x1, b.y1, b.width(), b.height()],
                area: b.area(),
                category_id: g.class_id as u64 + 1,
                iscrowd: 0,
            });
        }
    }
    let file = OutFile {
        images: images
            .iter()
            .map(|im| OutImage { id: im.image_id, file_name: &im.file_name, width: im.width, height: im.height })
            .collect(),
        annotations,
        categories: class_names
            .iter()
            .enumerate()
            .map(|(i, n)| OutCategory { id: i as u64 + 1, name: n })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("annotations serialize")
}
