//! On-disk dataset layout: one `.ppm` per image plus `annotations.json`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::coco::{load_coco_subset, to_coco_json, ImageMeta};
use super::pnm::{read_ppm, write_ppm};
use super::shapes::DatasetRecord;

pub const ANNOTATIONS_FILE: &str = "annotations.json";

pub fn image_file_name(image_id: u64) -> String {
    format!("img_{image_id:06}.ppm")
}

pub fn write_dataset<T: Scalar>(dir: &Path, records: &[DatasetRecord<T>], class_names: &[&str]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut metas = Vec::with_capacity(records.len());
    for r in records {
        let name = image_file_name(r.image_id);
        fs::write(dir.join(&name), write_ppm(&r.image)?)?;
        let s = r.image.shape();
        metas.push(ImageMeta { image_id: r.image_id, file_name: name, width: s.w, height: s.h, gts: r.gts.clone() });
    }
    fs::write(dir.join(ANNOTATIONS_FILE), to_coco_json(&metas, class_names))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub records: Vec<DatasetRecord<T>>,
    pub class_names: Vec<String>,
}

pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let subset = load_coco_subset(&fs::read_to_string(dir.join(ANNOTATIONS_FILE))?)?;
    let mut records = Vec::with_capacity(subset.images.len());
    for meta in subset.images {
        let image = read_ppm::<T>(&fs::read(dir.join(&meta.file_name))?)?;
        let s = image.shape();
        if s.w != meta.width || s.h != meta.height {
            return Err(Error::Annotation(format!(
                "{} is {}x{}, annotations say {}x{}",
                meta.file_name, s.w, s.h, meta.width, meta.height
            )));
        }
        records.push(DatasetRecord { image_id: meta.image_id, image, gts: meta.gts });
    }
    Ok(Dataset { records, class_names: subset.categories.into_iter().map(|c| c.1).collect() })
}
