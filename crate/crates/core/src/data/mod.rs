//! Datasets: synthetic shapes, PPM/PGM images and COCO-subset annotations.

pub mod coco;
pub mod dataset;
pub mod pnm;
pub mod shapes;

pub use coco::{load_coco_subset, to_coco_json, CocoSubset, ImageMeta};
pub use dataset::{load_dataset, write_dataset, Dataset, ANNOTATIONS_FILE};
pub use pnm::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use shapes::{gen_shape_image, gen_shapes, DatasetRecord, ShapesSpec, CLASS_NAMES};
