//! Synthetic rectangles-and-ellipses detection dataset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{iou, BBox, GroundTruthBox};
use crate::error::{invalid, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

pub const CLASS_NAMES: [&str; 2] = ["rectangle", "ellipse"];
pub const RECTANGLE: usize = 0;
pub const ELLIPSE: usize = 1;

/// Image with its labeled boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord<T> {
    pub image_id: u64,
    pub image: Tensor<T>,
    pub gts: Vec<GroundTruthBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapesSpec {
    pub image_size: usize,
    pub num_images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object sizes are log-uniform in `[min_size_frac, max_size_frac] * S`.
    pub min_size_frac: f64,
    pub max_size_frac: f64,
    pub seed: u64,
    pub max_pair_iou: f64,
    pub max_attempts: usize,
}

impl ShapesSpec {
    pub fn new(image_size: usize, num_images: usize, seed: u64) -> Self {
        Self {
            image_size,
            num_images,
            min_objects: 1,
            max_objects: 5,
            min_size_frac: 0.05,
            max_size_frac: 0.9,
            seed,
            max_pair_iou: 0.3,
            max_attempts: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(32) {
            return Err(invalid(format!("image size {} is not a positive multiple of 32", self.image_size)));
        }
        if self.min_objects > self.max_objects {
            return Err(invalid("min_objects exceeds max_objects"));
        }
        if !(0.0 < self.min_size_frac && self.min_size_frac <= self.max_size_frac && self.max_size_frac <= 1.0) {
            return Err(invalid("size fractions must satisfy 0 < min <= max <= 1"));
        }
        Ok(())
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo.ln()..hi.ln()).exp()
    }
}

/// Generates image `index` of the dataset; independent of other indices.
pub fn gen_shape_image<T: Scalar>(spec: &ShapesSpec, index: u64) -> DatasetRecord<T> {
    let mut rng = SplitMix64::for_index(spec.seed, index);
    let s = spec.image_size;
    let sf = s as f64;
    let mut pixels: Vec<f64> = (0..3 * s * s).map(|_| rng.gen_range(0.0..0.2)).collect();

    let wanted = rng.gen_range(spec.min_objects..=spec.max_objects);
    let (lo, hi) = (spec.min_size_frac * sf, spec.max_size_frac * sf);
    let mut gts: Vec<GroundTruthBox> = Vec::with_capacity(wanted);
    'objects: for _ in 0..wanted {
        for _ in 0..spec.max_attempts {
            let size = log_uniform(&mut rng, lo, hi);
            let aspect = log_uniform(&mut rng, 0.5, 2.0).sqrt();
            let w = (size * aspect).clamp(lo, hi);
            let h = (size / aspect).clamp(lo, hi);
            let x1 = rng.gen_range(0.0..=sf - w);
            let y1 = rng.gen_range(0.0..=sf - h);
            let bbox = BBox::new(x1, y1, x1 + w, y1 + h);
            if gts.iter().any(|g| iou(&g.bbox, &bbox) > spec.max_pair_iou) {
                continue;
            }
            let class_id = rng.gen_range(0..CLASS_NAMES.len());
            let color = [rng.gen_range(0.3..=1.0), rng.gen_range(0.3..=1.0), rng.gen_range(0.3..=1.0)];
            paint(&mut pixels, s, &bbox, class_id, color);
            gts.push(GroundTruthBox { bbox, class_id });
            continue 'objects;
        }
        break;
    }
    let image = Tensor::from_vec(Shape4::new(1, 3, s, s), pixels.into_iter().map(T::of).collect())
        .expect("generated image has the declared shape");
    DatasetRecord { image_id: index, image, gts }
}

/// Fills pixels whose centers fall inside the shape.
fn paint(pixels: &mut [f64], s: usize, b: &BBox, class_id: usize, color: [f64; 3]) {
    let (cx, cy) = b.center();
    let (rx, ry) = (b.width() / 2.0, b.height() / 2.0);
    let y0 = b.y1.floor().max(0.0) as usize;
    let x0 = b.x1.floor().max(0.0) as usize;
    let y_end = (b.y2.ceil() as usize).min(s);
    let x_end = (b.x2.ceil() as usize).min(s);
    for y in y0..y_end {
        let py = y as f64 + 0.5;
        for x in x0..x_end {
            let px = x as f64 + 0.5;
            let inside = match class_id {
                RECTANGLE => px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2,
                _ => ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2) <= 1.0,
            };
            if inside {
                for (c, &v) in color.iter().enumerate() {
                    pixels[(c * s + y) * s + x] = v;
                }
            }
        }
    }
}

/// All images of `spec`, in index order.
pub fn gen_shapes<T: Scalar>(spec: &ShapesSpec) -> Result<Vec<DatasetRecord<T>>> {
    spec.validate()?;
    Ok((0..spec.num_images as u64).map(|i| gen_shape_image(spec, i)).collect())
}
