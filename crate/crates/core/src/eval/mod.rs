//! Metrics, latency benchmarking and confidence-map export.

pub mod ap;
pub mod bench;
pub mod confidence;

pub use ap::{average_precision, coco_map, iou_thresholds, ClassAp, EvalResult};
pub use bench::{bench_image, bench_latency, bench_latency_paired, model_tag, LatencyReport};
pub use confidence::{export_all_confidence, export_confidence};
