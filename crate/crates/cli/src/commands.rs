use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::thread;

use serde_json::json;
use sfpn_core::checkpoint::load_params;
use sfpn_core::data::{gen_shape_image, load_dataset, read_ppm, write_dataset, write_pgm, DatasetRecord, ShapesSpec, CLASS_NAMES};
use sfpn_core::detect::{predict, Detection, GroundTruthBox, PredictSettings};
use sfpn_core::eval::{bench_latency, bench_latency_paired, coco_map, export_all_confidence, LatencyReport};
use sfpn_core::pyramid::{ModelConfig, ParamScope, Variant};
use sfpn_core::train::{TrainConfig, Trainer};
use sfpn_core::{Error, Result, SfpnModel32};

use crate::{BenchArgs, EvalArgs, GenArgs, ModelArgs, ParamsArgs, TrainArgs, VizArgs};

pub const CONFIG_FILE: &str = "config.json";

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Worker threads for per-image parallel work; `SFPN_THREADS` caps it.
fn workers() -> usize {
    let available = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("SFPN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(available),
        _ => available,
    }
}

/// Applies `f` to every item on up to [`workers`] threads; output order
/// matches input order.
fn par_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> Result<O> + Sync) -> Result<Vec<O>> {
    let n = workers().min(items.len()).max(1);
    if n == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(n);
    thread::scope(|s| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<O>>>())).collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn model_config(args: &ModelArgs) -> Result<ModelConfig> {
    let cfg = match &args.config {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::new(args.variant, args.classes)
            .with_input_size(args.size)
            .with_neck_channels(args.channels)
            .with_seed(args.model_seed),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(config: ModelConfig, checkpoint: Option<&Path>) -> Result<SfpnModel32> {
    let mut model = SfpnModel32::build(config)?;
    if let Some(path) = checkpoint {
        load_params(model.params_mut(), path)?;
    }
    Ok(model)
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let spec = ShapesSpec::new(args.size, args.n, args.seed);
    spec.validate()?;
    let indices: Vec<u64> = (args.start..args.start + args.n as u64).collect();
    let records: Vec<DatasetRecord<f32>> = par_map(&indices, |&i| Ok(gen_shape_image(&spec, i)))?;
    write_dataset(&args.out, &records, &CLASS_NAMES)?;
    let objects: usize = records.iter().map(|r| r.gts.len()).sum();
    println!("wrote {} images ({objects} objects) to {}", records.len(), args.out.display());
    Ok(())
}

fn check_classes(config: &ModelConfig, class_names: &[String]) -> Result<()> {
    if class_names.len() > config.num_classes {
        return Err(bad(format!(
            "dataset has {} classes, model is configured for {}",
            class_names.len(),
            config.num_classes
        )));
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let config = if args.resume && args.model.config.is_none() {
        ModelConfig::load(&args.out.join(CONFIG_FILE))?
    } else {
        model_config(&args.model)?
    };
    let train = load_dataset::<f32>(&args.train)?;
    check_classes(&config, &train.class_names)?;
    let val = match &args.val {
        Some(dir) => load_dataset::<f32>(dir)?.records,
        None => Vec::new(),
    };
    let tc = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        lr_min: args.lr_min,
        warmup_epochs: args.warmup,
        optimizer: args.optimizer,
        weight_decay: args.weight_decay,
        seed: args.seed,
        sol: args.sol,
        ..TrainConfig::default()
    };
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join(CONFIG_FILE), config.to_json())?;
    let model = load_model(config, args.init.as_deref())?;
    let mut trainer = Trainer::new(model, tc)?;
    if args.resume {
        trainer.load_state(&args.out)?;
        println!("resuming after epoch {}", trainer.meta.epoch);
    }
    let stop = args.stop_after.unwrap_or(args.epochs);
    let meta = trainer.fit_until(stop, &train.records, &val, Some(&args.out), |e| {
        println!("epoch {:3}  loss {:.5}  val AP50 {:.4}  lr {:.2e}", e.epoch, e.loss, e.val_ap50, e.lr);
    })?;
    println!(
        "best val AP50 {:.4} at epoch {}",
        meta.best_ap50.max(0.0),
        meta.best_epoch.map_or("-".into(), |e| e.to_string())
    );
    Ok(())
}

fn detections_for(
    model: &SfpnModel32,
    records: &[DatasetRecord<f32>],
    sol: bool,
    settings: &PredictSettings,
) -> Result<(Vec<(u64, Detection)>, usize)> {
    let per_image = par_map(records, |r| {
        let p = predict(model, &r.image, sol, settings)?;
        Ok((r.image_id, p))
    })?;
    let evaluations = per_image.first().map_or(0, |(_, p)| p.head_evaluations);
    let dets = per_image.into_iter().flat_map(|(id, p)| p.detections.into_iter().map(move |d| (id, d))).collect();
    Ok((dets, evaluations))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let config_path = match &args.config {
        Some(p) => p.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let config = ModelConfig::load(&config_path)?;
    let model = load_model(config, Some(&args.checkpoint))?;
    let data = load_dataset::<f32>(&args.data)?;
    check_classes(model.config(), &data.class_names)?;
    let settings = PredictSettings { conf_threshold: args.conf, nms_iou: args.nms, ..PredictSettings::default() };
    let (dets, evaluations) = detections_for(&model, &data.records, args.sol, &settings)?;
    let gts: Vec<(u64, GroundTruthBox)> =
        data.records.iter().flat_map(|r| r.gts.iter().map(move |g| (r.image_id, *g))).collect();
    let result = coco_map(&dets, &gts);
    let report = json!({
        "variant": model.config().variant,
        "sol": args.sol,
        "head_evaluations_per_image": evaluations,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = &args.out {
        fs::write(path, &text)?;
    }
    if let Some(path) = &args.detections {
        let mut f = fs::File::create(path)?;
        for (id, d) in &dets {
            let line = json!({"image_id": id, "class_id": d.class_id, "score": d.score, "bbox": d.bbox.to_array()});
            writeln!(f, "{line}")?;
        }
    }
    Ok(())
}

struct ParamRow {
    variant: Variant,
    backbone: usize,
    neck: usize,
    head: usize,
    total: usize,
}

fn param_row(variant: Variant, args: &ParamsArgs) -> Result<ParamRow> {
    let cfg = ModelConfig::new(variant, args.classes).with_input_size(args.size).with_neck_channels(args.channels);
    let m = SfpnModel32::build(cfg)?;
    Ok(ParamRow {
        variant,
        backbone: m.count_params(ParamScope::Backbone),
        neck: m.count_params(ParamScope::Neck),
        head: m.count_params(ParamScope::Head),
        total: m.count_params(ParamScope::Total),
    })
}

pub fn params(args: &ParamsArgs) -> Result<()> {
    let variants = match args.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let rows = variants.iter().map(|&v| param_row(v, args)).collect::<Result<Vec<_>>>()?;
    let deltas: Vec<(String, i64)> = rows
        .windows(2)
        .map(|w| (format!("{}->{}", w[0].variant, w[1].variant), w[1].neck as i64 - w[0].neck as i64))
        .collect();
    if args.json {
        let table: Vec<_> = rows
            .iter()
            .map(|r| json!({"variant": r.variant, "backbone": r.backbone, "neck": r.neck, "head": r.head, "total": r.total}))
            .collect();
        let deltas: Vec<_> = deltas.iter().map(|(k, d)| json!({"step": k, "neck_delta": d})).collect();
        println!("{}", serde_json::to_string_pretty(&json!({"channels": args.channels, "rows": table, "neck_deltas": deltas}))?);
        return Ok(());
    }
    println!("{:<8} {:>12} {:>12} {:>12} {:>12}", "variant", "backbone", "neck", "head", "total");
    for r in &rows {
        println!(
            "{:<8} {:>12} {:>12} {:>12} {:>12}",
            r.variant.to_string(),
            group(r.backbone as i64),
            group(r.neck as i64),
            group(r.head as i64),
            group(r.total as i64)
        );
    }
    for (k, d) in deltas {
        println!("neck delta {k}: {}", group(d));
    }
    Ok(())
}

/// Thousands separators: 904064 -> "904,064".
fn group(v: i64) -> String {
    let digits = v.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    if v < 0 {
        format!("-{out}")
    } else {
        out
    }
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let settings = PredictSettings::default();
    let mut reports: Vec<LatencyReport> = Vec::new();
    for &variant in &args.variants {
        let cfg = ModelConfig::new(variant, args.classes).with_input_size(args.size).with_neck_channels(args.channels);
        let model = SfpnModel32::build(cfg)?;
        if args.sol {
            let (base, sol) = bench_latency_paired(&model, args.iters, args.warmup, &settings)?;
            reports.extend([base, sol]);
        } else {
            reports.push(bench_latency(&model, args.iters, args.warmup, false, &settings)?);
        }
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        println!("{}", LatencyReport::CSV_HEADER);
        for r in &reports {
            println!("{}", r.csv_row());
        }
    }
    if let Some(path) = &args.csv {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{}", LatencyReport::CSV_HEADER)?;
        }
        for r in &reports {
            writeln!(f, "{}", r.csv_row())?;
        }
    }
    Ok(())
}

pub fn viz(args: &VizArgs) -> Result<()> {
    let config = match (&args.model.config, &args.checkpoint) {
        (None, Some(ckpt)) if ckpt.parent().is_some_and(|d| d.join(CONFIG_FILE).exists()) => {
            ModelConfig::load(&ckpt.parent().unwrap().join(CONFIG_FILE))?
        }
        _ => model_config(&args.model)?,
    };
    let model = load_model(config, args.checkpoint.as_deref())?;
    let image = read_ppm::<f32>(&fs::read(&args.image)?)?;
    fs::create_dir_all(&args.out)?;
    let maps = export_all_confidence(&model, &image, args.sol)?;
    for (k, (stride, map)) in maps.iter().enumerate() {
        let path: PathBuf = args.out.join(format!("level{k}_stride{stride}.pgm"));
        fs::write(&path, write_pgm(map)?)?;
        println!("{}", path.display());
    }
    Ok(())
}
