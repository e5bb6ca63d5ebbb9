//! Subcommand runners. Each takes its parsed arguments and a sink for its
//! primary output; files go where the arguments say.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fishdet_core::dataset::{split_dataset, DatasetIndex, SplitSpec};
use fishdet_core::detector::{flip_horizontal, training_schedule, Detector, DetectorConfig, LabeledBox};
use fishdet_core::eval::{collate_checkpoint_results, evaluate, ApMethod, Comparison, DetectionRecord, EvalConfig, EvalReport};
use fishdet_core::nn::{backbone_layers, Architecture, NetworkSpec, ParamStore, Tensor, TrainConfig};
use fishdet_core::proposals::{generate_anchors, nms, AnchorGridSpec, ScoredBox};
use fishdet_core::synth::{synth_generate, RgbImage, SynthConfig};
use fishdet_core::BoundingBox;

use crate::bench::bench;
use crate::checkpoint::Checkpoint;
use crate::cli::{AnchorsArgs, BenchArgs, Command, EvaluateArgs, NmsArgs, SplitArgs, SynthArgs, TrainArgs};
use crate::layout::{is_dataset_root, DatasetDir};
use crate::report::{render_class_curves, render_curve, render_table, ModelReport, ReportDocument};
use crate::{detections, image_io, voc, write_file};

pub fn run(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Evaluate(a) => run_evaluate(a, out).map(|_| ()),
        Command::TrainToy(a) => run_train_toy(a, out).map(|_| ()),
        Command::Bench(a) => run_bench(a, out).map(|_| ()),
        Command::Split(a) => run_split(a, out),
        Command::Synth(a) => run_synth(a, out),
        Command::Anchors(a) => run_anchors(a, out),
        Command::Nms(a) => run_nms(a, out),
    }
}

fn annotations_of(path: &Path) -> Result<DatasetIndex> {
    let index = if is_dataset_root(path) {
        DatasetDir::new(path).read_index()?
    } else {
        voc::read_voc_dir(path)?
    };
    Ok(index)
}

fn eval_config(iou: f64, strict: bool, method: &str, classes: Option<Vec<String>>, min_count: Option<usize>) -> Result<EvalConfig> {
    if !(0.0..=1.0).contains(&iou) {
        bail!("--iou must be in [0, 1], got {iou}");
    }
    Ok(EvalConfig {
        iou_thresh: iou,
        comparison: if strict { Comparison::Greater } else { Comparison::AtLeast },
        method: method.parse::<ApMethod>()?,
        classes,
        min_count,
    })
}

/// Evaluates every detection file and renders the comparison table.
pub fn run_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<ReportDocument> {
    if !args.names.is_empty() && args.names.len() != args.detections.len() {
        bail!("{} names given for {} detection files", args.names.len(), args.detections.len());
    }
    let mut index = annotations_of(&args.annotations)?;
    if let Some(split) = &args.split {
        let ids = DatasetDir::new(&args.annotations).read_split(split)?;
        index = index.subset(&ids)?;
    }
    let cfg = eval_config(args.iou, args.strict, &args.method, args.classes.clone(), args.min_count)?;
    let mut models = Vec::with_capacity(args.detections.len());
    for (i, path) in args.detections.iter().enumerate() {
        let dets = detections::read_detections(path)?;
        let report = evaluate(&dets, &index, &cfg).with_context(|| format!("evaluating {}", path.display()))?;
        let name = args.names.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map_or_else(|| format!("model{i}"), |s| s.to_string_lossy().into_owned())
        });
        models.push(ModelReport { name, report });
    }
    let doc = ReportDocument::new(models);
    let table = render_table(&doc);
    if let Some(prefix) = &args.out {
        write_file(&prefix.with_extension("txt"), table.as_bytes())?;
        write_file(&prefix.with_extension("json"), doc.to_json().as_bytes())?;
    }
    out.write_all(table.as_bytes())?;
    Ok(doc)
}

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub series: Vec<(u64, f64)>,
    pub reports: Vec<(u64, EvalReport)>,
    pub checkpoints: Vec<PathBuf>,
}

/// Smallest square input side the backbone accepts.
pub fn min_input_side(arch: Architecture, width_scale: f64) -> Option<usize> {
    (1..=4096).find(|&s| {
        backbone_layers(arch, width_scale, [3, s, s])
            .and_then(|l| NetworkSpec::new(arch.as_str(), [3, s, s], l))
            .is_ok()
    })
}

fn load_split(dir: &DatasetDir, index: &DatasetIndex, split: &str) -> Result<(DatasetIndex, Vec<RgbImage>)> {
    let ids = dir.read_split(split)?;
    let sub = index.subset(&ids)?;
    let images = ids.iter().map(|id| dir.read_image(id)).collect::<Result<Vec<_>, _>>()?;
    Ok((sub, images))
}

/// Detection records for `images`, labelled by the detector's classes.
pub fn detect_all(det: &Detector, index: &DatasetIndex, images: &[RgbImage]) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (record, image) in index.records().iter().zip(images) {
        let x = det.prepare(image)?;
        for d in det.detect(&x)? {
            out.push(DetectionRecord::new(
                record.image_id.clone(),
                det.config().classes[d.class].clone(),
                d.score,
                d.bbox,
            )?);
        }
    }
    Ok(out)
}

/// Trains on the `train` manifest; at every snapshot saves a checkpoint,
/// detects on the evaluation split and records its report.
pub fn run_train_toy(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutcome> {
    let arch: Architecture = args.arch.parse()?;
    let dir = DatasetDir::new(&args.dataset);
    if !dir.has_splits() {
        bail!(
            "{} has no train/val/test manifests (run `fishdet split` first)",
            args.dataset.display()
        );
    }
    let index = dir.read_index()?;
    let (train_index, train_images) = load_split(&dir, &index, "train")?;
    let (eval_index, eval_images) = load_split(&dir, &index, &args.eval_split)?;
    if train_images.is_empty() {
        bail!("train split is empty");
    }
    let (w, h) = (train_images[0].width as usize, train_images[0].height as usize);
    if let Some(img) = train_images.iter().chain(&eval_images).find(|i| (i.width as usize, i.height as usize) != (w, h)) {
        bail!("all images must share one size; found {}x{} and {w}x{h}", img.width, img.height);
    }

    let mut cfg = match &args.detector_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str::<DetectorConfig>(&text).with_context(|| p.display().to_string())?
        }
        None => DetectorConfig::desk(index.catalog().to_vec()),
    };
    cfg.arch = arch;
    cfg.width_scale = args.width_scale;
    cfg.input_shape = [3, h, w];
    let layers = match backbone_layers(arch, args.width_scale, cfg.input_shape)
        .and_then(|l| NetworkSpec::new(arch.as_str(), cfg.input_shape, l))
    {
        Ok(spec) => spec,
        Err(e) => {
            let min = min_input_side(arch, args.width_scale)
                .map_or("no size up to 4096".into(), |s| format!("{s}x{s}"));
            bail!("dataset images are {w}x{h}, but {arch} needs an input of at least {min}: {e}");
        }
    };
    let stride = layers.total_stride() as f64;
    if cfg.anchors.stride() != stride {
        cfg.anchors = AnchorGridSpec::new(stride, cfg.anchors.scales().to_vec(), cfg.anchors.ratios().to_vec())?;
    }

    let train = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        rpn_batch_size: args.rpn_batch_size,
        iterations: args.iterations,
        snapshot_interval: args.snapshot_interval,
        seed: args.seed,
    };
    train.validate()?;
    let method: ApMethod = args.method.parse()?;
    let eval_cfg = EvalConfig {
        method,
        ..EvalConfig::default()
    };

    let mut det = Detector::new(cfg, args.seed)?;
    write_file(&args.out.join("config.json"), Command::TrainToy(args.clone()).echo().as_bytes())?;
    write_file(&args.out.join("detector.json"), serde_json::to_string_pretty(det.config())?.as_bytes())?;
    let inputs: Vec<Tensor> = train_images.iter().map(|i| det.prepare(i)).collect::<Result<_, _>>()?;
    let gts: Vec<Vec<LabeledBox>> = train_index
        .records()
        .iter()
        .map(|r| det.labeled_boxes(&r.objects))
        .collect::<Result<_, _>>()?;

    let schedule = training_schedule(inputs.len(), train.iterations, !args.no_flip, args.seed);
    let mut velocity = ParamStore::new();
    let mut log = String::from("iteration\trpn_cls\trpn_reg\thead_cls\thead_reg\ttotal\n");
    let mut outcome = TrainOutcome {
        series: Vec::new(),
        reports: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut flipped_cache: Vec<Option<(Tensor, Vec<LabeledBox>)>> = vec![None; inputs.len()];
    for (it, &(k, flip)) in schedule.iter().enumerate() {
        let iteration = it as u64 + 1;
        let losses = if flip {
            if flipped_cache[k].is_none() {
                flipped_cache[k] = Some(flip_horizontal(&inputs[k], &gts[k])?);
            }
            let (x, g) = flipped_cache[k].as_ref().expect("filled above");
            det.train_step(x, g, &train, &mut velocity, it as u64)?
        } else {
            det.train_step(&inputs[k], &gts[k], &train, &mut velocity, it as u64)?
        };
        if iteration % 50 == 0 {
            log.push_str(&format!(
                "{iteration}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                losses.rpn_cls, losses.rpn_reg, losses.head_cls, losses.head_reg, losses.total
            ));
        }
        if iteration % train.snapshot_interval as u64 == 0 || it + 1 == schedule.len() {
            let tag = format!("iter_{iteration:06}");
            let ck_path = args.out.join("checkpoints").join(format!("{tag}.ckpt"));
            Checkpoint::of(&det, iteration, Some(&train)).save(&ck_path)?;
            let dets = detect_all(&det, &eval_index, &eval_images)?;
            detections::write_detections(&args.out.join("detections").join(format!("{tag}.csv")), &dets)?;
            let report = evaluate(&dets, &eval_index, &eval_cfg)?;
            write_file(
                &args.out.join("reports").join(format!("{tag}.json")),
                ReportDocument::new(vec![ModelReport { name: tag.clone(), report: report.clone() }])
                    .to_json()
                    .as_bytes(),
            )?;
            eprintln!("iteration {iteration}: mAP {:.3} (loss {:.4})", report.map, losses.total);
            outcome.checkpoints.push(ck_path);
            outcome.reports.push((iteration, report));
        }
    }
    let series = collate_checkpoint_results(&outcome.reports)?;
    outcome.series = series.points.clone();
    write_file(&args.out.join("train_log.tsv"), log.as_bytes())?;
    write_file(&args.out.join("curve.tsv"), render_curve(&series).as_bytes())?;
    write_file(&args.out.join("class_curves.tsv"), render_class_curves(&series).as_bytes())?;
    if let Some((it, report)) = outcome.reports.last() {
        let doc = ReportDocument::new(vec![ModelReport { name: format!("{arch}@{it}"), report: report.clone() }]);
        write_file(&args.out.join("report.txt"), render_table(&doc).as_bytes())?;
        write_file(&args.out.join("report.json"), doc.to_json().as_bytes())?;
    }
    out.write_all(render_curve(&series).as_bytes())?;
    if let Some((it, m)) = series.best() {
        writeln!(out, "# best checkpoint {it}: mAP {m:.3}")?;
    }
    Ok(outcome)
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    v.sort();
    Ok(v)
}

pub fn run_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<crate::bench::BenchStats> {
    let det = Checkpoint::load(&args.checkpoint)?.into_detector()?;
    let dir = if is_dataset_root(&args.images) {
        DatasetDir::new(&args.images).images()
    } else {
        args.images.clone()
    };
    let mut files = png_files(&dir)?;
    if let Some(n) = args.limit {
        files.truncate(n);
    }
    let inputs: Vec<Tensor> = files
        .iter()
        .map(|p| Ok(det.prepare(&image_io::read_png(p)?)?))
        .collect::<Result<_>>()?;
    let stats = bench(&det, &inputs)?;
    if let Some(p) = &args.out {
        write_file(p, serde_json::to_string_pretty(&stats)?.as_bytes())?;
    }
    out.write_all(stats.render().as_bytes())?;
    Ok(stats)
}

pub fn run_split(args: &SplitArgs, out: &mut dyn Write) -> Result<()> {
    let dir = DatasetDir::new(&args.dataset);
    let index = dir.read_index()?;
    let spec = SplitSpec::new(args.train, args.val, args.test, args.seed)?;
    let split = split_dataset(&index, &spec)?;
    dir.write_split(&split)?;
    writeln!(out, "train\t{}\nval\t{}\ntest\t{}", split.train.len(), split.val.len(), split.test.len())?;
    Ok(())
}

pub fn run_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        width: args.width,
        height: args.height,
        n_images: args.n_images,
        min_objects: args.min_objects,
        max_objects: args.max_objects,
        min_size: args.min_size,
        max_size: args.max_size,
        max_overlap: args.max_overlap,
        noise: args.noise,
        clutter: args.clutter,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg)?;
    let dir = DatasetDir::new(&args.out);
    for (record, image) in data.index.records().iter().zip(&data.images) {
        dir.write_record(record, image)?;
    }
    write_file(&args.out.join("synth.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    write_file(&args.out.join("config.json"), Command::Synth(args.clone()).echo().as_bytes())?;
    if args.split {
        let split = split_dataset(&data.index, &SplitSpec::default())?;
        dir.write_split(&split)?;
    }
    writeln!(out, "images\t{}\nobjects\t{}", data.index.len(), data.index.num_objects())?;
    Ok(())
}

pub fn run_anchors(args: &AnchorsArgs, out: &mut dyn Write) -> Result<()> {
    if args.feat_w == 0 || args.feat_h == 0 {
        bail!("feature grid must be at least 1x1");
    }
    let spec = AnchorGridSpec::new(args.stride, args.scales.clone(), args.ratios.clone())?;
    let anchors = generate_anchors(args.feat_w, args.feat_h, &spec);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "xmin", "ymin", "xmax", "ymax"])?;
    for (i, a) in anchors.iter().enumerate() {
        w.write_record([
            i.to_string(),
            a.xmin().to_string(),
            a.ymin().to_string(),
            a.xmax().to_string(),
            a.ymax().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the scored-box CSV consumed by [`run_nms`].
pub fn read_scored_boxes(path: &Path) -> Result<Vec<ScoredBox>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| path.display().to_string())?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(["xmin", "ymin", "xmax", "ymax", "score"]) {
        bail!("{}:1: header must be 'xmin,ymin,xmax,ymax,score'", path.display());
    }
    let mut boxes = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let at = || format!("{}:{line}", path.display());
        let v: Vec<f64> = row
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(at)?;
        if v.len() != 5 {
            bail!("{}: expected 5 fields", at());
        }
        let b = BoundingBox::new(v[0], v[1], v[2], v[3]).with_context(at)?;
        boxes.push(ScoredBox::new(b, v[4]).with_context(at)?);
    }
    Ok(boxes)
}

pub fn run_nms(args: &NmsArgs, out: &mut dyn Write) -> Result<()> {
    if !(args.iou > 0.0 && args.iou < 1.0) {
        bail!("--iou must be in (0, 1), got {}", args.iou);
    }
    let boxes = read_scored_boxes(&args.boxes)?;
    for i in nms(&boxes, args.iou) {
        writeln!(out, "{i}")?;
    }
    Ok(())
}
