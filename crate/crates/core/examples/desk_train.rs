//! Trains the desk-scale detector on synthetic scenes and prints the
//! test mAP at every snapshot.

use std::time::Instant;

use fishdet_core::dataset::{split_dataset, SplitSpec};
use fishdet_core::detector::{flip_horizontal, image_tensor, training_schedule, Detector, DetectorConfig};
use fishdet_core::eval::{evaluate, DetectionRecord, EvalConfig};
use fishdet_core::nn::{ParamStore, TrainConfig};
use fishdet_core::synth::{synth_generate, SynthConfig};

fn main() {
    let iters: usize = std::env::args().nth(1).map_or(2000, |s| s.parse().unwrap());
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let split = split_dataset(&data.index, &SplitSpec::default()).unwrap();
    let pos = |id: &String| data.index.records().iter().position(|r| &r.image_id == id).unwrap();
    let train: Vec<usize> = split.train.iter().map(pos).collect();
    let test: Vec<usize> = split.test.iter().map(pos).collect();
    let test_index = data.index.subset(&split.test).unwrap();

    let env = |k: &str, d: f64| std::env::var(k).ok().map_or(d, |v| v.parse().unwrap());
    let mut cfg = DetectorConfig::desk(data.index.catalog().to_vec());
    cfg.roi_size = env("ROI", cfg.roi_size as f64) as usize;
    cfg.hidden = env("HIDDEN", cfg.hidden as f64) as usize;
    cfg.lambda = env("LAMBDA", cfg.lambda);
    let scale = env("SCALE", 1.0);
    cfg.pixel_scale *= scale;
    let img = |i: usize| image_tensor(&data.images[i], cfg.pixel_scale);
    let mut det = Detector::new(cfg.clone(), 0).unwrap();
    let tc = TrainConfig { iterations: iters, ..TrainConfig::default() };
    let mut vel = ParamStore::new();
    let sched = training_schedule(train.len(), iters, true, 0);
    let t0 = Instant::now();
    let mut acc = [0.0; 5];
    for (it, &(k, flip)) in sched.iter().enumerate() {
        let i = train[k];
        let mut x = img(i);
        let mut gts = det.labeled_boxes(&data.index.records()[i].objects).unwrap();
        if flip {
            (x, gts) = flip_horizontal(&x, &gts).unwrap();
        }
        let l = det.train_step(&x, &gts, &tc, &mut vel, it as u64).unwrap();
        for (a, v) in acc.iter_mut().zip([l.rpn_cls, l.rpn_reg, l.head_cls, l.head_reg, l.total]) {
            *a += v;
        }
        if (it + 1) % 100 == 0 {
            println!("{:5} {:.1}s rpn {:.3} {:.3} head {:.3} {:.3} tot {:.3}", it + 1, t0.elapsed().as_secs_f64(),
                acc[0] / 100.0, acc[1] / 100.0, acc[2] / 100.0, acc[3] / 100.0, acc[4] / 100.0);
            acc = [0.0; 5];
        }
        if (it + 1) % tc.snapshot_interval == 0 || it + 1 == iters {
            let te = Instant::now();
            let mut dets = Vec::new();
            for &j in &test {
                let id = &data.index.records()[j].image_id;
                for d in det.detect(&img(j)).unwrap() {
                    dets.push(DetectionRecord::new(id.clone(), det.config().classes[d.class].clone(), d.score, d.bbox).unwrap());
                }
            }
            let r = evaluate(&dets, &test_index, &EvalConfig::default()).unwrap();
            let loose = evaluate(&dets, &test_index, &EvalConfig { iou_thresh: 0.25, ..EvalConfig::default() }).unwrap();
            println!("   at IoU 0.25: {:.3} {:?}", loose.map, loose.classes.iter().map(|c| (c.ap * 1000.0).round() / 1000.0).collect::<Vec<_>>());
            let aps: Vec<String> = r.classes.iter().map(|c| format!("{}={:.3}", c.label, c.ap)).collect();
            println!("== iter {} mAP {:.3} [{}] ({} dets, eval {:.1}s)", it + 1, r.map, aps.join(" "), dets.len(), te.elapsed().as_secs_f64());
        }
    }
}
