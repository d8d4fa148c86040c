use beamgat::config::RunConfig;
use beamgat::commands::load_masked_frames;
use beamgat::graph::build_knn;
use beamgat::gat::{load_model, model_forward};
use beamgat::GatModel;
use beamgat::train::normalize_frame;
use beamgat::Tape;
use std::time::Instant;

fn main() {
    let cfg = RunConfig::load(std::path::Path::new("/tmp/full/run.toml")).unwrap();
    let frames = load_masked_frames(&cfg).unwrap();
    let model: GatModel = load_model(&cfg.model_path()).unwrap();
    let frame = &frames[0];
    let (feats, _) = normalize_frame(frame, &model.config.input_features).unwrap();
    for k in [4usize, 6, 8, 10, 14, 20] {
        let mut best_g = f64::INFINITY;
        let mut best_i = f64::INFINITY;
        for _ in 0..7 {
            let t0 = Instant::now();
            let g = build_knn(&frame.cloud, k, cfg.graph.space, true).unwrap();
            let tg = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let mut tape = Tape::new();
            tape.set_tracking(false);
            let _z = model_forward(&mut tape, &feats, &g, &model, false, 0).unwrap();
            let ti = t1.elapsed().as_secs_f64();
            if tg < best_g { best_g = tg; }
            if ti < best_i { best_i = ti; }
        }
        println!("k={k:2} graph {:.4}s inference {:.4}s total {:.4}s", best_g, best_i, best_g + best_i);
    }
}
