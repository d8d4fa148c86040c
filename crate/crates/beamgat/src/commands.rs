//! Config-driven pipeline commands behind the CLI: synth → dropout → train →
//! eval/reconstruct → sweep-k, all file based so each stage is independently
//! testable and external reconstructors can be scored.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::Tape;
use crate::beam::{apply_channel_dropout, estimate_beam_index, MaskedFrame};
use crate::cloud::{range_filter_mask, subsample_mask, PointCloud};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gat::{load_model, model_forward, save_model, Feature, GatModel};
use crate::graph::build_knn;
use crate::io;
use crate::metrics::{
    accuracy_at, chamfer, error_cdf, mae_z, rmse_xyz, rmse_z, FrameMetrics, MetricsReport,
};
use crate::mix_seed;
use crate::synth::{make_benchmark_set, BenchmarkParams};
use crate::train::{normalize_frame, train, train_with_progress, PreparedFrame};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn list_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "input directory {} does not exist",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(suffix)))
        .collect();
    files.sort();
    Ok(files)
}

/// Generate and persist the synthetic benchmark set.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.sensor.to_spec()?;
    let params = BenchmarkParams {
        ground_z: cfg.synth.ground_z,
        boxes_min: cfg.synth.boxes_min,
        boxes_max: cfg.synth.boxes_max,
        azimuth_steps: cfg.synth.azimuth_steps,
        noise_std: cfg.synth.noise_std,
        r_max: cfg.data.r_max,
    };
    let frames = make_benchmark_set(cfg.synth.frames, &spec, &params, cfg.synth.seed)?;
    let dir = cfg.frames_dir();
    ensure_dir(&dir)?;
    let mut written = Vec::with_capacity(frames.len());
    for frame in &frames {
        let path = dir.join(format!("{}.csv", frame.frame_id));
        io::write_csv(frame, &path)?;
        println!("{}: {} points", frame.frame_id, frame.len());
        written.push(path);
    }
    cfg.echo("synth")?;
    Ok(written)
}

/// Apply channel dropout to every input frame, writing masked clouds and
/// truth sidecars.
pub fn cmd_dropout(cfg: &RunConfig) -> Result<Vec<(PathBuf, PathBuf)>> {
    let spec = cfg.sensor.to_spec()?;
    let pattern = cfg.dropout.to_pattern();
    let dropped = pattern.dropped_beams(spec.beams)?;
    println!(
        "dropping beams {:?} of {}",
        dropped.iter().collect::<Vec<_>>(),
        spec.beams
    );

    let mut clouds: Vec<PointCloud> = Vec::new();
    if let Some(kitti) = &cfg.data.kitti_dir {
        for path in list_files(kitti, ".bin")? {
            let (cloud, dropped_pts) = io::read_kitti_bin(&path)?;
            if dropped_pts > 0 {
                println!("{}: dropped {dropped_pts} non-finite records", path.display());
            }
            clouds.push(cloud.with_sensor(spec));
        }
    } else {
        for path in list_files(&cfg.frames_dir(), ".csv")? {
            clouds.push(io::read_csv(&path)?.with_sensor(spec));
        }
    }
    if clouds.is_empty() {
        return Err(Error::Data("no input frames found for dropout".into()));
    }

    let out_dir = cfg.masked_dir();
    ensure_dir(&out_dir)?;
    let mut written = Vec::with_capacity(clouds.len());
    for cloud in clouds {
        let with_beams = if cloud.points.iter().all(|p| p.beam.is_some()) {
            cloud
        } else {
            estimate_beam_index(&cloud, &spec)
        };
        let frame = apply_channel_dropout(&with_beams, &pattern, spec.beams)?;
        let cloud_path = out_dir.join(format!("{}.masked.csv", frame.cloud.frame_id));
        let truth_path = out_dir.join(format!("{}.truth.csv", frame.cloud.frame_id));
        io::write_masked_frame(&frame, &cloud_path, &truth_path)?;
        println!(
            "{}: {} points, {} masked",
            frame.cloud.frame_id,
            frame.cloud.len(),
            frame.masked_count()
        );
        written.push((cloud_path, truth_path));
    }
    cfg.echo("dropout")?;
    Ok(written)
}

/// Load masked frames with their truth sidecars, attaching the configured
/// sensor spec.
pub fn load_masked_frames(cfg: &RunConfig) -> Result<Vec<MaskedFrame>> {
    let spec = cfg.sensor.to_spec()?;
    let dir = cfg.masked_dir();
    let mut frames = Vec::new();
    for cloud_path in list_files(&dir, ".masked.csv")? {
        let stem = cloud_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .trim_end_matches(".masked.csv")
            .to_string();
        let truth_path = dir.join(format!("{stem}.truth.csv"));
        let mut frame = io::read_masked_frame(&cloud_path, &truth_path)?;
        frame.cloud = frame.cloud.with_sensor(spec);
        frame.cloud.frame_id = stem;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::Data(format!(
            "no masked frames found under {}",
            dir.display()
        )));
    }
    Ok(frames)
}

/// Filter and subsample a masked frame per the data config; `None` when the
/// frame is excluded for having too few points (or nothing masked).
fn preprocess_frame(cfg: &RunConfig, frame: &MaskedFrame, index: usize) -> Result<Option<MaskedFrame>> {
    let keep = range_filter_mask(&frame.cloud, cfg.data.r_min, cfg.data.r_max, &cfg.data.bounds);
    let filtered = frame.retain(&keep)?;
    if filtered.cloud.len() < cfg.data.min_points.max(1) {
        println!(
            "{}: excluded ({} valid points, need {})",
            frame.cloud.frame_id,
            filtered.cloud.len(),
            cfg.data.min_points
        );
        return Ok(None);
    }
    let keep = subsample_mask(
        filtered.cloud.len(),
        cfg.data.subsample,
        mix_seed(cfg.data.subsample_seed, index as u64),
    );
    let sampled = filtered.retain(&keep)?;
    if sampled.masked_count() == 0 {
        println!("{}: excluded (no masked points)", frame.cloud.frame_id);
        return Ok(None);
    }
    Ok(Some(sampled))
}

/// Full preparation: filter, subsample, graph, normalize.
pub fn prepare_frames(
    cfg: &RunConfig,
    frames: &[MaskedFrame],
    features: &[Feature],
) -> Result<Vec<PreparedFrame>> {
    let mut prepared = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let Some(processed) = preprocess_frame(cfg, frame, i)? else {
            continue;
        };
        let graph = build_knn(
            &processed.cloud,
            cfg.graph.k,
            cfg.graph.space,
            cfg.graph.self_loops,
        )?;
        prepared.push(PreparedFrame::build(processed, graph, features)?);
    }
    if prepared.is_empty() {
        return Err(Error::Data("all frames were excluded during preparation".into()));
    }
    Ok(prepared)
}

/// Full training pipeline; writes the checkpoint and the per-epoch log CSV.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let masked = load_masked_frames(cfg)?;
    let prepared = prepare_frames(cfg, &masked, &cfg.model.input_features)?;
    println!(
        "training on {} frames ({} validation fraction)",
        prepared.len(),
        cfg.train.split_fraction
    );
    let (model, log) = train_with_progress(&prepared, &cfg.model, &cfg.train, |e| {
        println!(
            "epoch {:>3}: train {:.6} val {:.6} ({:.2}s)",
            e.epoch, e.train_loss, e.val_loss, e.seconds
        );
    })?;
    ensure_dir(&cfg.output.dir)?;
    let model_path = cfg.model_path();
    save_model(&model, &model_path)?;
    let rows: Vec<String> = log
        .iter()
        .map(|e| {
            format!(
                "{},{:.9e},{:.9e},{:.3}",
                e.epoch, e.train_loss, e.val_loss, e.seconds
            )
        })
        .collect();
    io::write_csv_rows(
        &cfg.output.dir.join("train_log.csv"),
        "epoch,train_loss,val_loss,seconds",
        &rows,
    )?;
    cfg.echo("train")?;
    Ok(model_path)
}

/// Predictions for the masked points of a prepared frame, in meters,
/// alongside the reconstructed cloud (observed points untouched, masked
/// points carrying the predicted elevation).
pub fn reconstruct_frame(
    model: &GatModel<f64>,
    frame: &PreparedFrame,
) -> Result<(PointCloud, Vec<f64>)> {
    let mut tape = Tape::new();
    tape.set_tracking(false);
    let z = model_forward(&mut tape, &frame.features, &frame.graph, model, false, 0)?;
    let masked = frame.frame.masked_indices();
    let mut preds = Vec::with_capacity(masked.len());
    let mut points = frame.frame.cloud.points.clone();
    for &i in &masked {
        let pred = frame.stats.denormalize_z(z.values()[i])?;
        points[i].z = pred;
        preds.push(pred);
    }
    Ok((frame.frame.cloud.like(points), preds))
}

fn load_model_checked(cfg: &RunConfig, model_override: Option<&Path>) -> Result<GatModel<f64>> {
    let path = model_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.model_path());
    let model: GatModel<f64> = load_model(&path)?;
    if model.config.input_features != cfg.model.input_features {
        return Err(Error::Config(format!(
            "model at {} was trained on features {:?}, config asks for {:?}",
            path.display(),
            model.config.input_features,
            cfg.model.input_features
        )));
    }
    Ok(model)
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.9}")
}

/// Reconstruct every masked frame without scoring; writes the reconstructed
/// clouds only.
pub fn cmd_reconstruct(cfg: &RunConfig, model_override: Option<&Path>) -> Result<Vec<PathBuf>> {
    let model = load_model_checked(cfg, model_override)?;
    let masked = load_masked_frames(cfg)?;
    let prepared = prepare_frames(cfg, &masked, &model.config.input_features)?;
    let dir = cfg.output.dir.join("recon");
    ensure_dir(&dir)?;
    let mut written = Vec::new();
    for frame in &prepared {
        let (recon, _) = reconstruct_frame(&model, frame)?;
        let path = dir.join(format!("{}.csv", recon.frame_id));
        if cfg.eval.write_csv {
            io::write_csv(&recon, &path)?;
            written.push(path);
        }
        if cfg.eval.write_ply {
            io::write_ply(&recon, &dir.join(format!("{}.ply", recon.frame_id)))?;
        }
        println!("{}: reconstructed {} masked points", recon.frame_id, frame.frame.masked_count());
    }
    cfg.echo("reconstruct")?;
    Ok(written)
}

/// Reconstruct and score every masked frame; writes reconstructions, the
/// metrics CSV (one row per frame plus an aggregate row; wall time in the
/// last column), the per-metric spread summary, and the pooled error CDF.
pub fn cmd_eval(cfg: &RunConfig, model_override: Option<&Path>) -> Result<MetricsReport> {
    let model = load_model_checked(cfg, model_override)?;
    let masked = load_masked_frames(cfg)?;
    let prepared = prepare_frames(cfg, &masked, &model.config.input_features)?;

    let eval_dir = cfg.output.dir.join("eval");
    let recon_dir = eval_dir.join("recon");
    ensure_dir(&recon_dir)?;

    if cfg.eval.dump_graph {
        prepared[0].graph.dump_csv(
            &eval_dir.join("graph_offsets.csv"),
            &eval_dir.join("graph_neighbors.csv"),
        )?;
    }

    let mut report = MetricsReport::new(cfg.eval.tau);
    let mut pooled_pred = Vec::new();
    let mut pooled_truth = Vec::new();
    for frame in &prepared {
        let started = Instant::now();
        let (recon, preds) = reconstruct_frame(&model, frame)?;
        let runtime_s = started.elapsed().as_secs_f64();

        let truth = &frame.frame.truth_z;
        let original = frame.frame.unmask();
        let m = FrameMetrics {
            rmse_xyz: rmse_xyz(&recon, &original)?,
            rmse_z: rmse_z(&preds, truth)?,
            mae_z: mae_z(&preds, truth)?,
            accuracy_at_tau: accuracy_at(&preds, truth, cfg.eval.tau)?,
            chamfer: {
                let masked_idx = frame.frame.masked_indices();
                let a: Vec<[f64; 3]> = masked_idx
                    .iter()
                    .map(|&i| [recon.points[i].x, recon.points[i].y, recon.points[i].z])
                    .collect();
                let b: Vec<[f64; 3]> = masked_idx
                    .iter()
                    .zip(truth)
                    .map(|(&i, &z)| [recon.points[i].x, recon.points[i].y, z])
                    .collect();
                chamfer(&a, &b)?
            },
            runtime_s,
            masked_count: truth.len(),
            point_count: recon.len(),
        };
        // invariants enforced on every evaluation
        if m.mae_z > m.rmse_z + 1e-12 {
            return Err(Error::Internal(format!(
                "{}: MAE_z {} exceeds RMSE_z {}",
                recon.frame_id, m.mae_z, m.rmse_z
            )));
        }
        let fraction = m.masked_count as f64 / m.point_count as f64;
        if (m.rmse_xyz - fraction.sqrt() * m.rmse_z).abs() > 1e-12 {
            return Err(Error::Internal(format!(
                "{}: rmse_xyz {} deviates from sqrt(masked_fraction)*rmse_z {}",
                recon.frame_id,
                m.rmse_xyz,
                fraction.sqrt() * m.rmse_z
            )));
        }

        if cfg.eval.write_csv {
            io::write_csv(&recon, &recon_dir.join(format!("{}.csv", recon.frame_id)))?;
        }
        if cfg.eval.write_ply {
            io::write_ply(&recon, &recon_dir.join(format!("{}.ply", recon.frame_id)))?;
        }
        pooled_pred.extend_from_slice(&preds);
        pooled_truth.extend_from_slice(truth);
        println!(
            "{}: rmse_z {:.4} m, accuracy@{:.2} {:.3}, {} masked",
            recon.frame_id, m.rmse_z, cfg.eval.tau, m.accuracy_at_tau, m.masked_count
        );
        report.push(recon.frame_id.clone(), m);
    }

    // metrics.csv: per-frame rows + one aggregate row
    let header = "frame,rmse_xyz,rmse_z,mae_z,accuracy,chamfer,masked,points,runtime_s";
    let mut rows: Vec<String> = report
        .frames
        .iter()
        .map(|(id, m)| {
            format!(
                "{},{},{},{},{},{},{},{},{:.6}",
                id,
                fmt_metric(m.rmse_xyz),
                fmt_metric(m.rmse_z),
                fmt_metric(m.mae_z),
                fmt_metric(m.accuracy_at_tau),
                fmt_metric(m.chamfer),
                m.masked_count,
                m.point_count,
                m.runtime_s
            )
        })
        .collect();
    let agg = report.aggregate();
    rows.push(format!(
        "aggregate,{},{},{},{},{},{},{},{:.6}",
        fmt_metric(agg.rmse_xyz),
        fmt_metric(agg.rmse_z),
        fmt_metric(agg.mae_z),
        fmt_metric(agg.accuracy_at_tau),
        fmt_metric(agg.chamfer),
        agg.masked_count,
        agg.point_count,
        agg.runtime_s
    ));
    io::write_csv_rows(&eval_dir.join("metrics.csv"), header, &rows)?;

    let spread_rows: Vec<String> = report
        .spreads()
        .iter()
        .map(|(name, s)| {
            format!(
                "{name},{},{},{},{}",
                fmt_metric(s.mean),
                fmt_metric(s.std),
                fmt_metric(s.min),
                fmt_metric(s.max)
            )
        })
        .collect();
    io::write_csv_rows(
        &eval_dir.join("metrics_summary.csv"),
        "metric,mean,std,min,max",
        &spread_rows,
    )?;

    let cdf = error_cdf(&pooled_pred, &pooled_truth, &cfg.eval.cdf_edges)?;
    let cdf_rows: Vec<String> = cdf
        .iter()
        .map(|(tau, frac)| format!("{},{}", fmt_metric(*tau), fmt_metric(*frac)))
        .collect();
    io::write_csv_rows(&eval_dir.join("cdf.csv"), "threshold,fraction", &cdf_rows)?;

    println!(
        "aggregate: rmse_xyz {:.4} m, rmse_z {:.4} m, mae_z {:.4} m, accuracy {:.3}, chamfer {:.4} m",
        agg.rmse_xyz, agg.rmse_z, agg.mae_z, agg.accuracy_at_tau, agg.chamfer
    );
    cfg.echo("eval")?;
    Ok(report)
}

/// One row of the k-sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub k: usize,
    pub rmse_xyz: f64,
    pub rmse_z: f64,
    /// Per-frame graph construction + inference seconds (minimum over
    /// repeats).
    pub seconds: f64,
}

/// Rebuild graphs and re-evaluate (or retrain) across neighborhood sizes,
/// timing graph+inference per frame.
pub fn cmd_sweep_k(cfg: &RunConfig, model_override: Option<&Path>) -> Result<Vec<SweepRow>> {
    let masked = load_masked_frames(cfg)?;
    let features = if cfg.sweep.retrain {
        cfg.model.input_features.clone()
    } else {
        load_model_checked(cfg, model_override)?.config.input_features
    };

    // filter/subsample and normalize once; graphs are rebuilt per k
    let mut processed = Vec::new();
    for (i, frame) in masked.iter().enumerate() {
        if let Some(p) = preprocess_frame(cfg, frame, i)? {
            let (feats, stats) = normalize_frame(&p, &features)?;
            processed.push((p, feats, stats));
        }
    }
    if processed.is_empty() {
        return Err(Error::Data("all frames were excluded during preparation".into()));
    }

    let mut rows = Vec::with_capacity(cfg.sweep.ks.len());
    for &k in &cfg.sweep.ks {
        let max_len = processed.iter().map(|(p, _, _)| p.cloud.len()).min().unwrap();
        if k >= max_len {
            return Err(Error::Config(format!(
                "sweep k = {k} not below the smallest frame size {max_len}"
            )));
        }
        let model = if cfg.sweep.retrain {
            let mut kcfg = cfg.clone();
            kcfg.graph.k = k;
            let prepared: Vec<PreparedFrame> = processed
                .iter()
                .map(|(p, _, _)| {
                    let graph = build_knn(&p.cloud, k, kcfg.graph.space, kcfg.graph.self_loops)?;
                    PreparedFrame::build(p.clone(), graph, &features)
                })
                .collect::<Result<_>>()?;
            train(&prepared, &kcfg.model, &kcfg.train)?.0
        } else {
            load_model_checked(cfg, model_override)?
        };

        let mut best_elapsed = f64::INFINITY;
        let mut last_metrics: Option<(f64, f64)> = None;
        for _rep in 0..cfg.sweep.repeats {
            let started = Instant::now();
            let mut predictions = Vec::with_capacity(processed.len());
            for (frame, feats, _stats) in &processed {
                let graph = build_knn(&frame.cloud, k, cfg.graph.space, cfg.graph.self_loops)?;
                let mut tape = Tape::new();
                tape.set_tracking(false);
                let z = model_forward(&mut tape, feats, &graph, &model, false, 0)?;
                predictions.push(z);
            }
            let elapsed = started.elapsed().as_secs_f64();
            if elapsed < best_elapsed {
                best_elapsed = elapsed;
            }
            if last_metrics.is_none() {
                let mut n_all = 0usize;
                let mut sq_masked = 0.0;
                let mut n_masked = 0usize;
                for ((frame, _, stats), z) in processed.iter().zip(&predictions) {
                    let masked_idx = frame.masked_indices();
                    for (truth, &i) in frame.truth_z.iter().zip(&masked_idx) {
                        let pred = stats.denormalize_z(z.values()[i])?;
                        let d = pred - truth;
                        sq_masked += d * d;
                    }
                    n_masked += masked_idx.len();
                    n_all += frame.cloud.len();
                }
                // observed points contribute no error, so the all-points RMSE
                // pools the same squared sum over every point
                let rz = (sq_masked / n_masked as f64).sqrt();
                let rxyz = (sq_masked / n_all as f64).sqrt();
                last_metrics = Some((rxyz, rz));
            }
        }
        let (rxyz, rz) = last_metrics.expect("at least one repeat ran");
        let row = SweepRow {
            k,
            rmse_xyz: rxyz,
            rmse_z: rz,
            seconds: best_elapsed / processed.len() as f64,
        };
        println!(
            "k = {:>3}: rmse_xyz {:.4} m, rmse_z {:.4} m, {:.4} s/frame",
            row.k, row.rmse_xyz, row.rmse_z, row.seconds
        );
        rows.push(row);
    }

    ensure_dir(&cfg.output.dir)?;
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{:.6}",
                r.k,
                fmt_metric(r.rmse_xyz),
                fmt_metric(r.rmse_z),
                r.seconds
            )
        })
        .collect();
    io::write_csv_rows(
        &cfg.output.dir.join("sweep_k.csv"),
        "k,rmse_xyz,rmse_z,seconds",
        &csv_rows,
    )?;
    cfg.echo("sweep-k")?;
    Ok(rows)
}

/// Print the resolved configuration and what inputs are present.
pub fn cmd_info(cfg: &RunConfig) -> Result<()> {
    println!("beamgat {}", env!("CARGO_PKG_VERSION"));
    println!("run directory: {}", cfg.output.dir.display());
    let frames = list_files(&cfg.frames_dir(), ".csv").map(|v| v.len()).unwrap_or(0);
    let masked = list_files(&cfg.masked_dir(), ".masked.csv").map(|v| v.len()).unwrap_or(0);
    println!("frames: {frames} under {}", cfg.frames_dir().display());
    println!("masked frames: {masked} under {}", cfg.masked_dir().display());
    let model_path = cfg.model_path();
    if model_path.is_file() {
        let model: GatModel<f64> = load_model(&model_path)?;
        println!(
            "model: {} ({} layers, {} heads, hidden {}, {} parameters)",
            model_path.display(),
            model.config.layers,
            model.config.heads,
            model.config.hidden,
            model.n_parameters()
        );
    } else {
        println!("model: none at {}", model_path.display());
    }
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Internal(format!("config serialization: {e}")))?;
    println!("--- resolved config ---\n{text}");
    Ok(())
}
