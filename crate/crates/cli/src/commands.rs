//! Implementations behind each subcommand.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stillflow::features::{
    build_training_set, extract_hof, extract_hog_from_gradients, extract_mbh, PatchGeometry, Rect,
    SamplingConfig, DEFAULT_NO_MOTION_THRESHOLD,
};
use stillflow::flowio::{flow_to_color, read_flo, resize_flow, write_flo};
use stillflow::imagecore::{
    canny_edges, gradients, load_image, resize_bilinear, save_png, to_opponent, warp_image,
};
use stillflow::metrics::{aggregate, epe_at_mask, score_report};
use stillflow::srf::{load_model, predict_image, save_model, train_forest, MotionOutput};
use stillflow::{FlowField, ForestConfig, ImageBuffer, ScoreReport, StructuredForest};

use crate::args::{
    Command, DetectArgs, EvalArgs, Flow2PngArgs, PoolArgs, PredictArgs, SynthArgs, TrainArgs,
    WarpArgs,
};
use crate::manifest::{load_pair, Manifest};
use crate::{anomaly, config, pools, synth};

/// The command line itself was wrong (as opposed to bad data on disk).
/// `run` turns this into exit code 1 instead of 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Eval(a) => run_eval(a),
        Command::DetectUnexpected(a) => run_detect(a),
        Command::Pool(a) => run_pool(a),
        Command::Synth(a) => run_synth(a),
        Command::Warp(a) => run_warp(a),
        Command::Flow2png(a) => run_flow2png(a),
    }
}

/// `model.srf` + `walking` → `model.walking.srf`.
fn suffixed_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_owned());
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{suffix}"),
    };
    path.with_file_name(name)
}

/// `pred.flo` + `.warp-0.5` + `png` → `pred.warp-0.5.png`.
fn sibling_with(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_owned());
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

/// Creates the directory an output file is about to land in.
fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let mut cfg = ForestConfig::default();
    if let Some(path) = &a.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = config::parse_forest_config(&text, cfg)?;
    }
    if let Some(v) = a.trees {
        cfg.trees = v;
    }
    if let Some(v) = a.max_leaves {
        cfg.max_leaves = v;
    }
    if let Some(v) = a.var_threshold {
        cfg.var_threshold = v;
    }
    if let Some(v) = a.split_candidates {
        cfg.split_candidates = v;
    }
    if let Some(v) = a.thresholds_per_candidate {
        cfg.thresholds_per_candidate = v;
    }
    if let Some(v) = a.pairs_per_tree {
        cfg.pairs_per_tree = v;
    }
    if let Some(v) = a.min_child {
        cfg.min_child = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let sampling = SamplingConfig {
        patch_size: a.patch_size,
        stride: a.sample_stride,
        max_per_frame: a.max_per_frame,
        canny: a.canny.to_params(),
        label: a.label.into(),
        seed: cfg.seed,
    };

    let classes = manifest.classes();
    let multi = classes.len() > 1;
    for class in &classes {
        let entries = manifest.entries_for(class.as_deref());
        let mut pairs = Vec::with_capacity(entries.len());
        for entry in &entries {
            pairs.push(load_pair(entry)?);
        }
        let corpus = build_training_set(&pairs, &sampling)
            .with_context(|| format!("sampling class {}", class.as_deref().unwrap_or("-")))?;
        let forest = train_forest(&corpus, &cfg)?;
        let out = if multi {
            suffixed_path(&a.out, class.as_deref().unwrap_or("unlabeled"))
        } else {
            a.out.clone()
        };
        ensure_parent(&out)?;
        save_model(&forest, &out)?;

        println!(
            "class {}: {} pairs, {} samples, patch {}x{}, {}-component labels",
            class.as_deref().unwrap_or("(unlabeled)"),
            pairs.len(),
            corpus.samples.len(),
            corpus.patch_size,
            corpus.patch_size,
            corpus.label_dims,
        );
        for (i, tree) in forest.trees.iter().enumerate() {
            println!(
                "  tree {i}: {} leaves / {} nodes from {} samples (seed {})",
                tree.leaf_count(),
                tree.nodes.len(),
                tree.provenance.sample_count,
                tree.provenance.seed,
            );
        }
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn derivative_planes(d: &stillflow::FlowDerivativeField) -> Result<(FlowField, FlowField)> {
    let (w, h) = (d.width(), d.height());
    let du = FlowField::new(w, h, d.du_dx.clone(), d.du_dy.clone())?;
    let dv = FlowField::new(w, h, d.dv_dx.clone(), d.dv_dy.clone())?;
    Ok((du, dv))
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let image = load_image(&a.image)?;
    let multi = a.model.len() > 1;
    for model_path in &a.model {
        let forest = load_model(model_path)?;
        let prediction = predict_image(&forest, &image, a.stride)?;
        let uncovered = (0..image.height())
            .flat_map(|y| (0..image.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| prediction.coverage(x, y) == 0)
            .count();
        if uncovered > 0 {
            eprintln!(
                "warning: {uncovered} of {} pixels received no patch votes and stay zero",
                image.width() * image.height()
            );
        }

        let tag = model_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".to_owned());
        let out = if multi {
            suffixed_path(&a.out, &tag)
        } else {
            a.out.clone()
        };
        ensure_parent(&out)?;
        match prediction.to_output()? {
            MotionOutput::Flow(flow) => {
                write_flo(&flow, &out)?;
                println!(
                    "wrote {} ({}x{}, max magnitude {:.3})",
                    out.display(),
                    flow.width(),
                    flow.height(),
                    flow.max_magnitude()
                );
                if let Some(color) = &a.color {
                    let color = if multi {
                        suffixed_path(color, &tag)
                    } else {
                        color.clone()
                    };
                    ensure_parent(&color)?;
                    save_png(&flow_to_color(&flow, a.max_flow)?, &color)?;
                    println!("wrote {}", color.display());
                }
                for step in &a.warp_steps {
                    let path = sibling_with(&out, &format!(".warp-{step}"), "png");
                    save_png(&warp_image(&image, &flow, *step)?, &path)?;
                    println!("wrote {}", path.display());
                }
            }
            MotionOutput::Derivatives(d) => {
                if a.color.is_some() || !a.warp_steps.is_empty() {
                    bail!(
                        "{} predicts flow derivatives; --color and --warp-steps need a flow model",
                        model_path.display()
                    );
                }
                let (du, dv) = derivative_planes(&d)?;
                let du_path = suffixed_path(&out, "du");
                let dv_path = suffixed_path(&out, "dv");
                write_flo(&du, &du_path)?;
                write_flo(&dv, &dv_path)?;
                println!("wrote {} and {}", du_path.display(), dv_path.display());
            }
        }
    }
    Ok(())
}

/// Distinguishes trained models from .flo files by their leading magic.
enum PredInput {
    Model(Box<StructuredForest>),
    Flow(FlowField),
}

fn sniff_pred_input(path: &Path) -> Result<PredInput> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .with_context(|| format!("reading {}", path.display()))?;
    drop(file);
    if &magic == b"SRFM" {
        Ok(PredInput::Model(Box::new(load_model(path)?)))
    } else if f32::from_le_bytes(magic) == 202021.25 {
        Ok(PredInput::Flow(read_flo(path)?))
    } else {
        bail!(
            "{} is neither a trained model nor a .flo file",
            path.display()
        );
    }
}

fn predicted_flow(
    forest: &StructuredForest,
    frame: &ImageBuffer,
    stride: usize,
) -> Result<FlowField> {
    match predict_image(forest, frame, stride)?.to_output()? {
        MotionOutput::Flow(flow) => Ok(flow),
        MotionOutput::Derivatives(_) => {
            bail!("the model predicts flow derivatives, not flow; retrain with --label flow")
        }
    }
}

#[derive(Serialize)]
struct ScoreRow {
    name: String,
    epe: f64,
    zero_epe: f64,
    direction: f64,
    orientation: f64,
    n_points: usize,
}

impl ScoreRow {
    fn new(name: &str, r: &ScoreReport) -> Self {
        ScoreRow {
            name: name.to_owned(),
            epe: r.epe,
            zero_epe: r.zero_epe,
            direction: r.direction,
            orientation: r.orientation,
            n_points: r.n_points,
        }
    }
}

fn print_score_table(rows: &[ScoreRow]) {
    println!(
        "{:>10} {:>10} {:>9} {:>9} {:>8}  name",
        "edge-EPE", "0-EPE", "dir%", "orient%", "points"
    );
    for row in rows {
        println!(
            "{:>10.4} {:>10.4} {:>9.2} {:>9.2} {:>8}  {}",
            row.epe, row.zero_epe, row.direction, row.orientation, row.n_points, row.name
        );
    }
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let canny = a.canny.to_params();
    let mut rows = Vec::new();

    if let Some(manifest_path) = &a.manifest {
        if a.truth.is_some() || a.image.is_some() {
            return Err(usage(
                "--manifest evaluates (frame, flow) rows; drop --truth/--image",
            ));
        }
        let PredInput::Model(forest) = sniff_pred_input(&a.pred)? else {
            return Err(usage("batch evaluation needs --pred to be a trained model"));
        };
        let manifest = Manifest::load(manifest_path)?;
        let mut reports = Vec::new();
        for entry in &manifest.entries {
            let (frame, truth) = load_pair(entry)?;
            let mask = canny_edges(&frame, &canny)?;
            let pred = predicted_flow(&forest, &frame, a.stride)?;
            let report = score_report(&pred, &truth, Some(&mask))?;
            let name = entry
                .frame
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            rows.push(ScoreRow::new(&name, &report));
            reports.push(report);
        }
        let total = aggregate(&reports, true)?;
        rows.push(ScoreRow::new("(all, point-weighted)", &total));
    } else {
        let (Some(truth_path), Some(image_path)) = (&a.truth, &a.image) else {
            return Err(usage(
                "single evaluation needs --truth and --image (or use --manifest)",
            ));
        };
        let truth = read_flo(truth_path)?;
        let frame = load_image(image_path)?;
        let mask = canny_edges(&frame, &canny)?;
        let pred = match sniff_pred_input(&a.pred)? {
            PredInput::Flow(flow) => flow,
            PredInput::Model(forest) => predicted_flow(&forest, &frame, a.stride)?,
        };
        let report = score_report(&pred, &truth, Some(&mask))?;
        let name = a
            .pred
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push(ScoreRow::new(&name, &report));
    }

    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print_score_table(&rows);
    }
    Ok(())
}

/// Downscales a frame and its flow so the longer side is at most `max_dim`,
/// scaling the flow vectors with the geometry.
fn shrink_to(
    frame: ImageBuffer,
    flow: FlowField,
    max_dim: usize,
) -> Result<(ImageBuffer, FlowField)> {
    let longest = frame.width().max(frame.height());
    if longest <= max_dim {
        return Ok((frame, flow));
    }
    let scale = max_dim as f64 / longest as f64;
    let w = ((frame.width() as f64 * scale).round() as usize).max(1);
    let h = ((frame.height() as f64 * scale).round() as usize).max(1);
    Ok((resize_bilinear(&frame, w, h)?, resize_flow(&flow, w, h)?))
}

fn run_detect(a: DetectArgs) -> Result<()> {
    if a.max_dim == 0 {
        return Err(usage("--max-dim must be positive"));
    }
    let forest = load_model(&a.model)?;
    let manifest = Manifest::load(&a.manifest)?;
    if manifest.entries.len() < 2 {
        bail!(
            "unexpected-event detection needs at least 2 frames, got {}",
            manifest.entries.len()
        );
    }
    if let Some(dir) = &a.heatmaps {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let canny = a.canny.to_params();

    let mut epe_series = Vec::with_capacity(manifest.entries.len());
    let mut baseline = Vec::with_capacity(manifest.entries.len());
    let mut prev_flow: Option<FlowField> = None;
    let mut dims: Option<(usize, usize)> = None;
    for (i, entry) in manifest.entries.iter().enumerate() {
        let (frame, measured) = load_pair(entry)?;
        let (frame, measured) = shrink_to(frame, measured, a.max_dim)?;
        match dims {
            None => dims = Some((frame.width(), frame.height())),
            Some(d) if d != (frame.width(), frame.height()) => bail!(
                "frame {i} is {}x{} but the sequence started at {}x{}",
                frame.width(),
                frame.height(),
                d.0,
                d.1
            ),
            _ => {}
        }
        let mask = canny_edges(&frame, &canny)?;
        let pred = predicted_flow(&forest, &frame, a.stride)?;
        epe_series.push(epe_at_mask(&pred, &measured, Some(&mask))?);
        baseline.push(match &prev_flow {
            Some(prev) => Some(epe_at_mask(prev, &measured, Some(&mask))?),
            None => None,
        });
        if let Some(dir) = &a.heatmaps {
            save_png(
                &error_heatmap(&pred, &measured),
                dir.join(format!("epe_{i:03}.png")),
            )?;
        }
        prev_flow = Some(measured);
    }

    let report = anomaly::AnomalyReport::from_series(epe_series, baseline);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{:>5} {:>12} {:>12}  flagged", "frame", "epe", "baseline");
        for (i, epe) in report.epe.iter().enumerate() {
            let base = report.baseline[i]
                .map(|b| format!("{b:>12.4}"))
                .unwrap_or_else(|| format!("{:>12}", "-"));
            let mark = if report.flagged.contains(&i) {
                "  *"
            } else {
                ""
            };
            println!("{i:>5} {epe:>12.4} {base}{mark}");
        }
        println!(
            "mean {:.4}, std {:.4}, threshold {:.4}; {} of {} frames flagged",
            report.mean,
            report.std,
            report.mean + report.std,
            report.flagged.len(),
            report.epe.len()
        );
    }
    Ok(())
}

/// Per-pixel endpoint error rendered as a grayscale image, normalized by the
/// frame's own maximum.
fn error_heatmap(pred: &FlowField, measured: &FlowField) -> ImageBuffer {
    let (w, h) = (pred.width(), pred.height());
    let mut errors = vec![0.0; w * h];
    let mut max = 0.0_f64;
    for y in 0..h {
        for x in 0..w {
            let du = pred.u(x, y) - measured.u(x, y);
            let dv = pred.v(x, y) - measured.v(x, y);
            let e = du.hypot(dv);
            errors[y * w + x] = e;
            max = max.max(e);
        }
    }
    if max > 0.0 {
        for e in &mut errors {
            *e /= max;
        }
    }
    ImageBuffer::new(w, h, 1, errors).expect("heatmap buffer matches frame dimensions")
}

fn run_pool(a: PoolArgs) -> Result<()> {
    if a.grid_stride == 0 {
        return Err(usage("--grid-stride must be positive"));
    }
    let forest = load_model(&a.model)?;
    let image = load_image(&a.image)?;
    let flow = predicted_flow(&forest, &image, a.stride)?;

    let patch = forest.patch_size;
    let centers = pools::grid_centers(image.width(), image.height(), patch, a.grid_stride);
    if centers.is_empty() {
        bail!(
            "no {patch}x{patch} patch fits a {}x{} image",
            image.width(),
            image.height()
        );
    }
    let cols = centers.iter().filter(|&&(_, y)| y == centers[0].1).count();
    let grid = pools::assign(&flow, &centers, cols, a.grid_stride, a.band_split);

    // Aggregate appearance and motion descriptors per pool.
    let opponent = to_opponent(&image.to_rgb())?;
    let grads = gradients(&opponent);
    let half = patch / 2;
    let mut sums = vec![
        (
            0usize,
            vec![0.0; stillflow::DESCRIPTOR_LEN],
            [0.0; 9],
            [0.0; 18]
        );
        pools::POOL_COUNT
    ];
    for (&(cx, cy), &pool) in grid.centers.iter().zip(&grid.pools) {
        let geometry = PatchGeometry::new(cx, cy, patch)?;
        let hog = extract_hog_from_gradients(&grads, &geometry)?;
        let region = Rect {
            x: cx - half,
            y: cy - half,
            width: patch,
            height: patch,
        };
        let hof = extract_hof(&flow, &region, DEFAULT_NO_MOTION_THRESHOLD)?;
        let mbh = extract_mbh(&flow, &region)?;
        let slot = &mut sums[pool];
        slot.0 += 1;
        for (acc, v) in slot.1.iter_mut().zip(hog.values()) {
            *acc += v;
        }
        for (acc, v) in slot.2.iter_mut().zip(hof) {
            *acc += v;
        }
        for (acc, v) in slot.3.iter_mut().zip(mbh) {
            *acc += v;
        }
    }
    let summaries: Vec<pools::PoolSummary> = sums
        .into_iter()
        .enumerate()
        .map(|(id, (count, mut hog, mut hof, mut mbh))| {
            if count > 0 {
                let n = count as f64;
                hog.iter_mut().for_each(|v| *v /= n);
                hof.iter_mut().for_each(|v| *v /= n);
                mbh.iter_mut().for_each(|v| *v /= n);
            }
            pools::PoolSummary {
                id,
                count,
                hog,
                hof: hof.to_vec(),
                mbh: mbh.to_vec(),
            }
        })
        .collect();

    let histogram = grid.histogram();
    for (id, count) in histogram.iter().enumerate() {
        println!("pool {id}: {count} locations");
    }
    println!(
        "{} locations, band split at {}",
        grid.centers.len(),
        if grid.band_split.is_finite() {
            format!("{:.4}", grid.band_split)
        } else {
            "- (nothing moves)".to_owned()
        }
    );

    if let Some(out) = &a.out {
        let report = pools::PoolReport {
            n_pools: pools::POOL_COUNT,
            grid_stride: a.grid_stride,
            patch_size: patch,
            locations: grid.centers.len(),
            band_split: grid.band_split.is_finite().then_some(grid.band_split),
            histogram: histogram.to_vec(),
            pools: summaries,
        };
        ensure_parent(out)?;
        fs::write(out, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", out.display()))?;
        println!("wrote {}", out.display());
    }
    if let Some(viz) = &a.viz {
        ensure_parent(viz)?;
        save_png(
            &pools::render_pool_map(image.width(), image.height(), &grid),
            viz,
        )?;
        println!("wrote {}", viz.display());
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let classes = if a.classes.is_empty() {
        synth::default_classes()
    } else {
        a.classes
            .iter()
            .map(|c| synth::parse_class_rule(c).map_err(|e| usage(format!("{e:#}"))))
            .collect::<Result<Vec<_>>>()?
    };
    let spec = synth::SynthSpec {
        width: a.width,
        height: a.height,
        pairs: a.pairs,
        classes,
        margin: a.margin,
        cell: a.cell,
        seed: a.seed,
    };
    let manifest = synth::generate(&spec, &a.out)?;
    println!(
        "wrote {} pairs ({} classes) under {}",
        spec.pairs,
        spec.classes.len(),
        a.out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn run_warp(a: WarpArgs) -> Result<()> {
    let image = load_image(&a.image)?;
    let flow = read_flo(&a.flow)?;
    let multi = a.steps.len() > 1;
    for step in &a.steps {
        let out = if multi {
            sibling_with(&a.out, &format!(".step-{step}"), "png")
        } else {
            a.out.clone()
        };
        ensure_parent(&out)?;
        save_png(&warp_image(&image, &flow, *step)?, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run_flow2png(a: Flow2PngArgs) -> Result<()> {
    let flow = read_flo(&a.flow)?;
    ensure_parent(&a.out)?;
    save_png(&flow_to_color(&flow, a.max_flow)?, &a.out)?;
    println!(
        "wrote {} ({}x{}, max magnitude {:.3})",
        a.out.display(),
        flow.width(),
        flow.height(),
        flow.max_magnitude()
    );
    Ok(())
}
