use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chebcnn::cheb::approximation_rmse;
use chebcnn::config::{ArchKind, RunConfig};
use chebcnn::data::{load_directory_dataset, read_png, synthetic_class_names, write_synthetic, Dataset};
use chebcnn::experiment::{evaluate, run_ablation, Evaluation};
use chebcnn::matrix::Matrix;
use chebcnn::spectral::{apply_filter, locality_certificate, path_laplacian, symmetric_eigen, rescale, SpectralCoeffs};
use chebcnn::train::{train_loop_with, EpochRecord};
use chebcnn::{Checkpoint, Model};

pub const MAX_DEMO_DIM: usize = 64;

pub fn print_defaults() -> Result<()> {
    print!("{}", RunConfig::default().render());
    Ok(())
}

pub fn generate(out: &Path, per_class: usize, side: usize, seed: u64) -> Result<()> {
    let counts = write_synthetic(out, per_class, side, seed).with_context(|| format!("generating into {}", out.display()))?;
    for (name, n) in synthetic_class_names().iter().zip(&counts) {
        println!("{name}: {n}");
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("config {}", p.display()))
        }
    }
}

fn load_data(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    let root = data
        .or(cfg.data_dir.as_deref())
        .context("no dataset given: pass --data or set data_dir in the config")?;
    let (dataset, report) = load_directory_dataset(root, cfg.side)?;
    for (path, why) in &report.failures {
        eprintln!("warning: skipped {}: {why}", path.display());
    }
    if dataset.classes() != cfg.train.classes {
        bail!(
            "{} has {} class directories but the config expects classes = {}",
            root.display(),
            dataset.classes(),
            cfg.train.classes
        );
    }
    Ok(dataset)
}

fn progress_line(r: &EpochRecord) -> String {
    format!(
        "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}",
        r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
    )
}

pub fn train(config: Option<&Path>, data: Option<&Path>, out: &Path, curves: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let dataset = load_data(&cfg, data)?;
    let (train, val) = dataset.split(cfg.val_fraction, cfg.train.seed)?;
    eprintln!("training on {} samples, validating on {}", train.len(), val.len());
    let mut model = Model::<f32>::build(&cfg.network_spec(), cfg.train.seed)?;
    let outcome = train_loop_with(&mut model, &train, &val, &cfg.train, &cfg.augment, &mut |r| {
        eprintln!("{}", progress_line(r))
    })?;
    let report = &outcome.report;
    fs::write(curves, report.to_csv()).with_context(|| format!("writing curves to {}", curves.display()))?;
    let ckpt = Checkpoint {
        model,
        adam: Some(outcome.adam),
        epoch: report.best_epoch as u64,
        best_val_loss: report.best_val_loss,
    };
    ckpt.save(out).with_context(|| format!("writing checkpoint {}", out.display()))?;

    let eval = evaluate(&ckpt.model, &val)?;
    println!(
        "best epoch {} of {}{}",
        report.best_epoch,
        report.epochs.len(),
        if report.stopped_early { " (stopped early)" } else { "" }
    );
    if let Some(last) = report.final_record() {
        println!("final train_acc {:.4}", last.train_acc);
    }
    println!("best val_loss {:.6}", report.best_val_loss);
    print_summary(&eval);
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("undef".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

fn print_summary(eval: &Evaluation) {
    println!("accuracy {}", pct(eval.report.accuracy));
    println!("macro f1 {}", pct(eval.report.macro_avg.f1));
    println!("macro auc {}", eval.auc.macro_avg.map_or("undef".into(), |a| format!("{a:.4}")));
}

pub fn eval(ckpt: &Path, data: &Path, report: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let (dataset, load) = load_directory_dataset(data, ck.model.spec.side)?;
    for (path, why) in &load.failures {
        eprintln!("warning: skipped {}: {why}", path.display());
    }
    let e = evaluate(&ck.model, &dataset)?;
    let mut text = e.report.render_text();
    text.push_str("\nconfusion (rows true, columns predicted)\n");
    text.push_str(&e.confusion.to_csv(&dataset.class_names));
    text.push('\n');
    for (name, auc) in dataset.class_names.iter().zip(&e.auc.per_class) {
        let _ = writeln!(text, "auc.{name}={}", auc.map_or("undefined".into(), |a| a.to_string()));
    }
    let _ = writeln!(text, "auc.macro={}", e.auc.macro_avg.map_or("undefined".into(), |a| a.to_string()));
    text.push('\n');
    text.push_str(&e.report.render_key_values());
    fs::write(report, text).with_context(|| format!("writing report {}", report.display()))?;
    println!("evaluated {} samples from {}", dataset.len(), data.display());
    print_summary(&e);
    Ok(())
}

pub fn ablate(config: Option<&Path>, data: Option<&Path>, seeds: &[u64], report: &Path) -> Result<()> {
    if seeds.len() < 2 {
        bail!("ablation needs at least 2 seeds, got {}", seeds.len());
    }
    let cfg = load_config(config)?;
    let dataset = load_data(&cfg, data)?;
    let (train, val) = dataset.split(cfg.val_fraction, cfg.train.seed)?;
    let result = run_ablation(&cfg, &train, &val, seeds, &mut |kind, seed, r| {
        let arm = match kind {
            ArchKind::Chebyshev => "chebyshev",
            ArchKind::Standard => "standard",
        };
        eprintln!("[{arm} seed {seed}] {}", progress_line(r));
    })?;
    fs::write(report, result.to_csv()).with_context(|| format!("writing report {}", report.display()))?;
    println!(
        "chebyshev mean val_acc {:.4} ({} parameters)",
        result.chebyshev_mean(),
        result.chebyshev[0].parameters
    );
    println!(
        "standard  mean val_acc {:.4} ({} parameters)",
        result.standard_mean(),
        result.standard[0].parameters
    );
    Ok(())
}

pub fn approx(image: &Path, order: usize) -> Result<()> {
    let img = read_png(image)?;
    let m = Matrix::from_fn(img.height(), img.width(), |r, c| img.get(c, r) as f64);
    println!("order,rmse");
    for (k, e) in approximation_rmse(&m, order)?.iter().enumerate() {
        println!("{k},{e:e}");
    }
    Ok(())
}

pub fn spectral_demo(dim: usize, order: usize) -> Result<()> {
    if !(2..=MAX_DEMO_DIM).contains(&dim) {
        bail!("--dim must be between 2 and {MAX_DEMO_DIM}, got {dim}");
    }
    let l = path_laplacian(dim);
    let (values, _) = symmetric_eigen(&l)?;
    let lambda = values.iter().fold(0.0f64, |m, &v| m.max(v));
    let op = rescale(&l, lambda)?;
    // Decaying coefficients keep the printed response readable at any order.
    let theta = SpectralCoeffs::new((0..=order).map(|k| 1.0 / (k + 1) as f64).collect())?;
    let source = dim / 2;
    let mut impulse = vec![0.0; dim];
    impulse[source] = 1.0;
    let response = apply_filter(&op, &theta, &impulse)?;
    let cert = locality_certificate(&l, &op, &theta)?;

    println!("graph=path");
    println!("dim={dim}");
    println!("order={order}");
    println!("lambda_max={lambda}");
    let joined: Vec<String> = theta.as_slice().iter().map(|t| t.to_string()).collect();
    println!("theta={}", joined.join(","));
    println!("source={source}");
    println!("vertex,hops,response");
    for (v, r) in response.iter().enumerate() {
        println!("{v},{},{r:e}", v.abs_diff(source));
    }
    println!("certificate.order={}", cert.order);
    println!("certificate.far_pairs={}", cert.far_pairs);
    println!("certificate.max_leak={:e}", cert.max_leak);
    println!("certificate.local={}", cert.max_leak <= 1e-12);
    Ok(())
}
