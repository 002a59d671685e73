mod common;

use std::fs;

use chebcnn::config::RunConfig;
use chebcnn::data::{
    generate_synthetic, load_directory_dataset, render_synthetic_set, synthetic_cutoff, write_png, write_synthetic,
    AugmentConfig, Dataset, GrayImage, Sample,
};
use chebcnn::nn::Model;
use chebcnn::train::{train_loop, TrainConfig};

fn gradient_image(side: usize, shift: f32) -> GrayImage {
    GrayImage::from_fn(side, side, |x, y| ((x + y) as f32 / (2 * side) as f32 + shift).min(1.0))
}

#[test]
fn directory_loader_orders_classes_and_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    for class in ["zebra", "apple"] {
        fs::create_dir(dir.path().join(class)).unwrap();
        for i in (0..3).rev() {
            write_png(&dir.path().join(class).join(format!("{i}.png")), &gradient_image(10, i as f32 * 0.1)).unwrap();
        }
    }
    fs::write(dir.path().join("apple/broken.png"), b"not a png").unwrap();
    fs::write(dir.path().join("apple/notes.txt"), b"ignored").unwrap();

    let (data, report) = load_directory_dataset(dir.path(), 8).unwrap();
    assert_eq!(data.class_names, ["apple", "zebra"]);
    assert_eq!(data.class_counts(), [3, 3]);
    assert_eq!(data.side, 8);
    let ids: Vec<&str> = data.samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["apple/0.png", "apple/1.png", "apple/2.png", "zebra/0.png", "zebra/1.png", "zebra/2.png"]);
    assert!(data.samples.iter().all(|s| s.image.width() == 8 && s.image.height() == 8));
    assert_eq!(report.failures.len(), 1);
    assert!(report.failures[0].0.ends_with("broken.png"));

    let (again, _) = load_directory_dataset(dir.path(), 8).unwrap();
    assert_eq!(again, data);
}

#[test]
fn directory_loader_rejects_empty_class_and_missing_root() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("a")).unwrap();
    fs::create_dir(dir.path().join("b")).unwrap();
    write_png(&dir.path().join("a/x.png"), &gradient_image(6, 0.0)).unwrap();
    assert!(load_directory_dataset(dir.path(), 4).is_err());
    assert!(load_directory_dataset(&dir.path().join("missing"), 4).is_err());
}

#[test]
fn written_synthetic_set_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let counts = write_synthetic(dir.path(), 4, 16, 9).unwrap();
    assert_eq!(counts, [4, 4, 4]);
    let (data, report) = load_directory_dataset(dir.path(), 16).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(data.len(), 12);
    assert_eq!(data.classes(), 3);
}

/// Fraction of spectral energy (DC removed) at radial frequency above `cutoff`
/// cycles per image, by direct DFT.
fn high_band_fraction(img: &GrayImage, cutoff: f64) -> f64 {
    let n = img.width();
    let mean = img.pixels().iter().map(|&p| p as f64).sum::<f64>() / (n * n) as f64;
    let (mut hi, mut all) = (0.0, 0.0);
    for u in 0..n {
        for v in 0..n {
            if u == 0 && v == 0 {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let a = -std::f64::consts::TAU * (u * x + v * y) as f64 / n as f64;
                    let p = img.get(x, y) as f64 - mean;
                    re += p * a.cos();
                    im += p * a.sin();
                }
            }
            let fu = if u <= n / 2 { u } else { n - u } as f64;
            let fv = if v <= n / 2 { v } else { n - v } as f64;
            let e = re * re + im * im;
            all += e;
            if (fu * fu + fv * fv).sqrt() > cutoff {
                hi += e;
            }
        }
    }
    hi / all
}

#[test]
fn synthetic_class_two_carries_high_frequencies() {
    let side = 32;
    let samples = render_synthetic_set(6, side, 3).unwrap();
    let mean_band = |class: usize| {
        let picked: Vec<&Sample> = samples.iter().filter(|s| s.label == class).collect();
        picked.iter().map(|s| high_band_fraction(&s.image, synthetic_cutoff(side))).sum::<f64>() / picked.len() as f64
    };
    let (b0, b2) = (mean_band(0), mean_band(2));
    assert!(b2 > 2.0 * b0, "class 2 {b2:.3} vs class 0 {b0:.3}");
}

#[test]
fn synthetic_generation_is_deterministic() {
    assert_eq!(generate_synthetic(3, 16, 5).unwrap(), generate_synthetic(3, 16, 5).unwrap());
    assert_ne!(generate_synthetic(3, 16, 5).unwrap(), generate_synthetic(3, 16, 6).unwrap());
}

fn two_blobs(per_class: usize, side: usize) -> Dataset {
    let samples = (0..2 * per_class)
        .map(|i| {
            let label = i % 2;
            let jitter = (i / 2) as f32 * 0.01;
            let image = GrayImage::from_fn(side, side, |x, _| {
                let left = x < side / 2;
                if left == (label == 0) {
                    1.0 - jitter
                } else {
                    -1.0 + jitter
                }
            });
            Sample {
                image,
                label,
                id: format!("{label}/{i}"),
            }
        })
        .collect();
    Dataset {
        side,
        class_names: vec!["left".into(), "right".into()],
        samples,
    }
}

fn toy_config() -> RunConfig {
    let mut cfg = RunConfig::parse(
        "side = 8\nclasses = 2\nconv1_filters = 4\nconv1_order = 2\nconv2_filters = 4\nconv2_order = 2\n\
         dense_width = 8\ndropout = 0\nbatch_size = 4\nmax_epochs = 20\npatience = 20",
    )
    .unwrap();
    cfg.augment = AugmentConfig::disabled();
    cfg
}

#[test]
fn separable_toy_problem_is_learned() {
    let data = two_blobs(8, 8);
    let cfg = toy_config();
    let mut model = Model::<f32>::build(&cfg.network_spec(), 1).unwrap();
    let out = train_loop(&mut model, &data, &data, &cfg.train, &cfg.augment).unwrap();
    let first_perfect = out.report.epochs.iter().position(|r| r.train_acc == 1.0);
    assert!(first_perfect.is_some_and(|e| e < 20), "{:?}", out.report.epochs);
}

#[test]
fn same_seed_gives_identical_curves() {
    let data = generate_synthetic(6, 8, 2).unwrap();
    let (train, val) = data.split(0.34, 2).unwrap();
    let mut cfg = toy_config();
    cfg.train = TrainConfig {
        classes: 3,
        max_epochs: 3,
        dropout: 0.5,
        ..cfg.train
    };
    cfg.augment = AugmentConfig::default();
    let run = |seed: u64| {
        let mut c = cfg.clone();
        c.train.seed = seed;
        let mut model = Model::<f32>::build(&c.network_spec(), seed).unwrap();
        let out = train_loop(&mut model, &train, &val, &c.train, &c.augment).unwrap();
        (out.report.to_csv(), model)
    };
    let (a, ma) = run(4);
    let (b, mb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_ne!(run(5).0, a);
}
