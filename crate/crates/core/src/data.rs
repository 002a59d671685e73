//! Image ingestion, normalisation, augmentation and the synthetic dataset.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tensor};

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(invalid(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample at fractional pixel coordinates; outside the grid
    /// the image reads as `fill`.
    fn sample_or(&self, fx: f64, fy: f64, fill: f32) -> f32 {
        let (w, h) = (self.width as f64, self.height as f64);
        if fx < -1.0 || fy < -1.0 || fx > w || fy > h {
            return fill;
        }
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let at = |x: f64, y: f64| -> f32 {
            if x < 0.0 || y < 0.0 || x >= w || y >= h {
                fill
            } else {
                self.get(x as usize, y as usize)
            }
        };
        if tx == 0.0 && ty == 0.0 {
            return at(x0, y0);
        }
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
        let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Bilinear resize with pixel-centre alignment and edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        GrayImage::from_fn(width, height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            self.sample_or(fx, fy, 0.0)
        })
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    /// Rotates by `angle_deg` (counter-clockwise) and then scales by `scale`
    /// about the image centre, pulling each output pixel back through the
    /// inverse map. Uncovered pixels are zero.
    pub fn rotate_scale(&self, angle_deg: f64, scale: f64) -> GrayImage {
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let dx = (x as f64 - cx) / scale;
            let dy = (y as f64 - cy) / scale;
            // Screen coordinates have y pointing down.
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            self.sample_or(sx, sy, 0.0)
        })
    }
}

/// Per-image z-score: `(I − μ) / σ` with the population standard deviation.
pub fn zscore_normalize(image: &GrayImage) -> Result<GrayImage> {
    let n = image.pixels.len() as f64;
    let mean = image.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.pixels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !std.is_finite() || std < 1e-8 {
        return Err(Error::Degenerate(format!(
            "image standard deviation {std:e} is too small to normalise"
        )));
    }
    Ok(GrayImage {
        width: image.width,
        height: image.height,
        pixels: image.pixels.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub label: usize,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub rotation_deg: f64,
    pub scale: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip: bool,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub noise: bool,
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            rotation_deg: 15.0,
            scale: true,
            scale_min: 0.9,
            scale_max: 1.1,
            flip: true,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            noise: true,
            noise_sigma: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            rotate: false,
            scale: false,
            flip: false,
            noise: false,
            ..Self::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.rotate || self.scale || self.flip || self.noise
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return Err(invalid("rotation range must be finite and non-negative"));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(invalid("scale range must satisfy 0 < min <= max"));
        }
        if !prob(self.hflip_prob) || !prob(self.vflip_prob) {
            return Err(invalid("flip probabilities must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub angle_deg: f64,
    pub scale: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub noise_sigma: f64,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            scale: 1.0,
            hflip: false,
            vflip: false,
            noise_sigma: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let angle_deg = if cfg.rotate && cfg.rotation_deg > 0.0 {
            rng.gen_range(-cfg.rotation_deg..=cfg.rotation_deg)
        } else {
            0.0
        };
        let scale = if cfg.scale && cfg.scale_max > cfg.scale_min {
            rng.gen_range(cfg.scale_min..=cfg.scale_max)
        } else if cfg.scale {
            cfg.scale_min
        } else {
            1.0
        };
        let hflip = cfg.flip && rng.gen_bool(cfg.hflip_prob);
        let vflip = cfg.flip && rng.gen_bool(cfg.vflip_prob);
        Self {
            angle_deg,
            scale,
            hflip,
            vflip,
            noise_sigma: if cfg.noise { cfg.noise_sigma } else { 0.0 },
        }
    }

    /// Rotation, then scaling, then flips, then additive Gaussian noise.
    pub fn apply<R: Rng + ?Sized>(&self, sample: &Sample, rng: &mut R) -> Sample {
        let mut img = if self.angle_deg != 0.0 || self.scale != 1.0 {
            sample.image.rotate_scale(self.angle_deg, self.scale)
        } else {
            sample.image.clone()
        };
        if self.hflip {
            img = img.flip_horizontal();
        }
        if self.vflip {
            img = img.flip_vertical();
        }
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            for p in &mut img.pixels {
                *p += normal.sample(rng) as f32;
            }
        }
        Sample {
            image: img,
            label: sample.label,
            id: sample.id.clone(),
        }
    }
}

pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    if !cfg.any_enabled() {
        return sample.clone();
    }
    AugmentDraw::sample(cfg, rng).apply(sample, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub side: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stacks the chosen samples into an `[N, 1, side, side]` tensor.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        stack(indices.iter().map(|&i| &self.samples[i]), self.side)
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            side: self.side,
            class_names: self.class_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Stratified seeded split into `(train, validation)`; every class keeps
    /// at least one sample on each side when it has two or more.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
            return Err(invalid(format!("validation fraction must lie in (0, 1), got {val_fraction}")));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for class in 0..self.classes() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].label == class).collect();
            idx.shuffle(&mut stream_rng(seed, Stream::Split, class as u64, 0));
            let mut n_val = (idx.len() as f64 * val_fraction).round() as usize;
            if idx.len() >= 2 {
                n_val = n_val.clamp(1, idx.len() - 1);
            }
            val.extend_from_slice(&idx[..n_val]);
            train.extend_from_slice(&idx[n_val..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }
}

pub fn stack<'a, T: Scalar>(samples: impl Iterator<Item = &'a Sample>, side: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        if s.image.width != side || s.image.height != side {
            return Err(invalid(format!(
                "sample {} is {}x{}, expected {side}x{side}",
                s.id, s.image.width, s.image.height
            )));
        }
        data.extend(s.image.pixels.iter().map(|&v| T::of(v as f64)));
        labels.push(s.label);
    }
    if labels.is_empty() {
        return Err(invalid("cannot stack an empty batch"));
    }
    Ok((Tensor::new(&[labels.len(), 1, side, side], data)?, labels))
}

/// Files that could not be turned into samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub failures: Vec<(PathBuf, String)>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn read_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    GrayImage::new(
        w as usize,
        h as usize,
        luma.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    )
}

/// Writes `[0, 1]` intensities as an 8-bit grayscale PNG.
pub fn write_png(path: &Path, image: &GrayImage) -> Result<()> {
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(image.width as u32, image.height as u32, bytes)
        .ok_or_else(|| invalid("pixel buffer does not match image size"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads `root/<class>/*.png`. Classes are the sub-directories in
/// lexicographic order; images are resized to `side × side` and z-scored.
pub fn load_directory_dataset(root: &Path, side: usize) -> Result<(Dataset, LoadReport)> {
    if side == 0 {
        return Err(invalid("side must be positive"));
    }
    if !root.is_dir() {
        return Err(invalid(format!("dataset directory {} does not exist", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(invalid(format!("{} has no class sub-directories", root.display())));
    }
    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let before = samples.len();
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_png(p)) {
            let loaded = read_png(&file).and_then(|img| zscore_normalize(&img.resize(side, side)));
            match loaded {
                Ok(image) => samples.push(Sample {
                    image,
                    label,
                    id: format!("{name}/{}", file.file_name().unwrap_or_default().to_string_lossy()),
                }),
                Err(e) => report.failures.push((file, e.to_string())),
            }
        }
        if samples.len() == before {
            return Err(invalid(format!("class directory {} holds no usable images", dir.display())));
        }
        class_names.push(name);
    }
    Ok((
        Dataset {
            side,
            class_names,
            samples,
        },
        report,
    ))
}

pub const SYNTHETIC_CLASSES: usize = 3;

/// Radial frequency (cycles per image) separating the textures of the
/// synthetic classes: class 2 carries its texture above it, classes 0 and 1
/// below it.
pub fn synthetic_cutoff(side: usize) -> f64 {
    side as f64 / 8.0
}

/// Renders one raw synthetic image with intensities in `[0, 1]`.
///
/// * class 0: smooth blob
/// * class 1: blob modulated by a low-frequency sinusoid
/// * class 2: blob with a wavy boundary and a high-frequency sinusoid
pub fn render_synthetic<R: Rng + ?Sized>(class: usize, side: usize, rng: &mut R) -> GrayImage {
    let s = side as f64;
    let cx = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
    let cy = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
    let radius = rng.gen_range(0.2..0.3) * s;
    let edge = 0.08 * radius;
    let lobes = rng.gen_range(5..9) as f64;
    let lobe_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let orient = rng.gen_range(0.0..std::f64::consts::PI);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let cycles = match class {
        1 => rng.gen_range(1.5..3.0),
        2 => rng.gen_range(0.3..0.4) * s,
        _ => 0.0,
    };
    let noise = Normal::new(0.0, 0.03).expect("finite sigma");
    let (so, co) = orient.sin_cos();
    GrayImage::from_fn(side, side, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let d = (dx * dx + dy * dy).sqrt();
        let r = if class == 2 {
            radius * (1.0 + 0.25 * (lobes * dy.atan2(dx) + lobe_phase).sin())
        } else {
            radius
        };
        let blob = 1.0 / (1.0 + ((d - r) / edge).exp());
        let texture = if class == 0 {
            1.0
        } else {
            let u = (x as f64 * co + y as f64 * so) / s;
            0.65 + 0.35 * (std::f64::consts::TAU * cycles * u + phase).sin()
        };
        let v = 0.15 + 0.7 * blob * texture + noise.sample(rng);
        v.clamp(0.0, 1.0) as f32
    })
}

/// Raw `[0, 1]` images, class-major, deterministic in `seed`.
pub fn render_synthetic_set(per_class: usize, side: usize, seed: u64) -> Result<Vec<Sample>> {
    if per_class == 0 {
        return Err(invalid("per-class count must be at least 1"));
    }
    if side < 4 {
        return Err(invalid(format!("side must be at least 4, got {side}")));
    }
    let mut out = Vec::with_capacity(per_class * SYNTHETIC_CLASSES);
    for class in 0..SYNTHETIC_CLASSES {
        for i in 0..per_class {
            let mut rng = stream_rng(seed, Stream::Synthetic, class as u64, i as u64);
            out.push(Sample {
                image: render_synthetic(class, side, &mut rng),
                label: class,
                id: format!("class{class}/{i:05}.png"),
            });
        }
    }
    Ok(out)
}

pub fn synthetic_class_names() -> Vec<String> {
    (0..SYNTHETIC_CLASSES).map(|c| format!("class{c}")).collect()
}

/// Balanced, z-scored synthetic dataset.
pub fn generate_synthetic(per_class: usize, side: usize, seed: u64) -> Result<Dataset> {
    let samples = render_synthetic_set(per_class, side, seed)?
        .into_iter()
        .map(|s| {
            Ok(Sample {
                image: zscore_normalize(&s.image)?,
                ..s
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        side,
        class_names: synthetic_class_names(),
        samples,
    })
}

/// Writes the synthetic set as `out/class<k>/<index>.png`. Returns per-class counts.
pub fn write_synthetic(out: &Path, per_class: usize, side: usize, seed: u64) -> Result<Vec<usize>> {
    let samples = render_synthetic_set(per_class, side, seed)?;
    for name in synthetic_class_names() {
        fs::create_dir_all(out.join(name))?;
    }
    let mut counts = vec![0; SYNTHETIC_CLASSES];
    for s in &samples {
        write_png(&out.join(&s.id), &s.image)?;
        counts[s.label] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(img: GrayImage) -> Sample {
        Sample {
            image: img,
            label: 1,
            id: "t".into(),
        }
    }

    fn ramp(side: usize) -> GrayImage {
        GrayImage::from_fn(side, side, |x, y| (x as f32 * 0.37 + y as f32 * 1.3).sin())
    }

    #[test]
    fn zscore_examples() {
        let img = GrayImage::new(2, 2, vec![0.0, 4.0, 0.0, 4.0]).unwrap();
        assert_eq!(zscore_normalize(&img).unwrap().pixels(), &[-1.0, 1.0, -1.0, 1.0]);
        let flat = GrayImage::new(3, 3, vec![0.5; 9]).unwrap();
        assert!(matches!(zscore_normalize(&flat), Err(Error::Degenerate(_))));
        let once = zscore_normalize(&ramp(9)).unwrap();
        let twice = zscore_normalize(&once).unwrap();
        for (a, b) in once.pixels().iter().zip(twice.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_augmentations() {
        let s = sample(ramp(16));
        let mut rng = stream_rng(0, Stream::Test, 0, 0);
        assert_eq!(augment(&s, &AugmentConfig::disabled(), &mut rng), s);
        let out = AugmentDraw::identity().apply(&s, &mut rng);
        for (a, b) in out.image.pixels().iter().zip(s.image.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
        let rs = s.image.rotate_scale(0.0, 1.0);
        for (a, b) in rs.pixels().iter().zip(s.image.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(s.image.flip_horizontal().flip_horizontal(), s.image);
        assert_eq!(s.image.flip_vertical().flip_vertical(), s.image);
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        let img = GrayImage::from_fn(5, 5, |x, y| (y * 5 + x) as f32);
        let r = img.rotate_scale(90.0, 1.0);
        // Counter-clockwise: the right-middle pixel ends up at the top-middle.
        assert!((r.get(2, 0) - img.get(4, 2)).abs() < 1e-4);
        assert!((r.get(2, 2) - img.get(2, 2)).abs() < 1e-6);
    }

    #[test]
    fn downscale_pads_with_zero() {
        let img = GrayImage::from_fn(20, 20, |_, _| 1.0);
        let small = img.rotate_scale(0.0, 0.5);
        assert_eq!(small.get(0, 0), 0.0);
        assert!((small.get(10, 10) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn augment_config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            scale_min: 1.2,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            hflip_prob: 1.5,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn resize_preserves_constant_and_size() {
        let img = GrayImage::from_fn(40, 30, |_, _| 0.25);
        let r = img.resize(16, 16);
        assert_eq!((r.width(), r.height()), (16, 16));
        assert!(r.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let a = generate_synthetic(200, 16, 7).unwrap();
        assert_eq!(a.len(), 600);
        assert_eq!(a.class_counts(), vec![200, 200, 200]);
        let b = generate_synthetic(200, 16, 7).unwrap();
        assert_eq!(a, b);
        assert!(generate_synthetic(0, 16, 7).is_err());
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let d = generate_synthetic(25, 8, 1).unwrap();
        let (train, val) = d.split(0.2, 9).unwrap();
        assert_eq!(train.len() + val.len(), d.len());
        assert_eq!(val.class_counts(), vec![5, 5, 5]);
        let mut ids: Vec<&str> = train.samples.iter().chain(&val.samples).map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), d.len());
        assert_eq!(d.split(0.2, 9).unwrap().1, val);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn zscore_output_is_standardised(pixels in proptest::collection::vec(-5.0f32..5.0, 16..200)) {
            let n = pixels.len();
            let img = GrayImage::new(n, 1, pixels).unwrap();
            if let Ok(z) = zscore_normalize(&img) {
                let mean = z.pixels().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                let var = z.pixels().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
                prop_assert!(mean.abs() < 1e-5);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-5);
            }
        }

        #[test]
        fn augmentation_preserves_label_and_shape(seed in 0u64..1000) {
            let s = sample(ramp(12));
            let mut rng = stream_rng(seed, Stream::Test, 0, 0);
            let out = augment(&s, &AugmentConfig::default(), &mut rng);
            prop_assert_eq!(out.label, s.label);
            prop_assert_eq!((out.image.width(), out.image.height()), (12, 12));
            prop_assert!(out.image.pixels().iter().all(|v| v.is_finite()));
        }
    }
}
