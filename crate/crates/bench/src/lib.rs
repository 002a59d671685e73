//! Deterministic fixtures shared by the criterion benches.

use chebcnn::matrix::Matrix;
use chebcnn::nn::{ArchConfig, Model, NetworkSpec};
use chebcnn::spectral::{path_laplacian, rescale, SpectralOperator};
use chebcnn::Tensor;

/// Smooth pseudo-random fill in `[-1, 1]`; cheap and identical on every run.
pub fn tensor(shape: &[usize], salt: f64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i as f64 * 0.7548 + salt) * 12.9898).sin() as f32).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

pub fn image(side: usize) -> Matrix {
    Matrix::from_fn(side, side, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin().abs())
}

/// Path-graph operator rescaled with its exact bound `2 − 2cos(π(d−1)/d)`.
pub fn path_operator(d: usize) -> SpectralOperator {
    let lambda = 2.0 - 2.0 * (std::f64::consts::PI * (d - 1) as f64 / d as f64).cos();
    rescale(&path_laplacian(d), lambda).expect("path Laplacian is symmetric")
}

/// The default two-block classifier at a reduced input side.
pub fn default_model(side: usize) -> Model<f32> {
    Model::build(&NetworkSpec::cheb_cnn(side, 3, &ArchConfig::default()), 1).expect("valid spec")
}
