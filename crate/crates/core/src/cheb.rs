//! Chebyshev polynomials of the first kind on `[-1, 1]`.
//!
//! Evaluation uses the three-term recurrence `T_{n+1} = 2x T_n - T_{n-1}`.
//! Two-dimensional expansions `f(x, y) ≈ Σ C_mn T_m(x) T_n(y)` are fitted by
//! Chebyshev–Gauss quadrature on a tensor-product node grid, which is exact
//! for polynomials of the covered order. All arithmetic is `f64`.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

/// `T_0(x) ..= T_order(x)` at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebBasisEval {
    pub order: usize,
    pub values: Vec<f64>,
    /// Set when `x` lies outside `[-1, 1]`. The recurrence is still defined
    /// there but the values are no longer bounded by one.
    pub out_of_domain: bool,
}

/// Evaluates `T_0(x) ..= T_order(x)` with the three-term recurrence.
pub fn eval_recurrence(x: f64, order: usize) -> Result<ChebBasisEval> {
    if !x.is_finite() {
        return Err(invalid(format!("chebyshev argument must be finite, got {x}")));
    }
    let mut values = Vec::with_capacity(order + 1);
    fill_basis(x, order, &mut values);
    Ok(ChebBasisEval {
        order,
        values,
        out_of_domain: !(-1.0..=1.0).contains(&x),
    })
}

fn fill_basis(x: f64, order: usize, out: &mut Vec<f64>) {
    let base = out.len();
    out.push(1.0);
    if order == 0 {
        return;
    }
    out.push(x);
    for k in 1..order {
        let next = 2.0 * x * out[base + k] - out[base + k - 1];
        out.push(next);
    }
}

/// Row `i` holds `T_0(xs[i]) ..= T_order(xs[i])`.
pub fn eval_grid(xs: &[f64], order: usize) -> Result<Matrix> {
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(invalid(format!("chebyshev argument must be finite, got {bad}")));
    }
    let mut data = Vec::with_capacity(xs.len() * (order + 1));
    for &x in xs {
        fill_basis(x, order, &mut data);
    }
    Matrix::from_vec(xs.len(), order + 1, data)
}

/// Roots of `T_count`: `x_j = cos(π (j + ½) / count)`, strictly decreasing.
pub fn cheb_gauss_nodes(count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(invalid("node count must be at least 1"));
    }
    Ok((0..count)
        .map(|j| (PI * (j as f64 + 0.5) / count as f64).cos())
        .collect())
}

/// Affine map from `[a, b]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainMap {
    a: f64,
    b: f64,
}

impl DomainMap {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid(format!("domain requires finite a < b, got [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    pub fn to_unit(&self, t: f64) -> f64 {
        (2.0 * t - self.a - self.b) / (self.b - self.a)
    }

    pub fn from_unit(&self, x: f64) -> f64 {
        0.5 * (x * (self.b - self.a) + self.a + self.b)
    }
}

/// A 2D expansion: `coeffs[(m, n)] = C_mn` for `m ≤ M`, `n ≤ N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebCoeffGrid {
    coeffs: Matrix,
}

impl ChebCoeffGrid {
    pub fn new(coeffs: Matrix) -> Result<Self> {
        if coeffs.rows() == 0 || coeffs.cols() == 0 {
            return Err(invalid("coefficient grid must be at least 1x1"));
        }
        if !coeffs.is_finite() {
            return Err(invalid("coefficient grid must be finite"));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            coeffs: Matrix::zeros(m + 1, n + 1),
        }
    }

    /// Declared orders `(M, N)`.
    pub fn orders(&self) -> (usize, usize) {
        (self.coeffs.rows() - 1, self.coeffs.cols() - 1)
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.coeffs[(m, n)]
    }

    pub fn set(&mut self, m: usize, n: usize, value: f64) {
        self.coeffs[(m, n)] = value;
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.coeffs
    }
}

/// Function values on the tensor product of two Chebyshev–Gauss node sets:
/// `values[(p, q)] = f(xs[p], ys[q])`.
#[derive(Debug, Clone)]
pub struct NodeSamples {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Matrix,
}

impl NodeSamples {
    pub fn from_fn(x_nodes: usize, y_nodes: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let xs = cheb_gauss_nodes(x_nodes)?;
        let ys = cheb_gauss_nodes(y_nodes)?;
        let values = Matrix::from_fn(x_nodes, y_nodes, |p, q| f(xs[p], ys[q]));
        Ok(Self { xs, ys, values })
    }
}

fn gamma(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        2.0
    }
}

/// Chebyshev–Gauss projection onto orders `(m_order, n_order)`.
pub fn fit_coeffs_2d(samples: &NodeSamples, m_order: usize, n_order: usize) -> Result<ChebCoeffGrid> {
    let p = samples.xs.len();
    let q = samples.ys.len();
    if samples.values.rows() != p || samples.values.cols() != q {
        return Err(invalid("sample grid does not match node counts"));
    }
    if p < m_order + 1 || q < n_order + 1 {
        return Err(invalid(format!(
            "orders ({m_order}, {n_order}) need at least {}x{} nodes, got {p}x{q}",
            m_order + 1,
            n_order + 1
        )));
    }
    let tx = eval_grid(&samples.xs, m_order)?;
    let ty = eval_grid(&samples.ys, n_order)?;
    // C = diag(γ/P) · Txᵀ · F · Ty · diag(γ/Q)
    let mut c = tx.transpose().matmul(&samples.values)?.matmul(&ty)?;
    let scale = 1.0 / (p as f64 * q as f64);
    for m in 0..=m_order {
        for n in 0..=n_order {
            c[(m, n)] *= gamma(m) * gamma(n) * scale;
        }
    }
    ChebCoeffGrid::new(c)
}

/// `out[(i, j)] = Σ_mn C_mn T_m(xs[i]) T_n(ys[j])`.
pub fn reconstruct_2d(coeffs: &ChebCoeffGrid, xs: &[f64], ys: &[f64]) -> Result<Matrix> {
    let (m, n) = coeffs.orders();
    let tx = eval_grid(xs, m)?;
    let ty = eval_grid(ys, n)?;
    tx.matmul(coeffs.as_matrix())?.matmul(&ty.transpose())
}

/// Bilinear lookup into an image whose corner pixels sit at `(±1, ±1)`.
/// `x` runs along columns, `y` along rows.
pub fn sample_image(image: &Matrix, x: f64, y: f64) -> f64 {
    let w = image.cols();
    let h = image.rows();
    let fx = if w > 1 { (x + 1.0) * 0.5 * (w - 1) as f64 } else { 0.0 };
    let fy = if h > 1 { (y + 1.0) * 0.5 * (h - 1) as f64 } else { 0.0 };
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = (fx.floor() as usize).min(w.saturating_sub(2));
    let y0 = (fy.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let top = image[(y0, x0)] * (1.0 - tx) + image[(y0, x1)] * tx;
    let bottom = image[(y1, x0)] * (1.0 - tx) + image[(y1, x1)] * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Reconstruction error of the order-`(m, m)` expansion for every `m` in
/// `0..=max_order`, measured at a fixed node grid so the subspaces nest.
pub fn approximation_rmse(image: &Matrix, max_order: usize) -> Result<Vec<f64>> {
    if image.rows() == 0 || image.cols() == 0 {
        return Err(invalid("image must be non-empty"));
    }
    if !image.is_finite() {
        return Err(Error::Degenerate("image contains non-finite pixels".into()));
    }
    let nodes = (max_order + 1).max(image.rows().max(image.cols()));
    let samples = NodeSamples::from_fn(nodes, nodes, |x, y| sample_image(image, x, y))?;
    let full = fit_coeffs_2d(&samples, max_order, max_order)?;
    let mut out = Vec::with_capacity(max_order + 1);
    for order in 0..=max_order {
        let mut truncated = ChebCoeffGrid::zeros(order, order);
        for m in 0..=order {
            for n in 0..=order {
                truncated.set(m, n, full.get(m, n));
            }
        }
        let recon = reconstruct_2d(&truncated, &samples.xs, &samples.ys)?;
        let sse: f64 = recon
            .as_slice()
            .iter()
            .zip(samples.values.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        out.push((sse / (nodes * nodes) as f64).sqrt());
    }
    Ok(out)
}
