//! Chebyshev spectral filters on small symmetric operators.
//!
//! A filter `g(L̃) = Σ_k θ_k T_k(L̃)` is applied to a signal through the
//! vector recurrence `z_{k+1} = 2 L̃ z_k − z_{k−1}`, so `T_k(L̃)` is never
//! formed. Because `T_k` has degree `k`, an order-`K` filter of a graph
//! Laplacian only mixes vertices at most `K` hops apart.

use std::collections::VecDeque;

use crate::error::{dim, invalid, Result};
use crate::matrix::Matrix;

const SYMMETRY_TOL: f64 = 1e-10;

/// Dense symmetric operator with an upper bound on its spectral radius.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    matrix: Matrix,
    lambda_max: f64,
}

impl SpectralOperator {
    pub fn new(matrix: Matrix, lambda_max: f64) -> Result<Self> {
        check_symmetric(&matrix)?;
        if !(lambda_max.is_finite() && lambda_max > 0.0) {
            return Err(invalid(format!("spectral bound must be positive, got {lambda_max}")));
        }
        Ok(Self { matrix, lambda_max })
    }

    /// Uses the largest absolute eigenvalue from a dense eigensolve as the bound.
    pub fn with_exact_bound(matrix: Matrix) -> Result<Self> {
        check_symmetric(&matrix)?;
        let (values, _) = symmetric_eigen(&matrix)?;
        let radius = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::new(matrix, radius.max(f64::MIN_POSITIVE))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if m.rows() != m.cols() || m.rows() == 0 {
        return Err(dim("spectral operator", &[m.rows(), m.cols()], &[m.rows(), m.rows()]));
    }
    for i in 0..m.rows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() >= SYMMETRY_TOL {
                return Err(invalid(format!("operator is not symmetric at ({i}, {j})")));
            }
        }
    }
    if !m.is_finite() {
        return Err(invalid("operator has non-finite entries"));
    }
    Ok(())
}

/// `L̃ = 2L/λ_max − I`. The result carries bound 1: its spectrum lies in
/// `[-1, 1]` whenever `L` is positive semidefinite and `λ_max` bounds it.
pub fn rescale(matrix: &Matrix, lambda_max: f64) -> Result<SpectralOperator> {
    if !(lambda_max.is_finite() && lambda_max > 0.0) {
        return Err(invalid(format!("lambda_max must be positive, got {lambda_max}")));
    }
    check_symmetric(matrix)?;
    let n = matrix.rows();
    let scaled = Matrix::from_fn(n, n, |i, j| {
        2.0 * matrix[(i, j)] / lambda_max - if i == j { 1.0 } else { 0.0 }
    });
    SpectralOperator::new(scaled, 1.0)
}

/// Filter coefficients `θ_0 ..= θ_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs(Vec<f64>);

impl SpectralCoeffs {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|t| !t.is_finite()) {
            return Err(invalid("filter needs at least one finite coefficient"));
        }
        Ok(Self(theta))
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `Σ_k θ_k T_k(L̃) s` by the three-term vector recurrence.
pub fn apply_filter(op: &SpectralOperator, theta: &SpectralCoeffs, signal: &[f64]) -> Result<Vec<f64>> {
    let l = op.matrix();
    if signal.len() != l.rows() {
        return Err(dim("apply_filter", &[l.rows()], &[signal.len()]));
    }
    let th = theta.as_slice();
    let mut out: Vec<f64> = signal.iter().map(|v| th[0] * v).collect();
    if th.len() == 1 {
        return Ok(out);
    }
    let mut prev = signal.to_vec();
    let mut cur = l.matvec(signal)?;
    for (o, c) in out.iter_mut().zip(&cur) {
        *o += th[1] * c;
    }
    for &coef in &th[2..] {
        let lz = l.matvec(&cur)?;
        let next: Vec<f64> = lz.iter().zip(&prev).map(|(a, b)| 2.0 * a - b).collect();
        for (o, c) in out.iter_mut().zip(&next) {
            *o += coef * c;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    Ok(out)
}

/// Combinatorial Laplacian `D − A` of the path graph on `d` vertices.
pub fn path_laplacian(d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| {
        if i == j {
            let deg = usize::from(i > 0) + usize::from(i + 1 < d);
            deg as f64
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Breadth-first hop counts over the nonzero off-diagonal pattern.
/// `None` marks unreachable pairs.
pub fn hop_distances(m: &Matrix) -> Vec<Vec<Option<usize>>> {
    let n = m.rows();
    (0..n)
        .map(|src| {
            let mut dist = vec![None; n];
            dist[src] = Some(0);
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let du = dist[u].unwrap_or(0);
                for v in 0..n {
                    if v != u && m[(u, v)] != 0.0 && dist[v].is_none() {
                        dist[v] = Some(du + 1);
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Evidence that an order-`K` filter is `K`-hop local.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityCertificate {
    pub order: usize,
    /// Largest `|g(L̃)_{ij}|` over pairs farther than `order` hops apart.
    pub max_leak: f64,
    /// Number of such pairs examined.
    pub far_pairs: usize,
}

/// Filters each unit impulse and measures the response beyond `K` hops of
/// its source. Hop counts come from the sparsity pattern of `graph`.
pub fn locality_certificate(graph: &Matrix, op: &SpectralOperator, theta: &SpectralCoeffs) -> Result<LocalityCertificate> {
    let n = op.dim();
    if graph.rows() != n || graph.cols() != n {
        return Err(dim("locality_certificate", &[graph.rows(), graph.cols()], &[n, n]));
    }
    let hops = hop_distances(graph);
    let k = theta.order();
    let mut max_leak = 0.0f64;
    let mut far_pairs = 0;
    for src in 0..n {
        let mut impulse = vec![0.0; n];
        impulse[src] = 1.0;
        let response = apply_filter(op, theta, &impulse)?;
        for (dst, value) in response.iter().enumerate() {
            if hops[src][dst].is_none_or(|h| h > k) {
                far_pairs += 1;
                max_leak = max_leak.max(value.abs());
            }
        }
    }
    Ok(LocalityCertificate {
        order: k,
        max_leak,
        far_pairs,
    })
}

/// Cyclic Jacobi eigensolver. Returns eigenvalues and a matrix whose
/// columns are the matching orthonormal eigenvectors.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale = m.max_abs().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() < 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..n).map(|i| a[(i, i)]).collect(), v))
}
