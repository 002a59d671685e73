//! Shared oracles for the integration and acceptance tests. Everything here
//! recomputes results from first principles and never calls the code under
//! test for the quantity it checks.

#![allow(dead_code)]

use chebcnn::nn::Model;
use chebcnn::rng::{stream_rng, Stream};
use chebcnn::tensor::{Tape, Tensor, Var};
use chebcnn::train::{l2_penalty_var, weighted_cross_entropy, ClassWeights};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Maximum relative error accepted by every finite-difference check.
pub const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps exact zeros from
/// turning rounding noise into huge ratios.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, Stream::Test, 0, 0)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Compares tape gradients of `f` against central differences for every
/// element of every input. Returns the worst relative error.
pub fn gradcheck(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let value = |ins: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.numel()], |g| g.data().to_vec()))
        .collect();
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let up = value(&work);
            work[i].data_mut()[j] = orig - STEP;
            let down = value(&work);
            work[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[i][j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Reduces a tensor to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
pub fn project(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let r = random_tensor(tape.shape(x), &mut rng(seed));
    let r = tape.constant(r);
    let m = tape.mul(x, r).unwrap();
    tape.sum(m).unwrap()
}

/// Finite-difference check of a whole model: training-mode forward with a
/// fixed dropout stream, weighted cross-entropy plus L2.
pub fn model_gradcheck(model: &Model<f64>, input: &Tensor<f64>, labels: &[usize], lambda: f64) -> f64 {
    let weights = ClassWeights::uniform(model.spec.classes);
    let loss_of = |m: &Model<f64>| {
        let mut m = m.clone();
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let mut r = rng(99);
        let fwd = m.forward_train(&mut tape, x, &mut r).unwrap();
        let ce = weighted_cross_entropy(&mut tape, fwd.probs, labels, &weights).unwrap();
        let kinds = m.parameter_kinds();
        let loss = match l2_penalty_var(&mut tape, &fwd.params, &kinds, lambda).unwrap() {
            Some(l2) => tape.add(ce, l2).unwrap(),
            None => ce,
        };
        (tape, fwd.params, loss)
    };
    let (mut tape, params, loss) = loss_of(model);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = params.iter().map(|&p| tape.grad(p).unwrap().data().to_vec()).collect();
    let mut worst = 0.0f64;
    let mut work = model.clone();
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = work.parameters()[i].data()[j];
            work.parameters_mut()[i].data_mut()[j] = orig + STEP;
            let (t, _, l) = loss_of(&work);
            let up = t.value(l).item();
            work.parameters_mut()[i].data_mut()[j] = orig - STEP;
            let (t, _, l) = loss_of(&work);
            let down = t.value(l).item();
            work.parameters_mut()[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// `T_n(x) = cos(n·arccos x)` on `[-1, 1]`.
pub fn cheb_trig(n: usize, x: f64) -> f64 {
    (n as f64 * x.clamp(-1.0, 1.0).acos()).cos()
}

/// Counts `[t][p]` by scanning every class pair.
pub fn brute_confusion(labels: &[usize], preds: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut out = vec![vec![0u64; classes]; classes];
    for (t, row) in out.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            *cell = labels.iter().zip(preds).filter(|&(&a, &b)| a == t && b == p).count() as u64;
        }
    }
    out
}

/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` by enumerating every (positive, negative) pair.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins2: u128 = 0;
    let mut pairs: u128 = 0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins2 += 2;
            } else if scores[i] == scores[j] {
                wins2 += 1;
            }
        }
    }
    wins2 as f64 / (2 * pairs) as f64
}

/// Classical Jacobi: rotate away the largest off-diagonal entry until the
/// matrix is diagonal to machine precision. Returns eigenvalues and
/// eigenvectors as columns.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-15 * m.abs().max().max(1.0);
    loop {
        let (mut p, mut q, mut big) = (0, 0, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                if a[(i, j)].abs() > big {
                    (p, q, big) = (i, j, a[(i, j)].abs());
                }
            }
        }
        if big <= tol {
            break;
        }
        let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let (akp, akq) = (a[(k, p)], a[(k, q)]);
            a[(k, p)] = c * akp - s * akq;
            a[(k, q)] = s * akp + c * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[(p, k)], a[(q, k)]);
            a[(p, k)] = c * apk - s * aqk;
            a[(q, k)] = s * apk + c * aqk;
        }
        for k in 0..n {
            let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
            v[(k, p)] = c * vkp - s * vkq;
            v[(k, q)] = s * vkp + c * vkq;
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// `g(L̃)x = U·diag(Σ θ_k cos(k·acos λ_i))·Uᵀx` from a full eigendecomposition.
pub fn eigen_filter(lt: &DMatrix<f64>, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let (values, u) = jacobi_eigen(lt);
    let gains: Vec<f64> = values
        .iter()
        .map(|&l| theta.iter().enumerate().map(|(k, &t)| t * cheb_trig(k, l)).sum())
        .collect();
    let xv = nalgebra::DVector::from_column_slice(x);
    let coords = u.transpose() * xv;
    let scaled = nalgebra::DVector::from_iterator(coords.len(), coords.iter().zip(&gains).map(|(c, g)| c * g));
    (&u * scaled).iter().copied().collect()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    jacobi_eigen(m).0.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Random weighted graph Laplacian `D − A` with roughly `density` of the
/// possible edges present.
pub fn random_laplacian(d: usize, density: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i + 1..d {
            if rng.gen_bool(density) {
                let w = rng.gen_range(0.2..2.0);
                l[i][j] = -w;
                l[j][i] = -w;
                l[i][i] += w;
                l[j][j] += w;
            }
        }
    }
    l
}

/// All-pairs hop counts by Floyd–Warshall on the off-diagonal pattern.
pub fn floyd_hops(adj: &[Vec<f64>]) -> Vec<Vec<Option<usize>>> {
    let n = adj.len();
    let mut d = vec![vec![None; n]; n];
    for i in 0..n {
        d[i][i] = Some(0);
        for j in 0..n {
            if i != j && adj[i][j] != 0.0 {
                d[i][j] = Some(1);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}
