//! Reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3};
use pathint::network::{LeakyRnnParams, RecurrentInit};
use pathint::network::forward_batch;
use pathint::topology::{PointCloud, Provenance};
use pathint::trainer::{gradients, loss, Batch};
use std::f64::consts::TAU;
use rand::{Rng, SeedableRng};

pub struct VanillaGrads {
    pub w_init: Array2<f64>,
    pub w_rec: Array2<f64>,
    pub w_in: Array2<f64>,
    pub w_out: Array2<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Plain ReLU RNN: `r' = relu(W_rec r + W_in v)`. Returns pre-activations,
/// states and readouts.
pub fn vanilla_forward(
    p: &LeakyRnnParams<f64>,
    codes: &Array2<f64>,
    inputs: &Array3<f64>,
) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let u0 = codes.dot(&p.w_init.t());
    let mut states = vec![u0.mapv(relu)];
    let mut pre = vec![u0];
    let mut preds = Vec::new();
    for t in 0..inputs.dim().0 {
        let mut u = states[t].dot(&p.w_rec.t());
        u += &inputs.slice(s![t, .., ..]).dot(&p.w_in.t());
        let r = u.mapv(relu);
        preds.push(r.dot(&p.w_out.t()));
        pre.push(u);
        states.push(r);
    }
    (pre, states, preds)
}

/// `softmax(y) Σp - p`, row by row, scaled.
fn ce_grad(y: &Array2<f64>, p: &Array2<f64>, scale: f64) -> Array2<f64> {
    let mut out = Array2::zeros(y.dim());
    for b in 0..y.nrows() {
        let max = y.row(b).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..y.ncols() {
            z += (y[[b, k]] - max).exp();
        }
        let mut mass = 0.0;
        for k in 0..y.ncols() {
            mass += p[[b, k]];
        }
        for k in 0..y.ncols() {
            let g = (y[[b, k]] - max).exp() / z * mass - p[[b, k]];
            out[[b, k]] = g * scale;
        }
    }
    out
}

pub fn vanilla_backward(p: &LeakyRnnParams<f64>, batch: &Batch<f64>, lambda: f64) -> VanillaGrads {
    let (pre, states, preds) = vanilla_forward(p, &batch.init_codes, &batch.inputs);
    let steps = preds.len();
    let nb = batch.init_codes.nrows();
    let scale = 1.0 / (steps * nb) as f64;
    let mut g = VanillaGrads {
        w_init: Array2::zeros(p.w_init.dim()),
        w_rec: Array2::zeros(p.w_rec.dim()),
        w_in: Array2::zeros(p.w_in.dim()),
        w_out: Array2::zeros(p.w_out.dim()),
    };
    let mut from_future = Array2::<f64>::zeros((nb, p.n_rec()));
    for t in (1..=steps).rev() {
        let dy = ce_grad(&preds[t - 1], &batch.targets[t - 1], scale);
        general_mat_mul(1.0, &dy.t(), &states[t], 1.0, &mut g.w_out);
        let mut g_r = dy.dot(&p.w_out);
        g_r += &from_future;
        let g_u = Array2::from_shape_fn(g_r.dim(), |i| if pre[t][i] > 0.0 { g_r[i] } else { 0.0 });
        general_mat_mul(1.0, &g_u.t(), &states[t - 1], 1.0, &mut g.w_rec);
        general_mat_mul(1.0, &g_u.t(), &batch.inputs.slice(s![t - 1, .., ..]), 1.0, &mut g.w_in);
        from_future = g_u.dot(&p.w_rec);
    }
    let g_u0 = Array2::from_shape_fn(from_future.dim(), |i| if pre[0][i] > 0.0 { from_future[i] } else { 0.0 });
    general_mat_mul(1.0, &g_u0.t(), &batch.init_codes, 1.0, &mut g.w_init);
    g.w_rec = &g.w_rec + &(p.w_rec.mapv(|w| 2.0 * lambda * w));
    g
}

/// Random small problem: params plus a batch with distribution targets.
pub fn random_instance(seed: u64, n_rec: usize, n_place: usize, batch: usize, steps: usize, alpha: f64) -> (LeakyRnnParams<f64>, Batch<f64>) {
    let params = LeakyRnnParams::<f64>::init(n_rec, n_place, alpha, RecurrentInit::Uniform, seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let init_codes = Array2::from_shape_simple_fn((batch, n_place), || rng.random_range(-0.5..0.5));
    let inputs = Array3::from_shape_simple_fn((steps, batch, 2), || rng.random_range(-1.0..1.0));
    let targets = (0..steps)
        .map(|_| {
            let mut m = Array2::from_shape_simple_fn((batch, n_place), || rng.random_range(0.0..1.0));
            for mut row in m.outer_iter_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            m
        })
        .collect();
    let positions = vec![vec![[0.0, 0.0]; steps + 1]; batch];
    (
        params,
        Batch {
            init_codes,
            inputs,
            targets,
            positions,
            clamped: 0,
        },
    )
}

pub fn bits_equal(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn batch_loss(p: &LeakyRnnParams<f64>, batch: &Batch<f64>, lambda: f64) -> f64 {
    let trace = forward_batch(p, batch.init_codes.view(), batch.inputs.view()).unwrap();
    loss(&trace.predictions, &batch.targets, p.w_rec.view(), lambda).unwrap()
}

fn tensor_mut<'a>(p: &'a mut LeakyRnnParams<f64>, name: &str) -> &'a mut Array2<f64> {
    match name {
        "w_init" => &mut p.w_init,
        "w_rec" => &mut p.w_rec,
        "w_in" => &mut p.w_in,
        _ => &mut p.w_out,
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over `per_tensor` random coordinates of every tensor.
pub fn max_fd_error(seed: u64, alpha: f64, per_tensor: usize) -> f64 {
    let lambda = 1e-2;
    let (params, batch) = random_instance(seed, 8, 4, 3, 5, alpha);
    let (_, g, _) = gradients(&params, &batch, lambda).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (name, analytic) in g.tensors() {
        for _ in 0..per_tensor {
            let (r, c) = (rng.random_range(0..analytic.nrows()), rng.random_range(0..analytic.ncols()));
            let mut plus = params.clone();
            tensor_mut(&mut plus, name)[[r, c]] += h;
            let mut minus = params.clone();
            tensor_mut(&mut minus, name)[[r, c]] -= h;
            let fd = (batch_loss(&plus, &batch, lambda) - batch_loss(&minus, &batch, lambda)) / (2.0 * h);
            let a = analytic[[r, c]];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn cloud(points: Array2<f64>) -> PointCloud {
    PointCloud::new(points, Provenance::Synthetic)
}

pub fn circle(n: usize) -> PointCloud {
    cloud(Array2::from_shape_fn((n, 2), |(i, j)| {
        let a = TAU * i as f64 / n as f64;
        if j == 0 { a.cos() } else { a.sin() }
    }))
}

/// Flat torus in R^4 sampled on a jittered grid.
pub fn torus(n_side: usize) -> PointCloud {
    let n = n_side * n_side;
    cloud(Array2::from_shape_fn((n, 4), |(i, j)| {
        let u = TAU * ((i / n_side) as f64 + 0.5 * ((i * 7) % 5) as f64 / 5.0) / n_side as f64;
        let v = TAU * ((i % n_side) as f64 + 0.5 * ((i * 3) % 7) as f64 / 7.0) / n_side as f64;
        [u.cos(), u.sin(), v.cos(), v.sin()][j]
    }))
}
