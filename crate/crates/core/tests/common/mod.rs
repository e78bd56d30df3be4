#![allow(dead_code)]

use mmwave_usersel::cnn::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout, dropout_backward, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward, relu_forward, softmax_cross_entropy, Mode,
};
use mmwave_usersel::cnn::Tensor;
use mmwave_usersel::rng::substream;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const TRIALS_PER_LAYER: usize = 20;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap if both are ~0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of the scalar `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let plus = f(&x);
            x[i] = orig - FD_STEP;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error of each layer's backward pass over
/// [`TRIALS_PER_LAYER`] random tensors. Each check projects the layer output
/// onto a random direction `r` so the scalar loss is `<r, y>`.
pub fn layer_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv_error(seed)),
        ("maxpool", pool_error(seed)),
        ("relu", relu_error(seed)),
        ("dense", dense_error(seed)),
        ("dropout", dropout_error(seed)),
        ("softmax_xent", softmax_error(seed)),
    ]
}

pub fn conv_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..TRIALS_PER_LAYER as u64 {
        let mut rng = substream(seed, t);
        let (n, c, h, w, o) = (
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(2..6),
            rng.random_range(2..6),
            rng.random_range(1..4),
        );
        let x = random_vec(&mut rng, n * c * h * w);
        let wt = random_vec(&mut rng, o * c * 9);
        let b = random_vec(&mut rng, o);
        let r = random_vec(&mut rng, n * o * h * w);
        let (xs, ws) = ([n, c, h, w], [o, c, 3, 3]);
        let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
            dot(&r, conv2d_forward(&tensor(xs, x.to_vec()), &tensor(ws, wt.to_vec()), b).unwrap().data())
        };
        let (gx, gw, gb) =
            conv2d_backward(&tensor([n, o, h, w], r.clone()), &tensor(xs, x.clone()), &tensor(ws, wt.clone())).unwrap();
        worst = worst.max(relative_error(gx.data(), &numeric_grad(&x, |v| loss(v, &wt, &b))));
        worst = worst.max(relative_error(gw.data(), &numeric_grad(&wt, |v| loss(&x, v, &b))));
        worst = worst.max(relative_error(&gb, &numeric_grad(&b, |v| loss(&x, &wt, v))));
    }
    worst
}

pub fn pool_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..TRIALS_PER_LAYER as u64 {
        let mut rng = substream(seed ^ 0x51, t);
        let (n, c, h, w) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..7), rng.random_range(1..7));
        // distinct values spaced 0.01 apart keep every window far from a tie
        let mut x: Vec<f64> = (0..n * c * h * w).map(|i| i as f64 * 0.01).collect();
        for i in (1..x.len()).rev() {
            x.swap(i, rng.random_range(0..=i));
        }
        let shape = [n, c, h, w];
        let (y, cache) = maxpool2x2_forward(&tensor(shape, x.clone()));
        let r = random_vec(&mut rng, y.len());
        let gx = maxpool2x2_backward(&tensor(y.shape(), r.clone()), &cache).unwrap();
        let num = numeric_grad(&x, |v| dot(&r, maxpool2x2_forward(&tensor(shape, v.to_vec())).0.data()));
        worst = worst.max(relative_error(gx.data(), &num));
    }
    worst
}

pub fn relu_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..TRIALS_PER_LAYER as u64 {
        let mut rng = substream(seed ^ 0x52, t);
        let len = rng.random_range(1..40);
        // keep inputs at least 1e-3 away from the kink
        let x: Vec<f64> = random_vec(&mut rng, len).into_iter().map(|v| if v.abs() < 1e-3 { v + 0.01 } else { v }).collect();
        let r = random_vec(&mut rng, len);
        let shape = [1, len, 1, 1];
        let gx = relu_backward(&tensor(shape, r.clone()), &tensor(shape, x.clone())).unwrap();
        let num = numeric_grad(&x, |v| dot(&r, relu_forward(&tensor(shape, v.to_vec())).data()));
        worst = worst.max(relative_error(gx.data(), &num));
    }
    worst
}

pub fn dense_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..TRIALS_PER_LAYER as u64 {
        let mut rng = substream(seed ^ 0x53, t);
        let (n, i, o) = (rng.random_range(1..4), rng.random_range(1..12), rng.random_range(1..8));
        let x = random_vec(&mut rng, n * i);
        let wt = random_vec(&mut rng, o * i);
        let b = random_vec(&mut rng, o);
        let r = random_vec(&mut rng, n * o);
        let (xs, ws) = ([n, i, 1, 1], [o, i, 1, 1]);
        let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
            dot(&r, dense_forward(&tensor(xs, x.to_vec()), &tensor(ws, wt.to_vec()), b).unwrap().data())
        };
        let g = dense_backward(&tensor([n, o, 1, 1], r.clone()), &tensor(xs, x.clone()), &tensor(ws, wt.clone()), true).unwrap();
        worst = worst.max(relative_error(g.input.unwrap().data(), &numeric_grad(&x, |v| loss(v, &wt, &b))));
        worst = worst.max(relative_error(g.weights.data(), &numeric_grad(&wt, |v| loss(&x, v, &b))));
        worst = worst.max(relative_error(&g.bias, &numeric_grad(&b, |v| loss(&x, &wt, v))));
    }
    worst
}

pub fn dropout_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..TRIALS_PER_LAYER as u64 {
        let mut rng = substream(seed ^ 0x54, t);
        let len = rng.random_range(1..40);
        let x = random_vec(&mut rng, len);
        let r = random_vec(&mut rng, len);
        let shape = [1, len, 1, 1];
        let mask_seed = rng.random::<u64>();
        // a fixed mask: the same rng state replays the same draw
        let fwd = |v: &[f64]| dropout(&tensor(shape, v.to_vec()), 0.5, Mode::Train, &mut substream(mask_seed, 0));
        let out = fwd(&x);
        let gx = dropout_backward(&tensor(shape, r.clone()), out.mask.as_deref());
        let num = numeric_grad(&x, |v| dot(&r, fwd(v).output.data()));
        worst = worst.max(relative_error(gx.data(), &num));
    }
    worst
}

pub fn softmax_error(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..TRIALS_PER_LAYER as u64 {
        let mut rng = substream(seed ^ 0x55, t);
        let classes = rng.random_range(2..25);
        let label = rng.random_range(0..classes);
        let z: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, g) = softmax_cross_entropy(&z, label).unwrap();
        let num = numeric_grad(&z, |v| softmax_cross_entropy(v, label).unwrap().0);
        worst = worst.max(relative_error(&g, &num));
    }
    worst
}
