//! Named finite-difference gradient checks for every differentiable operation, the TCA
//! block variants and small end-to-end networks, all in double precision.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::density::RoiMask;
use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_forward, conv_forward_saved, global_avg_pool, global_avg_pool_backward, grad_check,
    maxpool3d, maxpool3d_backward, relu, relu_backward, seeded_uniform, sigmoid, sigmoid_backward, ConvParams,
    GradCheckReport, MaxPool3d, Parameters,
};
use crate::tca::{
    build_network, network_backward_with_input, network_forward, tca_backward, tca_forward, NetConfig,
    TcaBlockParams, Variant,
};
use crate::tensor::{Shape, Tensor};
use crate::train::masked_mse_loss;

/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Every check [`gradcheck_op`] knows, in the order [`gradcheck_all`] runs them.
pub const GRADCHECK_OPS: &[&str] = &[
    "elem_add",
    "channel_mul",
    "conv",
    "maxpool",
    "gap",
    "relu",
    "sigmoid",
    "masked_mse",
    "tca",
    "tca_nogc",
    "tca_down",
    "net_e3d",
    "net_e2d",
];

type T64 = Tensor<f64>;

fn random(shape: Shape, seed: u64) -> T64 {
    Tensor::from_vec(shape, seeded_uniform(seed, shape.numel())).expect("length matches shape")
}

fn from_slice(shape: Shape, v: &[f64]) -> T64 {
    Tensor::from_vec(shape, v.to_vec()).expect("length matches shape")
}

/// `sum(w * y)`: a scalar probe whose upstream gradient is `w`.
fn probe(w: &T64, y: &T64) -> f64 {
    w.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn flatten<P: Parameters<f64>>(p: &P) -> Vec<f64> {
    p.slices().into_iter().flat_map(|(_, s)| s.iter().copied()).collect()
}

fn load<P: Parameters<f64>>(p: &mut P, v: &[f64]) {
    let mut it = v.iter();
    for s in p.slices_mut() {
        for x in s {
            *x = *it.next().expect("flat vector covers every parameter");
        }
    }
}

/// Overwrites every parameter (biases included) with seeded values in `±scale`.
fn randomize<P: Parameters<f64>>(p: &mut P, seed: u64, scale: f64) {
    let v: Vec<f64> = seeded_uniform(seed, p.num_params()).into_iter().map(|x| x * scale).collect();
    load(p, &v);
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Runs one named check.
pub fn gradcheck_op(name: &str) -> Result<GradCheckReport> {
    let tol = GRADCHECK_TOLERANCE;
    match name {
        "elem_add" => {
            let s = Shape::new(1, 2, 2, 3, 3);
            let (a, b, w) = (random(s, 1), random(s, 2), random(s, 3));
            let point = concat(&[a.data(), b.data()]);
            let analytic = concat(&[w.data(), w.data()]);
            let n = s.numel();
            Ok(grad_check(name, format!("{s} + {s}"), &point, &analytic, |p| {
                probe(&w, &from_slice(s, &p[..n]).elem_add(&from_slice(s, &p[n..])).unwrap())
            }, tol))
        }
        "channel_mul" => {
            let s = Shape::new(2, 3, 2, 2, 2);
            let x = random(s, 4);
            let u = seeded_uniform(5, 6);
            let w = random(s, 6);
            let dx = w.scale_channels(&u)?;
            let vol = s.volume();
            let du: Vec<f64> = w
                .data()
                .chunks_exact(vol)
                .zip(x.data().chunks_exact(vol))
                .map(|(g, xv)| g.iter().zip(xv).map(|(a, b)| a * b).sum())
                .collect();
            let point = concat(&[x.data(), &u]);
            let analytic = concat(&[dx.data(), &du]);
            let n = s.numel();
            Ok(grad_check(name, format!("{s} * (6)"), &point, &analytic, |p| {
                probe(&w, &from_slice(s, &p[..n]).scale_channels(&p[n..]).unwrap())
            }, tol))
        }
        "conv" => {
            let s = Shape::new(1, 2, 3, 5, 4);
            let x = random(s, 7);
            let mut params = ConvParams::<f64>::zeros(3, 2, [3, 3, 2], [1, 2, 1], [1, 1, 0])?;
            randomize(&mut params, 8, 0.5);
            let fwd = conv_forward_saved(&x, &params)?;
            let w = random(fwd.value.shape(), 9);
            let grads = conv_backward(&w, &fwd.saved, &params)?;
            let point = concat(&[x.data(), &flatten(&params)]);
            let analytic = concat(&[grads.dx.as_ref().unwrap().data(), &flatten(&grads.params)]);
            let n = s.numel();
            let mut scratch = params.clone();
            Ok(grad_check(name, format!("{s} * (3, 2, 3, 3, 2)"), &point, &analytic, |p| {
                load(&mut scratch, &p[n..]);
                probe(&w, &conv_forward(&from_slice(s, &p[..n]), &scratch).unwrap())
            }, tol))
        }
        "maxpool" => {
            // Well-separated distinct values keep every window's maximum stable under the
            // finite-difference step.
            let s = Shape::new(1, 2, 4, 5, 5);
            let mut ranks: Vec<usize> = (0..s.numel()).collect();
            ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(10));
            let x = Tensor::from_vec(s, ranks.iter().map(|&r| r as f64 * 0.01 - 1.0).collect())?;
            let pool = MaxPool3d::STEM;
            let fwd = maxpool3d(&x, &pool)?;
            let w = random(fwd.value.shape(), 11);
            let dx = maxpool3d_backward(&w, &fwd.saved)?;
            Ok(grad_check(name, s.to_string(), x.data(), dx.data(), |p| {
                probe(&w, &maxpool3d(&from_slice(s, p), &pool).unwrap().value)
            }, tol))
        }
        "gap" => {
            let s = Shape::new(2, 3, 2, 3, 3);
            let x = random(s, 12);
            let w = random(Shape::new(2, 3, 1, 1, 1), 13);
            let dx = global_avg_pool_backward(&w, s)?;
            Ok(grad_check(name, s.to_string(), x.data(), dx.data(), |p| {
                probe(&w, &global_avg_pool(&from_slice(s, p)).unwrap())
            }, tol))
        }
        "relu" => {
            let s = Shape::new(1, 2, 2, 4, 4);
            // Keep inputs away from the kink at zero.
            let x = random(s, 14).map(|v| v.signum() * (0.05 + v.abs()));
            let w = random(s, 15);
            let dx = relu_backward(&w, &relu(&x))?;
            Ok(grad_check(name, s.to_string(), x.data(), dx.data(), |p| {
                probe(&w, &relu(&from_slice(s, p)).value)
            }, tol))
        }
        "sigmoid" => {
            let s = Shape::new(1, 2, 2, 4, 4);
            let x = random(s, 16).map(|v| 4.0 * v);
            let w = random(s, 17);
            let dx = sigmoid_backward(&w, &sigmoid(&x))?;
            Ok(grad_check(name, s.to_string(), x.data(), dx.data(), |p| {
                probe(&w, &sigmoid(&from_slice(s, p)).value)
            }, tol))
        }
        "masked_mse" => {
            let s = Shape::new(1, 1, 3, 4, 4);
            let pred = random(s, 18);
            let target = random(s, 19);
            let roi = RoiMask::new(4, 4, (0..16).map(|i| i % 3 != 0).collect())?;
            let (_, g) = masked_mse_loss(&pred, &target, &roi)?;
            Ok(grad_check(name, s.to_string(), pred.data(), g.data(), |p| {
                masked_mse_loss(&from_slice(s, p), &target, &roi).unwrap().0
            }, tol))
        }
        "tca" | "tca_nogc" | "tca_down" => {
            let down = name == "tca_down";
            let cfg = NetConfig {
                reduction_ratio: 2,
                global_context: name != "tca_nogc",
                ..Default::default()
            };
            let s = if down { Shape::new(1, 4, 2, 8, 8) } else { Shape::new(1, 4, 2, 6, 6) };
            let mut block = TcaBlockParams::<f64>::init(&cfg, 4, down, &mut ChaCha8Rng::seed_from_u64(20))?;
            randomize(&mut block, 21, 0.3);
            let x = random(s, 22);
            let fwd = tca_forward(&x, &block)?;
            let w = random(fwd.value.shape(), 23);
            let (dx, grads) = tca_backward(&w, &fwd.saved, &block)?;
            let point = concat(&[x.data(), &flatten(&block)]);
            let analytic = concat(&[dx.data(), &flatten(&grads)]);
            let n = s.numel();
            let mut scratch = block.clone();
            Ok(grad_check(name, s.to_string(), &point, &analytic, |p| {
                load(&mut scratch, &p[n..]);
                probe(&w, &tca_forward(&from_slice(s, &p[..n]), &scratch).unwrap().value)
            }, tol))
        }
        "net_e3d" | "net_e2d" => {
            let cfg = NetConfig {
                variant: if name == "net_e3d" { Variant::E3d } else { Variant::E2d },
                stem_channels: 4,
                block_count: 2,
                reduction_ratio: 2,
                clip_length: 2,
                ..Default::default()
            };
            let mut net = build_network::<f64>(&cfg, 24)?;
            randomize(&mut net, 25, 0.3);
            let s = Shape::new(1, 1, 2, 16, 16);
            let x = random(s, 26);
            let fwd = network_forward(&x, &net)?;
            let w = random(fwd.value.shape(), 27);
            let (grads, dx) = network_backward_with_input(&w, &fwd.saved, &net)?;
            let point = concat(&[x.data(), &flatten(&net)]);
            let analytic = concat(&[dx.data(), &flatten(&grads)]);
            let n = s.numel();
            let mut scratch = net.clone();
            Ok(grad_check(name, format!("{s}, 2 blocks"), &point, &analytic, |p| {
                load(&mut scratch, &p[n..]);
                probe(&w, &scratch.predict(&from_slice(s, &p[..n])).unwrap())
            }, tol))
        }
        other => Err(Error::invalid(
            "gradcheck",
            format!("unknown op {other:?}; expected one of {}", GRADCHECK_OPS.join(", ")),
        )),
    }
}

/// Runs every check in [`GRADCHECK_OPS`].
pub fn gradcheck_all() -> Result<Vec<GradCheckReport>> {
    GRADCHECK_OPS.iter().map(|op| gradcheck_op(op)).collect()
}
