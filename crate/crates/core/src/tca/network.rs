use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{tca_backward, tca_forward, TcaBlockParams, TcaSaved};
use super::config::{NetConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_backward_params, conv_forward_saved, maxpool3d, maxpool3d_backward,
    relu, relu_backward, ConvParams, ConvSaved, GradPair, MaxPool3d, Parameters, PoolSaved,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Stem convolution, max-pool, a stack of TCA blocks and a 1x1x1 density head.
///
/// Gradients are returned in this same type, holding `dL/dθ` in place of `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetConfig,
    pub stem: ConvParams<T>,
    pub pool: MaxPool3d,
    pub blocks: Vec<TcaBlockParams<T>>,
    pub head: ConvParams<T>,
}

/// Builds a network with weights drawn uniformly in `±1/sqrt(fan_in)` and zero biases.
pub fn build_network<T: Scalar>(cfg: &NetConfig, seed: u64) -> Result<Network<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = cfg.stem_channels;
    let stem = ConvParams::init_uniform(
        width,
        cfg.input_channels,
        cfg.kernel(7),
        [1, 2, 2],
        cfg.same_padding(7),
        &mut rng,
    )?;
    let pool = match cfg.variant {
        Variant::E3d => MaxPool3d::STEM,
        Variant::E2d => MaxPool3d {
            size: [1, 3, 3],
            stride: [1, 1, 1],
            padding: [0, 1, 1],
        },
    };
    let downsample = cfg.downsample_indices();
    let blocks = (1..=cfg.block_count)
        .map(|i| TcaBlockParams::init(cfg, width, downsample.contains(&i), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let head = ConvParams::init_uniform(1, width, [1, 1, 1], [1, 1, 1], [0, 0, 0], &mut rng)?;
    Ok(Network {
        config: cfg.clone(),
        stem,
        pool,
        blocks,
        head,
    })
}

impl<T: Scalar> Network<T> {
    pub fn zeros_like(&self) -> Self {
        Network {
            config: self.config.clone(),
            stem: self.stem.zeros_like(),
            pool: self.pool,
            blocks: self.blocks.iter().map(TcaBlockParams::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    /// Output shape for `input`, or the reason it is rejected.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let f = self.config.spatial_factor();
        if input.c() != self.stem.c_in() {
            return Err(Error::invalid(
                "network_forward",
                format!("input has {} channels, network expects {}", input.c(), self.stem.c_in()),
            ));
        }
        if input.h() < f || input.w() < f || input.h() % f != 0 || input.w() % f != 0 {
            return Err(Error::invalid(
                "network_forward",
                format!("spatial dims {}x{} must be positive multiples of {f}", input.h(), input.w()),
            ));
        }
        Ok(Shape::new(input.n(), 1, input.d(), input.h() / f, input.w() / f))
    }

    /// Forward pass without keeping intermediates for backward.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(network_forward(x, self)?.value)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |p: &ConvParams<T>| ConvParams {
            weight: p.weight.cast(),
            bias: p
                .bias
                .as_ref()
                .map(|b| b.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect()),
            stride: p.stride,
            padding: p.padding,
        };
        Network {
            config: self.config.clone(),
            stem: conv(&self.stem),
            pool: self.pool,
            blocks: self
                .blocks
                .iter()
                .map(|b| TcaBlockParams {
                    conv1: conv(&b.conv1),
                    conv2: conv(&b.conv2),
                    gate_reduce: conv(&b.gate_reduce),
                    gate_expand: conv(&b.gate_expand),
                    shortcut_proj: b.shortcut_proj.as_ref().map(conv),
                    global_context: b.global_context,
                })
                .collect(),
            head: conv(&self.head),
        }
    }
}

impl<T: Scalar> Parameters<T> for Network<T> {
    fn slices(&self) -> Vec<(Shape, &[T])> {
        let mut v = self.stem.slices();
        for b in &self.blocks {
            v.extend(b.slices());
        }
        v.extend(self.head.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.stem.slices_mut();
        for b in &mut self.blocks {
            v.extend(b.slices_mut());
        }
        v.extend(self.head.slices_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct NetSaved<T> {
    stem: ConvSaved<T>,
    stem_act: GradPair<T, ()>,
    pool: PoolSaved,
    blocks: Vec<TcaSaved<T>>,
    head: ConvSaved<T>,
}

/// `(n, c_img, T, H, W) -> (n, 1, T, H/16, W/16)`: one density map per input frame.
pub fn network_forward<T: Scalar>(x: &Tensor<T>, net: &Network<T>) -> Result<GradPair<T, NetSaved<T>>> {
    let out_shape = net.output_shape(x.shape())?;
    let stem = conv_forward_saved(x, &net.stem)?;
    let stem_act = relu(&stem.value);
    let pooled = maxpool3d(&stem_act.value, &net.pool)?;
    let mut h = pooled.value;
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for b in &net.blocks {
        let out = tca_forward(&h, b)?;
        h = out.value;
        blocks.push(out.saved);
    }
    let head = conv_forward_saved(&h, &net.head)?;
    debug_assert_eq!(head.value.shape(), out_shape);
    Ok(GradPair {
        value: head.value,
        saved: NetSaved {
            stem: stem.saved,
            stem_act,
            pool: pooled.saved,
            blocks,
            head: head.saved,
        },
    })
}

/// Gradients of every parameter for upstream gradient `g` on the density output.
pub fn network_backward<T: Scalar>(
    g: &Tensor<T>,
    saved: &NetSaved<T>,
    net: &Network<T>,
) -> Result<Network<T>> {
    Ok(backward_impl(g, saved, net, false)?.0)
}

/// As [`network_backward`], additionally returning the gradient with respect to the input.
pub fn network_backward_with_input<T: Scalar>(
    g: &Tensor<T>,
    saved: &NetSaved<T>,
    net: &Network<T>,
) -> Result<(Network<T>, Tensor<T>)> {
    let (grads, dx) = backward_impl(g, saved, net, true)?;
    Ok((grads, dx.expect("input gradient requested")))
}

fn backward_impl<T: Scalar>(
    g: &Tensor<T>,
    saved: &NetSaved<T>,
    net: &Network<T>,
    want_dx: bool,
) -> Result<(Network<T>, Option<Tensor<T>>)> {
    if saved.blocks.len() != net.blocks.len() {
        return Err(Error::invalid("network_backward", "saved record does not match network"));
    }
    let expected = net.output_shape(saved.stem.input.shape())?;
    if g.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "network_backward",
            expected,
            actual: g.shape(),
        });
    }
    let mut grads = net.zeros_like();
    let head = conv_backward(g, &saved.head, &net.head)?;
    grads.head = head.params;
    let mut d = head.dx.unwrap();
    for (i, (b, s)) in net.blocks.iter().zip(&saved.blocks).enumerate().rev() {
        let (dx, bg) = tca_backward(&d, s, b)?;
        grads.blocks[i] = bg;
        d = dx;
    }
    let d = maxpool3d_backward(&d, &saved.pool)?;
    let d = relu_backward(&d, &saved.stem_act)?;
    let stem = if want_dx {
        conv_backward(&d, &saved.stem, &net.stem)?
    } else {
        conv_backward_params(&d, &saved.stem, &net.stem)?
    };
    grads.stem = stem.params;
    Ok((grads, stem.dx))
}
