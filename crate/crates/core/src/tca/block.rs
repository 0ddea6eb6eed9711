use rand::Rng;

use super::config::NetConfig;
use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_forward_saved, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, ConvParams, ConvSaved, GradPair, Parameters,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Learnable state of one TCA block.
///
/// The main path is `conv2(relu(conv1(x)))`. The gate squeezes that output to one value per
/// channel, passes it through `gate_reduce` (c -> c/r), ReLU, `gate_expand` (c/r -> c) and a
/// sigmoid, and rescales each channel. The block output adds the (possibly projected) input.
#[derive(Debug, Clone, PartialEq)]
pub struct TcaBlockParams<T> {
    pub conv1: ConvParams<T>,
    pub conv2: ConvParams<T>,
    pub gate_reduce: ConvParams<T>,
    pub gate_expand: ConvParams<T>,
    /// 1x1x1 strided projection, present exactly when `conv1` downsamples.
    pub shortcut_proj: Option<ConvParams<T>>,
    pub global_context: bool,
}

impl<T: Scalar> TcaBlockParams<T> {
    /// Randomly initialised block of width `channels` for the given network variant.
    pub fn init<R: Rng>(
        cfg: &NetConfig,
        channels: usize,
        downsample: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let r = cfg.reduction_ratio;
        if r == 0 || channels % r != 0 {
            return Err(Error::InvalidConfig(format!(
                "channels ({channels}) not divisible by reduction ratio ({r})"
            )));
        }
        let hidden = channels / r;
        let k3 = cfg.kernel(3);
        let pad = cfg.same_padding(3);
        let stride1 = if downsample { [1, 2, 2] } else { [1, 1, 1] };
        let one = [1, 1, 1];
        let zero = [0, 0, 0];
        let conv1 = ConvParams::init_uniform(channels, channels, k3, stride1, pad, rng)?;
        let conv2 = ConvParams::init_uniform(channels, channels, k3, one, pad, rng)?;
        let gate_reduce = ConvParams::init_uniform(hidden, channels, one, one, zero, rng)?;
        let gate_expand = ConvParams::init_uniform(channels, hidden, one, one, zero, rng)?;
        let shortcut_proj = if downsample {
            Some(ConvParams::init_uniform(channels, channels, one, stride1, zero, rng)?)
        } else {
            None
        };
        let block = TcaBlockParams {
            conv1,
            conv2,
            gate_reduce,
            gate_expand,
            shortcut_proj,
            global_context: cfg.global_context,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn channels(&self) -> usize {
        self.conv1.c_in()
    }

    pub fn downsamples(&self) -> bool {
        self.conv1.stride != [1, 1, 1]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.conv1.c_out() != c || self.conv2.c_in() != c || self.conv2.c_out() != c {
            return fail(format!("TCA convolutions must preserve {c} channels"));
        }
        let hidden = self.gate_reduce.c_out();
        if self.gate_reduce.c_in() != c
            || self.gate_expand.c_in() != hidden
            || self.gate_expand.c_out() != c
            || hidden == 0
        {
            return fail(format!("gate must map {c} -> {hidden} -> {c} channels"));
        }
        if self.gate_reduce.kernel() != [1, 1, 1] || self.gate_expand.kernel() != [1, 1, 1] {
            return fail("gate layers must be 1x1x1".into());
        }
        match (&self.shortcut_proj, self.downsamples()) {
            (None, true) => fail("downsampling block is missing shortcut_proj".into()),
            (Some(_), false) => fail("shortcut_proj present in a non-downsampling block".into()),
            (Some(p), true) if p.stride != self.conv1.stride || p.c_in() != c || p.c_out() != c => {
                fail("shortcut_proj must match conv1 stride and channel count".into())
            }
            _ => Ok(()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        TcaBlockParams {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            gate_reduce: self.gate_reduce.zeros_like(),
            gate_expand: self.gate_expand.zeros_like(),
            shortcut_proj: self.shortcut_proj.as_ref().map(ConvParams::zeros_like),
            global_context: self.global_context,
        }
    }
}

impl<T: Scalar> Parameters<T> for TcaBlockParams<T> {
    fn slices(&self) -> Vec<(Shape, &[T])> {
        let mut v = self.conv1.slices();
        v.extend(self.conv2.slices());
        v.extend(self.gate_reduce.slices());
        v.extend(self.gate_expand.slices());
        if let Some(p) = &self.shortcut_proj {
            v.extend(p.slices());
        }
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.conv1.slices_mut();
        v.extend(self.conv2.slices_mut());
        v.extend(self.gate_reduce.slices_mut());
        v.extend(self.gate_expand.slices_mut());
        if let Some(p) = &mut self.shortcut_proj {
            v.extend(p.slices_mut());
        }
        v
    }
}

/// Intermediates of the channel gate.
#[derive(Debug, Clone)]
pub struct GateSaved<T> {
    reduce: ConvSaved<T>,
    hidden: GradPair<T, ()>,
    expand: ConvSaved<T>,
    /// Gate values `u`, shape `(n, c, 1, 1, 1)`.
    pub gate: GradPair<T, ()>,
}

fn gate_forward<T: Scalar>(o: &Tensor<T>, p: &TcaBlockParams<T>) -> Result<GateSaved<T>> {
    let pooled = global_avg_pool(o)?;
    let reduced = conv_forward_saved(&pooled, &p.gate_reduce)?;
    let hidden = relu(&reduced.value);
    let expanded = conv_forward_saved(&hidden.value, &p.gate_expand)?;
    let gate = sigmoid(&expanded.value);
    Ok(GateSaved {
        reduce: reduced.saved,
        hidden,
        expand: expanded.saved,
        gate,
    })
}

/// Per-channel gate `u = sigmoid(W2 relu(W1 mean(o)))`, flattened as `n * c` values.
pub fn channel_gate<T: Scalar>(o: &Tensor<T>, p: &TcaBlockParams<T>) -> Result<Vec<T>> {
    if !p.global_context {
        return Err(Error::invalid("channel_gate", "global context is disabled for this block"));
    }
    if o.shape().c() != p.channels() {
        return Err(Error::invalid(
            "channel_gate",
            format!("feature map has {} channels, block has {}", o.shape().c(), p.channels()),
        ));
    }
    Ok(gate_forward(o, p)?.gate.value.into_data())
}

#[derive(Debug, Clone)]
pub struct TcaSaved<T> {
    conv1: ConvSaved<T>,
    act1: GradPair<T, ()>,
    conv2: ConvSaved<T>,
    /// Main-path output `O` before gating.
    main: Tensor<T>,
    gate: Option<GateSaved<T>>,
    shortcut: Option<ConvSaved<T>>,
}

impl<T> TcaSaved<T> {
    pub fn gate(&self) -> Option<&GateSaved<T>> {
        self.gate.as_ref()
    }
}

/// Forward pass of one block: `shortcut(x) + u * O` (or `shortcut(x) + O` without the gate).
pub fn tca_forward<T: Scalar>(x: &Tensor<T>, p: &TcaBlockParams<T>) -> Result<GradPair<T, TcaSaved<T>>> {
    if x.shape().c() != p.channels() {
        return Err(Error::invalid(
            "tca_forward",
            format!("input has {} channels, block has {}", x.shape().c(), p.channels()),
        ));
    }
    if p.downsamples() && p.shortcut_proj.is_none() {
        return Err(Error::invalid("tca_forward", "downsampling block without shortcut_proj"));
    }
    let h1 = conv_forward_saved(x, &p.conv1)?;
    let act1 = relu(&h1.value);
    let main = conv_forward_saved(&act1.value, &p.conv2)?;
    let (gated, gate) = if p.global_context {
        let gate = gate_forward(&main.value, p)?;
        (main.value.scale_channels(gate.gate.value.data())?, Some(gate))
    } else {
        (main.value.clone(), None)
    };
    let (value, shortcut) = match &p.shortcut_proj {
        Some(proj) => {
            let s = conv_forward_saved(x, proj)?;
            (s.value.elem_add(&gated)?, Some(s.saved))
        }
        None => (x.elem_add(&gated)?, None),
    };
    Ok(GradPair {
        value,
        saved: TcaSaved {
            conv1: h1.saved,
            act1,
            conv2: main.saved,
            main: main.value,
            gate,
            shortcut,
        },
    })
}

/// Gradients of one block with respect to its input and every parameter.
pub fn tca_backward<T: Scalar>(
    g: &Tensor<T>,
    saved: &TcaSaved<T>,
    p: &TcaBlockParams<T>,
) -> Result<(Tensor<T>, TcaBlockParams<T>)> {
    let o = &saved.main;
    if g.shape() != o.shape() {
        return Err(Error::ShapeMismatch {
            op: "tca_backward",
            expected: o.shape(),
            actual: g.shape(),
        });
    }
    let mut grads = p.zeros_like();

    let d_main = match &saved.gate {
        Some(gs) => {
            let u = gs.gate.value.data();
            let mut d_main = g.scale_channels(u)?;
            // du[n, c] = sum over the volume of g * O
            let du: Vec<T> = g
                .data()
                .chunks_exact(o.shape().volume())
                .zip(o.data().chunks_exact(o.shape().volume()))
                .map(|(gc, oc)| gc.iter().zip(oc).map(|(&a, &b)| a * b).sum())
                .collect();
            let du = Tensor::from_vec(gs.gate.value.shape(), du)?;
            let dz2 = sigmoid_backward(&du, &gs.gate)?;
            let expand = conv_backward(&dz2, &gs.expand, &p.gate_expand)?;
            let dz1 = relu_backward(expand.dx.as_ref().unwrap(), &gs.hidden)?;
            let reduce = conv_backward(&dz1, &gs.reduce, &p.gate_reduce)?;
            let d_pool = global_avg_pool_backward(reduce.dx.as_ref().unwrap(), o.shape())?;
            d_main.add_assign(&d_pool)?;
            grads.gate_expand = expand.params;
            grads.gate_reduce = reduce.params;
            d_main
        }
        None => g.clone(),
    };

    let c2 = conv_backward(&d_main, &saved.conv2, &p.conv2)?;
    let d_act = relu_backward(c2.dx.as_ref().unwrap(), &saved.act1)?;
    let c1 = conv_backward(&d_act, &saved.conv1, &p.conv1)?;
    grads.conv2 = c2.params;
    grads.conv1 = c1.params;
    let mut dx = c1.dx.unwrap();

    match (&p.shortcut_proj, &saved.shortcut) {
        (Some(proj), Some(s)) => {
            let sc = conv_backward(g, s, proj)?;
            dx.add_assign(sc.dx.as_ref().unwrap())?;
            grads.shortcut_proj = Some(sc.params);
        }
        (None, None) => dx.add_assign(g)?,
        _ => return Err(Error::invalid("tca_backward", "saved record does not match block")),
    }
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv_forward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(c: usize, downsample: bool, gc: bool, seed: u64) -> TcaBlockParams<f64> {
        let cfg = NetConfig {
            global_context: gc,
            ..NetConfig::default()
        };
        TcaBlockParams::init(&cfg, c, downsample, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn zero_params(b: &mut TcaBlockParams<f64>) {
        for s in b.slices_mut() {
            s.fill(0.0);
        }
    }

    #[test]
    fn zero_block_is_identity() {
        let mut b = block(4, false, true, 1);
        zero_params(&mut b);
        let x = Tensor::from_fn([1, 4, 2, 5, 5], |i| (i as f64 * 0.37).sin());
        let y = tca_forward(&x, &b).unwrap();
        assert_eq!(y.value, x);
    }

    #[test]
    fn zero_gate_weights_give_half() {
        let mut b = block(8, false, true, 2);
        for s in b.gate_reduce.slices_mut().into_iter().chain(b.gate_expand.slices_mut()) {
            s.fill(0.0);
        }
        let x = Tensor::from_fn([1, 8, 2, 4, 4], |i| (i as f64 * 0.11).cos());
        let u = channel_gate(&x, &b).unwrap();
        assert_eq!(u, vec![0.5; 8]);

        // W2 = 0 alone also pins the gate at 1/2
        let mut b = block(8, false, true, 3);
        for s in b.gate_expand.slices_mut() {
            s.fill(0.0);
        }
        let y = tca_forward(&x, &b).unwrap();
        let o = conv_forward(&relu(&conv_forward(&x, &b.conv1).unwrap()).value, &b.conv2).unwrap();
        for i in 0..x.len() {
            assert_eq!(y.value.data()[i], x.data()[i] + o.data()[i] * 0.5);
        }
    }

    #[test]
    fn hidden_width_follows_reduction_ratio() {
        let b = block(8, false, true, 4);
        assert_eq!(b.gate_reduce.c_out(), 2);
        let cfg = NetConfig::default();
        let err = TcaBlockParams::<f64>::init(&cfg, 6, false, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(err.is_err());
    }

    #[test]
    fn hand_computed_gate() {
        // c = 2, hidden = 1, W1 = [1, 1], W2 = [1; -1], channel means (1, 3)
        let cfg = NetConfig {
            reduction_ratio: 2,
            ..NetConfig::default()
        };
        let mut b = TcaBlockParams::<f64>::init(&cfg, 2, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        b.gate_reduce.weight.data_mut().copy_from_slice(&[1.0, 1.0]);
        b.gate_expand.weight.data_mut().copy_from_slice(&[1.0, -1.0]);
        let o = Tensor::from_vec([1, 2, 1, 1, 2], vec![0.5, 1.5, 2.0, 4.0]).unwrap();
        let u = channel_gate(&o, &b).unwrap();
        let s4 = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((u[0] - s4).abs() < 1e-15 && (u[1] - (1.0 - s4)).abs() < 1e-15);
        assert!((u[0] - 0.9820).abs() < 5e-5 && (u[1] - 0.0180).abs() < 5e-5);
    }

    #[test]
    fn gate_is_monotone_in_logit_bias() {
        let b = block(4, false, true, 5);
        let o = Tensor::from_fn([1, 4, 2, 3, 3], |i| (i as f64 * 0.7).sin());
        let base = channel_gate(&o, &b).unwrap();
        assert!(base.iter().all(|&u| u > 0.0 && u < 1.0));
        let mut up = b.clone();
        up.gate_expand.bias.as_mut().unwrap()[2] += 0.25;
        let raised = channel_gate(&o, &up).unwrap();
        assert!(raised[2] > base[2]);
        for c in [0, 1, 3] {
            assert_eq!(raised[c], base[c]);
        }
    }

    #[test]
    fn gate_rejected_without_global_context() {
        let b = block(4, false, false, 6);
        assert!(channel_gate(&Tensor::zeros([1, 4, 1, 2, 2]), &b).is_err());
    }

    #[test]
    fn no_gc_is_plain_residual() {
        let b = block(4, false, false, 7);
        let x = Tensor::from_fn([1, 4, 2, 4, 4], |i| (i as f64 * 0.3).sin());
        let y = tca_forward(&x, &b).unwrap();
        let o = conv_forward(&relu(&conv_forward(&x, &b.conv1).unwrap()).value, &b.conv2).unwrap();
        assert_eq!(y.value, x.elem_add(&o).unwrap());
    }

    #[test]
    fn downsampling_block_shape() {
        let cfg = NetConfig::default();
        let b = TcaBlockParams::<f32>::init(&cfg, 16, true, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let x = Tensor::from_fn([1, 16, 16, 32, 32], |i| ((i % 17) as f32) * 0.01);
        let y = tca_forward(&x, &b).unwrap();
        assert_eq!(y.value.shape(), Shape::new(1, 16, 16, 16, 16));
    }

    #[test]
    fn missing_projection_is_rejected() {
        let mut b = block(4, true, true, 9);
        b.shortcut_proj = None;
        assert!(b.validate().is_err());
        assert!(tca_forward(&Tensor::zeros([1, 4, 1, 4, 4]), &b).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let b = block(4, true, true, 10);
        let x = Tensor::from_fn([1, 4, 2, 4, 4], |i| (i as f64 * 0.9).cos());
        let y = tca_forward(&x, &b).unwrap();
        let (dx, grads) = tca_backward(&Tensor::zeros(y.value.shape()), &y.saved, &b).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(grads.slices().iter().all(|(_, s)| s.iter().all(|&v| v == 0.0)));
    }
}
