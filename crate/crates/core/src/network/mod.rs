//! Executable networks of the family described by [`ArchConfig`].
//!
//! `stem (k = s = d) -> B blocks -> 1x1 tail -> PixelShuffle(d)`. Each block
//! is
//!
//! ```text
//! y   = x + s1 * conv3(gate(dconv(conv1(norm1(x)))))
//! out = y + s2 * conv5(gate(conv4(norm2(y))))
//! ```
//!
//! with optional channel attention between the first gate and `conv3`.
//! Every convolution carries a bias; `s1` and `s2` are learnable scalars
//! initialised to zero.

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archmodel::{block_layers, stem_layer, tail_layer, ArchConfig};
use crate::cfa::pad_to_multiple;
use crate::error::{Error, Result};
use crate::numerics::{
    channel_scale, channel_scale_backward, conv2d_backward, conv2d_counted, global_avg_pool, global_avg_pool_backward,
    layer_norm_channels, layer_norm_channels_backward, pixel_shuffle, pixel_unshuffle, simple_gate,
    simple_gate_backward, ConvSpec, OpCounter, Scalar, Shape, Tensor, LAYER_NORM_EPS,
};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_with_manifest, save_checkpoint, CheckpointManifest, TensorEntry, MANIFEST,
};
pub use train::{train_adam, Adam, LossKind, TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T: Scalar> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv<T> {
    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    fn init(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = (spec.in_channels / spec.groups * spec.kernel * spec.kernel) as f64;
        let bound = fan_in.sqrt().recip();
        let weight = Tensor::random_uniform(spec.weight_shape(), -bound, bound, rng);
        Conv {
            spec,
            weight,
            bias: vec![T::zero(); spec.out_channels],
        }
    }

    fn zeros(spec: ConvSpec) -> Self {
        Conv {
            spec,
            weight: Tensor::zeros(spec.weight_shape()),
            bias: vec![T::zero(); spec.out_channels],
        }
    }

    fn forward(&self, x: &Tensor<T>, counter: Option<&OpCounter>) -> Result<Tensor<T>> {
        conv2d_counted(x, &self.weight, Some(&self.bias), &self.spec, counter)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    fn backward(&self, g_out: &Tensor<T>, x: &Tensor<T>, grad: &mut Conv<T>) -> Result<Tensor<T>> {
        let g = conv2d_backward(g_out, x, &self.weight, &self.spec)?;
        grad.weight = grad.weight.add(&g.weight)?;
        for (a, b) in grad.bias.iter_mut().zip(&g.bias) {
            *a += *b;
        }
        Ok(g.input)
    }

    fn visit<'a>(&'a self, name: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{name}.weight"),
            shape: self.weight.shape(),
            data: self.weight.data(),
        });
        out.push(ParamRef {
            name: format!("{name}.bias"),
            shape: vector_shape(self.bias.len()),
            data: &self.bias,
        });
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(self.weight.data_mut());
        out.push(&mut self.bias);
    }
}

fn vector_shape(c: usize) -> Shape {
    Shape::new(1, c, 1, 1)
}

/// A named, read-only view of one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamRef<'a, T: Scalar> {
    pub name: String,
    pub shape: Shape,
    pub data: &'a [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<T: Scalar> {
    pub norm1_gamma: Vec<T>,
    pub norm1_beta: Vec<T>,
    pub conv1: Conv<T>,
    pub dconv: Conv<T>,
    pub sca: Option<Conv<T>>,
    pub conv3: Conv<T>,
    pub scale1: Vec<T>,
    pub norm2_gamma: Vec<T>,
    pub norm2_beta: Vec<T>,
    pub conv4: Conv<T>,
    pub conv5: Conv<T>,
    pub scale2: Vec<T>,
}

struct BlockCache<T: Scalar> {
    x: Tensor<T>,
    n1: Tensor<T>,
    c1: Tensor<T>,
    dw: Tensor<T>,
    g1: Tensor<T>,
    pooled: Option<(Tensor<T>, Tensor<T>)>,
    a: Tensor<T>,
    b1: Tensor<T>,
    y: Tensor<T>,
    n2: Tensor<T>,
    c4: Tensor<T>,
    g2: Tensor<T>,
    c5: Tensor<T>,
}

impl<T: Scalar> Block<T> {
    fn build(config: &ArchConfig, with_sca: bool, rng: &mut impl Rng, zeros: bool) -> Self {
        let [s1, s2, s3, s4, s5] = block_layers(config);
        let gw = config.gated();
        let mut conv = |s: ConvSpec| {
            if zeros {
                Conv::zeros(s)
            } else {
                Conv::init(s, rng)
            }
        };
        let conv1 = conv(s1);
        let dconv = conv(s2);
        let sca = with_sca.then(|| conv(ConvSpec::pointwise(gw, gw)));
        let conv3 = conv(s3);
        let conv4 = conv(s4);
        let conv5 = conv(s5);
        let w = config.width;
        let one = if zeros { T::zero() } else { T::one() };
        Block {
            norm1_gamma: vec![one; w],
            norm1_beta: vec![T::zero(); w],
            conv1,
            dconv,
            sca,
            conv3,
            scale1: vec![T::zero()],
            norm2_gamma: vec![one; w],
            norm2_beta: vec![T::zero(); w],
            conv4,
            conv5,
            scale2: vec![T::zero()],
        }
    }

    fn forward(&self, x: &Tensor<T>, counter: Option<&OpCounter>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let eps = T::of(LAYER_NORM_EPS);
        let n1 = layer_norm_channels(x, &self.norm1_gamma, &self.norm1_beta, eps)?;
        let c1 = self.conv1.forward(&n1, counter)?;
        let dw = self.dconv.forward(&c1, counter)?;
        let g1 = simple_gate(&dw)?;
        let (a, pooled) = match &self.sca {
            Some(sca) => {
                let p = global_avg_pool(&g1)?;
                let att = sca.forward(&p, counter)?;
                (channel_scale(&g1, &att)?, Some((p, att)))
            }
            None => (g1.clone(), None),
        };
        let b1 = self.conv3.forward(&a, counter)?;
        let y = x.add_scaled(&b1, self.scale1[0])?;
        let n2 = layer_norm_channels(&y, &self.norm2_gamma, &self.norm2_beta, eps)?;
        let c4 = self.conv4.forward(&n2, counter)?;
        let g2 = simple_gate(&c4)?;
        let c5 = self.conv5.forward(&g2, counter)?;
        let out = y.add_scaled(&c5, self.scale2[0])?;
        Ok((
            out,
            BlockCache {
                x: x.clone(),
                n1,
                c1,
                dw,
                g1,
                pooled,
                a,
                b1,
                y,
                n2,
                c4,
                g2,
                c5,
            },
        ))
    }

    fn backward(&self, g_out: &Tensor<T>, c: &BlockCache<T>, grad: &mut Block<T>) -> Result<Tensor<T>> {
        let eps = T::of(LAYER_NORM_EPS);
        grad.scale2[0] += g_out.dot(&c.c5)?;
        let g_c5 = g_out.scale(self.scale2[0])?;
        let g_g2 = self.conv5.backward(&g_c5, &c.g2, &mut grad.conv5)?;
        let g_c4 = simple_gate_backward(&g_g2, &c.c4)?;
        let g_n2 = self.conv4.backward(&g_c4, &c.n2, &mut grad.conv4)?;
        let ln2 = layer_norm_channels_backward(&g_n2, &c.y, &self.norm2_gamma, eps)?;
        accumulate(&mut grad.norm2_gamma, &ln2.gamma);
        accumulate(&mut grad.norm2_beta, &ln2.beta);
        let g_y = g_out.add(&ln2.input)?;

        grad.scale1[0] += g_y.dot(&c.b1)?;
        let g_b1 = g_y.scale(self.scale1[0])?;
        let g_a = self.conv3.backward(&g_b1, &c.a, &mut grad.conv3)?;
        let g_g1 = match (&self.sca, &c.pooled) {
            (Some(sca), Some((p, att))) => {
                let (g_direct, g_att) = channel_scale_backward(&g_a, &c.g1, att)?;
                let g_p = sca.backward(&g_att, p, grad.sca.as_mut().expect("gradient mirrors network"))?;
                g_direct.add(&global_avg_pool_backward(&g_p, c.g1.shape())?)?
            }
            _ => g_a,
        };
        let g_dw = simple_gate_backward(&g_g1, &c.dw)?;
        let g_c1 = self.dconv.backward(&g_dw, &c.c1, &mut grad.dconv)?;
        let g_n1 = self.conv1.backward(&g_c1, &c.n1, &mut grad.conv1)?;
        let ln1 = layer_norm_channels_backward(&g_n1, &c.x, &self.norm1_gamma, eps)?;
        accumulate(&mut grad.norm1_gamma, &ln1.gamma);
        accumulate(&mut grad.norm1_beta, &ln1.beta);
        g_y.add(&ln1.input)
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        let vector = |name: &str, data: &'a [T]| ParamRef {
            name: format!("{prefix}.{name}"),
            shape: vector_shape(data.len()),
            data,
        };
        out.push(vector("norm1.gamma", &self.norm1_gamma));
        out.push(vector("norm1.beta", &self.norm1_beta));
        self.conv1.visit(&format!("{prefix}.conv1"), out);
        self.dconv.visit(&format!("{prefix}.dconv"), out);
        if let Some(sca) = &self.sca {
            sca.visit(&format!("{prefix}.sca"), out);
        }
        self.conv3.visit(&format!("{prefix}.conv3"), out);
        out.push(vector("scale1", &self.scale1));
        out.push(vector("norm2.gamma", &self.norm2_gamma));
        out.push(vector("norm2.beta", &self.norm2_beta));
        self.conv4.visit(&format!("{prefix}.conv4"), out);
        self.conv5.visit(&format!("{prefix}.conv5"), out);
        out.push(vector("scale2", &self.scale2));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.norm1_gamma);
        out.push(&mut self.norm1_beta);
        self.conv1.visit_mut(out);
        self.dconv.visit_mut(out);
        if let Some(sca) = &mut self.sca {
            sca.visit_mut(out);
        }
        self.conv3.visit_mut(out);
        out.push(&mut self.scale1);
        out.push(&mut self.norm2_gamma);
        out.push(&mut self.norm2_beta);
        self.conv4.visit_mut(out);
        self.conv5.visit_mut(out);
        out.push(&mut self.scale2);
    }
}

fn accumulate<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Intermediate activations retained by [`Network::forward_train`].
pub struct ForwardCache<T: Scalar> {
    input: Tensor<T>,
    stem_out: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    trunk_out: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    config: ArchConfig,
    stem: Conv<T>,
    blocks: Vec<Block<T>>,
    tail: Conv<T>,
}

impl<T: Scalar> Network<T> {
    /// Seeded initialisation; parameters are drawn in [`Network::params`] order.
    pub fn build(config: &ArchConfig, seed: u64, with_sca: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::assemble(config, with_sca, &mut rng, false))
    }

    fn assemble(config: &ArchConfig, with_sca: bool, rng: &mut ChaCha8Rng, zeros: bool) -> Self {
        let conv = |s: ConvSpec, rng: &mut ChaCha8Rng| {
            if zeros {
                Conv::zeros(s)
            } else {
                Conv::init(s, rng)
            }
        };
        let stem = conv(stem_layer(config), rng);
        let blocks = (0..config.blocks)
            .map(|_| Block::build(config, with_sca, rng, zeros))
            .collect();
        let tail = conv(tail_layer(config), rng);
        Network {
            config: *config,
            stem,
            blocks,
            tail,
        }
    }

    /// Same structure with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::assemble(&self.config, self.with_sca(), &mut rng, true)
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn with_sca(&self) -> bool {
        self.blocks.first().is_some_and(|b| b.sca.is_some())
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    /// Every parameter tensor in a fixed order with its checkpoint name.
    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        self.stem.visit("stem", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block.{i}"), &mut out);
        }
        self.tail.visit("tail", &mut out);
        out
    }

    /// Mutable slices in the same order as [`Network::params`].
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        self.stem.visit_mut(&mut out);
        for b in &mut self.blocks {
            b.visit_mut(&mut out);
        }
        self.tail.visit_mut(&mut out);
        out
    }

    pub fn param_count(&self) -> u64 {
        self.params().iter().map(|p| p.data.len() as u64).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::zeros_like_config(&self.config, self.with_sca());
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d = U::of(s.as_f64());
            }
        }
        out
    }

    fn zeros_like_config(config: &ArchConfig, with_sca: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::assemble(config, with_sca, &mut rng, true)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let d = self.config.downsample;
        if s.c != self.config.c_in {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {s}",
                self.config.c_in
            )));
        }
        if !s.h.is_multiple_of(d) || !s.w.is_multiple_of(d) {
            return Err(Error::Divisibility(format!(
                "input {}x{} not divisible by d = {d}",
                s.h, s.w
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_counted(x, None)
    }

    /// Forward pass tallying convolution arithmetic into `counter`.
    pub fn forward_counted(&self, x: &Tensor<T>, counter: Option<&OpCounter>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x, counter)?;
        for b in &self.blocks {
            h = b.forward(&h, counter)?.0;
        }
        pixel_shuffle(&self.tail.forward(&h, counter)?, self.config.downsample)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let stem_out = self.stem.forward(x, None)?;
        let mut h = stem_out.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(&h, None)?;
            blocks.push(cache);
            h = next;
        }
        let out = pixel_shuffle(&self.tail.forward(&h, None)?, self.config.downsample)?;
        Ok((
            out,
            ForwardCache {
                input: x.clone(),
                stem_out,
                blocks,
                trunk_out: h,
            },
        ))
    }

    /// Gradients of a scalar loss with respect to every parameter (as a
    /// network-shaped buffer) and to the input.
    pub fn backward(&self, g_out: &Tensor<T>, cache: &ForwardCache<T>) -> Result<(Network<T>, Tensor<T>)> {
        let mut grad = self.zeros_like();
        let g_tail = pixel_unshuffle(g_out, self.config.downsample)?;
        let mut g = self.tail.backward(&g_tail, &cache.trunk_out, &mut grad.tail)?;
        for (i, b) in self.blocks.iter().enumerate().rev() {
            g = b.backward(&g, &cache.blocks[i], &mut grad.blocks[i])?;
        }
        debug_assert_eq!(g.shape(), cache.stem_out.shape());
        let g_in = self.stem.backward(&g, &cache.input, &mut grad.stem)?;
        Ok((grad, g_in))
    }

    /// Forward on any spatial size: reflection-pads to a multiple of `d`,
    /// then crops the output back.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (padded, record) = pad_to_multiple(x, self.config.downsample)?;
        record.apply(&self.forward(&padded)?)
    }
}
