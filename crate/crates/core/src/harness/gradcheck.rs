//! Randomized finite-difference audit of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archmodel::ArchConfig;
use crate::error::Result;
use crate::metrics::psnr_loss_with_grad;
use crate::network::{LossKind, Network};
use crate::numerics::{
    channel_scale, channel_scale_backward, conv2d, conv2d_backward, finite_difference_grad, global_avg_pool,
    global_avg_pool_backward, layer_norm_channels, layer_norm_channels_backward, max_relative_error, pixel_shuffle,
    pixel_unshuffle, simple_gate, simple_gate_backward, ConvSpec, Shape, Tensor,
};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub shape: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub checks: Vec<GradCheck>,
}

impl GradCheckReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

struct Suite {
    rng: ChaCha8Rng,
    checks: Vec<GradCheck>,
}

impl Suite {
    fn tensor(&mut self, shape: Shape) -> Tensor<f64> {
        Tensor::random_uniform(shape, -1.0, 1.0, &mut self.rng)
    }

    fn record(&mut self, name: &str, shape: Shape, analytic: &[f64], numeric: &[f64], tolerance: f64) {
        let err = max_relative_error(analytic, numeric);
        self.checks.push(GradCheck {
            name: name.into(),
            shape: shape.to_string(),
            max_rel_error: err,
            tolerance,
            passed: err < tolerance,
        });
    }

    /// Checks `grad` against finite differences of `x -> <probe, op(x)>`.
    fn unary(
        &mut self,
        name: &str,
        x: &Tensor<f64>,
        op: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
        backward: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    ) -> Result<()> {
        let probe = self.tensor(op(x)?.shape());
        let analytic = backward(&probe)?;
        let numeric = finite_difference_grad(|t| op(t)?.dot(&probe), x, FD_STEP)?;
        self.record(name, x.shape(), analytic.data(), numeric.data(), GRADCHECK_TOLERANCE);
        Ok(())
    }

    fn conv(&mut self, spec: ConvSpec, shape: Shape) -> Result<()> {
        let x = self.tensor(shape);
        let w = self.tensor(spec.weight_shape());
        let b: Vec<f64> = (0..spec.out_channels)
            .map(|_| self.rng.random_range(-1.0..1.0))
            .collect();
        let probe = self.tensor(conv2d(&x, &w, Some(&b), &spec)?.shape());
        let g = conv2d_backward(&probe, &x, &w, &spec)?;
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| conv2d(x, w, Some(b), &spec)?.dot(&probe);
        let label = format!(
            "conv k{} s{} g{} p{}",
            spec.kernel, spec.stride, spec.groups, spec.padding
        );
        let gx = finite_difference_grad(|t| f(t, &w, &b), &x, FD_STEP)?;
        self.record(
            &format!("{label} input"),
            shape,
            g.input.data(),
            gx.data(),
            GRADCHECK_TOLERANCE,
        );
        let gw = finite_difference_grad(|t| f(&x, t, &b), &w, FD_STEP)?;
        self.record(
            &format!("{label} weight"),
            w.shape(),
            g.weight.data(),
            gw.data(),
            GRADCHECK_TOLERANCE,
        );
        let bt = Tensor::new(Shape::new(1, b.len(), 1, 1), b.clone())?;
        let gb = finite_difference_grad(|t| f(&x, &w, t.data()), &bt, FD_STEP)?;
        self.record(
            &format!("{label} bias"),
            bt.shape(),
            &g.bias,
            gb.data(),
            GRADCHECK_TOLERANCE,
        );
        Ok(())
    }

    fn layer_norm(&mut self, shape: Shape) -> Result<()> {
        let x = self.tensor(shape);
        let gamma: Vec<f64> = (0..shape.c).map(|_| self.rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..shape.c).map(|_| self.rng.random_range(-0.5..0.5)).collect();
        let eps = crate::numerics::LAYER_NORM_EPS;
        let probe = self.tensor(shape);
        let g = layer_norm_channels_backward(&probe, &x, &gamma, eps)?;
        let f = |x: &Tensor<f64>, gm: &[f64], bt: &[f64]| layer_norm_channels(x, gm, bt, eps)?.dot(&probe);
        let gx = finite_difference_grad(|t| f(t, &gamma, &beta), &x, FD_STEP)?;
        self.record(
            "layer_norm input",
            shape,
            g.input.data(),
            gx.data(),
            GRADCHECK_TOLERANCE,
        );
        let vs = Shape::new(1, shape.c, 1, 1);
        let gg = finite_difference_grad(|t| f(&x, t.data(), &beta), &Tensor::new(vs, gamma.clone())?, FD_STEP)?;
        self.record("layer_norm gamma", vs, &g.gamma, gg.data(), GRADCHECK_TOLERANCE);
        let gb = finite_difference_grad(|t| f(&x, &gamma, t.data()), &Tensor::new(vs, beta.clone())?, FD_STEP)?;
        self.record("layer_norm beta", vs, &g.beta, gb.data(), GRADCHECK_TOLERANCE);
        Ok(())
    }

    fn attention(&mut self, shape: Shape) -> Result<()> {
        let x = self.tensor(shape);
        let scale = self.tensor(Shape::new(shape.n, shape.c, 1, 1));
        self.unary("global_avg_pool", &x, global_avg_pool, |g| {
            global_avg_pool_backward(g, shape)
        })?;
        let probe = self.tensor(shape);
        let (gx, gs) = channel_scale_backward(&probe, &x, &scale)?;
        let nx = finite_difference_grad(|t| channel_scale(t, &scale)?.dot(&probe), &x, FD_STEP)?;
        self.record("channel_scale input", shape, gx.data(), nx.data(), GRADCHECK_TOLERANCE);
        let ns = finite_difference_grad(|t| channel_scale(&x, t)?.dot(&probe), &scale, FD_STEP)?;
        self.record(
            "channel_scale scale",
            scale.shape(),
            gs.data(),
            ns.data(),
            GRADCHECK_TOLERANCE,
        );
        Ok(())
    }

    fn network(&mut self, config: ArchConfig, with_sca: bool, seed: u64) -> Result<()> {
        let mut net = Network::<f64>::build(&config, seed, with_sca)?;
        for b in net.blocks_mut() {
            b.scale1[0] = self.rng.random_range(0.3..1.0);
            b.scale2[0] = self.rng.random_range(0.3..1.0);
        }
        let d = config.downsample;
        let x = Tensor::random_uniform(Shape::new(1, config.c_in, 2 * d, 2 * d), 0.0, 1.0, &mut self.rng);
        let target = Tensor::random_uniform(Shape::new(1, config.c_out, 2 * d, 2 * d), 0.0, 1.0, &mut self.rng);
        let (pred, cache) = net.forward_train(&x)?;
        let (_, g_pred) = psnr_loss_with_grad(&pred, &target)?;
        let (_, g_in) = net.backward(&g_pred, &cache)?;
        let numeric = finite_difference_grad(|t| LossKind::Psnr.eval(&net.forward(t)?, &target), &x, FD_STEP)?;
        let name = format!("network {config}{} input", if with_sca { " +sca" } else { "" });
        // composed through psnr loss: looser than the per-op tolerance
        self.record(&name, x.shape(), g_in.data(), numeric.data(), 1e-4);
        Ok(())
    }
}

/// Runs the full randomized suite. Per-op checks use [`GRADCHECK_TOLERANCE`].
pub fn gradcheck_suite(seed: u64) -> Result<GradCheckReport> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        checks: Vec::new(),
    };
    let convs = [
        (ConvSpec::pointwise(3, 5), Shape::new(2, 3, 4, 5)),
        (ConvSpec::depthwise(4, 3), Shape::new(1, 4, 5, 6)),
        (
            ConvSpec {
                in_channels: 2,
                out_channels: 4,
                kernel: 2,
                stride: 2,
                groups: 1,
                padding: 0,
            },
            Shape::new(2, 2, 6, 4),
        ),
        (
            ConvSpec {
                in_channels: 3,
                out_channels: 2,
                kernel: 3,
                stride: 3,
                groups: 1,
                padding: 0,
            },
            Shape::new(1, 3, 6, 9),
        ),
        (
            ConvSpec {
                in_channels: 4,
                out_channels: 6,
                kernel: 3,
                stride: 1,
                groups: 2,
                padding: 1,
            },
            Shape::new(1, 4, 4, 4),
        ),
        (
            ConvSpec {
                in_channels: 5,
                out_channels: 8,
                kernel: 4,
                stride: 4,
                groups: 1,
                padding: 0,
            },
            Shape::new(1, 5, 8, 4),
        ),
    ];
    for (spec, shape) in convs {
        s.conv(spec, shape)?;
    }
    for _ in 0..4 {
        let n = s.rng.random_range(1..3);
        let c = s.rng.random_range(1..6);
        let h = s.rng.random_range(1..5);
        let w = s.rng.random_range(1..5);
        s.layer_norm(Shape::new(n, c, h, w))?;
        let gate_in = s.tensor(Shape::new(n, 2 * c, h, w));
        s.unary("simple_gate", &gate_in, simple_gate, |g| {
            simple_gate_backward(g, &gate_in)
        })?;
        s.attention(Shape::new(n, c, h, w))?;
    }
    for r in [1, 2, 3] {
        let x = s.tensor(Shape::new(1, 3 * r * r, 2, 3));
        s.unary(
            &format!("pixel_shuffle r{r}"),
            &x,
            |t| pixel_shuffle(t, r),
            |g| pixel_unshuffle(g, r),
        )?;
        let y = s.tensor(Shape::new(1, 2, 2 * r, 3 * r));
        s.unary(
            &format!("pixel_unshuffle r{r}"),
            &y,
            |t| pixel_unshuffle(t, r),
            |g| pixel_shuffle(g, r),
        )?;
    }
    {
        let p = s.tensor(Shape::new(2, 3, 4, 4));
        let t = s.tensor(p.shape());
        let (_, g) = psnr_loss_with_grad(&p, &t)?;
        let numeric = finite_difference_grad(|x| LossKind::Psnr.eval(x, &t), &p, FD_STEP)?;
        s.record("psnr_loss", p.shape(), g.data(), numeric.data(), GRADCHECK_TOLERANCE);
    }
    s.network(ArchConfig::new(2, 4, 2), false, seed)?;
    s.network(ArchConfig::new(1, 4, 1).with_channels(5, 3), true, seed)?;
    s.network(ArchConfig::new(3, 4, 1).with_channels(1, 3), false, seed)?;
    Ok(GradCheckReport { seed, checks: s.checks })
}
