//! Dense NCHW tensor kernel: convolution, pixel (un)shuffle, channel
//! LayerNorm, SimpleGate and channel attention primitives, each with a
//! hand-written backward pass, plus a finite-difference gradient oracle.

mod conv;
pub mod gradcheck;
pub mod io;
mod ops;
mod tensor;

pub use conv::{conv2d, conv2d_backward, conv2d_counted, ConvGrads, ConvSpec, OpCounter};
pub use gradcheck::{finite_difference_grad, max_relative_error};
pub use ops::{
    channel_scale, channel_scale_backward, global_avg_pool, global_avg_pool_backward, layer_norm_channels,
    layer_norm_channels_backward, pixel_shuffle, pixel_unshuffle, simple_gate, simple_gate_backward, LayerNormGrads,
    LAYER_NORM_EPS,
};
pub use tensor::{Precision, Scalar, Shape, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conv_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0, groups in 1usize..3, stride in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = ConvSpec { in_channels: 4, out_channels: 6, kernel: 3, stride, groups, padding: 1 };
            let s = Shape::new(2, 4, 7, 6);
            let x = Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut rng);
            let y = Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::random_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            let combo = x.scale(alpha).unwrap().add_scaled(&y, beta).unwrap();
            let lhs = conv2d(&combo, &w, None, &spec).unwrap();
            let rhs = conv2d(&x, &w, None, &spec).unwrap().scale(alpha).unwrap()
                .add_scaled(&conv2d(&y, &w, None, &spec).unwrap(), beta).unwrap();
            let scale = lhs.max_abs().max(1.0);
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() / scale < 1e-10);
            }
        }
    }
}
