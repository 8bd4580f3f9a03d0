//! Analytical model of the downsampled isotropic network family.
//!
//! A network is a `d x d` stride-`d` stem convolution, `B` simplified
//! NAF blocks at trunk width `w`, a 1x1 tail producing `c_out * d^2`
//! channels and a depth-to-space shuffle by `d`. Everything here is a pure
//! function of an [`ArchConfig`]: validity, parameter count, FLOPs at a
//! given image size, and the two entropy scores used to rank candidates.
//!
//! FLOPs are `2 * MACs + bias adds` over all convolutions. Normalization,
//! gating and residual arithmetic are not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ConvSpec;

/// Default number of raw input planes seen by the stem.
pub const DEFAULT_C_IN: usize = 4;
pub const DEFAULT_C_OUT: usize = 3;
pub const DEFAULT_EXPANSION: usize = 2;
pub const DEFAULT_DW_KERNEL: usize = 3;

/// The `(d, w, B)` decision variable plus the family's fixed constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Downsampling ratio (stem kernel and stride, shuffle factor).
    #[serde(rename = "d")]
    pub downsample: usize,
    /// Trunk width in channels.
    #[serde(rename = "w")]
    pub width: usize,
    /// Number of blocks.
    #[serde(rename = "B")]
    pub blocks: usize,
    pub c_in: usize,
    pub c_out: usize,
    #[serde(default = "default_expansion")]
    pub expansion: usize,
    #[serde(default = "default_dw_kernel")]
    pub dw_kernel: usize,
}

fn default_expansion() -> usize {
    DEFAULT_EXPANSION
}

fn default_dw_kernel() -> usize {
    DEFAULT_DW_KERNEL
}

impl ArchConfig {
    pub fn new(downsample: usize, width: usize, blocks: usize) -> Self {
        ArchConfig {
            downsample,
            width,
            blocks,
            c_in: DEFAULT_C_IN,
            c_out: DEFAULT_C_OUT,
            expansion: DEFAULT_EXPANSION,
            dw_kernel: DEFAULT_DW_KERNEL,
        }
    }

    pub fn with_channels(mut self, c_in: usize, c_out: usize) -> Self {
        self.c_in = c_in;
        self.c_out = c_out;
        self
    }

    /// `(d, w, B)`.
    pub fn triple(&self) -> (usize, usize, usize) {
        (self.downsample, self.width, self.blocks)
    }

    pub fn expanded(&self) -> usize {
        self.expansion * self.width
    }

    /// Channels after SimpleGate, `e * w / 2`.
    pub fn gated(&self) -> usize {
        self.expanded() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.downsample < 1 {
            return bad("downsampling ratio must be >= 1".into());
        }
        if self.width < 4 {
            return bad(format!("width {} below minimum 4", self.width));
        }
        if self.c_in < 1 || self.c_out < 1 {
            return bad("channel counts must be positive".into());
        }
        if self.expansion < 1 || !self.expanded().is_multiple_of(2) {
            return bad(format!(
                "expanded width e*w = {} must be positive and even",
                self.expanded()
            ));
        }
        if self.dw_kernel.is_multiple_of(2) {
            return bad(format!("depthwise kernel {} must be odd", self.dw_kernel));
        }
        Ok(())
    }

    /// Validity plus the search grid: `w` and `B` multiples of `grid`.
    pub fn validate_on_grid(&self, grid: usize) -> Result<()> {
        self.validate()?;
        if grid == 0 || !self.width.is_multiple_of(grid) || !self.blocks.is_multiple_of(grid) {
            return Err(Error::InvalidConfig(format!(
                "w = {} and B = {} must be multiples of {grid}",
                self.width, self.blocks
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(d={}, w={}, B={})", self.downsample, self.width, self.blocks)
    }
}

/// Convolutions of one block, in execution order: conv1, dconv, conv3,
/// conv4, conv5.
pub fn block_layers(config: &ArchConfig) -> [ConvSpec; 5] {
    let (w, ew, gw) = (config.width, config.expanded(), config.gated());
    [
        ConvSpec::pointwise(w, ew),
        ConvSpec::depthwise(ew, config.dw_kernel),
        ConvSpec::pointwise(gw, w),
        ConvSpec::pointwise(w, ew),
        ConvSpec::pointwise(gw, w),
    ]
}

pub fn stem_layer(config: &ArchConfig) -> ConvSpec {
    let d = config.downsample;
    ConvSpec {
        in_channels: config.c_in,
        out_channels: config.width,
        kernel: d,
        stride: d,
        groups: 1,
        padding: 0,
    }
}

pub fn tail_layer(config: &ArchConfig) -> ConvSpec {
    let d = config.downsample;
    ConvSpec::pointwise(config.width, config.c_out * d * d)
}

/// Lazily yields every convolution: stem, `5 * B` block layers, tail.
pub fn layer_specs(config: &ArchConfig) -> impl Iterator<Item = ConvSpec> {
    let block = block_layers(config);
    std::iter::once(stem_layer(config))
        .chain(std::iter::repeat_n(block, config.blocks).flatten())
        .chain(std::iter::once(tail_layer(config)))
}

pub fn conv_layer_list(config: &ArchConfig) -> Result<Vec<ConvSpec>> {
    config.validate()?;
    Ok(layer_specs(config).collect())
}

/// Cost breakdown at a given image resolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub height: usize,
    pub width: usize,
    /// Trunk pixel count, `ceil(h/d) * ceil(w/d)`.
    pub trunk_pixels: u64,
    pub stem_macs: u64,
    pub per_block_macs: u64,
    pub trunk_macs: u64,
    pub tail_macs: u64,
    pub bias_adds: u64,
    pub flops: u64,
}

impl FlopsReport {
    pub fn total_macs(&self) -> u64 {
        self.stem_macs + self.trunk_macs + self.tail_macs
    }

    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

pub fn trunk_extent(extent: usize, d: usize) -> usize {
    extent.div_ceil(d)
}

pub fn flops(config: &ArchConfig, height: usize, width: usize) -> Result<FlopsReport> {
    config.validate()?;
    let d = config.downsample;
    if height < d || width < d {
        return Err(Error::InvalidConfig(format!(
            "image {height}x{width} smaller than d = {d}"
        )));
    }
    let p = (trunk_extent(height, d) * trunk_extent(width, d)) as u64;
    let block = block_layers(config);
    let (stem, tail) = (stem_layer(config), tail_layer(config));
    let per_block_macs = p * block.iter().map(ConvSpec::macs_per_output_pixel).sum::<u64>();
    let per_block_bias = block.iter().map(|s| s.out_channels as u64).sum::<u64>();
    let stem_macs = p * stem.macs_per_output_pixel();
    let tail_macs = p * tail.macs_per_output_pixel();
    let trunk_macs = config.blocks as u64 * per_block_macs;
    let bias_adds = p * (stem.out_channels as u64 + config.blocks as u64 * per_block_bias + tail.out_channels as u64);
    Ok(FlopsReport {
        height,
        width,
        trunk_pixels: p,
        stem_macs,
        per_block_macs,
        trunk_macs,
        tail_macs,
        bias_adds,
        flops: 2 * (stem_macs + trunk_macs + tail_macs) + bias_adds,
    })
}

/// Trainable parameters of a built network without channel attention.
pub fn params(config: &ArchConfig) -> Result<u64> {
    param_count(config, false)
}

/// Trainable parameters, optionally including the attention ablation's
/// 1x1 convolution on the gated channels.
pub fn param_count(config: &ArchConfig, with_sca: bool) -> Result<u64> {
    config.validate()?;
    let block = block_layers(config);
    let w = config.width as u64;
    let gw = config.gated() as u64;
    // two LayerNorms (gamma, beta) and two residual scales
    let mut per_block = block.iter().map(ConvSpec::param_count).sum::<u64>() + 4 * w + 2;
    if with_sca {
        per_block += gw * gw + gw;
    }
    Ok(stem_layer(config).param_count() + config.blocks as u64 * per_block + tail_layer(config).param_count())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyKind {
    /// Resolution-invariant score with channel density `w / d^2`.
    Modified,
    /// Score weighted by the final feature-map size `r^2 * w`.
    Deepmad,
}

/// Entropy score decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub kind: EntropyKind,
    /// `ln(c_i * k_i^2 / g_i)` for each convolution in execution order.
    pub layer_terms: Vec<f64>,
    pub sum_term: f64,
    pub density_term: f64,
    pub entropy: f64,
    /// Trunk resolution `(r_h, r_w)` for the resolution-dependent score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<(usize, usize)>,
}

impl EntropyReport {
    pub fn summary(&self) -> EntropySummary {
        EntropySummary {
            sum_term: self.sum_term,
            density_term: self.density_term,
            entropy: self.entropy,
        }
    }
}

/// [`EntropyReport`] without the per-layer list; what the solver keeps per
/// candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub sum_term: f64,
    pub density_term: f64,
    pub entropy: f64,
}

fn layer_term(spec: &ConvSpec) -> f64 {
    ((spec.in_channels * spec.kernel * spec.kernel) as f64 / spec.groups as f64).ln()
}

/// Sequential sum of the layer terms; the summation order is fixed so that
/// the report and the solver's summary agree bit for bit.
fn sum_term(config: &ArchConfig) -> f64 {
    layer_specs(config).map(|s| layer_term(&s)).fold(0.0, |a, t| a + t)
}

fn modified_density(config: &ArchConfig) -> f64 {
    let d = config.downsample;
    (config.width as f64 / (d * d) as f64).ln()
}

pub fn entropy_modified(config: &ArchConfig) -> Result<EntropyReport> {
    config.validate()?;
    let layer_terms: Vec<f64> = layer_specs(config).map(|s| layer_term(&s)).collect();
    let sum_term = layer_terms.iter().fold(0.0, |a, t| a + t);
    let density_term = modified_density(config);
    Ok(EntropyReport {
        kind: EntropyKind::Modified,
        layer_terms,
        sum_term,
        density_term,
        entropy: density_term * sum_term,
        resolution: None,
    })
}

/// Summary of [`entropy_modified`] without materializing the layer list.
pub fn entropy_modified_summary(config: &ArchConfig) -> Result<EntropySummary> {
    config.validate()?;
    let sum_term = sum_term(config);
    let density_term = modified_density(config);
    Ok(EntropySummary {
        sum_term,
        density_term,
        entropy: density_term * sum_term,
    })
}

pub fn entropy_deepmad(config: &ArchConfig, height: usize, width: usize) -> Result<EntropyReport> {
    config.validate()?;
    let d = config.downsample;
    if height == 0 || width == 0 {
        return Err(Error::InvalidConfig("image extents must be positive".into()));
    }
    let (rh, rw) = (trunk_extent(height, d), trunk_extent(width, d));
    let layer_terms: Vec<f64> = layer_specs(config).map(|s| layer_term(&s)).collect();
    let sum_term = layer_terms.iter().fold(0.0, |a, t| a + t);
    let density_term = ((rh * rw * config.width) as f64).ln();
    Ok(EntropyReport {
        kind: EntropyKind::Deepmad,
        layer_terms,
        sum_term,
        density_term,
        entropy: density_term * sum_term,
        resolution: Some((rh, rw)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Closed-form cost with e = 2, k = 3, written independently of the
    /// layer list.
    fn closed_form_flops(d: u64, w: u64, b: u64, c_in: u64, c_out: u64, h: u64, wi: u64) -> u64 {
        let p = h.div_ceil(d) * wi.div_ceil(d);
        let macs = c_in * d * d * w + b * (6 * w * w + 18 * w) + w * c_out * d * d;
        let bias = w + b * 8 * w + c_out * d * d;
        p * (2 * macs + bias)
    }

    #[test]
    fn layer_list_shapes() {
        let c = ArchConfig::new(2, 16, 0);
        let l = conv_layer_list(&c).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(
            l[0],
            ConvSpec {
                in_channels: 4,
                out_channels: 16,
                kernel: 2,
                stride: 2,
                groups: 1,
                padding: 0
            }
        );
        assert_eq!(l[1], ConvSpec::pointwise(16, 12));
        assert_eq!(conv_layer_list(&ArchConfig::new(4, 128, 152)).unwrap().len(), 762);
    }

    #[test]
    fn per_block_macs_symbolic() {
        for w in [4usize, 8, 36, 128] {
            let c = ArchConfig::new(1, w, 1);
            let per_pixel: u64 = block_layers(&c).iter().map(ConvSpec::macs_per_output_pixel).sum();
            assert_eq!(per_pixel, (6 * w * w + 18 * w) as u64);
        }
    }

    #[test]
    fn flops_fixtures() {
        let big = flops(&ArchConfig::new(4, 128, 152), 256, 256).unwrap();
        assert_eq!(big.flops, closed_form_flops(4, 128, 152, 4, 3, 256, 256));
        assert_eq!(big.flops, 126_031_167_488);
        assert_eq!(big.trunk_macs, 152 * big.per_block_macs);
        assert_eq!(big.flops, 2 * big.total_macs() + big.bias_adds);
        assert!(big.gflops() <= 128.0);

        let small = flops(&ArchConfig::new(3, 64, 64), 256, 256).unwrap();
        assert_eq!(small.trunk_pixels, 86 * 86);
        assert_eq!(small.flops, closed_form_flops(3, 64, 64, 4, 3, 256, 256));
        assert_eq!(small.flops, 24_659_055_372);
        assert!(small.gflops() <= 25.0);
    }

    #[test]
    fn flops_stem_and_tail_only() {
        for c_in in [1usize, 4, 5] {
            let r = flops(&ArchConfig::new(1, 4, 0).with_channels(c_in, 3), 256, 256).unwrap();
            let px = 256u64 * 256;
            assert_eq!(r.flops, 2 * (px * 4 * c_in as u64 + px * 4 * 3) + px * (4 + 3));
        }
    }

    #[test]
    fn params_closed_form_without_blocks() {
        let (d, w, c_in, c_out) = (3usize, 12usize, 5usize, 3usize);
        let c = ArchConfig::new(d, w, 0).with_channels(c_in, c_out);
        let expected = c_in * d * d * w + w + w * c_out * d * d + c_out * d * d;
        assert_eq!(params(&c).unwrap(), expected as u64);
    }

    #[test]
    fn invalid_configs() {
        assert!(ArchConfig::new(0, 16, 1).validate().is_err());
        assert!(ArchConfig::new(1, 2, 1).validate().is_err());
        let mut odd = ArchConfig::new(1, 5, 1);
        odd.expansion = 1;
        assert!(odd.validate().is_err());
        assert!(ArchConfig::new(2, 18, 4).validate_on_grid(4).is_err());
        assert!(flops(&ArchConfig::new(4, 8, 1), 3, 8).is_err());
    }

    #[test]
    fn entropy_fixture_large() {
        let c = ArchConfig::new(4, 128, 152);
        let r = entropy_modified(&c).unwrap();
        // stem ln(4 * 16), per block ln128 + ln9 + ln128 + ln128 + ln128, tail ln128
        let l128 = 128f64.ln();
        let oracle_sum = 64f64.ln() + 152.0 * (4.0 * l128 + 9f64.ln()) + l128;
        let oracle = (128.0f64 / 16.0).ln() * oracle_sum;
        assert!((r.entropy - oracle).abs() / oracle < 1e-12);
        assert!((r.entropy - 6847.649758752358).abs() < 1e-6, "{}", r.entropy);
        assert_eq!(r.layer_terms.len(), 762);
        assert_eq!(r.entropy, r.density_term * r.layer_terms.iter().fold(0.0, |a, t| a + t));
        assert_eq!(entropy_modified_summary(&c).unwrap(), r.summary());
    }

    #[test]
    fn single_unit_layer_gives_zero_sum() {
        // stem with c_in = 1, d = 1 contributes ln 1 = 0
        let c = ArchConfig::new(1, 8, 0).with_channels(1, 3);
        let r = entropy_modified(&c).unwrap();
        assert_eq!(r.layer_terms[0], 0.0);
    }

    #[test]
    fn doubling_d_only_changes_density() {
        let a = ArchConfig::new(1, 64, 8).with_channels(1, 3);
        let b = ArchConfig::new(2, 64, 8).with_channels(1, 3);
        let (ra, rb) = (entropy_modified(&a).unwrap(), entropy_modified(&b).unwrap());
        assert!((rb.density_term - ra.density_term + 2.0 * 2f64.ln()).abs() < 1e-12);
        // the stem kernel is d x d, so its own term grows by ln(d'^2 / d^2)
        assert!((rb.sum_term - ra.sum_term - 4f64.ln()).abs() < 1e-9);
        let stem_free = ra.sum_term - ra.layer_terms[0];
        let delta = rb.density_term * stem_free - ra.density_term * stem_free;
        assert!((delta + 2.0 * 2f64.ln() * stem_free).abs() < 1e-9);
    }

    #[test]
    fn deepmad_depends_on_resolution() {
        let c = ArchConfig::new(1, 48, 56);
        let a = entropy_deepmad(&c, 256, 256).unwrap();
        let b = entropy_deepmad(&c, 512, 512).unwrap();
        assert!(b.entropy > a.entropy);
        assert!((a.density_term - ((256.0f64 * 256.0 * 48.0).ln())).abs() < 1e-12);
        let m = entropy_modified(&c).unwrap();
        assert_eq!(a.sum_term, m.sum_term);
        assert!((a.entropy - 14_893.497_250_498_733).abs() < 1e-4, "{}", a.entropy);
    }

    proptest! {
        #[test]
        fn deepmad_minus_modified(d in 1usize..6, wq in 1usize..40, b in 0usize..12, h in 8usize..300, wi in 8usize..300) {
            let c = ArchConfig::new(d, wq * 4, b);
            let m = entropy_modified(&c).unwrap();
            let dm = entropy_deepmad(&c, h, wi).unwrap();
            let (rh, rw) = dm.resolution.unwrap();
            let expected = ((rh * rw * d * d) as f64).ln() * m.sum_term;
            prop_assert!((dm.entropy - m.entropy - expected).abs() <= 1e-9 * dm.entropy.abs().max(1.0));
        }

        #[test]
        fn modified_increasing_in_width(d in 1usize..5, wq in 2usize..60, b in 1usize..20) {
            let w = wq * 4;
            prop_assume!(w > d * d);
            let lo = entropy_modified(&ArchConfig::new(d, w, b)).unwrap().entropy;
            let hi = entropy_modified(&ArchConfig::new(d, w + 4, b)).unwrap().entropy;
            prop_assert!(hi > lo);
        }

        #[test]
        fn params_monotone(d in 1usize..5, wq in 1usize..30, b in 0usize..10) {
            let base = ArchConfig::new(d, wq * 4, b);
            let p = params(&base).unwrap();
            prop_assert!(params(&ArchConfig::new(d + 1, wq * 4, b)).unwrap() >= p);
            prop_assert!(params(&ArchConfig::new(d, wq * 4 + 4, b)).unwrap() >= p);
            prop_assert!(params(&ArchConfig::new(d, wq * 4, b + 1)).unwrap() >= p);
        }

        #[test]
        fn flops_report_invariants(d in 1usize..6, wq in 1usize..40, b in 0usize..30, h in 8usize..300, wi in 8usize..300) {
            let c = ArchConfig::new(d, wq * 4, b);
            let r = flops(&c, h, wi).unwrap();
            prop_assert_eq!(r.trunk_macs, b as u64 * r.per_block_macs);
            prop_assert_eq!(r.flops, 2 * r.total_macs() + r.bias_adds);
            prop_assert_eq!(r.flops, closed_form_flops(d as u64, (wq * 4) as u64, b as u64, 4, 3, h as u64, wi as u64));
        }
    }
}
