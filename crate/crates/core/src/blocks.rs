//! Network building blocks: dilated/causal/1x1 convolutions, the correlation
//! layer (in both its stacking-loop and closed forms), the zero-padded
//! cross-asset convolution used as a non-invariant counterexample, pointwise
//! activations, dropout, softmax over assets, and asset permutations.
//!
//! Everything here is a pure function of (spec, input, rng state); specs are
//! immutable after construction. The trainable network assembles the same
//! kernels on a gradient tape (see `policy`).

use crate::error::{CoreError, Result};
use crate::kernels;
use crate::rng::Rng;
use crate::tensor::Tensor3;

/// Train/eval switch for stochastic blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// Per-asset time convolution. The kernel never spans assets (height 1), so
/// the block treats every asset identically.
#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub kernel_time: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
    /// out_channels x in_channels x kernel_time
    pub weights: Tensor3,
    /// 1 x 1 x out_channels
    pub bias: Tensor3,
}

impl ConvSpec {
    pub fn new(
        kernel_time: usize,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
    ) -> Self {
        ConvSpec {
            kernel_time,
            in_channels,
            out_channels,
            dilation,
            weights: Tensor3::zeros(out_channels, in_channels, kernel_time),
            bias: Tensor3::zeros(1, 1, out_channels),
        }
    }

    /// Kaiming-uniform fan-in initialization, zero bias.
    pub fn random(
        kernel_time: usize,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut spec = ConvSpec::new(kernel_time, in_channels, out_channels, dilation);
        let bound = kaiming_bound(in_channels * kernel_time);
        spec.weights =
            Tensor3::random_uniform(out_channels, in_channels, kernel_time, -bound, bound, rng);
        spec
    }

    /// 1x1 channel-mixing convolution.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec::new(1, in_channels, out_channels, 1)
    }

    fn check_input(&self, op: &'static str, x: &Tensor3) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(CoreError::shape(
                op,
                format!("{} input channels", self.in_channels),
                format!("{}", x.channels()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Dilated causal convolution with left zero padding; output time length
/// equals input time length and out[i, j] depends only on x[i, j' <= j].
pub fn dilated_causal_conv(spec: &ConvSpec, x: &Tensor3) -> Result<Tensor3> {
    spec.check_input("dilated_causal_conv", x)?;
    Ok(kernels::conv_dilated_forward(
        x,
        &spec.weights,
        &spec.bias,
        spec.dilation,
    ))
}

/// Unpadded causal convolution evaluated at the final position only, closing
/// the receptive field over the whole remaining span: m x h x d -> m x 1 x d'.
pub fn causal_conv_fullspan(spec: &ConvSpec, x: &Tensor3) -> Result<Tensor3> {
    spec.check_input("causal_conv_fullspan", x)?;
    if spec.kernel_time > x.time_len() {
        return Err(CoreError::shape(
            "causal_conv_fullspan",
            format!("kernel <= input length {}", x.time_len()),
            format!("{}", spec.kernel_time),
        ));
    }
    Ok(kernels::conv_suffix_forward(
        x,
        &spec.weights,
        &spec.bias,
        1,
    ))
}

// ---------------------------------------------------------------------------
// Correlation layer
// ---------------------------------------------------------------------------

/// Correlation layer parameters: an (m+1) x 1 kernel over the asset stack.
/// Row 0 weighs the asset under consideration; rows 1..=m weigh the assets in
/// their stacked order. One bias, one output channel.
#[derive(Debug, Clone)]
pub struct CorrSpec {
    /// (m+1) x 1 x d
    pub channel_weights: Tensor3,
    pub bias: f64,
}

impl CorrSpec {
    pub fn new(assets: usize, channels: usize) -> Self {
        CorrSpec {
            channel_weights: Tensor3::zeros(assets + 1, 1, channels),
            bias: 0.0,
        }
    }

    pub fn random(assets: usize, channels: usize, rng: &mut Rng) -> Self {
        let bound = kaiming_bound((assets + 1) * channels);
        CorrSpec {
            channel_weights: Tensor3::random_uniform(assets + 1, 1, channels, -bound, bound, rng),
            bias: 0.0,
        }
    }

    pub fn assets(&self) -> usize {
        self.channel_weights.assets() - 1
    }

    pub fn channels(&self) -> usize {
        self.channel_weights.channels()
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.assets() != self.assets() || x.channels() != self.channels() {
            return Err(CoreError::shape(
                "corr_layer",
                format!("{}x?x{}", self.assets(), self.channels()),
                x.shape_str(),
            ));
        }
        Ok(())
    }
}

/// Correlation layer, closed form: for every asset i,
/// out[i, t] = w0 . x[i, t, :] + sum_j wj . x[j, t, :] + b.
pub fn corr_layer(spec: &CorrSpec, x: &Tensor3) -> Result<Tensor3> {
    spec.check_input(x)?;
    Ok(kernels::corr_forward(x, &spec.channel_weights, spec.bias))
}

/// Correlation layer via the stacking procedure: for each asset i, place row i
/// on top of the full tensor and run the shared (m+1) x 1 convolution, then
/// concatenate the m results. Must agree bitwise with [`corr_layer`].
pub fn corr_layer_stacked(spec: &CorrSpec, x: &Tensor3) -> Result<Tensor3> {
    spec.check_input(x)?;
    let (m, h, d) = x.shape();
    let mut out = Tensor3::zeros(m, h, 1);
    for i in 0..m {
        // O_mdl = Concat_1(x[i,:,:], x): (m+1) x h x d
        let mut stacked = Tensor3::zeros(m + 1, h, d);
        for t in 0..h {
            stacked.cell_mut(0, t).copy_from_slice(x.cell(i, t));
        }
        for j in 0..m {
            for t in 0..h {
                stacked.cell_mut(1 + j, t).copy_from_slice(x.cell(j, t));
            }
        }
        // CC: (m+1) x h x d -> 1 x h x 1 with the shared kernel
        for t in 0..h {
            let v = kernels::corr_stack_accumulate(
                stacked.cell(0, t),
                x,
                t,
                &spec.channel_weights,
                spec.bias,
            );
            out.set(i, t, 0, v);
        }
    }
    Ok(out)
}

/// Reindexed parameters that make the correlation layer commute with an asset
/// permutation: w0' = w0, w'_j = w_{pi(j)}, b' = b. Conjugating the layer by
/// the permutation with these parameters reproduces the original map.
pub fn corr_weight_witness(spec: &CorrSpec, sigma: &AssetPermutation) -> Result<CorrSpec> {
    let m = spec.assets();
    if sigma.len() != m {
        return Err(CoreError::shape(
            "corr_weight_witness",
            format!("permutation of {m}"),
            format!("{}", sigma.len()),
        ));
    }
    let d = spec.channels();
    let mut w = Tensor3::zeros(m + 1, 1, d);
    w.cell_mut(0, 0)
        .copy_from_slice(spec.channel_weights.cell(0, 0));
    for j in 0..m {
        w.cell_mut(1 + j, 0)
            .copy_from_slice(spec.channel_weights.cell(1 + sigma.apply(j), 0));
    }
    Ok(CorrSpec {
        channel_weights: w,
        bias: spec.bias,
    })
}

// ---------------------------------------------------------------------------
// Zero-padded cross-asset convolution (the non-invariant counterexample)
// ---------------------------------------------------------------------------

/// Cross-asset convolution that slides an m-row kernel over the asset axis
/// with zero padding, as used by the cost-sensitive benchmark network. Unlike
/// the correlation layer this couples assets through their positions in the
/// ordering, which breaks asset permutation invariance.
#[derive(Debug, Clone)]
pub struct ZhangCorrSpec {
    /// m x d_out x d_in
    pub kernel: Tensor3,
    pub bias: f64,
}

impl ZhangCorrSpec {
    pub fn new(assets: usize, out_channels: usize, in_channels: usize) -> Self {
        ZhangCorrSpec {
            kernel: Tensor3::zeros(assets, out_channels, in_channels),
            bias: 0.0,
        }
    }

    pub fn random(assets: usize, out_channels: usize, in_channels: usize, rng: &mut Rng) -> Self {
        let bound = kaiming_bound(assets * in_channels);
        ZhangCorrSpec {
            kernel: Tensor3::random_uniform(assets, out_channels, in_channels, -bound, bound, rng),
            bias: 0.0,
        }
    }

    pub fn assets(&self) -> usize {
        self.kernel.assets()
    }
}

/// Apply the zero-padded cross-asset convolution. Odd asset counts only: the
/// kernel is centered via the (m+1)/2 offset, which has no exact counterpart
/// for even m.
pub fn zhang_corr_layer(spec: &ZhangCorrSpec, x: &Tensor3) -> Result<Tensor3> {
    let m = x.assets();
    if m.is_multiple_of(2) {
        return Err(CoreError::InvalidArgument(format!(
            "zhang_corr_layer requires an odd asset count, got {m}"
        )));
    }
    if spec.assets() != m || spec.kernel.channels() != x.channels() {
        return Err(CoreError::shape(
            "zhang_corr_layer",
            format!("kernel {m}x?x{}", x.channels()),
            spec.kernel.shape_str(),
        ));
    }
    Ok(kernels::zhang_forward(x, &spec.kernel, spec.bias))
}

// ---------------------------------------------------------------------------
// Pointwise blocks
// ---------------------------------------------------------------------------

/// Elementwise max(0, x).
pub fn relu(x: &Tensor3) -> Tensor3 {
    let (m, h, d) = x.shape();
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    Tensor3::from_vec(m, h, d, data).expect("same shape")
}

/// Inverted dropout. Eval phase is a pure feed-through; train phase zeroes
/// entries with probability `rate` and scales survivors by 1/(1-rate).
pub fn dropout(x: &Tensor3, rate: f64, phase: Phase, rng: &mut Rng) -> Tensor3 {
    match phase {
        Phase::Eval => x.clone(),
        Phase::Train => {
            let scale = 1.0 / (1.0 - rate);
            let (m, h, d) = x.shape();
            let data = x
                .data()
                .iter()
                .map(|v| if rng.uniform() < rate { 0.0 } else { v * scale })
                .collect();
            Tensor3::from_vec(m, h, d, data).expect("same shape")
        }
    }
}

/// Softmax over the asset axis, one normalization per time index. Requires a
/// single channel.
pub fn softmax_over_assets(x: &Tensor3) -> Result<Tensor3> {
    if x.channels() != 1 {
        return Err(CoreError::shape(
            "softmax_over_assets",
            "m x h x 1",
            x.shape_str(),
        ));
    }
    Ok(kernels::softmax_assets_forward(x))
}

/// Stack `b`'s channels after `a`'s; time lengths must match.
pub fn concat_channels(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    if a.assets() != b.assets() || a.time_len() != b.time_len() {
        return Err(CoreError::shape(
            "concat_channels",
            a.shape_str(),
            b.shape_str(),
        ));
    }
    Ok(kernels::concat_channels_forward(a, b))
}

// ---------------------------------------------------------------------------
// Asset permutations
// ---------------------------------------------------------------------------

/// Bijection over asset indices with its inverse cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetPermutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl AssetPermutation {
    pub fn identity(m: usize) -> Self {
        AssetPermutation {
            forward: (0..m).collect(),
            inverse: (0..m).collect(),
        }
    }

    /// Transposition of two indices.
    pub fn swap(m: usize, a: usize, b: usize) -> Self {
        let mut forward: Vec<usize> = (0..m).collect();
        forward.swap(a, b);
        AssetPermutation::from_indices(forward).expect("swap is a bijection")
    }

    pub fn from_indices(forward: Vec<usize>) -> Result<Self> {
        let m = forward.len();
        let mut inverse = vec![usize::MAX; m];
        for (i, &p) in forward.iter().enumerate() {
            if p >= m || inverse[p] != usize::MAX {
                return Err(CoreError::InvalidArgument(format!(
                    "index array {forward:?} is not a bijection on 0..{m}"
                )));
            }
            inverse[p] = i;
        }
        Ok(AssetPermutation { forward, inverse })
    }

    pub fn random(m: usize, rng: &mut Rng) -> Self {
        AssetPermutation::from_indices(rng.permutation(m)).expect("shuffle is a bijection")
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// pi(i): row i of the permuted tensor reads row pi(i) of the original.
    pub fn apply(&self, i: usize) -> usize {
        self.forward[i]
    }

    pub fn apply_inverse(&self, i: usize) -> usize {
        self.inverse[i]
    }

    pub fn indices(&self) -> &[usize] {
        &self.forward
    }

    /// `self` after `first`: (self o first)(T) = self(first(T)).
    pub fn compose_after(&self, first: &AssetPermutation) -> Self {
        debug_assert_eq!(self.len(), first.len());
        let forward = (0..self.len())
            .map(|i| first.forward[self.forward[i]])
            .collect();
        AssetPermutation::from_indices(forward).expect("composition of bijections")
    }

    /// Permute a plain slice of per-asset values.
    pub fn permute_slice(&self, v: &[f64]) -> Vec<f64> {
        self.forward.iter().map(|&p| v[p]).collect()
    }

    pub fn unpermute_slice(&self, v: &[f64]) -> Vec<f64> {
        self.inverse.iter().map(|&p| v[p]).collect()
    }
}

/// Row relabeling: out[i, :, :] = x[pi(i), :, :].
pub fn permute_assets(sigma: &AssetPermutation, x: &Tensor3) -> Result<Tensor3> {
    if sigma.len() != x.assets() {
        return Err(CoreError::shape(
            "permute_assets",
            format!("{} assets", sigma.len()),
            x.shape_str(),
        ));
    }
    let (m, h, d) = x.shape();
    let mut out = Tensor3::zeros(m, h, d);
    for i in 0..m {
        let src = sigma.apply(i);
        for j in 0..h {
            out.cell_mut(i, j).copy_from_slice(x.cell(src, j));
        }
    }
    Ok(out)
}

/// Inverse relabeling: out[i, :, :] = x[pi^{-1}(i), :, :].
pub fn unpermute_assets(sigma: &AssetPermutation, x: &Tensor3) -> Result<Tensor3> {
    if sigma.len() != x.assets() {
        return Err(CoreError::shape(
            "unpermute_assets",
            format!("{} assets", sigma.len()),
            x.shape_str(),
        ));
    }
    let (m, h, d) = x.shape();
    let mut out = Tensor3::zeros(m, h, d);
    for i in 0..m {
        let src = sigma.apply_inverse(i);
        for j in 0..h {
            out.cell_mut(i, j).copy_from_slice(x.cell(src, j));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    fn random_tensor(m: usize, h: usize, d: usize, seed: u64) -> Tensor3 {
        let mut rng = seed_rng(seed);
        Tensor3::random_normal(m, h, d, 1.0, &mut rng)
    }

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let mut spec = ConvSpec::new(1, 2, 2, 1);
        spec.weights.set(0, 0, 0, 1.0);
        spec.weights.set(1, 1, 0, 1.0);
        let x = random_tensor(3, 5, 2, 1);
        let y = dilated_causal_conv(&spec, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn impulse_response_respects_dilation() {
        // kernel_time 3, dilation 2: an impulse at j0 echoes at j0, j0+2, j0+4
        let mut spec = ConvSpec::new(3, 1, 1, 2);
        for tau in 0..3 {
            spec.weights.set(0, 0, tau, 1.0);
        }
        let mut x = Tensor3::zeros(1, 12, 1);
        let j0 = 3;
        x.set(0, j0, 0, 1.0);
        let y = dilated_causal_conv(&spec, &x).unwrap();
        for j in 0..12 {
            let expect = if j == j0 || j == j0 + 2 || j == j0 + 4 {
                1.0
            } else {
                0.0
            };
            assert_eq!(y.get(0, j, 0), expect, "time {j}");
        }
    }

    #[test]
    fn dilated_conv_matches_direct_oracle() {
        let mut rng = seed_rng(2);
        let spec = ConvSpec::random(3, 2, 4, 2, &mut rng);
        let x = random_tensor(3, 9, 2, 3);
        let y = dilated_causal_conv(&spec, &x).unwrap();
        // direct triple loop with explicit zero padding
        for i in 0..3 {
            for j in 0..9 {
                for co in 0..4 {
                    let mut acc = 0.0;
                    for tau in 0..3 {
                        let off = (3 - 1 - tau) * 2;
                        for ci in 0..2 {
                            let xv = if off > j { 0.0 } else { x.get(i, j - off, ci) };
                            acc += spec.weights.get(co, ci, tau) * xv;
                        }
                    }
                    let diff = (y.get(i, j, co) - acc).abs();
                    assert!(diff < 1e-12, "({i},{j},{co}): {diff}");
                }
            }
        }
    }

    #[test]
    fn block_one_shapes_match_structure_table() {
        let mut rng = seed_rng(4);
        let spec = ConvSpec::random(3, 1, 8, 1, &mut rng);
        let x = random_tensor(5, 32, 1, 5);
        let y = dilated_causal_conv(&spec, &x).unwrap();
        assert_eq!(y.shape(), (5, 32, 8));
    }

    #[test]
    fn fullspan_collapses_time_to_one() {
        let mut rng = seed_rng(6);
        let spec = ConvSpec::random(4, 17, 16, 1, &mut rng); // h=32 -> kernel 4
        let x = random_tensor(5, 32, 17, 7);
        let y = causal_conv_fullspan(&spec, &x).unwrap();
        assert_eq!(y.shape(), (5, 1, 16));
    }

    #[test]
    fn fullspan_degenerate_kernel_one() {
        let mut rng = seed_rng(8);
        let spec = ConvSpec::random(1, 3, 2, 1, &mut rng); // h=29 -> kernel 1
        let x = random_tensor(2, 29, 3, 9);
        let y = causal_conv_fullspan(&spec, &x).unwrap();
        assert_eq!(y.shape(), (2, 1, 2));
        // reads only the final column
        for co in 0..2 {
            let mut acc = 0.0;
            for ci in 0..3 {
                acc += spec.weights.get(co, ci, 0) * x.get(0, 28, ci);
            }
            assert!((y.get(0, 0, co) - acc).abs() < 1e-15);
        }
    }

    #[test]
    fn fullspan_all_ones_sums_kernel_span() {
        let mut spec = ConvSpec::new(4, 1, 1, 1);
        for tau in 0..4 {
            spec.weights.set(0, 0, tau, 1.0);
        }
        let x = Tensor3::ones(1, 32, 1);
        let y = causal_conv_fullspan(&spec, &x).unwrap();
        assert_eq!(y.get(0, 0, 0), 4.0);
    }

    #[test]
    fn fullspan_kernel_longer_than_input_errors() {
        let spec = ConvSpec::new(10, 1, 1, 1);
        let x = Tensor3::ones(1, 5, 1);
        assert!(causal_conv_fullspan(&spec, &x).is_err());
    }

    #[test]
    fn corr_identity_variant() {
        // d=1: w0=1, w_j=0, b=0 reproduces the input
        let mut spec = CorrSpec::new(4, 1);
        spec.channel_weights.set(0, 0, 0, 1.0);
        let x = random_tensor(4, 3, 1, 10);
        let y = corr_layer(&spec, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn corr_shapes_five_assets() {
        let mut rng = seed_rng(11);
        let spec = CorrSpec::random(5, 1, &mut rng);
        assert_eq!(spec.channel_weights.shape(), (6, 1, 1)); // (m+1) x 1 kernel
        let x = random_tensor(5, 1, 1, 12);
        let y = corr_layer(&spec, &x).unwrap();
        assert_eq!(y.shape(), (5, 1, 1));
    }

    #[test]
    fn corr_hand_example() {
        // x=(1,2,3), w0=1, w=(0.1,0.2,0.3), b=0.5:
        // out_i = x_i + (0.1*1 + 0.2*2 + 0.3*3) + 0.5 = x_i + 1.9
        let mut spec = CorrSpec::new(3, 1);
        spec.channel_weights.set(0, 0, 0, 1.0);
        spec.channel_weights.set(1, 0, 0, 0.1);
        spec.channel_weights.set(2, 0, 0, 0.2);
        spec.channel_weights.set(3, 0, 0, 0.3);
        spec.bias = 0.5;
        let x = Tensor3::from_assets(&[1.0, 2.0, 3.0]);
        let y = corr_layer(&spec, &x).unwrap();
        let expect = [2.9, 3.9, 4.9];
        for i in 0..3 {
            assert!((y.get(i, 0, 0) - expect[i]).abs() < 1e-12);
        }
        // the stacking loop agrees bitwise
        let y2 = corr_layer_stacked(&spec, &x).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn corr_dual_implementations_agree_exactly() {
        let mut rng = seed_rng(13);
        for _ in 0..50 {
            let m = 2 + rng.below(7);
            let h = 1 + rng.below(6);
            let d = 1 + rng.below(4);
            let spec = {
                let mut s = CorrSpec::random(m, d, &mut rng);
                s.bias = rng.normal();
                s
            };
            let x = Tensor3::random_normal(m, h, d, 1.0, &mut rng);
            let a = corr_layer(&spec, &x).unwrap();
            let b = corr_layer_stacked(&spec, &x).unwrap();
            assert!(
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "loop and closed form must agree bitwise"
            );
        }
    }

    #[test]
    fn corr_witness_identity_permutation() {
        let mut rng = seed_rng(14);
        let spec = CorrSpec::random(4, 2, &mut rng);
        let sigma = AssetPermutation::identity(4);
        let w = corr_weight_witness(&spec, &sigma).unwrap();
        assert_eq!(w.channel_weights, spec.channel_weights);
    }

    #[test]
    fn corr_witness_swap_swaps_rows() {
        let mut rng = seed_rng(15);
        let spec = CorrSpec::random(3, 1, &mut rng);
        let sigma = AssetPermutation::swap(3, 0, 1);
        let w = corr_weight_witness(&spec, &sigma).unwrap();
        assert_eq!(
            w.channel_weights.cell(1, 0),
            spec.channel_weights.cell(2, 0)
        );
        assert_eq!(
            w.channel_weights.cell(2, 0),
            spec.channel_weights.cell(1, 0)
        );
        assert_eq!(
            w.channel_weights.cell(3, 0),
            spec.channel_weights.cell(3, 0)
        );
        assert_eq!(
            w.channel_weights.cell(0, 0),
            spec.channel_weights.cell(0, 0)
        );
    }

    #[test]
    fn corr_witness_conjugation_identity() {
        let mut rng = seed_rng(16);
        for _ in 0..50 {
            let m = 2 + rng.below(7);
            let d = 1 + rng.below(4);
            let h = 1 + rng.below(5);
            let mut spec = CorrSpec::random(m, d, &mut rng);
            spec.bias = rng.normal();
            let sigma = AssetPermutation::random(m, &mut rng);
            let x = Tensor3::random_normal(m, h, d, 1.0, &mut rng);

            let direct = corr_layer(&spec, &x).unwrap();
            let witness = corr_weight_witness(&spec, &sigma).unwrap();
            let permuted = permute_assets(&sigma, &x).unwrap();
            let through =
                unpermute_assets(&sigma, &corr_layer(&witness, &permuted).unwrap()).unwrap();
            assert!(
                direct.max_abs_diff(&through) <= 1e-12,
                "witness identity violated: {}",
                direct.max_abs_diff(&through)
            );
        }
    }

    #[test]
    fn zhang_impulse_case_analysis() {
        // m=5, h=d=1, x=e1: out = (w3, w2, w1, 0, 0) in 1-indexed tap terms
        let mut spec = ZhangCorrSpec::new(5, 1, 1);
        for l in 0..5 {
            spec.kernel.set(l, 0, 0, (l + 1) as f64); // w_{l+1} = l+1
        }
        let mut x = Tensor3::zeros(5, 1, 1);
        x.set(0, 0, 0, 1.0);
        let y = zhang_corr_layer(&spec, &x).unwrap();
        let expect = [3.0, 2.0, 1.0, 0.0, 0.0];
        for i in 0..5 {
            assert_eq!(y.get(i, 0, 0), expect[i], "asset {i}");
        }
    }

    #[test]
    fn zhang_zero_input_gives_bias() {
        let mut spec = ZhangCorrSpec::new(5, 1, 1);
        spec.bias = 0.7;
        let x = Tensor3::zeros(5, 2, 1);
        let y = zhang_corr_layer(&spec, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn zhang_matches_double_loop_oracle() {
        let mut rng = seed_rng(18);
        let spec = ZhangCorrSpec::random(5, 2, 3, &mut rng);
        let x = Tensor3::random_normal(5, 4, 3, 1.0, &mut rng);
        let y = zhang_corr_layer(&spec, &x).unwrap();
        for i in 0..5i64 {
            for t in 0..4 {
                for ko in 0..2 {
                    let mut acc = spec.bias;
                    for l in 0..5i64 {
                        let src = i + l + 1 - 3;
                        if !(0..5).contains(&src) {
                            continue;
                        }
                        for ki in 0..3 {
                            acc += spec.kernel.get(l as usize, ko, ki) * x.get(src as usize, t, ki);
                        }
                    }
                    let diff = (y.get(i as usize, t, ko) - acc).abs();
                    assert!(diff < 1e-12, "({i},{t},{ko}): {diff}");
                }
            }
        }
    }

    #[test]
    fn zhang_rejects_even_asset_count() {
        let spec = ZhangCorrSpec::new(4, 1, 1);
        let x = Tensor3::zeros(4, 1, 1);
        assert!(zhang_corr_layer(&spec, &x).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor3::from_assets(&[-1.0, 0.0, 2.0]);
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_on_constant_column() {
        let x = Tensor3::ones(4, 2, 1);
        let y = softmax_over_assets(&x).unwrap();
        for i in 0..4 {
            for t in 0..2 {
                assert!((y.get(i, t, 0) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form_two_assets() {
        let x = Tensor3::from_assets(&[0.0, 3.0f64.ln()]);
        let y = softmax_over_assets(&x).unwrap();
        assert!((y.get(0, 0, 0) - 0.25).abs() < 1e-12);
        assert!((y.get(1, 0, 0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_requires_single_channel() {
        let x = Tensor3::zeros(2, 2, 2);
        assert!(softmax_over_assets(&x).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = seed_rng(20);
        let x = random_tensor(3, 4, 2, 21);
        let y = dropout(&x, 0.5, Phase::Eval, &mut rng);
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_train_zeroes_and_rescales() {
        let mut rng = seed_rng(30);
        let x = Tensor3::ones(10, 10, 1);
        let y = dropout(&x, 0.5, Phase::Train, &mut rng);
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        assert!((20..80).contains(&kept), "kept {kept} of 100");
    }

    #[test]
    fn permutation_roundtrip_and_involution() {
        let mut rng = seed_rng(22);
        let x = random_tensor(5, 3, 2, 23);
        let id = AssetPermutation::identity(5);
        assert_eq!(permute_assets(&id, &x).unwrap(), x);

        let sw = AssetPermutation::swap(5, 1, 2);
        let twice = permute_assets(&sw, &permute_assets(&sw, &x).unwrap()).unwrap();
        assert_eq!(twice, x);

        let sigma = AssetPermutation::random(5, &mut rng);
        let round = unpermute_assets(&sigma, &permute_assets(&sigma, &x).unwrap()).unwrap();
        assert_eq!(round, x);
    }

    #[test]
    fn permutation_matches_index_loop() {
        let mut rng = seed_rng(24);
        let sigma = AssetPermutation::random(5, &mut rng);
        let x = random_tensor(5, 3, 2, 25);
        let y = permute_assets(&sigma, &x).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                for k in 0..2 {
                    assert_eq!(y.get(i, j, k), x.get(sigma.apply(i), j, k));
                }
            }
        }
    }

    #[test]
    fn per_asset_blocks_commute_with_permutation_bitwise() {
        let mut rng = seed_rng(26);
        for _ in 0..20 {
            let m = 2 + rng.below(6);
            let h = 3 + rng.below(6);
            let d = 1 + rng.below(3);
            let x = Tensor3::random_normal(m, h, d, 1.0, &mut rng);
            let sigma = AssetPermutation::random(m, &mut rng);
            let conv = ConvSpec::random(2, d, 3, 1 + rng.below(2), &mut rng);

            let bitwise_eq = |a: &Tensor3, b: &Tensor3| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            };

            // dilated conv
            let direct = dilated_causal_conv(&conv, &x).unwrap();
            let perm = permute_assets(&sigma, &x).unwrap();
            let through =
                unpermute_assets(&sigma, &dilated_causal_conv(&conv, &perm).unwrap()).unwrap();
            assert!(bitwise_eq(&direct, &through), "dilated conv");

            // relu
            let direct = relu(&x);
            let through = unpermute_assets(&sigma, &relu(&perm)).unwrap();
            assert!(bitwise_eq(&direct, &through), "relu");

            // softmax (single channel input)
            let x1 = Tensor3::random_normal(m, h, 1, 1.0, &mut rng);
            let p1 = permute_assets(&sigma, &x1).unwrap();
            let direct = softmax_over_assets(&x1).unwrap();
            let through = unpermute_assets(&sigma, &softmax_over_assets(&p1).unwrap()).unwrap();
            assert!(bitwise_eq(&direct, &through), "softmax");

            // concat
            let other = Tensor3::random_normal(m, h, 2, 1.0, &mut rng);
            let op = permute_assets(&sigma, &other).unwrap();
            let direct = concat_channels(&x, &other).unwrap();
            let through = unpermute_assets(&sigma, &concat_channels(&perm, &op).unwrap()).unwrap();
            assert!(bitwise_eq(&direct, &through), "concat");
        }
    }

    #[test]
    fn causality_probe() {
        // perturbing column j0 never changes outputs before j0
        let mut rng = seed_rng(28);
        for _ in 0..10 {
            let spec = ConvSpec::random(3, 2, 3, 1 + rng.below(3), &mut rng);
            let x = Tensor3::random_normal(3, 10, 2, 1.0, &mut rng);
            let j0 = 2 + rng.below(7);
            let mut xp = x.clone();
            for i in 0..3 {
                for k in 0..2 {
                    xp.set(i, j0, k, xp.get(i, j0, k) + rng.normal());
                }
            }
            let y = dilated_causal_conv(&spec, &x).unwrap();
            let yp = dilated_causal_conv(&spec, &xp).unwrap();
            for i in 0..3 {
                for j in 0..j0 {
                    for c in 0..3 {
                        assert_eq!(y.get(i, j, c), yp.get(i, j, c), "leak at ({i},{j},{c})");
                    }
                }
            }
        }
    }
}
