//! The portfolio policy network.
//!
//! The network maps an m x h x d window of market features plus the previous
//! drifted allocation to a point on the weight simplex. Three residual blocks
//! of dilated causal convolutions (dilations 1, 2, 4) interleaved with
//! correlation layers give a receptive field of 29; a final causal
//! convolution with kernel h-28 closes the field over the whole window, and a
//! 1x1 convolution over 17 channels (16 features + the previous weights)
//! feeds a softmax over assets.
//!
//! Structure of one residual block (input c_in channels, conv width c):
//!
//!   x -> dilated conv -> Relu -> dropout -> dilated conv -> Relu -> dropout
//!     -> [corr layer -> Relu] -> concat (c+1 channels)
//!   x -> 1x1 conv (c_in -> c+1) ----------------------------^ sum
//!
//! The multi-period forward pass ("augmented" network) runs the same trunk
//! once over an m x (h+T-1) x d trajectory and emits all T actions, feeding
//! each action's drifted weights into the next step's final stage. In eval
//! mode it is arithmetically identical to T separate single-window passes.

use crate::blocks::{corr_weight_witness, AssetPermutation, CorrSpec};
use crate::env::{drift_weights_var, PortfolioWeights};
use crate::error::{CoreError, Result};
use crate::params::{ParamStore, SlotId};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor3;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which cross-asset layer the residual blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrKind {
    /// The shared (m+1) x 1 stacking kernel; asset permutation invariant.
    WaveCorr,
    /// Zero-padded m-row kernel sliding over the asset axis; sensitive to
    /// asset ordering. Kept as a benchmark/counterexample variant.
    Zhang,
}

/// One residual block of the trunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveCorrBlockSpec {
    pub in_channels: usize,
    pub conv_channels: usize,
    pub dilation: usize,
}

impl WaveCorrBlockSpec {
    /// Channels leaving the block: conv output plus one correlation channel.
    pub fn out_channels(&self) -> usize {
        self.conv_channels + 1
    }
}

/// Architecture description; a pure function of (m, h, d) for the default
/// structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub assets: usize,
    pub lookback: usize,
    pub channels: usize,
    pub corr_kind: CorrKind,
    pub dropout_rate: f64,
    pub blocks: Vec<WaveCorrBlockSpec>,
    pub causal_channels: usize,
}

pub const CONV_KERNEL: usize = 3;

impl PolicySpec {
    /// The default structure: blocks of width 8/16/16 with dilations 1/2/4,
    /// a 16-channel receptive-field-closing causal convolution, and a 1x1
    /// softmax head over 17 channels.
    pub fn default_structure(assets: usize, lookback: usize, channels: usize) -> Result<Self> {
        Self::with_corr(assets, lookback, channels, CorrKind::WaveCorr)
    }

    pub fn with_corr(
        assets: usize,
        lookback: usize,
        channels: usize,
        corr_kind: CorrKind,
    ) -> Result<Self> {
        if assets < 2 {
            return Err(CoreError::InvalidArgument(format!(
                "need at least 2 assets, got {assets}"
            )));
        }
        if channels == 0 {
            return Err(CoreError::InvalidArgument(
                "need at least one channel".into(),
            ));
        }
        let spec = PolicySpec {
            assets,
            lookback,
            channels,
            corr_kind,
            dropout_rate: 0.5,
            blocks: vec![
                WaveCorrBlockSpec {
                    in_channels: channels,
                    conv_channels: 8,
                    dilation: 1,
                },
                WaveCorrBlockSpec {
                    in_channels: 9,
                    conv_channels: 16,
                    dilation: 2,
                },
                WaveCorrBlockSpec {
                    in_channels: 17,
                    conv_channels: 16,
                    dilation: 4,
                },
            ],
            causal_channels: 16,
        };
        let rf = spec.trunk_receptive_field();
        if lookback < rf {
            return Err(CoreError::InvalidArgument(format!(
                "lookback {lookback} shorter than the trunk receptive field {rf}"
            )));
        }
        Ok(spec)
    }

    /// Receptive field of the dilated stack: 1 + sum over convs of
    /// (kernel-1) * dilation.
    pub fn trunk_receptive_field(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .map(|b| 2 * (CONV_KERNEL - 1) * b.dilation)
            .sum::<usize>()
    }

    /// Kernel length of the receptive-field-closing causal convolution.
    pub fn causal_kernel(&self) -> usize {
        self.lookback - self.trunk_receptive_field() + 1
    }

    /// Channels entering the final 1x1 convolution: causal output plus the
    /// previous-weights channel.
    pub fn head_channels(&self) -> usize {
        self.causal_channels + 1
    }

    fn corr_weight_shape(&self, conv_channels: usize) -> (usize, usize, usize) {
        match self.corr_kind {
            CorrKind::WaveCorr => (self.assets + 1, 1, conv_channels),
            CorrKind::Zhang => (self.assets, 1, conv_channels),
        }
    }

    /// Closed-form scalar parameter count; asserted against the store.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        for b in &self.blocks {
            let (c_in, c) = (b.in_channels, b.conv_channels);
            n += c * c_in * CONV_KERNEL + c; // conv1
            n += c * c * CONV_KERNEL + c; // conv2
            let (wm, _, wd) = self.corr_weight_shape(c);
            n += wm * wd + 1; // corr kernel + scalar bias
            n += b.out_channels() * c_in + b.out_channels(); // residual 1x1
        }
        n += self.causal_channels
            * self.blocks.last().unwrap().out_channels()
            * self.causal_kernel()
            + self.causal_channels;
        n += self.head_channels() + 1; // 1x1 head, one output channel
        n
    }
}

#[derive(Debug, Clone)]
struct BlockSlots {
    conv1_w: SlotId,
    conv1_b: SlotId,
    conv2_w: SlotId,
    conv2_b: SlotId,
    corr_w: SlotId,
    corr_b: SlotId,
    residual_w: SlotId,
    residual_b: SlotId,
}

#[derive(Debug, Clone)]
struct PolicySlots {
    blocks: Vec<BlockSlots>,
    causal_w: SlotId,
    causal_b: SlotId,
    head_w: SlotId,
    head_b: SlotId,
}

/// Trainable policy: architecture, parameter store, and the seed the
/// parameters were drawn from.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    spec: PolicySpec,
    store: ParamStore,
    slots: PolicySlots,
    init_seed: u64,
}

/// Dropout behaviour of a forward pass.
pub enum ForwardMode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// A recorded multi-period forward pass. `actions[t]` and `prev_weights[t]`
/// are the nodes for a_t and the drifted allocation feeding step t.
pub struct AugmentedPass {
    pub tape: Tape,
    pub actions: Vec<Var>,
    pub prev_weights: Vec<Var>,
    lifted: Vec<Var>,
}

impl AugmentedPass {
    pub fn action_weights(&self, t: usize) -> Result<PortfolioWeights> {
        let v = self.tape.value(self.actions[t]);
        if !v.all_finite() {
            return Err(CoreError::NonFinite("policy action"));
        }
        PortfolioWeights::new(v.data().to_vec())
    }

    /// Tape node of a parameter slot.
    pub fn slot_var(&self, id: SlotId) -> Var {
        self.lifted[id.index()]
    }
}

impl PolicyParams {
    /// Draw a fresh parameter set: Kaiming-uniform fan-in weights, zero biases.
    pub fn init(spec: PolicySpec, seed: u64) -> Result<Self> {
        if spec.blocks.is_empty() {
            return Err(CoreError::InvalidArgument(
                "policy needs at least one residual block".into(),
            ));
        }
        if spec.lookback < spec.trunk_receptive_field() {
            return Err(CoreError::InvalidArgument(format!(
                "lookback {} shorter than the trunk receptive field {}",
                spec.lookback,
                spec.trunk_receptive_field()
            )));
        }
        let mut rng = Rng::new(seed ^ 0x9e3779b97f4a7c15);
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        for (bi, b) in spec.blocks.iter().enumerate() {
            let n = bi + 1;
            let (c_in, c) = (b.in_channels, b.conv_channels);
            let conv1_w = store.insert(
                format!("block{n}.conv1.weight"),
                kaiming(c, c_in, CONV_KERNEL, &mut rng),
            )?;
            let conv1_b = store.insert(format!("block{n}.conv1.bias"), Tensor3::zeros(1, 1, c))?;
            let conv2_w = store.insert(
                format!("block{n}.conv2.weight"),
                kaiming(c, c, CONV_KERNEL, &mut rng),
            )?;
            let conv2_b = store.insert(format!("block{n}.conv2.bias"), Tensor3::zeros(1, 1, c))?;
            // every kernel row feeds the single correlation output, so the
            // fan-in spans all rows
            let (wm, _, wd) = spec.corr_weight_shape(c);
            let corr_bound = crate::blocks::kaiming_bound(wm * wd);
            let corr_w = store.insert(
                format!("block{n}.corr.weight"),
                Tensor3::random_uniform(wm, 1, wd, -corr_bound, corr_bound, &mut rng),
            )?;
            let corr_b = store.insert(format!("block{n}.corr.bias"), Tensor3::scalar(0.0))?;
            let out = b.out_channels();
            let residual_w = store.insert(
                format!("block{n}.residual.weight"),
                kaiming(out, c_in, 1, &mut rng),
            )?;
            let residual_b =
                store.insert(format!("block{n}.residual.bias"), Tensor3::zeros(1, 1, out))?;
            blocks.push(BlockSlots {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
                corr_w,
                corr_b,
                residual_w,
                residual_b,
            });
        }
        let trunk_out = spec.blocks.last().unwrap().out_channels();
        let causal_w = store.insert(
            "causal.weight",
            kaiming(
                spec.causal_channels,
                trunk_out,
                spec.causal_kernel(),
                &mut rng,
            ),
        )?;
        let causal_b = store.insert("causal.bias", Tensor3::zeros(1, 1, spec.causal_channels))?;
        let head_w = store.insert("head.weight", kaiming(1, spec.head_channels(), 1, &mut rng))?;
        let head_b = store.insert("head.bias", Tensor3::zeros(1, 1, 1))?;
        let params = PolicyParams {
            spec,
            store,
            slots: PolicySlots {
                blocks,
                causal_w,
                causal_b,
                head_w,
                head_b,
            },
            init_seed: seed,
        };
        debug_assert_eq!(params.store.scalar_count(), params.spec.parameter_count());
        Ok(params)
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Single-window evaluation: one action from one m x h x d state.
    pub fn forward_policy(
        &self,
        state: &Tensor3,
        prev_weights: &PortfolioWeights,
        mode: ForwardMode,
    ) -> Result<PortfolioWeights> {
        let pass = self.forward_augmented_tape(state, None, prev_weights, 1, mode)?;
        pass.action_weights(0)
    }

    /// Multi-period evaluation returning the T actions as plain weights.
    pub fn forward_augmented(
        &self,
        features: &Tensor3,
        raw_relatives: Option<&Tensor3>,
        initial_prev: &PortfolioWeights,
        steps: usize,
        mode: ForwardMode,
    ) -> Result<Vec<PortfolioWeights>> {
        let pass =
            self.forward_augmented_tape(features, raw_relatives, initial_prev, steps, mode)?;
        (0..steps).map(|t| pass.action_weights(t)).collect()
    }

    /// Multi-period evaluation keeping the tape, for gradient work.
    ///
    /// `features` is m x (h+steps-1) x d. For steps > 1, `raw_relatives`
    /// (m x (h+steps-1) x 1, gross relatives) supplies the realized returns
    /// that drift each action into the next step's previous-weights channel.
    pub fn forward_augmented_tape(
        &self,
        features: &Tensor3,
        raw_relatives: Option<&Tensor3>,
        initial_prev: &PortfolioWeights,
        steps: usize,
        mut mode: ForwardMode,
    ) -> Result<AugmentedPass> {
        let spec = &self.spec;
        let (m, len, d) = features.shape();
        let expect_len = spec.lookback + steps - 1;
        if m != spec.assets || d != spec.channels || len != expect_len {
            return Err(CoreError::shape(
                "forward_augmented",
                format!("{}x{}x{}", spec.assets, expect_len, spec.channels),
                features.shape_str(),
            ));
        }
        if initial_prev.len() != m {
            return Err(CoreError::shape(
                "forward_augmented prev_weights",
                format!("{m}"),
                format!("{}", initial_prev.len()),
            ));
        }
        if steps > 1 {
            match raw_relatives {
                None => {
                    return Err(CoreError::InvalidArgument(
                        "multi-step forward needs realized relatives for the drift recursion"
                            .into(),
                    ))
                }
                Some(r) if r.assets() != m || r.time_len() != len => {
                    return Err(CoreError::shape(
                        "forward_augmented relatives",
                        format!("{m}x{len}x1"),
                        r.shape_str(),
                    ));
                }
                _ => {}
            }
        }

        let mut tape = Tape::new();
        let lifted: Vec<Var> = self
            .store
            .iter()
            .map(|(_, _, value)| tape.leaf(value.clone()))
            .collect();
        let at = |id: SlotId| lifted[id.index()];

        // Trunk over the whole trajectory.
        let mut x = tape.constant(features.clone());
        for (b, ids) in spec.blocks.iter().zip(&self.slots.blocks) {
            let mut main = tape.dilated_conv(x, at(ids.conv1_w), at(ids.conv1_b), b.dilation)?;
            main = tape.relu(main);
            if let ForwardMode::Train(rng) = &mut mode {
                main = tape.dropout(main, spec.dropout_rate, rng);
            }
            main = tape.dilated_conv(main, at(ids.conv2_w), at(ids.conv2_b), b.dilation)?;
            main = tape.relu(main);
            if let ForwardMode::Train(rng) = &mut mode {
                main = tape.dropout(main, spec.dropout_rate, rng);
            }
            let corr = match spec.corr_kind {
                CorrKind::WaveCorr => tape.corr(main, at(ids.corr_w), at(ids.corr_b))?,
                CorrKind::Zhang => tape.zhang(main, at(ids.corr_w), at(ids.corr_b))?,
            };
            let corr = tape.relu(corr);
            let cat = tape.concat_channels(main, corr)?;
            let res = tape.dilated_conv(x, at(ids.residual_w), at(ids.residual_b), 1)?;
            x = tape.add(cat, res)?;
        }
        let causal =
            tape.suffix_conv(x, at(self.slots.causal_w), at(self.slots.causal_b), steps)?;
        let causal = tape.relu(causal);

        // Final stage per step: append the previous-weights channel, mix with
        // the 1x1 head, softmax over assets, then drift for the next step.
        let mut actions = Vec::with_capacity(steps);
        let mut prevs = Vec::with_capacity(steps);
        let mut prev = tape.constant(initial_prev.to_tensor());
        for t in 0..steps {
            prevs.push(prev);
            let col = tape.slice_time(causal, t, 1)?;
            let with_prev = tape.concat_channels(col, prev)?;
            let logits =
                tape.dilated_conv(with_prev, at(self.slots.head_w), at(self.slots.head_b), 1)?;
            let action = tape.softmax_assets(logits)?;
            if !tape.value(action).all_finite() {
                return Err(CoreError::NonFinite("policy action"));
            }
            actions.push(action);
            if t + 1 < steps {
                let raw = raw_relatives.expect("checked above");
                let col_idx = t + spec.lookback;
                let xi: Vec<f64> = (0..m).map(|i| raw.get(i, col_idx, 0)).collect();
                if xi.iter().any(|&v| v <= 0.0) {
                    return Err(CoreError::InvalidArgument(
                        "non-positive realized relative in drift recursion".into(),
                    ));
                }
                prev = drift_weights_var(&mut tape, action, &xi)?;
            }
        }
        Ok(AugmentedPass {
            tape,
            actions,
            prev_weights: prevs,
            lifted,
        })
    }

    /// Reindexed parameters under which the conjugated network reproduces
    /// this one: every correlation kernel's asset rows are permuted, all
    /// per-asset blocks are untouched.
    pub fn network_witness(&self, sigma: &AssetPermutation) -> Result<PolicyParams> {
        if self.spec.corr_kind != CorrKind::WaveCorr {
            return Err(CoreError::InvalidArgument(
                "no permutation witness exists for the zero-padded cross-asset layer".into(),
            ));
        }
        if sigma.len() != self.spec.assets {
            return Err(CoreError::shape(
                "network_witness",
                format!("permutation of {}", self.spec.assets),
                format!("{}", sigma.len()),
            ));
        }
        let mut out = self.clone();
        for ids in &self.slots.blocks {
            let spec = CorrSpec {
                channel_weights: self.store.value(ids.corr_w).clone(),
                bias: self.store.value(ids.corr_b).scalar_value(),
            };
            let witnessed = corr_weight_witness(&spec, sigma)?;
            *out.store.value_mut(ids.corr_w) = witnessed.channel_weights;
        }
        Ok(out)
    }

    /// Force every correlation kernel's asset rows to a common value, making
    /// the initial parameters a fixed point of the witness map.
    pub fn symmetrize_corr_rows(&mut self) {
        let block_ids: Vec<SlotId> = self.slots.blocks.iter().map(|b| b.corr_w).collect();
        for id in block_ids {
            let w = self.store.value_mut(id);
            let (rows, _, d) = w.shape();
            let first: Vec<f64> = w.cell(1, 0).to_vec();
            for r in 2..rows {
                w.cell_mut(r, 0).copy_from_slice(&first[..d]);
            }
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            init_seed: self.init_seed,
            slots: self
                .store
                .iter()
                .map(|(_, name, value)| SlotRecord {
                    name: name.to_string(),
                    shape: value.shape(),
                    data: value.data().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
        let json = std::fs::read_to_string(path)?;
        let file: Checkpoint = serde_json::from_str(&json)?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                file.format_version
            )));
        }
        let mut params = PolicyParams::init(file.spec, file.init_seed)?;
        if file.slots.len() != params.store.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} slots, found {}",
                params.store.len(),
                file.slots.len()
            )));
        }
        for slot in file.slots {
            let id = params
                .store
                .id_of(&slot.name)
                .ok_or_else(|| CoreError::Checkpoint(format!("unknown slot '{}'", slot.name)))?;
            let target = params.store.value_mut(id);
            if target.shape() != slot.shape {
                return Err(CoreError::Checkpoint(format!(
                    "slot '{}' has shape {:?}, expected {:?}",
                    slot.name,
                    slot.shape,
                    target.shape()
                )));
            }
            *target = Tensor3::from_vec(slot.shape.0, slot.shape.1, slot.shape.2, slot.data)?;
        }
        Ok(params)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    spec: PolicySpec,
    init_seed: u64,
    slots: Vec<SlotRecord>,
}

#[derive(Serialize, Deserialize)]
struct SlotRecord {
    name: String,
    shape: (usize, usize, usize),
    data: Vec<f64>,
}

fn kaiming(a: usize, b: usize, c: usize, rng: &mut Rng) -> Tensor3 {
    let bound = crate::blocks::kaiming_bound(b * c);
    Tensor3::random_uniform(a, b, c, -bound, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::permute_assets;
    use crate::rng::seed_rng;

    fn small_params(m: usize, h: usize, seed: u64) -> PolicyParams {
        PolicyParams::init(PolicySpec::default_structure(m, h, 1).unwrap(), seed).unwrap()
    }

    fn random_state(m: usize, h: usize, d: usize, seed: u64) -> Tensor3 {
        let mut rng = seed_rng(seed);
        Tensor3::random_normal(m, h, d, 0.3, &mut rng)
    }

    #[test]
    fn receptive_field_and_kernel() {
        let spec = PolicySpec::default_structure(5, 32, 1).unwrap();
        assert_eq!(spec.trunk_receptive_field(), 29);
        assert_eq!(spec.causal_kernel(), 4);
        let spec = PolicySpec::default_structure(5, 29, 1).unwrap();
        assert_eq!(spec.causal_kernel(), 1);
        assert!(PolicySpec::default_structure(5, 28, 1).is_err());
    }

    #[test]
    fn parameter_count_matches_store() {
        for (m, h, d) in [(3, 29, 1), (5, 32, 1), (10, 40, 4)] {
            let spec = PolicySpec::default_structure(m, h, d).unwrap();
            let expected = spec.parameter_count();
            let params = PolicyParams::init(spec, 7).unwrap();
            assert_eq!(params.store().scalar_count(), expected, "m={m} h={h} d={d}");
        }
    }

    #[test]
    fn output_is_on_the_simplex() {
        let params = small_params(5, 32, 1);
        let state = random_state(5, 32, 1, 2);
        let prev = PortfolioWeights::uniform(5);
        let w = params
            .forward_policy(&state, &prev, ForwardMode::Eval)
            .unwrap();
        assert_eq!(w.len(), 5);
        let sum: f64 = w.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn exchangeable_setup_gives_uniform_weights() {
        let mut params = small_params(4, 29, 3);
        params.symmetrize_corr_rows();
        // identical rows for every asset
        let mut state = Tensor3::zeros(4, 29, 1);
        let mut rng = seed_rng(5);
        for j in 0..29 {
            let v = 0.3 * rng.normal();
            for i in 0..4 {
                state.set(i, j, 0, v);
            }
        }
        let prev = PortfolioWeights::uniform(4);
        let w = params
            .forward_policy(&state, &prev, ForwardMode::Eval)
            .unwrap();
        for &v in w.as_slice() {
            assert!((v - 0.25).abs() < 1e-12, "weights {:?}", w.as_slice());
        }
    }

    #[test]
    fn witness_identity_permutation_is_noop() {
        let params = small_params(4, 29, 11);
        let witness = params
            .network_witness(&AssetPermutation::identity(4))
            .unwrap();
        assert_eq!(params.store().max_abs_diff(witness.store()), 0.0);
    }

    #[test]
    fn witness_conjugation_reproduces_forward() {
        let mut rng = seed_rng(13);
        for trial in 0..5 {
            let m = 3 + rng.below(4);
            let h = 29 + rng.below(6);
            let params = small_params(m, h, 100 + trial);
            let sigma = AssetPermutation::random(m, &mut rng);
            let state = random_state(m, h, 1, 200 + trial);
            let prev = {
                let raw: Vec<f64> = (0..m).map(|_| rng.uniform() + 0.05).collect();
                PortfolioWeights::normalized(raw).unwrap()
            };

            let direct = params
                .forward_policy(&state, &prev, ForwardMode::Eval)
                .unwrap();

            let witness = params.network_witness(&sigma).unwrap();
            let state_p = permute_assets(&sigma, &state).unwrap();
            let prev_p = PortfolioWeights::new(sigma.permute_slice(prev.as_slice())).unwrap();
            let out_p = witness
                .forward_policy(&state_p, &prev_p, ForwardMode::Eval)
                .unwrap();
            let unperm = sigma.unpermute_slice(out_p.as_slice());

            for (a, b) in direct.as_slice().iter().zip(&unperm) {
                assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn witness_composes() {
        let mut rng = seed_rng(17);
        let params = small_params(5, 29, 23);
        let s1 = AssetPermutation::random(5, &mut rng);
        let s2 = AssetPermutation::random(5, &mut rng);
        let seq = params
            .network_witness(&s1)
            .unwrap()
            .network_witness(&s2)
            .unwrap();
        let composed = params.network_witness(&s2.compose_after(&s1)).unwrap();
        assert_eq!(seq.store().max_abs_diff(composed.store()), 0.0);
    }

    #[test]
    fn augmented_single_step_equals_forward_policy() {
        let params = small_params(3, 30, 31);
        let state = random_state(3, 30, 1, 32);
        let prev = PortfolioWeights::uniform(3);
        let a = params
            .forward_policy(&state, &prev, ForwardMode::Eval)
            .unwrap();
        let b = params
            .forward_augmented(&state, None, &prev, 1, ForwardMode::Eval)
            .unwrap();
        assert_eq!(a.as_slice(), b[0].as_slice());
    }

    #[test]
    fn augmented_matches_sequential_windows() {
        let (m, h, t_steps) = (4, 29, 4);
        let params = small_params(m, h, 41);
        let len = h + t_steps - 1;
        let features = random_state(m, len, 1, 42);
        let mut rng = seed_rng(43);
        let raw = {
            let mut r = Tensor3::zeros(m, len, 1);
            for i in 0..m {
                for j in 0..len {
                    r.set(i, j, 0, (0.01 * rng.normal()).exp());
                }
            }
            r
        };
        let prev0 = PortfolioWeights::uniform(m);

        let aug = params
            .forward_augmented(&features, Some(&raw), &prev0, t_steps, ForwardMode::Eval)
            .unwrap();

        // sequential oracle: one forward_policy per window with hand-drifted
        // previous weights
        let mut prev = prev0.clone();
        for t in 0..t_steps {
            let window = features.time_slice(t, h).unwrap();
            let w = params
                .forward_policy(&window, &prev, ForwardMode::Eval)
                .unwrap();
            let diff = aug[t]
                .as_slice()
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(diff <= 1e-10, "step {t}: max diff {diff}");
            if t + 1 < t_steps {
                let xi: Vec<f64> = (0..m).map(|i| raw.get(i, t + h, 0)).collect();
                prev = crate::env::drift_weights(&w, &xi).unwrap();
            }
        }
    }

    #[test]
    fn extra_history_does_not_change_the_action() {
        // receptive field is exactly h: evaluating over h+1 columns and
        // keeping the final action equals evaluating over the last h columns
        let (m, h) = (3, 29);
        let params = small_params(m, h, 51);
        let features = random_state(m, h + 1, 1, 52);
        let raw = {
            let mut r = Tensor3::ones(m, h + 1, 1);
            for i in 0..m {
                for j in 0..h + 1 {
                    r.set(i, j, 0, 1.0 + 0.01 * (i + j) as f64);
                }
            }
            r
        };
        let prev = PortfolioWeights::uniform(m);
        let aug = params
            .forward_augmented(&features, Some(&raw), &prev, 2, ForwardMode::Eval)
            .unwrap();
        // feed step 1 the same drifted weights the augmented pass used
        let xi: Vec<f64> = (0..m).map(|i| raw.get(i, h, 0)).collect();
        let a0 = aug[0].clone();
        let drifted = crate::env::drift_weights(&a0, &xi).unwrap();
        let window = features.time_slice(1, h).unwrap();
        let direct = params
            .forward_policy(&window, &drifted, ForwardMode::Eval)
            .unwrap();
        let diff = direct
            .as_slice()
            .iter()
            .zip(aug[1].as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-12, "max diff {diff}");

        // and the oldest column does matter for the window it belongs to
        let mut perturbed = features.time_slice(0, h).unwrap();
        let base_action = params
            .forward_policy(&perturbed, &prev, ForwardMode::Eval)
            .unwrap();
        for i in 0..m {
            perturbed.set(i, 0, 0, perturbed.get(i, 0, 0) + 1.0 + i as f64);
        }
        let moved = params
            .forward_policy(&perturbed, &prev, ForwardMode::Eval)
            .unwrap();
        let diff = moved
            .as_slice()
            .iter()
            .zip(base_action.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff > 1e-12, "oldest column should influence the output");
    }

    #[test]
    fn train_mode_is_deterministic_under_seed() {
        let params = small_params(3, 29, 61);
        let state = random_state(3, 29, 1, 62);
        let prev = PortfolioWeights::uniform(3);
        let run = || {
            let mut rng = seed_rng(63);
            params
                .forward_policy(&state, &prev, ForwardMode::Train(&mut rng))
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("wavecorr_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("policy.json");
        let params = small_params(4, 32, 71);
        params.save_checkpoint(&path).unwrap();
        let loaded = PolicyParams::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.init_seed(), params.init_seed());
        assert_eq!(loaded.spec(), params.spec());
        for (id, name, value) in params.store().iter() {
            let lid = loaded.store().id_of(name).unwrap();
            let lv = loaded.store().value(lid);
            assert_eq!(value.shape(), lv.shape());
            let bitwise = value
                .data()
                .iter()
                .zip(lv.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(bitwise, "slot {name} ({id:?}) not bit-exact");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn zhang_variant_runs_and_has_no_witness() {
        let spec = PolicySpec::with_corr(5, 29, 1, CorrKind::Zhang).unwrap();
        let params = PolicyParams::init(spec, 81).unwrap();
        let state = random_state(5, 29, 1, 82);
        let prev = PortfolioWeights::uniform(5);
        let w = params
            .forward_policy(&state, &prev, ForwardMode::Eval)
            .unwrap();
        let sum: f64 = w.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(params
            .network_witness(&AssetPermutation::identity(5))
            .is_err());
    }
}
