//! The feature-attention dehazing network.
//!
//! Topology: a shallow 3×3 extraction conv, G groups of B basic blocks (each
//! block: conv→relu→(+x)→conv→feature attention→(+x)), a per-group trailing
//! conv with a group-level skip, channel-wise fusion of all group outputs
//! under a feature-attention weighting, a 3×3 reduction conv, a two-conv
//! reconstruction head, and a global residual connection from the input.
//!
//! Feature attention = channel attention (global average pool → 1×1 conv
//! bottleneck → sigmoid, applied per channel) followed by pixel attention
//! (conv bottleneck down to a single channel → sigmoid, applied per pixel).
//!
//! The three switches `use_fa`, `use_lrl`, `use_ffa` remove feature
//! attention, the local residual connections, and the fusion attention
//! respectively, so every ablation variant is constructible.

mod export;

pub use export::{export_attention_maps, read_ca_table};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Padding, Tape, ValueId};
use crate::tensor::Tensor;

/// Channel-attention convs are always 1×1; everything else is 3×3 except
/// the pixel-attention convs, whose size is configurable.
pub const CA_KERNEL: usize = 1;
const CONV_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of group structures (G).
    pub groups: usize,
    /// Basic blocks per group (B).
    pub blocks_per_group: usize,
    /// Feature channels (C).
    pub channels: usize,
    /// Attention bottleneck divisor (r): the two attention convs squeeze
    /// C → C/r → C (channel) and C → C/r → 1 (pixel).
    pub reduction: usize,
    /// Kernel size of the two pixel-attention convs.
    pub pa_kernel: usize,
    /// Feature attention inside basic blocks.
    pub use_fa: bool,
    /// Local residual connections inside basic blocks.
    pub use_lrl: bool,
    /// Feature-attention weighting of the fused group outputs.
    pub use_ffa: bool,
}

impl Default for ModelConfig {
    /// Full-scale defaults: G=3, B=19, C=64, r=8, all switches on.
    fn default() -> Self {
        ModelConfig {
            groups: 3,
            blocks_per_group: 19,
            channels: 64,
            reduction: 8,
            pa_kernel: 3,
            use_fa: true,
            use_lrl: true,
            use_ffa: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups < 1 {
            return Err(Error::Config("groups must be >= 1".into()));
        }
        if self.blocks_per_group < 1 {
            return Err(Error::Config("blocks_per_group must be >= 1".into()));
        }
        if self.reduction < 1 || self.channels < self.reduction {
            return Err(Error::Config(format!(
                "need channels >= reduction >= 1, got C={} r={}",
                self.channels, self.reduction
            )));
        }
        if self.channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "channels {} not divisible by reduction {}",
                self.channels, self.reduction
            )));
        }
        if self.pa_kernel % 2 == 0 || self.pa_kernel == 0 {
            return Err(Error::Config(format!(
                "pa_kernel must be odd and >= 1, got {}",
                self.pa_kernel
            )));
        }
        Ok(())
    }
}

/// Learnable tensors, keyed by hierarchical name
/// (e.g. `group0.block3.ca.conv1.weight`), in construction order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<E: Scalar = f32> {
    tensors: IndexMap<String, Tensor<E>>,
    seed: u64,
}

impl<E: Scalar> ParamStore<E> {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    /// Total scalar element count across all tensors.
    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            seed: self.seed,
        }
    }

    /// Rebuilds a store from (name, tensor) pairs, e.g. a loaded checkpoint.
    pub fn from_tensors(
        seed: u64,
        tensors: impl IntoIterator<Item = (String, Tensor<E>)>,
    ) -> Result<Self> {
        let mut map = IndexMap::new();
        for (name, t) in tensors {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::Config(format!("duplicate parameter {name:?}")));
            }
        }
        Ok(ParamStore { tensors: map, seed })
    }
}

/// One conv layer slot in the walk order of the topology.
struct ConvSlot<'a> {
    prefix: &'a str,
    k: usize,
    c_in: usize,
    c_out: usize,
}

/// Visits every conv layer of the architecture in a fixed canonical order.
/// Parameter initialization and binding both use this walk, so names and
/// shapes can never drift apart.
fn walk_convs(cfg: &ModelConfig, mut visit: impl FnMut(ConvSlot<'_>)) {
    let c = cfg.channels;
    let squeezed = c / cfg.reduction;
    let mut conv = |prefix: &str, k: usize, c_in: usize, c_out: usize| {
        visit(ConvSlot { prefix, k, c_in, c_out })
    };

    conv("shallow.conv", CONV_KERNEL, 3, c);
    for g in 0..cfg.groups {
        for b in 0..cfg.blocks_per_group {
            let p = format!("group{g}.block{b}");
            conv(&format!("{p}.conv1"), CONV_KERNEL, c, c);
            conv(&format!("{p}.conv2"), CONV_KERNEL, c, c);
            if cfg.use_fa {
                conv(&format!("{p}.ca.conv1"), CA_KERNEL, c, squeezed);
                conv(&format!("{p}.ca.conv2"), CA_KERNEL, squeezed, c);
                conv(&format!("{p}.pa.conv1"), cfg.pa_kernel, c, squeezed);
                conv(&format!("{p}.pa.conv2"), cfg.pa_kernel, squeezed, 1);
            }
        }
        conv(&format!("group{g}.tail"), CONV_KERNEL, c, c);
    }
    let fused = cfg.groups * c;
    if cfg.use_ffa {
        let fsq = fused / cfg.reduction;
        conv("fusion.ca.conv1", CA_KERNEL, fused, fsq);
        conv("fusion.ca.conv2", CA_KERNEL, fsq, fused);
        conv("fusion.pa.conv1", cfg.pa_kernel, fused, fsq);
        conv("fusion.pa.conv2", cfg.pa_kernel, fsq, 1);
    }
    conv("fusion.reduce", CONV_KERNEL, fused, c);
    conv("recon.conv1", CONV_KERNEL, c, c);
    conv("recon.conv2", CONV_KERNEL, c, 3);
}

/// Initializes every conv: weights uniform in [−√(1/fan_in), √(1/fan_in)]
/// with fan_in = k·k·Cin, biases zero. Deterministic per (config, seed).
pub fn init_params<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut tensors = IndexMap::new();
    walk_convs(cfg, |slot| {
        let bound = (1.0 / (slot.k * slot.k * slot.c_in) as f64).sqrt();
        let dims = [slot.c_out, slot.c_in, slot.k, slot.k];
        let w = Tensor::<E>::rand_uniform(&dims, -bound, bound, &mut rng)
            .expect("valid conv dims");
        tensors.insert(format!("{}.weight", slot.prefix), w);
        let b = Tensor::zeros(&[slot.c_out]).expect("valid dims");
        tensors.insert(format!("{}.bias", slot.prefix), b);
    });
    Ok(ParamStore { tensors, seed })
}

/// A store with every tensor zeroed: with local residual learning on, the
/// network is then exactly the identity map.
pub fn zero_params<E: Scalar>(cfg: &ModelConfig) -> Result<ParamStore<E>> {
    cfg.validate()?;
    let mut tensors = IndexMap::new();
    walk_convs(cfg, |slot| {
        let dims = [slot.c_out, slot.c_in, slot.k, slot.k];
        tensors.insert(
            format!("{}.weight", slot.prefix),
            Tensor::zeros(&dims).expect("valid dims"),
        );
        tensors.insert(
            format!("{}.bias", slot.prefix),
            Tensor::zeros(&[slot.c_out]).expect("valid dims"),
        );
    });
    Ok(ParamStore { tensors, seed: 0 })
}

/// Closed-form parameter count: sums k·k·Cin·Cout + Cout over the layer
/// plan without enumerating tensors.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let c = cfg.channels;
    let r = cfg.reduction;
    let pk = cfg.pa_kernel;
    let conv = |k: usize, c_in: usize, c_out: usize| k * k * c_in * c_out + c_out;
    let fa = |ch: usize| {
        conv(CA_KERNEL, ch, ch / r)
            + conv(CA_KERNEL, ch / r, ch)
            + conv(pk, ch, ch / r)
            + conv(pk, ch / r, 1)
    };
    let block = 2 * conv(CONV_KERNEL, c, c) + if cfg.use_fa { fa(c) } else { 0 };
    let group = cfg.blocks_per_group * block + conv(CONV_KERNEL, c, c);
    let fused = cfg.groups * c;
    conv(CONV_KERNEL, 3, c)
        + cfg.groups * group
        + if cfg.use_ffa { fa(fused) } else { 0 }
        + conv(CONV_KERNEL, fused, c)
        + conv(CONV_KERNEL, c, c)
        + conv(CONV_KERNEL, c, 3)
}

/// Attention values captured during a forward pass, for inspection and
/// export. Per group the channel weights and pixel map come from the last
/// basic block's attention module; the fusion entry holds the channel
/// weights over the G·C concatenated channels.
#[derive(Clone, Debug)]
pub struct AttentionMaps<E: Scalar = f32> {
    /// Per group: N×C×1×1 channel weights.
    pub group_ca: Vec<Tensor<E>>,
    /// Per group: N×1×H×W pixel maps.
    pub group_pa: Vec<Tensor<E>>,
    /// N×(G·C)×1×1 fusion channel weights, when fusion attention is on.
    pub fusion_ca: Option<Tensor<E>>,
}

impl<E: Scalar> AttentionMaps<E> {
    pub fn empty() -> Self {
        AttentionMaps { group_ca: Vec::new(), group_pa: Vec::new(), fusion_ca: None }
    }

    pub fn is_populated(&self) -> bool {
        !self.group_ca.is_empty() && !self.group_pa.is_empty()
    }
}

/// Output of a feature-attention application.
pub struct FaResult {
    pub out: ValueId,
    pub ca_weights: Option<ValueId>,
    pub pa_map: Option<ValueId>,
}

/// A parameter store bound onto a tape: every tensor registered as a named
/// learnable leaf, shapes verified against the config.
pub struct BoundModel {
    cfg: ModelConfig,
    convs: IndexMap<String, (ValueId, ValueId)>,
}

impl BoundModel {
    /// Registers all parameters of `store` on `tape`. Fails on missing or
    /// extra tensors and on any shape conflict with `cfg`.
    pub fn bind<E: Scalar>(
        tape: &mut Tape<E>,
        cfg: &ModelConfig,
        store: &ParamStore<E>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut problem: Option<Error> = None;
        let mut expected_tensors = 0usize;
        walk_convs(cfg, |slot| {
            if problem.is_some() {
                return;
            }
            expected_tensors += 2;
            let w_name = format!("{}.weight", slot.prefix);
            let b_name = format!("{}.bias", slot.prefix);
            let w_dims = [slot.c_out, slot.c_in, slot.k, slot.k];
            match store.get(&w_name) {
                None => {
                    problem =
                        Some(Error::Config(format!("parameter {w_name:?} missing from store")))
                }
                Some(t) if t.dims() != w_dims => {
                    problem = Some(Error::Config(format!(
                        "parameter {w_name:?} has dims {:?}, config implies {w_dims:?}",
                        t.dims()
                    )))
                }
                _ => {}
            }
            if problem.is_some() {
                return;
            }
            match store.get(&b_name) {
                None => {
                    problem =
                        Some(Error::Config(format!("parameter {b_name:?} missing from store")))
                }
                Some(t) if t.dims() != [slot.c_out] => {
                    problem = Some(Error::Config(format!(
                        "parameter {b_name:?} has dims {:?}, config implies [{}]",
                        t.dims(),
                        slot.c_out
                    )))
                }
                _ => {}
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }
        if expected_tensors != store.len() {
            return Err(Error::Config(format!(
                "store holds {} tensors, config implies {expected_tensors}",
                store.len()
            )));
        }

        let mut prefixes = Vec::new();
        walk_convs(cfg, |slot| prefixes.push(slot.prefix.to_string()));
        let mut convs = IndexMap::new();
        for prefix in prefixes {
            let w = store.get(&format!("{prefix}.weight")).expect("verified above");
            let b = store.get(&format!("{prefix}.bias")).expect("verified above");
            let wid = tape.param(&format!("{prefix}.weight"), w.clone())?;
            let bid = tape.param(&format!("{prefix}.bias"), b.clone())?;
            convs.insert(prefix, (wid, bid));
        }
        Ok(BoundModel { cfg: cfg.clone(), convs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn conv<E: Scalar>(&self, tape: &mut Tape<E>, x: ValueId, prefix: &str) -> Result<ValueId> {
        let &(w, b) = self
            .convs
            .get(prefix)
            .ok_or_else(|| Error::Config(format!("no conv bound at {prefix:?}")))?;
        tape.conv2d(x, w, b, Padding::Same)
    }

    /// Channel attention: weights = σ(conv(δ(conv(gap(F))))), out = F ⊙ weights.
    pub fn channel_attention<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        f: ValueId,
        prefix: &str,
    ) -> Result<(ValueId, ValueId)> {
        let pooled = tape.global_avg_pool(f)?;
        let h = self.conv(tape, pooled, &format!("{prefix}.ca.conv1"))?;
        let h = tape.relu(h);
        let w = self.conv(tape, h, &format!("{prefix}.ca.conv2"))?;
        let weights = tape.sigmoid(w);
        let out = tape.mul_broadcast(f, weights)?;
        Ok((weights, out))
    }

    /// Pixel attention: map = σ(conv(δ(conv(Fs)))) of shape N×1×H×W,
    /// out = Fs ⊙ map broadcast over channels.
    pub fn pixel_attention<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        fs: ValueId,
        prefix: &str,
    ) -> Result<(ValueId, ValueId)> {
        let h = self.conv(tape, fs, &format!("{prefix}.pa.conv1"))?;
        let h = tape.relu(h);
        let m = self.conv(tape, h, &format!("{prefix}.pa.conv2"))?;
        let map = tape.sigmoid(m);
        let out = tape.mul_broadcast(fs, map)?;
        Ok((map, out))
    }

    /// Channel attention strictly before pixel attention.
    fn fa_module<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        f: ValueId,
        prefix: &str,
    ) -> Result<FaResult> {
        let (ca, f_star) = self.channel_attention(tape, f, prefix)?;
        let (pa, out) = self.pixel_attention(tape, f_star, prefix)?;
        Ok(FaResult { out, ca_weights: Some(ca), pa_map: Some(pa) })
    }

    /// The block-level feature attention: identity when `use_fa` is off.
    pub fn feature_attention<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        f: ValueId,
        prefix: &str,
    ) -> Result<FaResult> {
        if !self.cfg.use_fa {
            return Ok(FaResult { out: f, ca_weights: None, pa_map: None });
        }
        self.fa_module(tape, f, prefix)
    }

    /// conv→relu→(+x)→conv→FA→(+x); the two `+x` connections only with
    /// local residual learning on.
    pub fn basic_block<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: ValueId,
        group: usize,
        block: usize,
    ) -> Result<FaResult> {
        let prefix = format!("group{group}.block{block}");
        let y = self.conv(tape, x, &format!("{prefix}.conv1"))?;
        let y = tape.relu(y);
        let y = if self.cfg.use_lrl { tape.add(y, x)? } else { y };
        let y = self.conv(tape, y, &format!("{prefix}.conv2"))?;
        let fa = self.feature_attention(tape, y, &prefix)?;
        let out = if self.cfg.use_lrl { tape.add(fa.out, x)? } else { fa.out };
        Ok(FaResult { out, ..fa })
    }

    /// B chained basic blocks, a trailing conv, and the group-level skip.
    /// Also reports the last block's attention ids for map export.
    pub fn group_forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: ValueId,
        group: usize,
    ) -> Result<FaResult> {
        let mut cur = x;
        let mut last_ca = None;
        let mut last_pa = None;
        for b in 0..self.cfg.blocks_per_group {
            let r = self.basic_block(tape, cur, group, b)?;
            cur = r.out;
            last_ca = r.ca_weights;
            last_pa = r.pa_map;
        }
        let y = self.conv(tape, cur, &format!("group{group}.tail"))?;
        let out = tape.add(y, x)?;
        Ok(FaResult { out, ca_weights: last_ca, pa_map: last_pa })
    }

    /// Full forward pass: hazy N×3×H×W in, dehazed N×3×H×W out (unclamped;
    /// clamping is an export/metric concern), plus the captured attention
    /// maps.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        hazy: ValueId,
    ) -> Result<(ValueId, AttentionMaps<E>)> {
        let (_, c, h, w) = tape.value(hazy).nchw()?;
        if c != 3 {
            return Err(Error::Shape(format!(
                "network input must have 3 channels, got {c}"
            )));
        }
        if h < self.cfg.pa_kernel || w < self.cfg.pa_kernel {
            return Err(Error::Shape(format!(
                "input {h}x{w} smaller than pixel-attention kernel {}",
                self.cfg.pa_kernel
            )));
        }

        let mut maps = AttentionMaps::empty();
        let shallow = self.conv(tape, hazy, "shallow.conv")?;

        let mut cur = shallow;
        let mut group_outs = Vec::with_capacity(self.cfg.groups);
        for g in 0..self.cfg.groups {
            let r = self.group_forward(tape, cur, g)?;
            cur = r.out;
            group_outs.push(r.out);
            if let (Some(ca), Some(pa)) = (r.ca_weights, r.pa_map) {
                maps.group_ca.push(tape.value(ca).clone());
                maps.group_pa.push(tape.value(pa).clone());
            }
        }

        let cat = tape.concat_channels(&group_outs)?;
        let fused = if self.cfg.use_ffa {
            let fa = self.fa_module(tape, cat, "fusion")?;
            if let Some(ca) = fa.ca_weights {
                maps.fusion_ca = Some(tape.value(ca).clone());
            }
            fa.out
        } else {
            cat
        };
        let reduced = self.conv(tape, fused, "fusion.reduce")?;
        let r1 = self.conv(tape, reduced, "recon.conv1")?;
        let r2 = self.conv(tape, r1, "recon.conv2")?;
        let out = tape.add(r2, hazy)?;
        Ok((out, maps))
    }
}

/// Convenience wrapper: bind, run forward, return the dehazed tensor and maps.
pub fn ffa_forward<E: Scalar>(
    cfg: &ModelConfig,
    store: &ParamStore<E>,
    hazy: &Tensor<E>,
) -> Result<(Tensor<E>, AttentionMaps<E>)> {
    let mut tape = Tape::<E>::new();
    let model = BoundModel::bind(&mut tape, cfg, store)?;
    let x = tape.leaf(hazy.clone());
    let (y, maps) = model.forward(&mut tape, x)?;
    Ok((tape.value(y).clone(), maps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            groups: 1,
            blocks_per_group: 1,
            channels: 8,
            reduction: 2,
            pa_kernel: 3,
            use_fa: true,
            use_lrl: true,
            use_ffa: true,
        }
    }

    fn rand_input(dims: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Tensor::rand_uniform(dims, 0.0, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = tiny_cfg();
        c.reduction = 3; // 8 % 3 != 0
        assert!(c.validate().is_err());
        c = tiny_cfg();
        c.groups = 0;
        assert!(c.validate().is_err());
        c = tiny_cfg();
        c.pa_kernel = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = tiny_cfg();
        let a = init_params::<f32>(&cfg, 42).unwrap();
        let b = init_params::<f32>(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params::<f32>(&cfg, 43).unwrap();
        assert_ne!(a, c);

        walk_convs(&cfg, |slot| {
            let bound = (1.0 / (slot.k * slot.k * slot.c_in) as f64).sqrt() as f32;
            let w = a.get(&format!("{}.weight", slot.prefix)).unwrap();
            for &v in w.data() {
                assert!(v.abs() <= bound, "{v} out of bound {bound}");
            }
            let bt = a.get(&format!("{}.bias", slot.prefix)).unwrap();
            assert!(bt.data().iter().all(|&v| v == 0.0));
        });
    }

    #[test]
    fn param_count_matches_store_enumeration() {
        // the closed form against the brute-force element count, across the
        // ablation matrix and a couple of sizes
        for (fa, lrl, ffa) in [
            (true, true, true),
            (true, false, false),
            (true, true, false),
            (false, false, false),
        ] {
            for (g, b, c, r) in [(1, 1, 8, 2), (2, 3, 16, 4), (3, 2, 8, 8)] {
                let cfg = ModelConfig {
                    groups: g,
                    blocks_per_group: b,
                    channels: c,
                    reduction: r,
                    pa_kernel: 3,
                    use_fa: fa,
                    use_lrl: lrl,
                    use_ffa: ffa,
                };
                let store = init_params::<f32>(&cfg, 1).unwrap();
                assert_eq!(param_count(&cfg), store.total_elements(), "config {cfg:?}");
            }
        }
    }

    #[test]
    fn param_count_single_conv_arithmetic() {
        // a 3×3 conv with Cin=3, Cout=8 contributes 3·3·3·8+8
        let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
        assert_eq!(conv(3, 3, 8), 224);
    }

    #[test]
    fn param_count_monotone() {
        let mk = |g: usize, b: usize| ModelConfig {
            groups: g,
            blocks_per_group: b,
            ..ModelConfig::default()
        };
        assert!(param_count(&mk(1, 1)) < param_count(&mk(1, 2)));
        assert!(param_count(&mk(1, 2)) < param_count(&mk(3, 19)));
    }

    #[test]
    fn zero_init_channel_attention_halves_features() {
        let cfg = tiny_cfg();
        let store = zero_params::<f32>(&cfg).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let f = tape.leaf(rand_input(&[1, 8, 4, 4], 7));
        let (weights, out) = model.channel_attention(&mut tape, f, "group0.block0").unwrap();
        assert_eq!(tape.value(weights).dims(), &[1, 8, 1, 1]);
        for &w in tape.value(weights).data() {
            assert_eq!(w, 0.5);
        }
        for (o, i) in tape.value(out).data().iter().zip(tape.value(f).data()) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn channel_attention_zero_input_stays_zero() {
        let cfg = tiny_cfg();
        let store = init_params::<f32>(&cfg, 5).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let f = tape.leaf(Tensor::zeros(&[1, 8, 4, 4]).unwrap());
        let (_, out) = model.channel_attention(&mut tape, f, "group0.block0").unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_attention_weights_in_open_unit_interval() {
        let cfg = tiny_cfg();
        let store = init_params::<f32>(&cfg, 11).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let f = tape.leaf(rand_input(&[2, 8, 5, 5], 12));
        let (weights, _) = model.channel_attention(&mut tape, f, "group0.block0").unwrap();
        for &w in tape.value(weights).data() {
            assert!(w > 0.0 && w < 1.0);
        }
    }

    #[test]
    fn pixel_attention_map_shape_and_ratio() {
        let cfg = tiny_cfg();
        let store = init_params::<f32>(&cfg, 21).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let fs = tape.leaf(rand_input(&[1, 8, 6, 5], 22));
        let (map, out) = model.pixel_attention(&mut tape, fs, "group0.block0").unwrap();
        assert_eq!(tape.value(map).dims(), &[1, 1, 6, 5]);

        // out/in ratio is the same across channels wherever the input is nonzero
        let hw = 30;
        let m = tape.value(map).data();
        let i = tape.value(fs).data();
        let o = tape.value(out).data();
        for px in 0..hw {
            for ch in 0..8 {
                let idx = ch * hw + px;
                if i[idx] != 0.0 {
                    let ratio = o[idx] / i[idx];
                    assert!((ratio - m[px]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn zero_init_pixel_attention_halves_features() {
        let cfg = tiny_cfg();
        let store = zero_params::<f32>(&cfg).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let fs = tape.leaf(rand_input(&[1, 8, 4, 4], 23));
        let (map, out) = model.pixel_attention(&mut tape, fs, "group0.block0").unwrap();
        assert!(tape.value(map).data().iter().all(|&v| v == 0.5));
        for (o, i) in tape.value(out).data().iter().zip(tape.value(fs).data()) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn zero_init_feature_attention_quarters_features() {
        let cfg = tiny_cfg();
        let store = zero_params::<f32>(&cfg).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let f = tape.leaf(rand_input(&[1, 8, 4, 4], 31));
        let fa = model.feature_attention(&mut tape, f, "group0.block0").unwrap();
        assert_eq!(tape.value(fa.out).dims(), tape.value(f).dims());
        for (o, i) in tape.value(fa.out).data().iter().zip(tape.value(f).data()) {
            assert_eq!(*o, 0.25 * i);
        }
    }

    #[test]
    fn feature_attention_identity_without_fa() {
        let mut cfg = tiny_cfg();
        cfg.use_fa = false;
        let store = init_params::<f32>(&cfg, 33).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let f = tape.leaf(rand_input(&[1, 8, 4, 4], 34));
        let fa = model.feature_attention(&mut tape, f, "group0.block0").unwrap();
        assert_eq!(fa.out, f);
        assert!(fa.ca_weights.is_none() && fa.pa_map.is_none());
    }

    #[test]
    fn zero_param_block_is_identity_with_lrl() {
        let cfg = tiny_cfg();
        let store = zero_params::<f32>(&cfg).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let x = tape.leaf(rand_input(&[1, 8, 4, 4], 41));
        let r = model.basic_block(&mut tape, x, 0, 0).unwrap();
        assert_eq!(tape.value(r.out).data(), tape.value(x).data());
    }

    #[test]
    fn zero_param_block_is_zero_without_lrl() {
        let mut cfg = tiny_cfg();
        cfg.use_lrl = false;
        let store = zero_params::<f32>(&cfg).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let x = tape.leaf(rand_input(&[1, 8, 4, 4], 42));
        let r = model.basic_block(&mut tape, x, 0, 0).unwrap();
        assert!(tape.value(r.out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_param_group_is_identity() {
        let mut cfg = tiny_cfg();
        cfg.blocks_per_group = 3;
        let store = zero_params::<f32>(&cfg).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let x = tape.leaf(rand_input(&[1, 8, 4, 4], 43));
        let r = model.group_forward(&mut tape, x, 0).unwrap();
        assert_eq!(tape.value(r.out).data(), tape.value(x).data());
    }

    #[test]
    fn group_skip_is_wired() {
        // with random params, removing the final add must change the output
        let cfg = tiny_cfg();
        let store = init_params::<f32>(&cfg, 51).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let x = tape.leaf(rand_input(&[1, 8, 4, 4], 52));
        let with_skip = model.group_forward(&mut tape, x, 0).unwrap();

        let mut cur = x;
        for b in 0..cfg.blocks_per_group {
            cur = model.basic_block(&mut tape, cur, 0, b).unwrap().out;
        }
        let no_skip = model.conv(&mut tape, cur, "group0.tail").unwrap();
        let diff = tape.value(with_skip.out).max_abs_diff(tape.value(no_skip)).unwrap();
        assert!(diff > 1e-6, "group skip appears disconnected");
    }

    #[test]
    fn zero_param_forward_is_identity_bit_for_bit() {
        let cfg = tiny_cfg();
        let store = zero_params::<f32>(&cfg).unwrap();
        let hazy = rand_input(&[1, 3, 8, 8], 61);
        let (out, _) = ffa_forward(&cfg, &store, &hazy).unwrap();
        assert_eq!(out.data(), hazy.data());
    }

    #[test]
    fn forward_shape_and_maps() {
        let cfg = ModelConfig {
            groups: 2,
            blocks_per_group: 2,
            channels: 8,
            reduction: 2,
            pa_kernel: 3,
            use_fa: true,
            use_lrl: true,
            use_ffa: true,
        };
        let store = init_params::<f32>(&cfg, 71).unwrap();
        let hazy = rand_input(&[1, 3, 9, 11], 72);
        let (out, maps) = ffa_forward(&cfg, &store, &hazy).unwrap();
        assert_eq!(out.dims(), hazy.dims());
        assert_eq!(maps.group_ca.len(), 2);
        assert_eq!(maps.group_pa.len(), 2);
        for ca in &maps.group_ca {
            assert_eq!(ca.dims(), &[1, 8, 1, 1]);
            assert!(ca.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        for pa in &maps.group_pa {
            assert_eq!(pa.dims(), &[1, 1, 9, 11]);
            assert!(pa.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let fca = maps.fusion_ca.as_ref().unwrap();
        assert_eq!(fca.dims(), &[1, 16, 1, 1]);
    }

    #[test]
    fn forward_rejects_wrong_channel_count() {
        let cfg = tiny_cfg();
        let store = init_params::<f32>(&cfg, 81).unwrap();
        let bad = rand_input(&[1, 4, 8, 8], 82);
        assert!(ffa_forward(&cfg, &store, &bad).is_err());
    }

    #[test]
    fn bind_rejects_mismatched_store() {
        let cfg = tiny_cfg();
        let mut other = tiny_cfg();
        other.channels = 16;
        other.reduction = 4;
        let store = init_params::<f32>(&other, 91).unwrap();
        let mut tape = Tape::<f32>::new();
        assert!(BoundModel::bind(&mut tape, &cfg, &store).is_err());
    }

    #[test]
    fn every_param_receives_gradient() {
        // representative channel width: at C=64/r=8 the channel-attention
        // squeeze convs (whose units can start relu-dead, a property of the
        // zero-bias init, not a wiring defect) are a small share of the
        // weights, so a dead path would show up clearly below the bar
        let cfg = ModelConfig {
            groups: 1,
            blocks_per_group: 2,
            channels: 64,
            reduction: 8,
            pa_kernel: 3,
            use_fa: true,
            use_lrl: true,
            use_ffa: true,
        };
        let store = init_params::<f32>(&cfg, 95).unwrap();
        let mut tape = Tape::<f32>::new();
        let model = BoundModel::bind(&mut tape, &cfg, &store).unwrap();
        let x = tape.leaf(rand_input(&[2, 3, 24, 24], 96));
        let (y, _) = model.forward(&mut tape, x).unwrap();
        let gt = tape.leaf(rand_input(&[2, 3, 24, 24], 97));
        let d = tape.sub(y, gt).unwrap();
        let a = tape.abs(d);
        let loss = tape.mean(a);
        let bw = tape.backward(loss).unwrap();
        let grads = tape.param_gradients(&bw);
        assert_eq!(grads.len(), store.len());

        let mut conv_weight_total = 0usize;
        let mut conv_weight_nonzero = 0usize;
        for (name, g) in &grads {
            if name.ends_with(".weight") {
                conv_weight_total += g.len();
                conv_weight_nonzero += g.data().iter().filter(|&&v| v != 0.0).count();
            }
        }
        let frac = conv_weight_nonzero as f64 / conv_weight_total as f64;
        assert!(frac >= 0.99, "only {frac:.4} of conv weight grads nonzero");
    }
}
