//! Dual-stream patch-attention generator.
//!
//! Three frame-level encoders (warped clothes, person shape, agnostic
//! image) feed a stack of blocks in which the person stream queries the
//! other two over all spatio-temporal patches. A frame-level decoder
//! renders an image and a composition mask, followed by clothes and
//! background fusion.

mod attention;
mod patches;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub use attention::{
    dual_stream_attention, embed, head_patches, patch_attention, pool_mask, StreamEmbeddings,
};
pub use patches::{fit_patch, PatchSet};

use crate::error::{Error, Result};
use crate::numcore::nn::{conv2d, tile_channels, upsample2x};
use crate::numcore::{BoundParams, Init, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpdtConfig {
    pub channels: usize,
    pub blocks: usize,
    pub heads: usize,
    /// One (r1, r2) per head, or a single entry shared by all heads.
    pub patch_sizes: Vec<(usize, usize)>,
    /// Total encoder downsampling: 1, 2 or 4.
    pub downsample: usize,
    /// A key patch is valid if any covered mask value exceeds this.
    pub mask_threshold: f64,
    pub positional_encoding: bool,
    /// Largest frame count / feature height / feature width the positional
    /// tables cover.
    pub max_positions: usize,
    pub layer_norm: bool,
}

impl Default for MpdtConfig {
    fn default() -> Self {
        Self {
            channels: 256,
            blocks: 8,
            heads: 4,
            patch_sizes: vec![(8, 8), (4, 4), (2, 2), (1, 1)],
            downsample: 4,
            mask_threshold: 0.0,
            positional_encoding: false,
            max_positions: 64,
            layer_norm: false,
        }
    }
}

impl MpdtConfig {
    pub fn tiny() -> Self {
        Self {
            channels: 96,
            blocks: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.blocks == 0 {
            return bad("mpdt.blocks must be at least 1".into());
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad(format!(
                "mpdt.channels ({}) must be divisible by mpdt.heads ({})",
                self.channels, self.heads
            ));
        }
        if self.patch_sizes.is_empty()
            || (self.patch_sizes.len() != 1 && self.patch_sizes.len() != self.heads)
        {
            return bad(format!(
                "mpdt.patch_sizes needs 1 or {} entries, got {}",
                self.heads,
                self.patch_sizes.len()
            ));
        }
        if self.patch_sizes.iter().any(|&(a, b)| a == 0 || b == 0) {
            return bad("mpdt.patch_sizes entries must be positive".into());
        }
        if ![1, 2, 4].contains(&self.downsample) {
            return bad(format!(
                "mpdt.downsample must be 1, 2 or 4, got {}",
                self.downsample
            ));
        }
        Ok(())
    }

    fn stages(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    fn widths(&self) -> (usize, usize, usize) {
        let c = self.channels;
        ((c / 4).max(1), (c / 2).max(1), c)
    }
}

/// Channel counts of the three input streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputChannels {
    pub clothes: usize,
    pub person: usize,
    pub agnostic: usize,
}

impl Default for InputChannels {
    fn default() -> Self {
        Self {
            clothes: 3,
            person: 2,
            agnostic: 3,
        }
    }
}

const ENCODERS: [&str; 3] = ["enc_c", "enc_p", "enc_a"];

/// Encoder layer (cin, cout, stride) list.
fn encoder_layers(cfg: &MpdtConfig, cin: usize) -> Vec<(usize, usize, usize)> {
    let (c4, c2, c) = cfg.widths();
    let strides: [usize; 4] = match cfg.stages() {
        0 => [1, 1, 1, 1],
        1 => [1, 2, 1, 1],
        _ => [1, 2, 2, 1],
    };
    let outs = [c4, c2, c, c];
    let mut prev = cin;
    (0..4)
        .map(|i| {
            let l = (prev, outs[i], strides[i]);
            prev = outs[i];
            l
        })
        .collect()
}

/// Decoder layer (cin, cout, upsample-before) list.
fn decoder_layers(cfg: &MpdtConfig) -> Vec<(usize, usize, bool)> {
    let (c4, c2, c) = cfg.widths();
    let ups = cfg.stages();
    let outs = [c2, c4, c4, 4];
    let mut prev = c;
    (0..4)
        .map(|i| {
            let l = (prev, outs[i], i < ups);
            prev = outs[i];
            l
        })
        .collect()
}

/// Deterministically initialized parameters for `cfg`.
pub fn init_params(cfg: &MpdtConfig, inputs: InputChannels, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut init = Init::new(seed);
    let mut store = ParamStore::new();
    let cins = [inputs.clothes, inputs.person, inputs.agnostic];
    for (name, cin) in ENCODERS.iter().zip(cins) {
        for (i, (a, b, _)) in encoder_layers(cfg, cin).into_iter().enumerate() {
            init.layer(&mut store, &format!("{name}.conv{i}"), 9 * a, b);
        }
    }
    let c = cfg.channels;
    for blk in 0..cfg.blocks {
        for p in ["q", "kc", "vc", "ka", "va"] {
            init.layer(&mut store, &format!("block{blk}.{p}"), c, c);
        }
        init.layer(&mut store, &format!("block{blk}.out"), 2 * c, c);
    }
    for (i, (a, b, _)) in decoder_layers(cfg).into_iter().enumerate() {
        init.layer(&mut store, &format!("dec.conv{i}"), 9 * a, b);
    }
    if cfg.positional_encoding {
        for axis in ["t", "y", "x"] {
            let v = init.uniform(&[cfg.max_positions, c], c);
            store.insert(format!("pos.{axis}"), v.scale(0.1));
        }
    }
    Ok(store)
}

/// Frame-level encoder `prefix` ∈ {enc_c, enc_p, enc_a}: T×H×W×C → T×h×w×channels.
pub fn encode<'t>(
    params: &BoundParams<'t>,
    cfg: &MpdtConfig,
    prefix: &str,
    seq: Var<'t>,
) -> Result<Var<'t>> {
    let s = seq.shape();
    if s.len() != 4 || !s[1].is_multiple_of(cfg.downsample) || !s[2].is_multiple_of(cfg.downsample)
    {
        return Err(Error::dim(
            "encode",
            &s,
            &[0, cfg.downsample, cfg.downsample, 0],
        ));
    }
    let layers = encoder_layers(cfg, s[3]);
    let last = layers.len() - 1;
    let mut x = seq;
    for (i, (_, _, stride)) in layers.into_iter().enumerate() {
        let w = params.get(&format!("{prefix}.conv{i}.w"))?;
        let b = params.get(&format!("{prefix}.conv{i}.b"))?;
        x = conv2d(x, w, b, 3, stride, 1)?;
        if i != last {
            x = x.relu();
        }
    }
    Ok(x)
}

/// Frame-level decoder: T×h×w×channels → (image T×H×W×3, mask T×H×W×1).
pub fn decode<'t>(
    params: &BoundParams<'t>,
    cfg: &MpdtConfig,
    feat: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let layers = decoder_layers(cfg);
    let last = layers.len() - 1;
    let mut x = feat;
    for (i, (_, _, up)) in layers.into_iter().enumerate() {
        if up {
            x = upsample2x(x)?;
        }
        let w = params.get(&format!("dec.conv{i}.w"))?;
        let b = params.get(&format!("dec.conv{i}.b"))?;
        x = conv2d(x, w, b, 3, 1, 1)?;
        if i != last {
            x = x.relu();
        }
    }
    Ok((x.slice(3, 0, 3)?, x.slice(3, 3, 4)?.sigmoid()))
}

fn broadcast_mask<'t>(m: Var<'t>, c: usize) -> Result<Var<'t>> {
    match m.shape().last() {
        Some(&1) if c != 1 => tile_channels(m, c),
        _ => Ok(m),
    }
}

/// `M_C ⊙ C̃ + (1 − M_C) ⊙ I_R`. `m_c` may have one channel.
pub fn fuse_clothes<'t>(rendered: Var<'t>, m_c: Var<'t>, warped: Var<'t>) -> Result<Var<'t>> {
    if m_c.value().data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::contract(
            "fuse_clothes: composition mask outside [0, 1]",
        ));
    }
    let c = *rendered.shape().last().unwrap_or(&1);
    let m = broadcast_mask(m_c, c)?;
    m.mul(warped)?.add(m.neg().offset(1.0).mul(rendered)?)
}

/// `(1 − M_a) ⊙ I_masked + M_a ⊙ A`. `m_a` may have one channel.
pub fn fuse_background<'t>(masked: Var<'t>, agnostic: Var<'t>, m_a: Var<'t>) -> Result<Var<'t>> {
    let c = *masked.shape().last().unwrap_or(&1);
    let m = broadcast_mask(m_a, c)?;
    m.neg().offset(1.0).mul(masked)?.add(m.mul(agnostic)?)
}

/// Generator inputs on a tape.
#[derive(Clone, Copy)]
pub struct GeneratorInputs<'t, 'a> {
    /// Warped clothes C̃, T×H×W×3.
    pub clothes: Var<'t>,
    /// Person shape D⊕P, T×H×W×Cp.
    pub person: Var<'t>,
    /// Agnostic image A, T×H×W×3.
    pub agnostic: Var<'t>,
    /// Visible-clothes mask at frame resolution, T×H×W.
    pub mask_c: &'a Tensor,
    /// Background-fusion mask M_a, T×H×W×1.
    pub fusion_mask: Var<'t>,
}

pub struct GeneratorOutput<'t> {
    pub output: Var<'t>,
    pub rendered: Var<'t>,
    pub comp_mask: Var<'t>,
    pub masked: Var<'t>,
}

fn positional<'t>(params: &BoundParams<'t>, cfg: &MpdtConfig, x: Var<'t>) -> Result<Var<'t>> {
    let s = x.shape();
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    if t > cfg.max_positions || h > cfg.max_positions || w > cfg.max_positions {
        return Err(Error::Config(format!(
            "positional tables cover {} positions, input needs {t}×{h}×{w}",
            cfg.max_positions
        )));
    }
    let n = t * h * w;
    let mut out = x;
    for (axis, pick) in [("t", 0usize), ("y", 1), ("x", 2)] {
        let idx: Vec<usize> = (0..n * c)
            .map(|i| {
                let p = i / c;
                let pos = match pick {
                    0 => p / (h * w),
                    1 => (p / w) % h,
                    _ => p % w,
                };
                pos * c + i % c
            })
            .collect();
        out = out.add(
            params
                .get(&format!("pos.{axis}"))?
                .gather(Rc::new(idx), &s)?,
        )?;
    }
    Ok(out)
}

fn check_inputs(inp: &GeneratorInputs<'_, '_>) -> Result<(usize, usize, usize)> {
    let cs = inp.clothes.shape();
    if cs.len() != 4 {
        return Err(Error::dim("generator", &cs, &[0, 0, 0, 3]));
    }
    let (t, h, w) = (cs[0], cs[1], cs[2]);
    for v in [inp.person, inp.agnostic, inp.fusion_mask] {
        let s = v.shape();
        if s.len() != 4 || s[..3] != [t, h, w] {
            return Err(Error::dim("generator", &cs, &s));
        }
    }
    if inp.mask_c.shape() != [t, h, w] {
        return Err(Error::dim("generator", &[t, h, w], inp.mask_c.shape()));
    }
    Ok((t, h, w))
}

/// One block: `o + q`, optionally layer-normalized.
pub fn block_forward<'t>(
    params: &BoundParams<'t>,
    cfg: &MpdtConfig,
    blk: usize,
    state: Var<'t>,
    clothes: Var<'t>,
    agnostic: Var<'t>,
    mask_feat: &Tensor,
) -> Result<Var<'t>> {
    let e = embed(params, blk, state, clothes, agnostic)?;
    let o = dual_stream_attention(
        &e,
        mask_feat,
        cfg,
        params.get(&format!("block{blk}.out.w"))?,
        params.get(&format!("block{blk}.out.b"))?,
    )?;
    let next = o.add(e.q)?;
    Ok(if cfg.layer_norm {
        next.layer_norm(1e-5)
    } else {
        next
    })
}

fn encode_all<'t>(
    params: &BoundParams<'t>,
    cfg: &MpdtConfig,
    inp: &GeneratorInputs<'t, '_>,
) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
    let c = encode(params, cfg, ENCODERS[0], inp.clothes)?;
    let mut p = encode(params, cfg, ENCODERS[1], inp.person)?;
    let a = encode(params, cfg, ENCODERS[2], inp.agnostic)?;
    if cfg.positional_encoding {
        p = positional(params, cfg, p)?;
    }
    Ok((c, p, a))
}

fn finish<'t>(
    params: &BoundParams<'t>,
    cfg: &MpdtConfig,
    state: Var<'t>,
    inp: &GeneratorInputs<'t, '_>,
) -> Result<GeneratorOutput<'t>> {
    let (rendered, comp_mask) = decode(params, cfg, state)?;
    let masked = fuse_clothes(rendered, comp_mask, inp.clothes)?;
    let output = fuse_background(masked, inp.agnostic, inp.fusion_mask)?;
    Ok(GeneratorOutput {
        output,
        rendered,
        comp_mask,
        masked,
    })
}

/// Full differentiable forward pass; all frames in one pass.
pub fn generator_forward<'t>(
    params: &BoundParams<'t>,
    cfg: &MpdtConfig,
    inp: &GeneratorInputs<'t, '_>,
) -> Result<GeneratorOutput<'t>> {
    cfg.validate()?;
    check_inputs(inp)?;
    let mask_feat = pool_mask(inp.mask_c, cfg.downsample)?;
    let (c, p, a) = encode_all(params, cfg, inp)?;
    let mut state = p;
    for blk in 0..cfg.blocks {
        state = block_forward(params, cfg, blk, state, c, a, &mask_feat)?;
    }
    finish(params, cfg, state, inp)
}

/// Plain-tensor generator inputs for [`Mpdt::infer`].
pub struct GeneratorTensors<'a> {
    pub clothes: &'a Tensor,
    pub person: &'a Tensor,
    pub agnostic: &'a Tensor,
    pub mask_c: &'a Tensor,
    pub fusion_mask: &'a Tensor,
}

impl<'a> GeneratorTensors<'a> {
    /// Registers the inputs on `tape` as constants.
    pub fn bind<'t>(&self, tape: &'t Tape) -> GeneratorInputs<'t, 'a> {
        GeneratorInputs {
            clothes: tape.constant(self.clothes.clone()),
            person: tape.constant(self.person.clone()),
            agnostic: tape.constant(self.agnostic.clone()),
            mask_c: self.mask_c,
            fusion_mask: tape.constant(self.fusion_mask.clone()),
        }
    }
}

/// Forward-pass results as tensors.
#[derive(Clone, Debug)]
pub struct GeneratorResult {
    pub output: Tensor,
    pub rendered: Tensor,
    pub comp_mask: Tensor,
    pub masked: Tensor,
}

/// A configured generator with its parameters.
#[derive(Clone, Debug)]
pub struct Mpdt {
    pub config: MpdtConfig,
    pub inputs: InputChannels,
    pub params: ParamStore,
}

impl Mpdt {
    pub fn new(config: MpdtConfig, inputs: InputChannels, seed: u64) -> Result<Self> {
        let params = init_params(&config, inputs, seed)?;
        Ok(Self {
            config,
            inputs,
            params,
        })
    }

    /// Forward pass without gradients. Each block runs on its own tape so
    /// only one block's attention matrices are alive at a time.
    pub fn infer(&self, x: &GeneratorTensors<'_>) -> Result<GeneratorResult> {
        let cfg = &self.config;
        cfg.validate()?;
        let (c, p, a) = {
            let tape = Tape::new();
            let b = self.params.bind(&tape, false);
            let inp = x.bind(&tape);
            check_inputs(&inp)?;
            let (c, p, a) = encode_all(&b, cfg, &inp)?;
            (
                (*c.value()).clone(),
                (*p.value()).clone(),
                (*a.value()).clone(),
            )
        };
        let mask_feat = pool_mask(x.mask_c, cfg.downsample)?;
        let mut state = p;
        for blk in 0..cfg.blocks {
            let tape = Tape::new();
            let b = self.params.bind(&tape, false);
            let out = block_forward(
                &b,
                cfg,
                blk,
                tape.constant(state),
                tape.constant(c.clone()),
                tape.constant(a.clone()),
                &mask_feat,
            )?;
            state = (*out.value()).clone();
        }
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let inp = x.bind(&tape);
        let out = finish(&b, cfg, tape.constant(state), &inp)?;
        Ok(GeneratorResult {
            output: (*out.output.value()).clone(),
            rendered: (*out.rendered.value()).clone(),
            comp_mask: (*out.comp_mask.value()).clone(),
            masked: (*out.masked.value()).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MpdtConfig {
        MpdtConfig {
            channels: 8,
            blocks: 2,
            heads: 2,
            patch_sizes: vec![(2, 2), (1, 1)],
            ..MpdtConfig::default()
        }
    }

    fn seq(t: usize, h: usize, w: usize, c: usize, k: f64) -> Tensor {
        Tensor::from_fn(&[t, h, w, c], |i| ((i as f64 * k).sin() + 1.0) * 0.5)
    }

    #[test]
    fn patch_round_trip_is_exact() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 4, 6, 1], |i| i as f64 * 0.37));
        let ps = PatchSet::new((2, 4, 6), (2, 3), 0, 1, 1).unwrap();
        assert_eq!(ps.count(), 2 * 2 * 2);
        let back = ps.merge(ps.split(x).unwrap()).unwrap();
        assert_eq!(*back.value(), *x.value());
    }

    #[test]
    fn encoder_and_decoder_shapes() {
        let cfg = small();
        let store = init_params(&cfg, InputChannels::default(), 1).unwrap();
        let tape = Tape::new();
        let b = store.bind(&tape, false);
        let e = encode(&b, &cfg, "enc_c", tape.constant(seq(2, 32, 32, 3, 0.1))).unwrap();
        assert_eq!(e.shape(), vec![2, 8, 8, 8]);
        let (img, m) = decode(&b, &cfg, e).unwrap();
        assert_eq!(img.shape(), vec![2, 32, 32, 3]);
        assert_eq!(m.shape(), vec![2, 32, 32, 1]);
        assert!(m.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(encode(&b, &cfg, "enc_c", tape.constant(seq(1, 30, 32, 3, 0.1))).is_err());
    }

    #[test]
    fn zero_input_gives_identical_frames() {
        let cfg = small();
        let store = init_params(&cfg, InputChannels::default(), 2).unwrap();
        let tape = Tape::new();
        let b = store.bind(&tape, false);
        let e = encode(
            &b,
            &cfg,
            "enc_a",
            tape.constant(Tensor::zeros(&[2, 8, 8, 3])),
        )
        .unwrap();
        let v = e.value();
        let half = v.len() / 2;
        assert_eq!(&v.data()[..half], &v.data()[half..]);
    }

    #[test]
    fn fusion_endpoints() {
        let tape = Tape::new();
        let ir = tape.constant(Tensor::zeros(&[1, 2, 2, 3]));
        let ct = tape.constant(Tensor::ones(&[1, 2, 2, 3]));
        let half = tape.constant(Tensor::full(&[1, 2, 2, 1], 0.5));
        let out = fuse_clothes(ir, half, ct).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.5));
        let bad = tape.constant(Tensor::full(&[1, 2, 2, 1], 1.5));
        assert!(matches!(fuse_clothes(ir, bad, ct), Err(Error::Contract(_))));
        let one = tape.constant(Tensor::ones(&[1, 2, 2, 1]));
        let a = tape.constant(seq(1, 2, 2, 3, 0.7));
        let fb = fuse_background(ct, a, one).unwrap();
        assert_eq!(*fb.value(), *a.value());
    }

    #[test]
    fn forward_and_infer_agree() {
        let cfg = small();
        let g = Mpdt::new(cfg.clone(), InputChannels::default(), 3).unwrap();
        let (c, p, a) = (
            seq(2, 16, 16, 3, 0.1),
            seq(2, 16, 16, 2, 0.2),
            seq(2, 16, 16, 3, 0.3),
        );
        let mask_c = Tensor::from_fn(&[2, 16, 16], |i| if i % 7 < 3 { 1.0 } else { 0.0 });
        let fm = Tensor::from_fn(&[2, 16, 16, 1], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let tape = Tape::new();
        let b = g.params.bind(&tape, false);
        let inp = GeneratorInputs {
            clothes: tape.constant(c.clone()),
            person: tape.constant(p.clone()),
            agnostic: tape.constant(a.clone()),
            mask_c: &mask_c,
            fusion_mask: tape.constant(fm.clone()),
        };
        let out = generator_forward(&b, &cfg, &inp).unwrap();
        assert_eq!(out.output.shape(), vec![2, 16, 16, 3]);
        let r = g
            .infer(&GeneratorTensors {
                clothes: &c,
                person: &p,
                agnostic: &a,
                mask_c: &mask_c,
                fusion_mask: &fm,
            })
            .unwrap();
        assert_eq!(r.output, *out.output.value());
        let (o, av, m) = (r.output.data(), a.data(), fm.data());
        for i in 0..o.len() {
            if m[i / 3] == 1.0 {
                assert_eq!(o[i], av[i]);
            }
        }
    }

    #[test]
    fn config_checks() {
        assert!(MpdtConfig::default().validate().is_ok());
        let bad = MpdtConfig {
            channels: 10,
            heads: 4,
            ..MpdtConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert_eq!(fit_patch(8, 12), 6);
        assert_eq!(fit_patch(8, 16), 8);
        assert_eq!(fit_patch(4, 7), 1);
    }
}
