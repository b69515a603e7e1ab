use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Act, ConvWeights};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub skip_connections: bool,
    pub decoder_dropout: f64,
    /// Add the input image to the output conv (the network predicts a
    /// correction instead of the whole image).
    pub residual_output: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            levels: 3,
            channels: vec![16, 32, 64],
            skip_connections: true,
            decoder_dropout: 0.2,
            residual_output: false,
        }
    }
}

pub const CONVS_PER_LEVEL: usize = 3;

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Validation("network needs at least one level".into()));
        }
        if self.channels.len() != self.levels {
            return Err(Error::Validation(format!(
                "{} channel widths given for {} levels",
                self.channels.len(),
                self.levels
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Validation("channel widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.decoder_dropout) {
            return Err(Error::Validation(format!(
                "dropout rate {} outside [0, 1)",
                self.decoder_dropout
            )));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if height == 0 || width == 0 || height % d != 0 || width % d != 0 {
            return Err(Error::Dimension(format!(
                "layer enc0.conv0: input {height}x{width} is not divisible by {d} ({} pooling levels)",
                self.levels
            )));
        }
        Ok(())
    }

    /// Block specs in forward order.
    pub fn block_specs(&self) -> Vec<BlockSpec> {
        let l = self.levels;
        let ch = &self.channels;
        let mut specs = Vec::with_capacity(6 * l + 4);
        for lv in 0..l {
            for c in 0..CONVS_PER_LEVEL {
                let in_ch = match (lv, c) {
                    (0, 0) => 1,
                    (_, 0) => ch[lv - 1],
                    _ => ch[lv],
                };
                specs.push(BlockSpec::new(format!("enc{lv}.conv{c}"), in_ch, ch[lv], true, false));
            }
        }
        for c in 0..CONVS_PER_LEVEL {
            specs.push(BlockSpec::new(format!("mid.conv{c}"), ch[l - 1], ch[l - 1], true, true));
        }
        for lv in (0..l).rev() {
            let up = if lv == l - 1 { ch[l - 1] } else { ch[lv + 1] };
            for c in 0..CONVS_PER_LEVEL {
                let in_ch = if c == 0 {
                    up + if self.skip_connections { ch[lv] } else { 0 }
                } else {
                    ch[lv]
                };
                specs.push(BlockSpec::new(format!("dec{lv}.conv{c}"), in_ch, ch[lv], true, true));
            }
        }
        specs.push(BlockSpec::new("out".into(), ch[0], 1, false, false));
        specs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub rectified: bool,
    pub dropout: bool,
}

impl BlockSpec {
    fn new(name: String, in_ch: usize, out_ch: usize, rectified: bool, dropout: bool) -> Self {
        BlockSpec {
            name,
            in_ch,
            out_ch,
            rectified,
            dropout,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, 3, 3]
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * 9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub spec: BlockSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerBlock {
    fn conv(&self) -> ConvWeights<'_> {
        ConvWeights {
            in_ch: self.spec.in_ch,
            out_ch: self.spec.out_ch,
            weights: &self.weights,
            bias: &self.bias,
        }
    }
}

/// Entry of the layout manifest: where a block sits and what it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub position: usize,
    pub name: String,
    pub weight_shape: [usize; 4],
    pub bias_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub config: NetworkConfig,
    pub seed: u64,
    pub blocks: Vec<LayerBlock>,
}

impl NetworkParameters {
    pub fn layout(&self) -> Vec<LayoutEntry> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(position, b)| LayoutEntry {
                position,
                name: b.spec.name.clone(),
                weight_shape: b.spec.weight_shape(),
                bias_len: b.spec.out_ch,
            })
            .collect()
    }

    pub fn block(&self, name: &str) -> Option<&LayerBlock> {
        self.blocks.iter().find(|b| b.spec.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().map(|b| b.weights.len() + b.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = self.config.block_specs();
        if specs.len() != self.blocks.len() {
            return Err(Error::Validation(format!(
                "config implies {} blocks, parameters hold {}",
                specs.len(),
                self.blocks.len()
            )));
        }
        for (s, b) in specs.iter().zip(&self.blocks) {
            if *s != b.spec || b.weights.len() != s.weight_len() || b.bias.len() != s.out_ch {
                return Err(Error::Validation(format!("block {} does not match the config", s.name)));
            }
            if b.weights.iter().chain(&b.bias).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("block {} holds non-finite values", s.name)));
            }
        }
        Ok(())
    }

    /// Zero-valued buffers shaped like these parameters.
    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockGrad {
                    weights: vec![0.0; b.weights.len()],
                    bias: vec![0.0; b.bias.len()],
                })
                .collect(),
        }
    }
}

/// Rectified layers use the He-uniform bound `sqrt(6 / fan_in)`, the linear
/// output layer `sqrt(3 / fan_in)`.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParameters> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = cfg
        .block_specs()
        .into_iter()
        .map(|spec| {
            let fan_in = (spec.in_ch * 9) as f64;
            let bound = if spec.rectified { (6.0 / fan_in).sqrt() } else { (3.0 / fan_in).sqrt() };
            let weights = (0..spec.weight_len()).map(|_| rng.random_range(-bound..bound)).collect();
            let bias = vec![0.0; spec.out_ch];
            LayerBlock { spec, weights, bias }
        })
        .collect();
    Ok(NetworkParameters {
        config: cfg.clone(),
        seed,
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients laid out exactly like [`NetworkParameters::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<BlockGrad>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().flat_map(|b| b.weights.iter().chain(&b.bias).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
struct SampleCache {
    conv_in: Vec<Act>,
    conv_out: Vec<Act>,
    masks: Vec<Option<Vec<f64>>>,
    pool_arg: Vec<Vec<u32>>,
    pool_in_shape: Vec<(usize, usize, usize)>,
}

/// Everything [`backward`] needs from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    mode: Mode,
    output: Tensor4,
    samples: Vec<SampleCache>,
}

impl Cache {
    pub fn output(&self) -> &Tensor4 {
        &self.output
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Dropout masks (scale factors) of batch element `b`, keyed by block name.
    pub fn dropout_masks(&self, p: &NetworkParameters, b: usize) -> Vec<(String, Vec<f64>)> {
        self.samples
            .get(b)
            .map(|s| {
                s.masks
                    .iter()
                    .zip(&p.blocks)
                    .filter_map(|(m, blk)| m.as_ref().map(|m| (blk.spec.name.clone(), m.clone())))
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub output: Tensor4,
    pub cache: Cache,
    /// Requested activation maps (post-rectifier) in the order asked for.
    pub taps: Vec<(String, Tensor4)>,
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

struct Runner<'a, R: ?Sized> {
    p: &'a NetworkParameters,
    mode: Mode,
    rng: &'a mut R,
    taps: &'a [&'a str],
    keep_cache: bool,
    cache: SampleCache,
    tapped: Vec<Option<Act>>,
    idx: usize,
}

impl<R: Rng + ?Sized> Runner<'_, R> {
    fn conv(&mut self, x: Act) -> Result<Act> {
        let blk = &self.p.blocks[self.idx];
        let mut y = layers::conv_forward(&x, &blk.conv())
            .map_err(|e| Error::Dimension(format!("layer {}: {e}", blk.spec.name)))?;
        if blk.spec.rectified {
            layers::relu_forward(&mut y);
        }
        if let Some(t) = self.taps.iter().position(|t| *t == blk.spec.name) {
            self.tapped[t] = Some(y.clone());
        }
        let mask = if blk.spec.dropout && self.mode == Mode::Train && self.p.config.decoder_dropout > 0.0 {
            Some(dropout_mask(self.rng, y.data.len(), self.p.config.decoder_dropout))
        } else {
            None
        };
        if self.keep_cache {
            self.cache.conv_in.push(x);
            self.cache.conv_out.push(y.clone());
        }
        if let Some(m) = &mask {
            layers::dropout_apply(&mut y, m);
        }
        if self.keep_cache {
            self.cache.masks.push(mask);
        }
        self.idx += 1;
        Ok(y)
    }

    fn run(&mut self, input: Act) -> Result<Act> {
        let levels = self.p.config.levels;
        let mut skips = Vec::with_capacity(levels);
        let identity = self.p.config.residual_output.then(|| input.data.clone());
        let mut x = input;
        for _ in 0..levels {
            for _ in 0..CONVS_PER_LEVEL {
                x = self.conv(x)?;
            }
            let (pooled, arg) = layers::maxpool_forward(&x);
            if self.keep_cache {
                self.cache.pool_arg.push(arg);
                self.cache.pool_in_shape.push((x.c, x.h, x.w));
            }
            skips.push(x);
            x = pooled;
        }
        for _ in 0..CONVS_PER_LEVEL {
            x = self.conv(x)?;
        }
        for lv in (0..levels).rev() {
            x = layers::upsample_forward(&x);
            if self.p.config.skip_connections {
                x = layers::concat_forward(&x, &skips[lv])?;
            }
            for _ in 0..CONVS_PER_LEVEL {
                x = self.conv(x)?;
            }
        }
        let mut out = self.conv(x)?;
        if let Some(id) = identity {
            for (o, i) in out.data.iter_mut().zip(id) {
                *o += i;
            }
        }
        Ok(out)
    }
}

fn act_batch(acts: &[Act]) -> Tensor4 {
    let a = &acts[0];
    let mut data = Vec::with_capacity(acts.len() * a.data.len());
    for x in acts {
        data.extend_from_slice(&x.data);
    }
    Tensor4::from_parts([acts.len(), a.c, a.h, a.w], data)
}

pub fn forward<R: Rng + ?Sized>(
    p: &NetworkParameters,
    x: &Tensor4,
    mode: Mode,
    rng: &mut R,
    taps: &[&str],
) -> Result<ForwardOutput> {
    let [batch, c, h, w] = x.shape();
    if c != 1 {
        return Err(Error::Dimension(format!("layer enc0.conv0: expected 1 input channel, got {c}")));
    }
    if batch == 0 {
        return Err(Error::Dimension("layer enc0.conv0: empty batch".into()));
    }
    p.config.check_input(h, w)?;
    for t in taps {
        if p.block(t).is_none() {
            return Err(Error::Validation(format!("unknown tap layer {t}")));
        }
    }
    let keep_cache = mode == Mode::Train;
    let mut outputs = Vec::with_capacity(batch);
    let mut samples = Vec::new();
    let mut tap_acts: Vec<Vec<Act>> = vec![Vec::with_capacity(batch); taps.len()];
    for b in 0..batch {
        let mut runner = Runner {
            p,
            mode,
            rng: &mut *rng,
            taps,
            keep_cache,
            cache: SampleCache {
                conv_in: Vec::new(),
                conv_out: Vec::new(),
                masks: Vec::new(),
                pool_arg: Vec::new(),
                pool_in_shape: Vec::new(),
            },
            tapped: vec![None; taps.len()],
            idx: 0,
        };
        let out = runner.run(Act::new(1, h, w, x.sample(b).to_vec()))?;
        for (slot, t) in tap_acts.iter_mut().zip(runner.tapped) {
            slot.push(t.expect("every tap layer runs once per sample"));
        }
        if keep_cache {
            samples.push(runner.cache);
        }
        outputs.push(out);
    }
    let output = act_batch(&outputs);
    let taps = taps
        .iter()
        .zip(tap_acts)
        .map(|(name, acts)| (name.to_string(), act_batch(&acts)))
        .collect();
    Ok(ForwardOutput {
        output: output.clone(),
        cache: Cache {
            mode,
            output,
            samples,
        },
        taps,
    })
}

/// Deterministic inference without dropout or cache.
pub fn infer(p: &NetworkParameters, x: &Tensor4) -> Result<Tensor4> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(forward(p, x, Mode::Infer, &mut rng, &[])?.output)
}

/// Exact gradients of [`super::mse_loss`] with respect to every parameter.
pub fn backward(p: &NetworkParameters, cache: &Cache, target: &Tensor4) -> Result<Gradients> {
    if cache.mode != Mode::Train || cache.samples.len() != cache.output.batch() {
        return Err(Error::Validation("backward needs the cache of a train-mode forward".into()));
    }
    if cache.output.shape() != target.shape() {
        return Err(Error::Validation(format!(
            "target shape {:?} does not match output shape {:?}",
            target.shape(),
            cache.output.shape()
        )));
    }
    let [batch, _, h, w] = target.shape();
    let scale = 2.0 / (batch * h * w) as f64;
    let mut grads = p.zeros_like();
    for (b, sc) in cache.samples.iter().enumerate() {
        let g: Vec<f64> = cache
            .output
            .sample(b)
            .iter()
            .zip(target.sample(b))
            .map(|(o, t)| scale * (o - t))
            .collect();
        backward_sample(p, sc, Act::new(1, h, w, g), &mut grads);
    }
    Ok(grads)
}

fn backward_sample(p: &NetworkParameters, sc: &SampleCache, grad_out: Act, grads: &mut Gradients) {
    let levels = p.config.levels;
    let mut idx = p.blocks.len();
    let mut conv_back = |g: Act, idx: &mut usize, need_input: bool| -> Option<Act> {
        *idx -= 1;
        let i = *idx;
        let blk = &p.blocks[i];
        let mut g = g;
        if let Some(m) = &sc.masks[i] {
            layers::dropout_apply(&mut g, m);
        }
        if blk.spec.rectified {
            layers::relu_backward(&sc.conv_out[i], &mut g);
        }
        let gb = &mut grads.blocks[i];
        layers::conv_backward(&sc.conv_in[i], &blk.conv(), &g, &mut gb.weights, &mut gb.bias, need_input)
    };

    let mut g = conv_back(grad_out, &mut idx, true).expect("input grad requested");
    let mut skip_grads: Vec<Option<Act>> = vec![None; levels];
    for (lv, slot) in skip_grads.iter_mut().enumerate() {
        for _ in 0..CONVS_PER_LEVEL {
            g = conv_back(g, &mut idx, true).expect("input grad requested");
        }
        if p.config.skip_connections {
            let up_ch = g.c - p.config.channels[lv];
            let (up, skip) = layers::concat_backward(&g, up_ch);
            *slot = Some(skip);
            g = up;
        }
        g = layers::upsample_backward(&g);
    }
    for _ in 0..CONVS_PER_LEVEL {
        g = conv_back(g, &mut idx, true).expect("input grad requested");
    }
    for lv in (0..levels).rev() {
        let (c, h, w) = sc.pool_in_shape[lv];
        g = layers::maxpool_backward(&g, &sc.pool_arg[lv], c, h, w);
        if let Some(s) = &skip_grads[lv] {
            for (a, b) in g.data.iter_mut().zip(&s.data) {
                *a += b;
            }
        }
        for c in 0..CONVS_PER_LEVEL {
            let first = lv == 0 && c == CONVS_PER_LEVEL - 1;
            match conv_back(g, &mut idx, !first) {
                Some(next) => g = next,
                None => return,
            }
        }
    }
}
