//! Residual network: stem conv, four stages of basic blocks, global average
//! pool and a fully-connected head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops::{self, Act, BnCache, ConvShape};
use super::NetError;
use crate::field::SliceSample;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_channels: usize,
    pub stem_width: usize,
    pub stage_widths: [usize; 4],
    pub blocks_per_stage: usize,
    pub output_dim: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl NetConfig {
    /// Reduced widths for CPU training.
    pub fn desk(coils: usize, height: usize, width: usize) -> Self {
        Self {
            input_channels: 2 * coils,
            stem_width: 16,
            stage_widths: [16, 32, 64, 128],
            blocks_per_stage: 2,
            output_dim: 2 * coils,
            height,
            width,
            seed: 0,
        }
    }

    pub fn paper_scale(coils: usize, height: usize, width: usize) -> Self {
        Self { stem_width: 64, stage_widths: [64, 128, 256, 512], ..Self::desk(coils, height, width) }
    }

    pub fn with_widths(self, stem: usize, widths: [usize; 4]) -> Self {
        Self { stem_width: stem, stage_widths: widths, ..self }
    }

    pub fn coils(&self) -> usize {
        self.output_dim / 2
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.stage_widths.windows(2).any(|p| p[1] != 2 * p[0]) {
            return bad(format!("stage widths must double per stage, got {:?}", self.stage_widths));
        }
        if self.stage_widths[0] == 0 || self.stem_width == 0 {
            return bad("widths must be positive".into());
        }
        if self.output_dim == 0 || self.output_dim % 2 != 0 {
            return bad(format!("output_dim must be even and positive, got {}", self.output_dim));
        }
        if self.input_channels == 0 || self.blocks_per_stage == 0 {
            return bad("input_channels and blocks_per_stage must be positive".into());
        }
        if self.height == 0 || self.width == 0 {
            return bad("input size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    shape: ConvShape,
    off: usize,
}

#[derive(Debug, Clone, Copy)]
struct Bn {
    ch: usize,
    /// gamma at `off`, beta at `off + ch`.
    off: usize,
    /// running mean at `stat`, running var at `stat + ch`.
    stat: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Conv,
    bn1: Bn,
    conv2: Conv,
    bn2: Bn,
    proj: Option<(Conv, Bn)>,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: Conv,
    stem_bn: Bn,
    blocks: Vec<Block>,
    fc_w: usize,
    fc_b: usize,
    fc_in: usize,
    n_params: usize,
    n_stats: usize,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut n_params = 0;
        let mut n_stats = 0;
        let mut conv = |cin, cout, k, stride| {
            let shape = ConvShape { cin, cout, k, stride, pad: k / 2 };
            let c = Conv { shape, off: n_params };
            n_params += shape.weights();
            c
        };
        let mut convs = Vec::new();
        let stem_shape = conv(cfg.input_channels, cfg.stem_width, 3, 1);
        let mut cin = cfg.stem_width;
        for (s, &w) in cfg.stage_widths.iter().enumerate() {
            for b in 0..cfg.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let c1 = conv(cin, w, 3, stride);
                let c2 = conv(w, w, 3, 1);
                let p = (stride != 1 || cin != w).then(|| conv(cin, w, 1, stride));
                convs.push((c1, c2, p));
                cin = w;
            }
        }
        let mut bn = |ch| {
            let b = Bn { ch, off: n_params, stat: n_stats };
            n_params += 2 * ch;
            n_stats += 2 * ch;
            b
        };
        let stem_bn = bn(cfg.stem_width);
        let blocks = convs
            .into_iter()
            .map(|(conv1, conv2, p)| Block {
                conv1,
                bn1: bn(conv1.shape.cout),
                conv2,
                bn2: bn(conv2.shape.cout),
                proj: p.map(|c| (c, bn(c.shape.cout))),
            })
            .collect();
        let fc_in = cfg.stage_widths[3];
        let fc_w = n_params;
        let fc_b = fc_w + fc_in * cfg.output_dim;
        n_params = fc_b + cfg.output_dim;
        Self { stem: stem_shape, stem_bn, blocks, fc_w, fc_b, fc_in, n_params, n_stats }
    }
}

/// Network parameters plus batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ResNet {
    cfg: NetConfig,
    layout: Layout,
    /// Flat trainable parameters.
    pub params: Vec<f64>,
    /// Running means and variances, not trained by gradient.
    pub stats: Vec<f64>,
}

/// A batch of network inputs, `[n][channels][h][w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch(pub Act);

impl InputBatch {
    /// Channel `2c` holds `Re b1_c`, channel `2c + 1` holds `Im b1_c`; voxels
    /// outside the mask are zero.
    pub fn encode(samples: &[&SliceSample]) -> Result<Self, NetError> {
        let first = samples.first().ok_or_else(|| NetError::Dimension("empty batch".into()))?;
        let (h, w, c) = (first.b1.height, first.b1.width, first.b1.channels);
        let mut act = Act::zeros(samples.len(), 2 * c, h, w);
        let p = h * w;
        for (i, s) in samples.iter().enumerate() {
            if (s.b1.height, s.b1.width, s.b1.channels) != (h, w, c) {
                return Err(NetError::Dimension(format!(
                    "sample {i} is {}x{}x{}, batch is {h}x{w}x{c}",
                    s.b1.height, s.b1.width, s.b1.channels
                )));
            }
            let dst = act.sample_mut(i);
            for v in s.mask.indices() {
                for (coil, z) in s.b1.voxel(v).iter().enumerate() {
                    dst[2 * coil * p + v] = z.re;
                    dst[(2 * coil + 1) * p + v] = z.im;
                }
            }
        }
        Ok(Self(act))
    }
}

struct BlockTrace {
    input: Act,
    bn1: BnCache,
    a1: Act,
    bn2: BnCache,
    proj_bn: Option<BnCache>,
    out: Act,
}

/// Intermediates recorded by a training-mode forward pass.
pub struct Trace {
    input: Act,
    stem_bn: BnCache,
    stem_out: Act,
    blocks: Vec<BlockTrace>,
    pooled: Vec<f64>,
}

impl Trace {
    /// `(mean, biased var)` batch statistics of every BN layer, in layout order.
    fn bn_caches(&self) -> Vec<&BnCache> {
        let mut v = vec![&self.stem_bn];
        for b in &self.blocks {
            v.push(&b.bn1);
            v.push(&b.bn2);
            if let Some(p) = &b.proj_bn {
                v.push(p);
            }
        }
        v
    }
}

/// Output of [`ResNet::forward`]. Only training-mode passes carry a trace.
pub struct ForwardPass {
    pub outputs: Vec<f64>,
    pub batch: usize,
    trace: Option<Trace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl ResNet {
    /// Fan-in scaled normal init for convolutions and the FC weights; unit
    /// BN scale, zero BN shift and FC bias.
    pub fn new(cfg: NetConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![0.0; layout.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fill = |dst: &mut [f64], std: f64| {
            for v in dst {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std * z;
            }
        };
        let mut conv_init = |params: &mut [f64], c: &Conv| {
            let fan_in = (c.shape.cin * c.shape.k * c.shape.k) as f64;
            fill(&mut params[c.off..c.off + c.shape.weights()], (2.0 / fan_in).sqrt());
        };
        conv_init(&mut params, &layout.stem);
        for b in &layout.blocks {
            conv_init(&mut params, &b.conv1);
            conv_init(&mut params, &b.conv2);
            if let Some((p, _)) = &b.proj {
                conv_init(&mut params, p);
            }
        }
        let fc_len = layout.fc_in * cfg.output_dim;
        fill(&mut params[layout.fc_w..layout.fc_w + fc_len], (1.0 / layout.fc_in as f64).sqrt());
        let mut stats = vec![0.0; layout.n_stats];
        for bn in all_bns(&layout) {
            params[bn.off..bn.off + bn.ch].fill(1.0);
            stats[bn.stat + bn.ch..bn.stat + 2 * bn.ch].fill(1.0);
        }
        Ok(Self { cfg, layout, params, stats })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.layout.n_params
    }

    pub fn stats_count(&self) -> usize {
        self.layout.n_stats
    }

    fn check_input(&self, x: &InputBatch) -> Result<(), NetError> {
        let a = &x.0;
        if (a.c, a.h, a.w) != (self.cfg.input_channels, self.cfg.height, self.cfg.width) {
            return Err(NetError::Dimension(format!(
                "input {}x{}x{} does not match network {}x{}x{}",
                a.c, a.h, a.w, self.cfg.input_channels, self.cfg.height, self.cfg.width
            )));
        }
        if a.n == 0 {
            return Err(NetError::Dimension("empty batch".into()));
        }
        Ok(())
    }

    fn bn(&self, x: &Act, bn: &Bn, mode: Mode) -> (Act, Option<BnCache>) {
        let gamma = &self.params[bn.off..bn.off + bn.ch];
        let beta = &self.params[bn.off + bn.ch..bn.off + 2 * bn.ch];
        match mode {
            Mode::Train => {
                let (y, c) = ops::bn_forward_train(x, gamma, beta, BN_EPS);
                (y, Some(c))
            }
            Mode::Eval => {
                let mean = &self.stats[bn.stat..bn.stat + bn.ch];
                let var = &self.stats[bn.stat + bn.ch..bn.stat + 2 * bn.ch];
                (ops::bn_forward_eval(x, gamma, beta, mean, var, BN_EPS), None)
            }
        }
    }

    fn conv(&self, x: &Act, c: &Conv) -> Act {
        ops::conv_forward(x, &self.params[c.off..c.off + c.shape.weights()], &c.shape)
    }

    /// Raw `output_dim` reals per sample, row-major `[n][output_dim]`.
    pub fn forward(&self, x: &InputBatch, mode: Mode) -> Result<ForwardPass, NetError> {
        self.check_input(x)?;
        if mode == Mode::Train && x.0.n < 2 {
            return Err(NetError::Dimension("training mode needs a batch of at least 2".into()));
        }
        let l = &self.layout;
        let (mut h, stem_bn) = self.bn(&self.conv(&x.0, &l.stem), &l.stem_bn, mode);
        ops::relu_inplace(&mut h);
        let stem_out = h.clone();
        let mut blocks = Vec::new();
        for b in &l.blocks {
            let (mut a1, bn1) = self.bn(&self.conv(&h, &b.conv1), &b.bn1, mode);
            ops::relu_inplace(&mut a1);
            let (mut out, bn2) = self.bn(&self.conv(&a1, &b.conv2), &b.bn2, mode);
            let (shortcut, proj_bn) = match &b.proj {
                Some((pc, pb)) => self.bn(&self.conv(&h, pc), pb, mode),
                None => (h.clone(), None),
            };
            for (o, s) in out.data.iter_mut().zip(&shortcut.data) {
                *o += s;
            }
            ops::relu_inplace(&mut out);
            if mode == Mode::Train {
                blocks.push(BlockTrace { input: h, bn1: bn1.unwrap(), a1, bn2: bn2.unwrap(), proj_bn, out: out.clone() });
            }
            h = out;
        }
        let pooled = ops::avg_pool(&h);
        let fc_len = l.fc_in * self.cfg.output_dim;
        let outputs = ops::linear_forward(
            &pooled,
            h.n,
            l.fc_in,
            &self.params[l.fc_w..l.fc_w + fc_len],
            &self.params[l.fc_b..l.fc_b + self.cfg.output_dim],
        );
        let trace = (mode == Mode::Train).then(|| Trace { input: x.0.clone(), stem_bn: stem_bn.unwrap(), stem_out, blocks, pooled });
        Ok(ForwardPass { outputs, batch: x.0.n, trace })
    }

    /// Gradient of `sum(adjoint * outputs)` with respect to every parameter.
    pub fn backward(&self, pass: &ForwardPass, adjoint: &[f64]) -> Result<Vec<f64>, NetError> {
        let t = pass.trace.as_ref().ok_or(NetError::Usage("backward needs a training-mode forward pass"))?;
        let n = pass.batch;
        if adjoint.len() != n * self.cfg.output_dim {
            return Err(NetError::Dimension(format!("adjoint has {} entries, expected {}", adjoint.len(), n * self.cfg.output_dim)));
        }
        let l = &self.layout;
        let mut grad = vec![0.0; l.n_params];
        let fc_len = l.fc_in * self.cfg.output_dim;
        let (dpool, dw, db) = ops::linear_backward(&t.pooled, n, l.fc_in, &self.params[l.fc_w..l.fc_w + fc_len], adjoint);
        grad[l.fc_w..l.fc_w + fc_len].copy_from_slice(&dw);
        grad[l.fc_b..l.fc_b + self.cfg.output_dim].copy_from_slice(&db);

        let last = t.blocks.last().map_or(&t.stem_out, |b| &b.out);
        let mut dh = ops::avg_pool_backward(&dpool, n, last.c, last.h, last.w);
        for (b, bt) in l.blocks.iter().zip(&t.blocks).rev() {
            ops::relu_backward_inplace(&bt.out, &mut dh);
            let d2 = self.bn_backward(&bt.bn2, &b.bn2, &dh, &mut grad);
            let mut da1 = self.conv_backward(&bt.a1, &b.conv2, &d2, &mut grad);
            ops::relu_backward_inplace(&bt.a1, &mut da1);
            let d1 = self.bn_backward(&bt.bn1, &b.bn1, &da1, &mut grad);
            let mut dx = self.conv_backward(&bt.input, &b.conv1, &d1, &mut grad);
            match (&b.proj, &bt.proj_bn) {
                (Some((pc, pb)), Some(cache)) => {
                    let dp = self.bn_backward(cache, pb, &dh, &mut grad);
                    let ds = self.conv_backward(&bt.input, pc, &dp, &mut grad);
                    add_into(&mut dx, &ds);
                }
                _ => add_into(&mut dx, &dh),
            }
            dh = dx;
        }
        ops::relu_backward_inplace(&t.stem_out, &mut dh);
        let ds = self.bn_backward(&t.stem_bn, &l.stem_bn, &dh, &mut grad);
        let (_, dw) = ops::conv_backward(&t.input, &self.params[l.stem.off..l.stem.off + l.stem.shape.weights()], &l.stem.shape, &ds);
        grad[l.stem.off..l.stem.off + dw.len()].copy_from_slice(&dw);
        Ok(grad)
    }

    fn bn_backward(&self, cache: &BnCache, bn: &Bn, dy: &Act, grad: &mut [f64]) -> Act {
        let (dx, dg, db) = ops::bn_backward(cache, &self.params[bn.off..bn.off + bn.ch], dy);
        grad[bn.off..bn.off + bn.ch].copy_from_slice(&dg);
        grad[bn.off + bn.ch..bn.off + 2 * bn.ch].copy_from_slice(&db);
        dx
    }

    fn conv_backward(&self, x: &Act, c: &Conv, dy: &Act, grad: &mut [f64]) -> Act {
        let (dx, dw) = ops::conv_backward(x, &self.params[c.off..c.off + c.shape.weights()], &c.shape, dy);
        grad[c.off..c.off + dw.len()].copy_from_slice(&dw);
        dx
    }

    /// Fold the batch statistics of a training pass into the running stats.
    /// Running variance uses the unbiased estimate.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) -> Result<(), NetError> {
        let t = pass.trace.as_ref().ok_or(NetError::Usage("running stats need a training-mode forward pass"))?;
        let layout_bns = all_bns(&self.layout);
        for (bn, cache) in layout_bns.iter().zip(t.bn_caches()) {
            let m = (cache.xhat.n * cache.xhat.plane()) as f64;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ch in 0..bn.ch {
                let rm = &mut self.stats[bn.stat + ch];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * cache.mean[ch];
                let rv = &mut self.stats[bn.stat + bn.ch + ch];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * cache.var[ch] * unbias;
            }
        }
        Ok(())
    }

    /// Round parameters and running statistics to `f32`, the checkpoint precision.
    pub fn quantize_f32(&mut self) {
        for v in self.params.iter_mut().chain(self.stats.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    pub(crate) fn from_parts(cfg: NetConfig, params: Vec<f64>, stats: Vec<f64>) -> Result<Self, NetError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.n_params || stats.len() != layout.n_stats {
            return Err(NetError::Dimension(format!(
                "{} params / {} stats for a network expecting {} / {}",
                params.len(),
                stats.len(),
                layout.n_params,
                layout.n_stats
            )));
        }
        Ok(Self { cfg, layout, params, stats })
    }
}

fn all_bns(l: &Layout) -> Vec<Bn> {
    let mut v = vec![l.stem_bn];
    for b in &l.blocks {
        v.push(b.bn1);
        v.push(b.bn2);
        if let Some((_, p)) = b.proj {
            v.push(p);
        }
    }
    v
}

fn add_into(a: &mut Act, b: &Act) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny(seed: u64) -> NetConfig {
        NetConfig { seed, ..NetConfig::desk(2, 8, 8).with_widths(2, [2, 4, 8, 16]) }
    }

    fn random_input(rng: &mut ChaCha8Rng, cfg: &NetConfig, n: usize) -> InputBatch {
        let mut a = Act::zeros(n, cfg.input_channels, cfg.height, cfg.width);
        a.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        InputBatch(a)
    }

    /// Independent count: each 3x3 conv has 9*cin*cout weights, each BN two
    /// vectors, projections appear where the width or stride changes.
    fn tally(cfg: &NetConfig) -> usize {
        let mut total = 9 * cfg.input_channels * cfg.stem_width + 2 * cfg.stem_width;
        let mut prev = cfg.stem_width;
        for (s, &w) in cfg.stage_widths.iter().enumerate() {
            for b in 0..cfg.blocks_per_stage {
                total += 9 * prev * w + 2 * w + 9 * w * w + 2 * w;
                if (s > 0 && b == 0) || prev != w {
                    total += prev * w + 2 * w;
                }
                prev = w;
            }
        }
        total + prev * cfg.output_dim + cfg.output_dim
    }

    #[test]
    fn parameter_count_matches_tally() {
        let desk = NetConfig::desk(8, 64, 64);
        let net = ResNet::new(desk.clone()).unwrap();
        assert_eq!(net.param_count(), tally(&desk));
        // Hand sum for the desk widths: stem 2336, stage 1 9344, stage 2 33088,
        // stage 3 131712, stage 4 525568, head 2064.
        assert_eq!(net.param_count(), 2336 + 9344 + 33088 + 131712 + 525568 + 2064);
        for cfg in [tiny(0), NetConfig::paper_scale(8, 16, 16), NetConfig::desk(4, 12, 12).with_widths(8, [8, 16, 32, 64])] {
            assert_eq!(ResNet::new(cfg.clone()).unwrap().param_count(), tally(&cfg));
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::desk(8, 16, 16).with_widths(16, [16, 32, 48, 128]).validate().is_err());
        assert!(NetConfig { output_dim: 3, ..NetConfig::desk(8, 16, 16) }.validate().is_err());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let net = ResNet::new(tiny(1)).unwrap();
        let x = InputBatch(Act::zeros(3, 4, 8, 8));
        for mode in [Mode::Train, Mode::Eval] {
            let out = net.forward(&x, mode).unwrap().outputs;
            assert!(out.iter().all(|&v| v == 0.0), "{mode:?}: {out:?}");
        }
    }

    #[test]
    fn eval_independent_of_batch_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = tiny(2);
        let mut net = ResNet::new(cfg.clone()).unwrap();
        // Move running stats away from their initial values first.
        let warm = random_input(&mut rng, &cfg, 4);
        let pass = net.forward(&warm, Mode::Train).unwrap();
        net.update_running_stats(&pass).unwrap();

        let batch = random_input(&mut rng, &cfg, 5);
        let all = net.forward(&batch, Mode::Eval).unwrap().outputs;
        let again = net.forward(&batch, Mode::Eval).unwrap().outputs;
        assert_eq!(all, again);
        let per = cfg.input_channels * 64;
        for i in 0..5 {
            let single = InputBatch(Act { n: 1, data: batch.0.data[i * per..(i + 1) * per].to_vec(), ..batch.0.clone() });
            let out = net.forward(&single, Mode::Eval).unwrap().outputs;
            assert_eq!(out, all[i * 4..(i + 1) * 4]);
        }
    }

    #[test]
    fn shape_errors() {
        let net = ResNet::new(tiny(0)).unwrap();
        assert!(matches!(net.forward(&InputBatch(Act::zeros(2, 4, 8, 7)), Mode::Eval), Err(NetError::Dimension(_))));
        assert!(matches!(net.forward(&InputBatch(Act::zeros(1, 4, 8, 8)), Mode::Train), Err(NetError::Dimension(_))));
        let eval = net.forward(&InputBatch(Act::zeros(2, 4, 8, 8)), Mode::Eval).unwrap();
        assert!(matches!(net.backward(&eval, &[0.0; 8]), Err(NetError::Usage(_))));
    }

    fn loss(net: &ResNet, x: &InputBatch, adj: &[f64]) -> f64 {
        net.forward(x, Mode::Train).unwrap().outputs.iter().zip(adj).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = tiny(3);
        let mut net = ResNet::new(cfg.clone()).unwrap();
        // Nonzero FC bias and BN shift so no parameter sits at a symmetric point.
        for v in net.params.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let x = random_input(&mut rng, &cfg, 2);
        let adj: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pass = net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(&pass, &adj).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..net.param_count() {
            let mut a = net.clone();
            a.params[k] += h;
            let mut b = net.clone();
            b.params[k] -= h;
            let fd = (loss(&a, &x, &adj) - loss(&b, &x, &adj)) / (2.0 * h);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-4);
            worst = worst.max(err);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn doubled_adjoint_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = tiny(4);
        let net = ResNet::new(cfg.clone()).unwrap();
        let x = random_input(&mut rng, &cfg, 3);
        let adj: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let adj2: Vec<f64> = adj.iter().map(|a| 2.0 * a).collect();
        let pass = net.forward(&x, Mode::Train).unwrap();
        let g1 = net.backward(&pass, &adj).unwrap();
        let g2 = net.backward(&pass, &adj2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn dead_relu_gets_zero_gradient() {
        // Stem channel 0 with BN shift far below zero is dead for every input,
        // so its BN scale receives no gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = tiny(5);
        let mut net = ResNet::new(cfg.clone()).unwrap();
        let bn = net.layout.stem_bn;
        net.params[bn.off + bn.ch] = -100.0;
        let x = random_input(&mut rng, &cfg, 2);
        let pass = net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(&pass, &[1.0; 8]).unwrap();
        assert_eq!(g[bn.off], 0.0);
        assert_eq!(g[bn.off + bn.ch], 0.0);
        let stem = net.layout.stem;
        let per_out = stem.shape.cin * 9;
        assert!(g[stem.off..stem.off + per_out].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = tiny(6);
        let mut net = ResNet::new(cfg.clone()).unwrap();
        let x = random_input(&mut rng, &cfg, 2);
        let pass = net.forward(&x, Mode::Train).unwrap();
        net.update_running_stats(&pass).unwrap();
        // Stem BN sees the stem conv output; recompute its channel-0 stats directly.
        let stem = net.layout.stem;
        let y = ops::conv_forward(&x.0, &net.params[stem.off..stem.off + stem.shape.weights()], &stem.shape);
        let vals: Vec<f64> = (0..2).flat_map(|i| y.sample(i)[..64].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / 128.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 127.0;
        let bn = net.layout.stem_bn;
        assert!((net.stats[bn.stat] - 0.1 * mean).abs() < 1e-12);
        assert!((net.stats[bn.stat + bn.ch] - (0.9 + 0.1 * var)).abs() < 1e-12);
    }
}
