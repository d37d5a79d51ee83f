//! Conditional scene restorer: a small U-Net with one cross-attention block
//! per encoder level over [DegTokens ; bank rows], a residual output in
//! logit space, perceptual and adversarial losses.

use std::path::Path;

use face2scene_core::Image;
use face2scene_tensor::checkpoint::Checkpoint;
use face2scene_tensor::{Array, Graph, Init, Param, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};
use crate::mapnet::DegTokens;
use crate::nn::{array_to_image, from_tokens, images_to_array, to_tokens, Conv2d, Linear};

/// Seed of the fixed random feature extractor used by the perceptual term.
pub const PERCEPTUAL_SEED: u64 = 0x5eed_1ea5;
pub const DISC_SEED: u64 = 0xd15c_0001;
const LOGIT_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestorerConfig {
    pub base_width: usize,
    pub depth: usize,
    pub token_dim: usize,
    pub attn_dim: usize,
    pub bank_rows: usize,
    pub lambda_l2: f64,
    pub lambda_lpips: f64,
    pub lambda_gan: f64,
    /// Probability of an LQ target with the negative bank.
    pub p_n: f64,
    pub lambda_cfg: f64,
    pub steps: usize,
    pub lr: f64,
    pub d_lr: f64,
    pub batch: usize,
}

impl Default for RestorerConfig {
    fn default() -> Self {
        Self {
            base_width: 8,
            depth: 3,
            token_dim: 64,
            attn_dim: 16,
            bank_rows: 8,
            lambda_l2: 2.0,
            lambda_lpips: 5.0,
            lambda_gan: 0.5,
            p_n: 0.1,
            lambda_cfg: 1.10,
            steps: 500,
            lr: 2e-3,
            d_lr: 1e-3,
            batch: 4,
        }
    }
}

impl RestorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.depth < 2 || self.token_dim == 0 || self.attn_dim == 0 {
            return Err(config("base_width, token_dim, attn_dim must be positive and depth >= 2"));
        }
        for (n, v) in [
            ("lambda_l2", self.lambda_l2),
            ("lambda_lpips", self.lambda_lpips),
            ("lambda_gan", self.lambda_gan),
            ("lambda_cfg", self.lambda_cfg),
        ] {
            if !(v >= 0.0) {
                return Err(config(format!("{n} must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.p_n) {
            return Err(config(format!("p_n must lie in [0, 1), got {}", self.p_n)));
        }
        if self.batch == 0 {
            return Err(config("batch must be positive"));
        }
        Ok(())
    }

    /// Scene sides must divide by this.
    pub fn multiple(&self) -> usize {
        1 << (self.depth - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bank {
    Positive,
    Negative,
}

struct CrossAttn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    scale: f64,
}

impl CrossAttn {
    fn new(store: &mut ParamStore, name: &str, c: usize, d: usize, a: usize) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), c, a, false),
            k: Linear::new(store, &format!("{name}.k"), d, a, false),
            v: Linear::new(store, &format!("{name}.v"), d, c, false),
            o: Linear::new(store, &format!("{name}.o"), c, c, true),
            scale: 1.0 / (a as f64).sqrt(),
        }
    }

    fn forward<'g>(&self, x: Tensor<'g>, cond: Tensor<'g>) -> Tensor<'g> {
        let (h, w) = (x.dim(2), x.dim(3));
        let t = to_tokens(x);
        let a = (self.q.forward(t).matmul(self.k.forward(cond).t()) * self.scale).softmax();
        let y = self.o.forward(a.matmul(self.v.forward(cond)));
        x + from_tokens(y, h, w)
    }
}

pub struct Restorer {
    pub cfg: RestorerConfig,
    pub store: ParamStore,
    enc: Vec<(Conv2d, CrossAttn)>,
    dec: Vec<(Conv2d, Conv2d)>,
    out: Conv2d,
    pub bank_pos: Param,
    pub bank_neg: Param,
}

impl Restorer {
    pub fn new(cfg: &RestorerConfig, seed: u64) -> Result<Restorer> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let w = |l: usize| cfg.base_width << l;
        let mut enc = Vec::new();
        for l in 0..cfg.depth {
            let (cin, stride) = if l == 0 { (3, 1) } else { (w(l - 1), 2) };
            let conv = Conv2d::new(&mut store, &format!("enc.{l}.conv"), cin, w(l), 3, stride, true);
            let att = CrossAttn::new(&mut store, &format!("enc.{l}.xattn"), w(l), cfg.token_dim, cfg.attn_dim);
            enc.push((conv, att));
        }
        let mut dec = Vec::new();
        for l in (0..cfg.depth - 1).rev() {
            let up = Conv2d::new(&mut store, &format!("dec.{l}.up"), w(l + 1), w(l), 3, 1, true);
            let fuse = Conv2d::new(&mut store, &format!("dec.{l}.fuse"), w(l), w(l), 3, 1, true);
            dec.push((up, fuse));
        }
        let out = Conv2d::new(&mut store, "out", w(0), 3, 3, 1, true);
        // start as the identity map on the LQ input
        out.w.update(|v| v.fill(0.0));
        let bank = Init::Normal { std: 0.5 };
        let bank_pos = store.add("bank.pos", &[cfg.bank_rows, cfg.token_dim], bank);
        let bank_neg = store.add("bank.neg", &[cfg.bank_rows, cfg.token_dim], bank);
        Ok(Restorer {
            cfg: cfg.clone(),
            store,
            enc,
            dec,
            out,
            bank_pos,
            bank_neg,
        })
    }

    /// `[N, T, D]` tokens followed by the bank rows.
    pub fn condition<'g>(&self, tokens: Tensor<'g>, bank: Bank) -> Result<Tensor<'g>> {
        let s = tokens.shape();
        if s.len() != 3 || s[2] != self.cfg.token_dim {
            return Err(shape(format!("tokens {s:?} vs token_dim {}", self.cfg.token_dim)));
        }
        let g = tokens.graph();
        let p = match bank {
            Bank::Positive => &self.bank_pos,
            Bank::Negative => &self.bank_neg,
        };
        let rows = g
            .param(p)
            .reshape(&[1, self.cfg.bank_rows, self.cfg.token_dim])
            .broadcast_to(&[s[0], self.cfg.bank_rows, self.cfg.token_dim]);
        Ok(g.concat(&[tokens, rows], 1))
    }

    fn check_input(&self, s: &[usize]) -> Result<()> {
        let m = self.cfg.multiple();
        if s.len() != 4 || s[1] != 3 || s[2] % m != 0 || s[3] % m != 0 || s[2] == 0 || s[3] == 0 {
            return Err(shape(format!("expected [N,3,H,W] with H, W multiples of {m}, got {s:?}")));
        }
        Ok(())
    }

    /// Decoder output features at full resolution, `[N, w, H, W]`.
    pub fn features<'g>(&self, lq: Tensor<'g>, cond: Tensor<'g>) -> Result<Tensor<'g>> {
        self.check_input(&lq.shape())?;
        let cs = cond.shape();
        if cs.len() != 3 || cs[0] != lq.dim(0) || cs[2] != self.cfg.token_dim {
            return Err(shape(format!("condition {cs:?} does not match batch/token_dim")));
        }
        let mut x = lq * 2.0 + (-1.0);
        let mut skips = Vec::new();
        for (conv, att) in &self.enc {
            x = att.forward(conv.forward(x).leaky_relu(0.2), cond);
            skips.push(x);
        }
        skips.pop();
        for (up, fuse) in &self.dec {
            let y = up.forward(x.upsample2x()).leaky_relu(0.2);
            let skip = skips.pop().expect("one skip per decoder level");
            x = fuse.forward(y + skip).leaky_relu(0.2);
        }
        Ok(x)
    }

    /// Bounded output: sigmoid(residual + logit(lq)).
    pub fn decode<'g>(&self, z: Tensor<'g>, lq: &Array) -> Tensor<'g> {
        let g = z.graph();
        let base = lq.map(|v| {
            let v = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
            (v / (1.0 - v)).ln()
        });
        (self.out.forward(z) + g.constant(base)).sigmoid()
    }

    /// Single conditioned pass with explicit bank rows `[R, D]`.
    pub fn restore(&self, lq: &Image, tokens: &DegTokens, bank_rows: &Array) -> Result<Image> {
        if !lq.in_unit_range() {
            return Err(crate::ModelError::Contract("lq must lie in [0, 1]".into()));
        }
        let d = self.cfg.token_dim;
        if tokens.tokens.shape().get(1) != Some(&d) || bank_rows.shape().len() != 2 || bank_rows.shape()[1] != d {
            return Err(shape(format!(
                "tokens {:?} / bank {:?} vs token_dim {d}",
                tokens.tokens.shape(),
                bank_rows.shape()
            )));
        }
        let g = Graph::no_grad();
        let x = images_to_array(&[lq]);
        let (t, r) = (tokens.len(), bank_rows.shape()[0]);
        let cond = g.concat(
            &[
                g.constant(tokens.tokens.clone().reshape(&[1, t, d])),
                g.constant(bank_rows.clone().reshape(&[1, r, d])),
            ],
            1,
        );
        let z = self.features(g.constant(x.clone()), cond)?;
        Ok(array_to_image(&self.decode(z, &x).to_array(), 0))
    }

    /// Two conditioned passes (positive and negative bank) combined with
    /// guidance scale `lambda` before decoding.
    pub fn restore_cfg(&self, lq: &Image, tokens: &DegTokens, lambda: f64) -> Result<Image> {
        let g = Graph::no_grad();
        let x = images_to_array(&[lq]);
        let d = self.cfg.token_dim;
        let t = g.constant(tokens.tokens.clone().reshape(&[1, tokens.len(), d]));
        let zp = self.features(g.constant(x.clone()), self.condition(t, Bank::Positive)?)?;
        let zn = self.features(g.constant(x.clone()), self.condition(t, Bank::Negative)?)?;
        let z = cfg_combine_t(zp, zn, lambda);
        Ok(array_to_image(&self.decode(z, &x).to_array(), 0))
    }

    pub fn bank(&self, b: Bank) -> Array {
        match b {
            Bank::Positive => self.bank_pos.value(),
            Bank::Negative => self.bank_neg.value(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = serde_json::to_string(&self.cfg).expect("config serializes");
        Checkpoint::from_store(cfg, &self.store).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Restorer> {
        let ck = Checkpoint::load(path)?;
        let cfg: RestorerConfig = serde_json::from_str(&ck.config)
            .map_err(|e| config(format!("{}: config echo: {e}", path.display())))?;
        let r = Restorer::new(&cfg, 0)?;
        ck.restore_into(&r.store)?;
        Ok(r)
    }
}

/// `lambda * z_pos + (1 - lambda) * z_neg`, written so that lambda = 1 and
/// lambda = 0 return their operand exactly.
pub fn cfg_combine(z_pos: &Array, z_neg: &Array, lambda: f64) -> Result<Array> {
    if z_pos.shape() != z_neg.shape() {
        return Err(shape(format!("{:?} vs {:?}", z_pos.shape(), z_neg.shape())));
    }
    Ok(z_pos.zip_map(z_neg, |p, n| lambda * p + (1.0 - lambda) * n))
}

pub fn cfg_combine_t<'g>(z_pos: Tensor<'g>, z_neg: Tensor<'g>, lambda: f64) -> Tensor<'g> {
    z_pos * lambda + z_neg * (1.0 - lambda)
}

/// Fixed random conv pyramid 3 -> 8 -> 16 (s2) -> 32 (s2) with ReLU.
pub struct FeaturePyramid {
    convs: Vec<Conv2d>,
}

impl FeaturePyramid {
    pub const WIDTHS: [usize; 3] = [8, 16, 32];

    pub fn new(store: &mut ParamStore, prefix: &str) -> Self {
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in Self::WIDTHS.iter().enumerate() {
            let s = if i == 0 { 1 } else { 2 };
            convs.push(Conv2d::frozen(store, &format!("{prefix}.{i}"), cin, c, 3, s));
            cin = c;
        }
        Self { convs }
    }

    pub fn forward<'g>(&self, x: Tensor<'g>) -> Vec<Tensor<'g>> {
        let mut h = x * 2.0 + (-1.0);
        let mut out = Vec::new();
        for c in &self.convs {
            h = c.forward(h).relu();
            out.push(h);
        }
        out
    }
}

/// Replaceable perceptual distance, batch-mean scalar.
pub trait Perceptual {
    fn distance<'g>(&self, a: Tensor<'g>, b: Tensor<'g>) -> Tensor<'g>;
}

/// Sum over levels of the feature MSE under a seed-pinned random pyramid.
pub struct RandomFeatureDistance {
    pub store: ParamStore,
    net: FeaturePyramid,
}

impl RandomFeatureDistance {
    pub fn new(seed: u64) -> Self {
        let mut store = ParamStore::new(seed);
        let net = FeaturePyramid::new(&mut store, "lp");
        Self { store, net }
    }
}

impl Default for RandomFeatureDistance {
    fn default() -> Self {
        Self::new(PERCEPTUAL_SEED)
    }
}

impl Perceptual for RandomFeatureDistance {
    fn distance<'g>(&self, a: Tensor<'g>, b: Tensor<'g>) -> Tensor<'g> {
        let fa = self.net.forward(a);
        let fb = self.net.forward(b);
        let mut it = fa.into_iter().zip(fb).map(|(x, y)| (x - y).sqr().mean_all());
        let first = it.next().expect("pyramid has levels");
        it.fold(first, |acc, t| acc + t)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub l2: f64,
    pub lpips: f64,
}

/// `l2 * mse + lpips * perceptual`.
pub fn rec_loss_t<'g>(pred: Tensor<'g>, gt: Tensor<'g>, w: LossWeights, p: &dyn Perceptual) -> Result<Tensor<'g>> {
    if pred.shape() != gt.shape() {
        return Err(shape(format!("{:?} vs {:?}", pred.shape(), gt.shape())));
    }
    let mut l = (pred - gt).sqr().mean_all() * w.l2;
    if w.lpips != 0.0 {
        l = l + p.distance(pred, gt) * w.lpips;
    }
    Ok(l)
}

pub fn rec_loss(pred: &Image, gt: &Image, w: LossWeights, p: &dyn Perceptual) -> Result<f64> {
    pred.same_shape(gt)?;
    let g = Graph::no_grad();
    let l = rec_loss_t(g.constant(images_to_array(&[pred])), g.constant(images_to_array(&[gt])), w, p)?;
    Ok(l.item())
}

/// Frozen pyramid with a trainable 1x1 logit head per level.
pub struct Discriminator {
    pub store: ParamStore,
    backbone: FeaturePyramid,
    heads: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(seed: u64) -> Self {
        let mut store = ParamStore::new(seed);
        let backbone = FeaturePyramid::new(&mut store, "backbone");
        let heads = FeaturePyramid::WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv2d::new(&mut store, &format!("head.{i}"), c, 1, 1, 1, true))
            .collect();
        Self { store, backbone, heads }
    }

    /// Per-level logit maps.
    pub fn logits<'g>(&self, x: Tensor<'g>) -> Vec<Tensor<'g>> {
        self.backbone
            .forward(x)
            .into_iter()
            .zip(&self.heads)
            .map(|(f, h)| h.forward(f))
            .collect()
    }

    pub fn heads(&self) -> Vec<Param> {
        self.store.trainable()
    }
}

fn level_mean<'g>(xs: Vec<Tensor<'g>>) -> Tensor<'g> {
    let n = xs.len() as f64;
    let mut it = xs.into_iter();
    let first = it.next().expect("at least one level");
    it.fold(first, |a, t| a + t) * (1.0 / n)
}

/// Discriminator loss `-log D(real) - log(1 - D(fake))` averaged over
/// levels. `fake` is detached so no gradient reaches the generator.
pub fn d_loss_t<'g>(d: &Discriminator, real: Tensor<'g>, fake: Tensor<'g>) -> Tensor<'g> {
    let r = d.logits(real);
    let f = d.logits(fake.detach());
    level_mean(
        r.into_iter()
            .zip(f)
            .map(|(r, f)| r.neg().softplus().mean_all() + f.softplus().mean_all())
            .collect(),
    )
}

/// Generator loss `-log D(fake)` averaged over levels.
pub fn g_loss_t<'g>(d: &Discriminator, fake: Tensor<'g>) -> Tensor<'g> {
    level_mean(d.logits(fake).into_iter().map(|f| f.neg().softplus().mean_all()).collect())
}

pub fn gan_losses(d: &Discriminator, real: &Image, fake: &Image) -> Result<(f64, f64)> {
    real.same_shape(fake)?;
    let g = Graph::no_grad();
    let r = g.constant(images_to_array(&[real]));
    let f = g.constant(images_to_array(&[fake]));
    Ok((d_loss_t(d, r, f).item(), g_loss_t(d, f).item()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, k: f64) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = 0.5 + 0.4 * ((x as f64 * k).sin() * (y as f64 * 0.3 + k).cos());
            [v, 1.0 - v, 0.5 * v]
        })
    }

    fn tokens(n: usize, d: usize) -> DegTokens {
        DegTokens {
            tokens: Array::new(&[n, d], (0..n * d).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect()),
        }
    }

    #[test]
    fn untrained_forward_is_identity_and_bounded() {
        let r = Restorer::new(&RestorerConfig::default(), 3).unwrap();
        let lq = img(96, 96, 0.2).quantize_u8();
        let out = r.restore(&lq, &tokens(21, 64), &r.bank(Bank::Positive)).unwrap();
        assert_eq!(out.dims(), (96, 96));
        assert!(out.is_finite() && out.in_unit_range());
        // zero output conv: result is lq up to the logit clamp
        let err = out.data().iter().zip(lq.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        let zero = DegTokens::zeros(21, 64);
        let z = r.restore(&lq, &zero, &Array::zeros(&[8, 64])).unwrap();
        assert!(z.is_finite());
        assert_eq!(r.restore_cfg(&lq, &zero, 1.1).unwrap(), r.restore_cfg(&lq, &zero, 1.1).unwrap());
        assert!(r.restore(&lq, &tokens(21, 32), &r.bank(Bank::Positive)).is_err());
        assert!(r.restore(&img(30, 32, 0.1), &zero, &r.bank(Bank::Positive)).is_err());
    }

    #[test]
    fn cfg_endpoints_exact() {
        let a = Array::new(&[5], vec![0.1, -3.7, 1e-9, 12.25, 0.3]);
        let b = Array::new(&[5], vec![7.0, 0.2, -4.4, 1.0 / 3.0, 0.3]);
        assert_eq!(cfg_combine(&a, &b, 1.0).unwrap(), a);
        assert_eq!(cfg_combine(&a, &b, 0.0).unwrap(), b);
        assert!(cfg_combine(&a, &Array::zeros(&[4]), 0.5).is_err());
    }

    #[test]
    fn rec_loss_values() {
        let p = RandomFeatureDistance::default();
        let a = img(16, 16, 0.4).map(|v| v * 0.8);
        let w = LossWeights { l2: 2.0, lpips: 5.0 };
        assert_eq!(rec_loss(&a, &a, w, &p).unwrap(), 0.0);
        let b = a.map(|v| v + 0.1);
        let l = rec_loss(&b, &a, LossWeights { l2: 2.0, lpips: 0.0 }, &p).unwrap();
        assert!((l - 0.02).abs() < 1e-12, "{l}");
        let c = img(16, 16, 0.9);
        let d1 = rec_loss(&a, &c, w, &p).unwrap();
        let d2 = rec_loss(&c, &a, w, &p).unwrap();
        assert!(d1 > 0.0 && (d1 - d2).abs() < 1e-12);
        assert!(rec_loss(&a, &img(8, 16, 0.1), w, &p).is_err());
    }

    #[test]
    fn gan_loss_values() {
        let d = Discriminator::new(1);
        // zero heads -> D = 0.5 everywhere
        for h in d.heads() {
            h.update(|v| v.fill(0.0));
        }
        let a = img(16, 16, 0.2);
        let (dl, gl) = gan_losses(&d, &a, &img(16, 16, 0.7)).unwrap();
        assert!((dl - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((gl - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn only_discriminator_heads_train() {
        use face2scene_tensor::optim::{Adam, Optimizer};
        let d = Discriminator::new(4);
        assert!(d.heads().iter().all(|p| p.name().starts_with("head.")));
        assert_eq!(d.heads().len(), 2 * FeaturePyramid::WIDTHS.len());
        let before = d.store.snapshot();
        let mut opt = Adam::with_betas(d.heads(), 1e-2, 0.5, 0.999, 0.0);
        let g = Graph::new();
        let real = g.constant(images_to_array(&[&img(16, 16, 0.5)]));
        let fake = g.constant(images_to_array(&[&img(16, 16, 0.3)]));
        opt.step(&g.backward(d_loss_t(&d, real, fake)));
        let after = d.store.snapshot();
        for (name, v) in &before {
            assert_eq!(name.starts_with("head."), after[name] != *v, "{name}");
        }
    }

    #[test]
    fn fake_is_detached_in_d_loss() {
        let d = Discriminator::new(2);
        let g = Graph::new();
        let fake = g.variable(images_to_array(&[&img(16, 16, 0.3)]));
        let real = g.constant(images_to_array(&[&img(16, 16, 0.5)]));
        let grads = g.backward(d_loss_t(&d, real, fake));
        assert!(grads.wrt(fake).is_none_or(|a| a.max_abs() == 0.0));
        let g2 = Graph::new();
        let fake2 = g2.variable(images_to_array(&[&img(16, 16, 0.3)]));
        let grads = g2.backward(g_loss_t(&d, fake2));
        assert!(grads.wrt(fake2).unwrap().max_abs() > 0.0);
    }
}
