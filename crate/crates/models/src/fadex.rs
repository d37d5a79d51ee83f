//! Degradation extractor: a 6-channel conv encoder over [hq | lq] face
//! pairs, a projection head, and supervised contrastive training with a
//! momentum encoder and a FIFO queue.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use face2scene_core::facegeom::MIN_FACE;
use face2scene_core::Image;
use face2scene_tensor::checkpoint::Checkpoint;
use face2scene_tensor::optim::{Optimizer, Sgd};
use face2scene_tensor::{Array, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, too_small, ModelError, Result};
use crate::nn::{images_to_array, BatchNorm2d, Conv2d, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FadexConfig {
    pub channels: usize,
    pub proj_dim: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    /// Let queue entries with a matching label count as positives.
    pub queue_positives: bool,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FadexConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            proj_dim: 64,
            temperature: 0.07,
            momentum: 0.99,
            queue_capacity: 1024,
            queue_positives: false,
            lr: 3e-2,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 20,
        }
    }
}

impl FadexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || self.channels % 2 != 0 {
            return Err(config(format!("channels must be even and >= 2, got {}", self.channels)));
        }
        if self.proj_dim == 0 {
            return Err(config("proj_dim must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size < 2 || self.queue_capacity < self.batch_size {
            return Err(config("need batch_size >= 2 and queue_capacity >= batch_size"));
        }
        Ok(())
    }
}

/// Encoder output for one face pair: `[C, S/2, S/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegCode {
    pub features: Array,
}

impl DegCode {
    pub fn channels(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn side(&self) -> usize {
        self.features.shape()[1]
    }
}

/// How batch norm behaves in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Eval,
    /// Batch statistics; running buffers untouched.
    Batch,
    /// Batch statistics, folded into the running buffers.
    Train,
}

const WIDTHS: [usize; 4] = [1, 2, 2, 2];
const STRIDES: [usize; 4] = [1, 2, 1, 1];

pub struct Fadex {
    pub cfg: FadexConfig,
    pub store: ParamStore,
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm2d>,
    fc1: Linear,
    fc2: Linear,
}

impl Fadex {
    pub fn new(cfg: &FadexConfig, seed: u64) -> Result<Fadex> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let half = cfg.channels / 2;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut cin = 6;
        for (i, (&m, &s)) in WIDTHS.iter().zip(&STRIDES).enumerate() {
            let cout = m * half;
            convs.push(Conv2d::new(&mut store, &format!("enc.{i}.conv"), cin, cout, 3, s, false));
            bns.push(BatchNorm2d::new(&mut store, &format!("enc.{i}.bn"), cout));
            cin = cout;
        }
        let fc1 = Linear::new(&mut store, "head.fc1", cfg.channels, cfg.channels, true);
        let fc2 = Linear::new(&mut store, "head.fc2", cfg.channels, cfg.proj_dim, true);
        Ok(Fadex {
            cfg: cfg.clone(),
            store,
            convs,
            bns,
            fc1,
            fc2,
        })
    }

    /// Independent copy with the same weights and buffers.
    pub fn duplicate(&self) -> Result<Fadex> {
        let f = Fadex::new(&self.cfg, 0)?;
        f.store.copy_from(&self.store)?;
        Ok(f)
    }

    /// `[N,3,S,S]` pair -> code `[N,C,S/2,S/2]`.
    pub fn code<'g>(&self, hq: Tensor<'g>, lq: Tensor<'g>, bn: BnMode) -> Tensor<'g> {
        let g = hq.graph();
        let mut x = g.concat(&[hq, lq], 1) * 2.0 + (-1.0);
        for (conv, norm) in self.convs.iter().zip(&self.bns) {
            let y = conv.forward(x);
            let y = match bn {
                BnMode::Eval => norm.forward(y, false, false),
                BnMode::Batch => norm.forward(y, true, false),
                BnMode::Train => norm.forward(y, true, true),
            };
            x = y.leaky_relu(0.2);
        }
        x
    }

    /// Pre-normalization head output `[N, p]` from a code.
    pub fn head<'g>(&self, code: Tensor<'g>) -> Tensor<'g> {
        let z = code.mean_axes(&[2, 3], false);
        self.fc2.forward(self.fc1.forward(z).leaky_relu(0.2))
    }

    fn check_pair(hq: &Image, lq: &Image) -> Result<()> {
        hq.same_shape(lq)?;
        let (w, h) = hq.dims();
        if w != h {
            return Err(shape(format!("face crops must be square, got {w}x{h}")));
        }
        if w < MIN_FACE {
            return Err(too_small(w, MIN_FACE));
        }
        Ok(())
    }

    /// Codes for a batch of pairs in eval mode, `[N,C,S/2,S/2]`.
    pub fn encode_batch(&self, pairs: &[(&Image, &Image)]) -> Result<Array> {
        for (h, l) in pairs {
            Self::check_pair(h, l)?;
        }
        let g = Graph::no_grad();
        let hq = g.constant(images_to_array(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()));
        let lq = g.constant(images_to_array(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()));
        Ok(self.code(hq, lq, BnMode::Eval).to_array())
    }

    pub fn encode(&self, hq: &Image, lq: &Image) -> Result<DegCode> {
        let a = self.encode_batch(&[(hq, lq)])?;
        let s = a.shape()[1..].to_vec();
        Ok(DegCode {
            features: a.reshape(&s),
        })
    }

    pub fn project(&self, code: &DegCode) -> Result<Vec<f64>> {
        if !code.features.all_finite() {
            return Err(ModelError::Contract("non-finite code".into()));
        }
        let g = Graph::no_grad();
        let mut s = vec![1];
        s.extend_from_slice(code.features.shape());
        let u = self.head(g.constant(code.features.clone().reshape(&s))).to_array();
        unit(u.data().to_vec())
    }

    /// Unit embeddings for a batch of pairs.
    pub fn embed_batch(&self, pairs: &[(&Image, &Image)]) -> Result<Vec<Vec<f64>>> {
        let codes = self.encode_batch(pairs)?;
        let g = Graph::no_grad();
        let u = self.head(g.constant(codes)).to_array();
        u.data().chunks(self.cfg.proj_dim).map(|r| unit(r.to_vec())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = serde_json::to_string(&self.cfg).expect("config serializes");
        Checkpoint::from_store(cfg, &self.store).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Fadex> {
        let ck = Checkpoint::load(path)?;
        let cfg: FadexConfig = serde_json::from_str(&ck.config)
            .map_err(|e| config(format!("{}: config echo: {e}", path.display())))?;
        let f = Fadex::new(&cfg, 0)?;
        ck.restore_into(&f.store)?;
        Ok(f)
    }
}

fn unit(mut u: Vec<f64>) -> Result<Vec<f64>> {
    let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n >= 1e-12) {
        return Err(ModelError::DegenerateEmbedding(n));
    }
    u.iter_mut().for_each(|v| *v /= n);
    Ok(u)
}

/// Row-normalize `[N, p]` on the tape.
pub fn l2_normalize(u: Tensor<'_>) -> Tensor<'_> {
    u / u.sqr().sum_axes(&[1], true).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub embedding: Vec<f64>,
    pub label: u64,
}

/// FIFO of momentum embeddings.
#[derive(Debug, Clone)]
pub struct NegativeQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, e: QueueEntry) -> Result<()> {
        check_unit(&e.embedding)?;
        if self.capacity == 0 {
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(ModelError::Contract(format!("embedding norm {n} is not 1")));
    }
    Ok(())
}

/// Extra contrast candidates beyond the batch.
pub struct Candidates<'a> {
    /// `[K, p]`.
    pub embeddings: &'a Array,
    pub labels: &'a [u64],
    /// Whether entry k may act as a positive when labels match. Entries
    /// that match but may not are left out of the anchor's denominator.
    pub positive_ok: &'a [bool],
}

/// Summed supervised contrastive loss on the tape, plus the number of
/// (anchor, positive) pairs. Inputs are not checked for unit norm.
pub fn supcon_tensor<'g>(q: Tensor<'g>, labels: &[u64], extra: Option<&Candidates<'_>>, tau: f64) -> Result<(Tensor<'g>, usize)> {
    let g = q.graph();
    let b = labels.len();
    if q.shape().len() != 2 || q.dim(0) != b {
        return Err(shape(format!("queries {:?} vs {b} labels", q.shape())));
    }
    let (all, all_labels, all_pos_ok) = match extra {
        Some(c) => {
            let k = c.labels.len();
            if c.embeddings.shape() != [k, q.dim(1)] || c.positive_ok.len() != k {
                return Err(shape("candidate arrays disagree".to_string()));
            }
            let mut l = labels.to_vec();
            l.extend_from_slice(c.labels);
            let mut ok = vec![true; b];
            ok.extend_from_slice(c.positive_ok);
            (g.concat(&[q, g.constant(c.embeddings.clone())], 0), l, ok)
        }
        None => (q, labels.to_vec(), vec![true; b]),
    };
    let n = all_labels.len();
    let mut mask = vec![0.0; b * n];
    let mut pos = vec![0.0; b * n];
    let mut npos = 0usize;
    for i in 0..b {
        let row_pos: Vec<bool> = (0..n)
            .map(|a| a != i && all_labels[a] == labels[i] && all_pos_ok[a])
            .collect();
        let any = row_pos.iter().any(|&p| p);
        for a in 0..n {
            let same = all_labels[a] == labels[i];
            let excluded = a == i || (same && !all_pos_ok[a]);
            // rows without positives contribute nothing; keep them finite
            if excluded && any {
                mask[i * n + a] = f64::NEG_INFINITY;
            }
            if row_pos[a] {
                pos[i * n + a] = 1.0;
                npos += 1;
            }
        }
    }
    if npos == 0 {
        return Ok(((q * 0.0).sum_all(), 0));
    }
    let s = q.matmul(all.t()) * (1.0 / tau);
    let lse = (s + g.constant(Array::new(&[b, n], mask))).logsumexp();
    let loss = ((lse - s) * g.constant(Array::new(&[b, n], pos))).sum_all();
    Ok((loss, npos))
}

/// Checked scalar form: sums over anchors and their positives.
pub fn supcon_loss(queries: &[Vec<f64>], labels: &[u64], extras: &[QueueEntry], tau: f64, queue_positives: bool) -> Result<f64> {
    if queries.is_empty() || queries.len() != labels.len() {
        return Err(shape("queries and labels must be non-empty and equal length".to_string()));
    }
    if !(tau > 0.0) {
        return Err(config("temperature must be > 0"));
    }
    let p = queries[0].len();
    for v in queries.iter().chain(extras.iter().map(|e| &e.embedding)) {
        if v.len() != p {
            return Err(shape("embedding dims differ".to_string()));
        }
        check_unit(v)?;
    }
    let g = Graph::no_grad();
    let q = g.constant(Array::new(&[queries.len(), p], queries.concat()));
    let emb = Array::new(&[extras.len(), p], extras.iter().flat_map(|e| e.embedding.clone()).collect());
    let el: Vec<u64> = extras.iter().map(|e| e.label).collect();
    let ok = vec![queue_positives; extras.len()];
    let c = Candidates {
        embeddings: &emb,
        labels: &el,
        positive_ok: &ok,
    };
    let (l, _) = supcon_tensor(q, labels, (!extras.is_empty()).then_some(&c), tau)?;
    Ok(l.item())
}

/// `momentum <- m * momentum + (1 - m) * principal`, buffers included.
pub fn momentum_update(principal: &ParamStore, momentum: &ParamStore, m: f64) -> Result<()> {
    momentum.check_same_structure(principal)?;
    for (p, q) in principal.iter().zip(momentum.iter()) {
        let pv = p.read().clone();
        q.update(|w| {
            for (w, v) in w.iter_mut().zip(&pv) {
                *w = m * *w + (1.0 - m) * v;
            }
        });
    }
    Ok(())
}

/// One training pair: aligned HQ (oracle or GT) and LQ faces.
#[derive(Debug, Clone)]
pub struct FadexSample {
    pub hq: Image,
    pub lq: Image,
    pub label: u64,
    /// Source image index, used to pick partner views from other images.
    pub image: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FadexLog {
    /// Mean loss per positive pair, per step.
    pub step_loss: Vec<f64>,
    pub epoch_loss: Vec<f64>,
}

pub fn train_fadex(samples: &[FadexSample], cfg: &FadexConfig, seed: u64) -> Result<(Fadex, FadexLog)> {
    cfg.validate()?;
    let labels: BTreeSet<u64> = samples.iter().map(|s| s.label).collect();
    if labels.len() < 2 {
        return Err(ModelError::DegenerateTask(format!("{} distinct label(s); need 2", labels.len())));
    }
    for s in samples {
        Fadex::check_pair(&s.hq, &s.lq)?;
    }
    let net = Fadex::new(cfg, seed)?;
    let key_net = Fadex::new(cfg, seed)?;
    key_net.store.copy_from(&net.store)?;
    let mut by_label: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_label.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_fade);
    let mut opt = Sgd::new(net.store.trainable(), cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
    let mut queue = NegativeQueue::new(cfg.queue_capacity);
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total = (steps_per_epoch * cfg.epochs).max(1);
    let mut log = FadexLog::default();
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            opt.set_lr(cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()));
            step += 1;
            // partner view: same label, another source image when possible
            let partners: Vec<usize> = chunk
                .iter()
                .map(|&i| {
                    let pool = &by_label[&samples[i].label];
                    let others: Vec<usize> = pool.iter().copied().filter(|&j| samples[j].image != samples[i].image).collect();
                    if others.is_empty() {
                        i
                    } else {
                        others[rng.random_range(0..others.len())]
                    }
                })
                .collect();
            let batch_labels: Vec<u64> = chunk.iter().map(|&i| samples[i].label).collect();
            let stack = |idx: &[usize], hq: bool| {
                let imgs: Vec<&Image> = idx.iter().map(|&i| if hq { &samples[i].hq } else { &samples[i].lq }).collect();
                images_to_array(&imgs)
            };
            let keys = {
                let g = Graph::no_grad();
                let code = key_net.code(g.constant(stack(&partners, true)), g.constant(stack(&partners, false)), BnMode::Batch);
                l2_normalize(key_net.head(code)).to_array()
            };
            let g = Graph::new();
            let code = net.code(g.constant(stack(chunk, true)), g.constant(stack(chunk, false)), BnMode::Train);
            let q = l2_normalize(net.head(code));
            let p = cfg.proj_dim;
            let mut emb = keys.data().to_vec();
            let mut cl = batch_labels.clone();
            let mut ok = vec![true; chunk.len()];
            for e in queue.iter() {
                emb.extend_from_slice(&e.embedding);
                cl.push(e.label);
                ok.push(cfg.queue_positives);
            }
            let emb = Array::new(&[cl.len(), p], emb);
            let cands = Candidates {
                embeddings: &emb,
                labels: &cl,
                positive_ok: &ok,
            };
            let (total_loss, npos) = supcon_tensor(q, &batch_labels, Some(&cands), cfg.temperature)?;
            let loss = total_loss * (1.0 / npos.max(1) as f64);
            let grads = g.backward(loss);
            opt.step(&grads);
            momentum_update(&net.store, &key_net.store, cfg.momentum)?;
            for (row, &l) in keys.data().chunks(p).zip(&batch_labels) {
                queue.push(QueueEntry {
                    embedding: row.to_vec(),
                    label: l,
                })?;
            }
            let lv = loss.item();
            if !lv.is_finite() {
                return Err(ModelError::Contract(format!("loss diverged at step {step}")));
            }
            log.step_loss.push(lv);
            sum += lv;
            count += 1;
        }
        let mean = sum / count.max(1) as f64;
        log::debug!("fadex epoch {epoch}: loss {mean:.4}");
        log.epoch_loss.push(mean);
    }
    Ok((net, log))
}

/// A source face with its degraded variants, one per preset (same order
/// for every set).
pub struct FaceSet {
    pub hq: Image,
    pub lq: Vec<Image>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CosSimReport {
    /// Mean cross-image similarity under each preset.
    pub same_degradation: Vec<f64>,
    /// Mean cross-preset similarity for each image.
    pub same_image: Vec<f64>,
    pub grand_same_degradation: f64,
    pub std_same_degradation: f64,
    pub grand_same_image: f64,
    pub std_same_image: f64,
    /// Fraction of (a, b, d) with argmax_d' cos(q(a,d), q(b,d')) == d, a != b.
    pub retrieval_accuracy: f64,
}

impl CosSimReport {
    pub fn gap(&self) -> f64 {
        self.grand_same_degradation - self.grand_same_image
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64;
    (m, var.sqrt())
}

pub fn cos_sim_analysis(f: &Fadex, sets: &[FaceSet]) -> Result<CosSimReport> {
    let np = sets.first().map_or(0, |s| s.lq.len());
    if sets.len() < 2 || np < 2 || sets.iter().any(|s| s.lq.len() != np) {
        return Err(ModelError::Contract("need >= 2 images with the same >= 2 presets".into()));
    }
    // emb[i][d]
    let mut emb = Vec::with_capacity(sets.len());
    for s in sets {
        let pairs: Vec<(&Image, &Image)> = s.lq.iter().map(|l| (&s.hq, l)).collect();
        emb.push(f.embed_batch(&pairs)?);
    }
    let n = sets.len();
    let same_degradation: Vec<f64> = (0..np)
        .map(|d| {
            let mut acc = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    acc.push(dot(&emb[a][d], &emb[b][d]));
                }
            }
            mean_std(&acc).0
        })
        .collect();
    let same_image: Vec<f64> = (0..n)
        .map(|a| {
            let mut acc = Vec::new();
            for d in 0..np {
                for e in d + 1..np {
                    acc.push(dot(&emb[a][d], &emb[a][e]));
                }
            }
            mean_std(&acc).0
        })
        .collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            for d in 0..np {
                let best = (0..np)
                    .max_by(|&x, &y| dot(&emb[a][d], &emb[b][x]).total_cmp(&dot(&emb[a][d], &emb[b][y])))
                    .expect("np >= 2");
                hits += usize::from(best == d);
                total += 1;
            }
        }
    }
    let (gd, sd) = mean_std(&same_degradation);
    let (gi, si) = mean_std(&same_image);
    Ok(CosSimReport {
        same_degradation,
        same_image,
        grand_same_degradation: gd,
        std_same_degradation: sd,
        grand_same_image: gi,
        std_same_image: si,
        retrieval_accuracy: hits as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Vec<f64> {
        unit(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_batch_value() {
        let q = vec![e(&[1.0, 0.0]), e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let l = supcon_loss(&q, &[1, 1, 2], &[], 1.0, false).unwrap();
        let want = 2.0 * -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn identical_pair_has_zero_loss() {
        let q = vec![e(&[0.3, 0.4]), e(&[0.3, 0.4])];
        assert!(supcon_loss(&q, &[5, 5], &[], 0.1, false).unwrap().abs() < 1e-12);
    }

    #[test]
    fn contract_errors() {
        assert!(supcon_loss(&[vec![2.0, 0.0], vec![1.0, 0.0]], &[1, 1], &[], 1.0, false).is_err());
        assert_eq!(supcon_loss(&[e(&[1.0, 0.0]), e(&[0.0, 1.0])], &[1, 2], &[], 1.0, false).unwrap(), 0.0);
    }

    #[test]
    fn queue_negatives_only_by_default() {
        let q = vec![e(&[1.0, 0.0]), e(&[0.8, 0.6])];
        let same = QueueEntry {
            embedding: e(&[0.0, 1.0]),
            label: 1,
        };
        let base = supcon_loss(&q, &[1, 1], &[], 0.5, false).unwrap();
        // matching-label queue entry is ignored unless positives are on
        assert!((supcon_loss(&q, &[1, 1], std::slice::from_ref(&same), 0.5, false).unwrap() - base).abs() < 1e-12);
        assert!(supcon_loss(&q, &[1, 1], &[same.clone()], 0.5, true).unwrap() > base);
        let other = QueueEntry { label: 9, ..same };
        assert!(supcon_loss(&q, &[1, 1], &[other], 0.5, false).unwrap() > base);
    }

    #[test]
    fn queue_is_fifo() {
        let mut qu = NegativeQueue::new(3);
        for i in 0..5u64 {
            qu.push(QueueEntry {
                embedding: e(&[1.0, i as f64]),
                label: i,
            })
            .unwrap();
        }
        assert_eq!(qu.iter().map(|x| x.label).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert!(qu
            .push(QueueEntry {
                embedding: vec![0.5, 0.5],
                label: 0
            })
            .is_err());
    }

    #[test]
    fn momentum_arithmetic() {
        let cfg = FadexConfig::default();
        let a = Fadex::new(&cfg, 1).unwrap();
        let b = Fadex::new(&cfg, 2).unwrap();
        let before = b.store.snapshot();
        momentum_update(&a.store, &b.store, 1.0).unwrap();
        assert_eq!(b.store.snapshot(), before);
        momentum_update(&a.store, &b.store, 0.0).unwrap();
        assert_eq!(b.store.snapshot(), a.store.snapshot());
        let mut s1 = ParamStore::new(0);
        let p = s1.add("x", &[1], face2scene_tensor::Init::Const(0.0));
        let mut s2 = ParamStore::new(0);
        let o = s2.add("x", &[1], face2scene_tensor::Init::Const(1.0));
        momentum_update(&s1, &s2, 0.9).unwrap();
        assert!((o.value().data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(p.value().data()[0], 0.0);
        let mut s3 = ParamStore::new(0);
        s3.add("y", &[1], face2scene_tensor::Init::Zeros);
        assert!(momentum_update(&s1, &s3, 0.5).is_err());
    }

    #[test]
    fn encode_shapes_and_norms() {
        let f = Fadex::new(&FadexConfig::default(), 0).unwrap();
        let img = |s: usize| Image::from_fn(s, s, |x, y| [(x as f64 / s as f64), (y as f64 / s as f64), 0.3]);
        let c = f.encode(&img(32), &img(32)).unwrap();
        assert_eq!(c.features.shape(), &[32, 16, 16]);
        assert!(c.features.all_finite());
        assert_eq!(f.encode(&img(16), &img(16)).unwrap().side(), 8);
        assert!(matches!(
            f.encode(&img(15), &img(15)),
            Err(ModelError::Core(face2scene_core::Error::TooSmallFace { .. }))
        ));
        assert!(f.encode(&img(16), &img(32)).is_err());
        let q = f.project(&c).unwrap();
        assert!((q.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        let doubled = DegCode {
            features: c.features.map(|v| 2.0 * v),
        };
        let q2 = f.project(&doubled).unwrap();
        assert!((q2.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }
}
