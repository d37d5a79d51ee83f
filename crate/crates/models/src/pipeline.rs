//! End-to-end training and inference: frozen extractor codes, token
//! mapping, restorer training with negative-target steps, guided
//! inference, and the reference-quality sweep.

use face2scene_core::evalkit::psnr;
use face2scene_core::facegeom::{align_face, warp_to_canonical, FaceAnnotation, MIN_FACE};
use face2scene_core::refsim::QualityLevel;
use face2scene_core::Image;
use face2scene_tensor::optim::{Adam, Optimizer};
use face2scene_tensor::{Array, Graph, Param, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape, too_small, ModelError, Result};
use crate::fadex::Fadex;
use crate::mapnet::{DegTokens, MapNet, MapnetConfig, TokenMode};
use crate::nn::images_to_array;
use crate::pairs::{oracle_face, ScenePair};
use crate::restorer::{
    d_loss_t, g_loss_t, rec_loss_t, Bank, Discriminator, LossWeights, RandomFeatureDistance, Restorer,
    RestorerConfig, DISC_SEED,
};

/// A scene pair with its frozen degradation code.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub lq: Image,
    pub hq: Image,
    /// `[C, s, s]`.
    pub code: Array,
}

/// Encode every pair's (oracle face, LQ face) with the frozen extractor.
pub fn prepare(fadex: &Fadex, pairs: &[ScenePair], canonical: usize, refq: QualityLevel, seed: u64) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (gt_face, warp) = align_face(&p.hq, &p.ann, canonical)?;
        let lq_face = warp_to_canonical(&p.lq, &warp);
        let hq_face = oracle_face(&gt_face, refq, &p.id, seed);
        out.push(Prepared {
            id: p.id.clone(),
            lq: p.lq.clone(),
            hq: p.hq.clone(),
            code: fadex.encode(&hq_face, &lq_face)?.features,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Conditioning {
    pub mode: TokenMode,
    /// Replace the mapped tokens with zeros (bank rows stay).
    pub zero_tokens: bool,
}

fn stack_codes(items: &[&Prepared]) -> Array {
    let mut s = vec![items.len()];
    s.extend_from_slice(items[0].code.shape());
    Array::new(&s, items.iter().flat_map(|p| p.code.data().iter().copied()).collect())
}

/// Tokens `[N, T, D]` for a batch.
pub fn batch_tokens<'g>(g: &'g Graph, mapnet: &MapNet, items: &[&Prepared], c: Conditioning) -> Result<Tensor<'g>> {
    if c.zero_tokens {
        return Ok(g.constant(Array::zeros(&[items.len(), c.mode.count(), mapnet.cfg.token_dim])));
    }
    mapnet.forward(g.constant(stack_codes(items)), c.mode)
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub l2: f64,
    pub rec: f64,
    pub gan_g: f64,
    pub d_loss: f64,
    pub negative: bool,
}

/// Generator objective for one batch; returns (loss, prediction, mse, rec).
#[allow(clippy::too_many_arguments)]
pub fn generator_loss<'g>(
    g: &'g Graph,
    mapnet: &MapNet,
    restorer: &Restorer,
    perceptual: &RandomFeatureDistance,
    disc: Option<&Discriminator>,
    items: &[&Prepared],
    negative: bool,
    c: Conditioning,
) -> Result<(Tensor<'g>, Tensor<'g>, Tensor<'g>, Tensor<'g>)> {
    let rc = &restorer.cfg;
    let lq_imgs: Vec<&Image> = items.iter().map(|p| &p.lq).collect();
    let lq = images_to_array(&lq_imgs);
    let target: Vec<&Image> = items.iter().map(|p| if negative { &p.lq } else { &p.hq }).collect();
    let target = g.constant(images_to_array(&target));
    let tokens = batch_tokens(g, mapnet, items, c)?;
    let bank = if negative { Bank::Negative } else { Bank::Positive };
    let z = restorer.features(g.constant(lq.clone()), restorer.condition(tokens, bank)?)?;
    let pred = restorer.decode(z, &lq);
    let w = LossWeights {
        l2: rc.lambda_l2,
        lpips: rc.lambda_lpips,
    };
    let rec = rec_loss_t(pred, target, w, perceptual)?;
    let mse = (pred - target).sqr().mean_all();
    let mut total = rec;
    if let (Some(d), false) = (disc, negative) {
        if rc.lambda_gan > 0.0 {
            total = total + g_loss_t(d, pred) * rc.lambda_gan;
        }
    }
    Ok((total, pred, mse, rec))
}

/// Mean per-pixel squared error of the positive-only forward.
pub fn val_l2(mapnet: &MapNet, restorer: &Restorer, items: &[Prepared], c: Conditioning) -> Result<f64> {
    if items.is_empty() {
        return Err(ModelError::Contract("empty validation set".into()));
    }
    let mut sum = 0.0;
    for chunk in items.chunks(4) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let g = Graph::no_grad();
        let lq = images_to_array(&refs.iter().map(|p| &p.lq).collect::<Vec<_>>());
        let hq = images_to_array(&refs.iter().map(|p| &p.hq).collect::<Vec<_>>());
        let t = batch_tokens(&g, mapnet, &refs, c)?;
        let z = restorer.features(g.constant(lq.clone()), restorer.condition(t, Bank::Positive)?)?;
        let err = (restorer.decode(z, &lq) - g.constant(hq)).sqr().mean_all().item();
        sum += err * chunk.len() as f64;
    }
    Ok(sum / items.len() as f64)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RestorerLog {
    pub steps: Vec<StepLog>,
    /// (step, validation L2).
    pub val: Vec<(usize, f64)>,
}

impl RestorerLog {
    pub fn initial_val(&self) -> Option<f64> {
        self.val.first().map(|v| v.1)
    }

    pub fn final_val(&self) -> Option<f64> {
        self.val.last().map(|v| v.1)
    }
}

pub struct TrainOptions {
    pub conditioning: Conditioning,
    /// Validation every this many steps (and at both ends); 0 = ends only.
    pub eval_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            conditioning: Conditioning::default(),
            eval_every: 0,
        }
    }
}

/// Jointly train the mapper, restorer, banks and discriminator heads on
/// frozen codes.
pub fn train_restorer(
    train: &[Prepared],
    val: &[Prepared],
    mcfg: &MapnetConfig,
    rcfg: &RestorerConfig,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(MapNet, Restorer, RestorerLog)> {
    rcfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::Contract("no training pairs".into()));
    }
    let c = opts.conditioning;
    if mcfg.token_dim != rcfg.token_dim {
        return Err(shape(format!("mapnet token_dim {} vs restorer {}", mcfg.token_dim, rcfg.token_dim)));
    }
    if train[0].code.shape()[0] != mcfg.in_channels {
        return Err(shape(format!("codes have {} channels, mapnet expects {}", train[0].code.shape()[0], mcfg.in_channels)));
    }
    let mapnet = MapNet::new(mcfg, face2scene_core::rng::stream_id(&[seed, 1]))?;
    let restorer = Restorer::new(rcfg, face2scene_core::rng::stream_id(&[seed, 2]))?;
    let perceptual = RandomFeatureDistance::default();
    let disc = Discriminator::new(DISC_SEED ^ seed);
    let mut params: Vec<Param> = restorer.store.trainable();
    if !c.zero_tokens {
        params.extend(mapnet.store.trainable());
    }
    let mut opt = Adam::with_betas(params, rcfg.lr, 0.9, 0.999, 0.0);
    let mut dopt = Adam::with_betas(disc.heads(), rcfg.d_lr, 0.5, 0.999, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_0e57);
    let mut log = RestorerLog::default();
    let eval = |log: &mut RestorerLog, step: usize| -> Result<()> {
        if !val.is_empty() {
            log.val.push((step, val_l2(&mapnet, &restorer, val, c)?));
        }
        Ok(())
    };
    eval(&mut log, 0)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    for step in 0..rcfg.steps {
        let mut batch = Vec::with_capacity(rcfg.batch);
        while batch.len() < rcfg.batch.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        let negative = rcfg.p_n > 0.0 && rng.random::<f64>() < rcfg.p_n;
        let lr = rcfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / rcfg.steps as f64).cos());
        opt.set_lr(lr);
        let g = Graph::new();
        let (total, pred, mse, rec) = generator_loss(&g, &mapnet, &restorer, &perceptual, Some(&disc), &batch, negative, c)?;
        let grads = g.backward(total);
        opt.step(&grads);
        let mut entry = StepLog {
            step,
            total: total.item(),
            l2: mse.item(),
            rec: rec.item(),
            gan_g: 0.0,
            d_loss: 0.0,
            negative,
        };
        if !entry.total.is_finite() {
            return Err(ModelError::Contract(format!("restorer loss diverged at step {step}")));
        }
        if !negative && rcfg.lambda_gan > 0.0 {
            entry.gan_g = (entry.total - entry.rec) / rcfg.lambda_gan;
            let gd = Graph::new();
            let real = gd.constant(images_to_array(&batch.iter().map(|p| &p.hq).collect::<Vec<_>>()));
            let fake = gd.constant(pred.to_array());
            let dl = d_loss_t(&disc, real, fake);
            entry.d_loss = dl.item();
            dopt.step(&gd.backward(dl));
        }
        log.steps.push(entry);
        if opts.eval_every > 0 && (step + 1) % opts.eval_every == 0 && step + 1 < rcfg.steps {
            eval(&mut log, step + 1)?;
        }
    }
    eval(&mut log, rcfg.steps)?;
    Ok((mapnet, restorer, log))
}

/// Everything inference needs.
pub struct Models {
    pub fadex: Fadex,
    pub mapnet: MapNet,
    pub restorer: Restorer,
    pub mode: TokenMode,
    pub canonical: usize,
    /// Condition on zeros instead of mapped tokens.
    pub zero_tokens: bool,
}

/// Align the face, simulate the reference restorer on the aligned
/// reference crop, estimate tokens, and run the guided restorer.
pub fn infer(
    m: &Models,
    lq: &Image,
    ann: &FaceAnnotation,
    reference: &Image,
    refq: QualityLevel,
    lambda_cfg: f64,
    seed: u64,
) -> Result<Image> {
    lq.same_shape(reference)?;
    let side = ann.bbox.w.min(ann.bbox.h);
    if side < MIN_FACE {
        return Err(too_small(side, MIN_FACE));
    }
    let (ref_face, warp) = align_face(reference, ann, m.canonical)?;
    let lq_face = warp_to_canonical(lq, &warp);
    let oracle = oracle_face(&ref_face, refq, "infer", seed);
    let code = m.fadex.encode(&oracle, &lq_face)?;
    let tokens = if m.zero_tokens {
        DegTokens::zeros(m.mode.count(), m.mapnet.cfg.token_dim)
    } else {
        m.mapnet.map_tokens(&code, m.mode)?
    };
    m.restorer.restore_cfg(lq, &tokens, lambda_cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub level: QualityLevel,
    pub psnr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
    /// Adjacent pairs (better, worse) where the worse level scored higher,
    /// with the margin in dB.
    pub inversions: Vec<(QualityLevel, QualityLevel, f64)>,
}

impl RobustnessReport {
    pub fn from_means(rows: Vec<RobustnessRow>) -> Self {
        let inversions = rows
            .windows(2)
            .filter(|w| w[1].psnr > w[0].psnr)
            .map(|w| (w[0].level, w[1].level, w[1].psnr - w[0].psnr))
            .collect();
        Self { rows, inversions }
    }

    /// Ordered up to at most one adjacent inversion of at most `tol` dB.
    pub fn is_ordered(&self, tol: f64) -> bool {
        match self.inversions.as_slice() {
            [] => true,
            [(_, _, d)] => *d <= tol,
            _ => false,
        }
    }
}

/// Mean full-scene PSNR of guided inference per reference quality level.
pub fn robustness_report(m: &Models, pairs: &[ScenePair], lambda_cfg: f64, seed: u64) -> Result<RobustnessReport> {
    if pairs.is_empty() {
        return Err(ModelError::Contract("no evaluation pairs".into()));
    }
    let mut rows = Vec::new();
    for level in QualityLevel::ALL {
        let mut acc = 0.0;
        for p in pairs {
            let out = infer(m, &p.lq, &p.ann, &p.hq, level, lambda_cfg, face2scene_core::rng::stream_id(&[seed, face2scene_core::rng::hash_str(&p.id)]))?;
            acc += psnr(&out, &p.hq)?;
        }
        rows.push(RobustnessRow {
            level,
            psnr: acc / pairs.len() as f64,
        });
    }
    Ok(RobustnessReport::from_means(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fadex::FadexConfig;
    use crate::pairs::toy_pairs;
    use face2scene_core::datagen::SceneParams;
    use face2scene_core::degrade::Preset;

    fn tiny() -> (Vec<Prepared>, MapnetConfig, RestorerConfig) {
        let fcfg = FadexConfig {
            channels: 8,
            proj_dim: 8,
            ..Default::default()
        };
        let f = Fadex::new(&fcfg, 0).unwrap();
        let pairs = toy_pairs(0..2, &SceneParams::default(), &[Preset::D1, Preset::D4], 3).unwrap();
        let prep = prepare(&f, &pairs, 16, QualityLevel::Gt, 0).unwrap();
        let mcfg = MapnetConfig {
            in_channels: 8,
            token_dim: 8,
            ..Default::default()
        };
        let rcfg = RestorerConfig {
            base_width: 4,
            token_dim: 8,
            attn_dim: 4,
            steps: 3,
            batch: 2,
            ..Default::default()
        };
        (prep, mcfg, rcfg)
    }

    #[test]
    fn short_training_runs_and_is_deterministic() {
        let (prep, mcfg, rcfg) = tiny();
        let opts = TrainOptions::default();
        let (_, r1, l1) = train_restorer(&prep[..2], &prep[2..], &mcfg, &rcfg, &opts, 5).unwrap();
        let (_, r2, l2) = train_restorer(&prep[..2], &prep[2..], &mcfg, &rcfg, &opts, 5).unwrap();
        assert_eq!(l1.steps.len(), 3);
        assert_eq!(l1.val.len(), 2);
        assert_eq!(r1.store.snapshot(), r2.store.snapshot());
        assert_eq!(l1.final_val(), l2.final_val());
    }

    #[test]
    fn disc_backbone_stays_frozen_and_neg_bank_idle() {
        let (prep, mcfg, rcfg) = tiny();
        let rcfg = RestorerConfig { p_n: 0.0, ..rcfg };
        let fresh = Restorer::new(&rcfg, face2scene_core::rng::stream_id(&[9, 2])).unwrap();
        let (_, r, _) = train_restorer(&prep, &[], &mcfg, &rcfg, &TrainOptions::default(), 9).unwrap();
        assert_eq!(r.bank_neg.value(), fresh.bank_neg.value());
        assert_ne!(r.bank_pos.value(), fresh.bank_pos.value());
    }

    #[test]
    fn robustness_ordering_rule() {
        let row = |level, psnr| RobustnessRow { level, psnr };
        use QualityLevel::*;
        let r = RobustnessReport::from_means(vec![row(Gt, 30.0), row(Good, 29.0), row(Medium, 29.1), row(Bad, 25.0)]);
        assert!(r.is_ordered(0.2));
        let r = RobustnessReport::from_means(vec![row(Gt, 30.0), row(Good, 29.0), row(Medium, 29.5), row(Bad, 25.0)]);
        assert!(!r.is_ordered(0.2));
        let r = RobustnessReport::from_means(vec![row(Gt, 30.0), row(Good, 30.1), row(Medium, 29.5), row(Bad, 29.6)]);
        assert!(!r.is_ordered(0.2));
    }
}
