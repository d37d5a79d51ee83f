use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use face2scene_core::datagen::{build_dataset, Dataset, Split};
use face2scene_core::degrade::{apply_pipeline, preset, DegradeSeed, Preset};
use face2scene_core::evalkit::plot::{save_bar_plot, save_line_plot};
use face2scene_core::evalkit::{eval_face_only, eval_full, eval_gt_face_inserted, EvalItem, MetricTable};
use face2scene_core::facegeom::{default_feather, FaceAnnotation};
use face2scene_core::refsim::QualityLevel;
use face2scene_core::Image;
use face2scene_models::fadex::{self, cos_sim_analysis, Fadex};
use face2scene_models::mapnet::MapNet;
use face2scene_models::pairs::{face_sets, fadex_samples, load_pairs, toy_pairs, ScenePair};
use face2scene_models::pipeline::{infer, prepare, robustness_report, train_restorer, Conditioning, Models, TrainOptions};
use face2scene_models::restorer::Restorer;
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{token_mode, Config};
use crate::{Common, InferArgs};

const FADEX_CKPT: &str = "fadex.ckpt";
const MAPNET_CKPT: &str = "mapnet.ckpt";
const RESTORER_CKPT: &str = "restorer.ckpt";
const MODEL_META: &str = "models.json";
/// Scene indices for analysis images start here, clear of any dataset.
const HELDOUT_BASE: usize = 1_000_000;

fn out_dir(c: &Common, default: &str) -> Result<PathBuf> {
    let d = c.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

fn open_dataset(cfg: &Config) -> Result<Dataset> {
    let root = cfg.data_root();
    Dataset::open(&root).with_context(|| format!("opening dataset at {}", root.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn gen_data(c: &Common) -> Result<()> {
    let cfg = Config::load(c.config.as_deref())?;
    let out = c.out.clone().unwrap_or_else(|| cfg.data_root());
    let m = build_dataset(&cfg.dataset(), &out, c.seed)?;
    let lq: usize = m.records.iter().map(|r| r.degradations.len()).sum();
    info!("wrote {} scenes and {lq} degraded variants to {}", m.records.len(), out.display());
    Ok(())
}

pub fn degrade(c: &Common, input: &Path, preset_id: &str) -> Result<()> {
    let p: Preset = preset_id.parse()?;
    let img = Image::load_png(input)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let out = apply_pipeline(&img, &preset(p), DegradeSeed::new(c.seed, stem))?;
    let path = c.out.clone().unwrap_or_else(|| PathBuf::from(format!("{stem}_{preset_id}.png")));
    out.save_png(&path)?;
    info!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

pub fn train_fadex(c: &Common) -> Result<()> {
    let cfg = Config::load(c.config.as_deref())?;
    let ds = open_dataset(&cfg)?;
    let pairs = load_pairs(&ds, Some(Split::Train))?;
    let samples = fadex_samples(&pairs, cfg.data.canonical, cfg.fadex.hq_level, c.seed)?;
    info!("training extractor on {} face pairs", samples.len());
    let (f, log) = fadex::train_fadex(&samples, &cfg.fadex.model, c.seed)?;
    let out = out_dir(c, "runs/fadex")?;
    f.save(&out.join(FADEX_CKPT))?;
    let rows: Vec<LossRow> = log.epoch_loss.iter().enumerate().map(|(epoch, &loss)| LossRow { epoch, loss }).collect();
    write_csv(&out.join("fadex_log.csv"), &rows)?;
    save_line_plot(&[log.epoch_loss.clone()], &out.join("fadex_loss.png"))?;
    info!(
        "epoch loss {:.4} -> {:.4}; wrote {}",
        log.epoch_loss.first().copied().unwrap_or(f64::NAN),
        log.epoch_loss.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

pub fn analyze_fadex(c: &Common, ckpt: &Path, presets: &str, images: Option<usize>) -> Result<()> {
    let cfg = Config::load(c.config.as_deref())?;
    let f = Fadex::load(ckpt)?;
    let presets: Vec<Preset> = presets.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
    let n = images.unwrap_or(cfg.eval.images);
    let pairs = toy_pairs(HELDOUT_BASE..HELDOUT_BASE + n, &cfg.data.scene, &presets, c.seed)?;
    let samples = fadex_samples(&pairs, cfg.data.canonical, QualityLevel::Gt, c.seed)?;
    let report = cos_sim_analysis(&f, &face_sets(&samples))?;
    let out = out_dir(c, "runs/analysis")?;
    write_json(&out.join("cossim.json"), &report)?;
    save_bar_plot(
        &[report.same_degradation.clone(), vec![report.grand_same_degradation]],
        &out.join("same_degradation.png"),
    )?;
    save_bar_plot(&[report.same_image.clone(), vec![report.grand_same_image]], &out.join("same_image.png"))?;
    println!(
        "same-degradation {:.3} (sd {:.3})  same-image {:.3} (sd {:.3})  gap {:.3}  retrieval {:.1}%",
        report.grand_same_degradation,
        report.std_same_degradation,
        report.grand_same_image,
        report.std_same_image,
        report.gap(),
        100.0 * report.retrieval_accuracy
    );
    Ok(())
}

/// What `train` records next to the checkpoints.
#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    canonical: usize,
    tokens: usize,
    zero_tokens: bool,
    refq: QualityLevel,
}

#[derive(Serialize)]
struct ValRow {
    step: usize,
    val_l2: f64,
}

pub fn train(c: &Common, ckpt: &Path, tokens: Option<usize>, no_deg: bool) -> Result<()> {
    let cfg = Config::load(c.config.as_deref())?;
    let ntok = tokens.unwrap_or(cfg.mapnet.tokens);
    let mode = token_mode(ntok)?;
    let fadex = Fadex::load(ckpt)?;
    let ds = open_dataset(&cfg)?;
    let canonical = cfg.data.canonical;
    let train_pairs = load_pairs(&ds, Some(Split::Train))?;
    let val_pairs = load_pairs(&ds, Some(Split::Val))?;
    let train = prepare(&fadex, &train_pairs, canonical, QualityLevel::Gt, c.seed)?;
    let val = prepare(&fadex, &val_pairs, canonical, QualityLevel::Gt, c.seed)?;
    let opts = TrainOptions {
        conditioning: Conditioning {
            mode,
            zero_tokens: no_deg,
        },
        eval_every: (cfg.restorer.steps / 10).max(1),
    };
    info!("training restorer on {} pairs ({} val), {} tokens{}", train.len(), val.len(), ntok, if no_deg { ", zeroed" } else { "" });
    let (mapnet, restorer, log) = train_restorer(&train, &val, &cfg.mapnet.model, &cfg.restorer, &opts, c.seed)?;
    let out = out_dir(c, "runs/restorer")?;
    fadex.save(&out.join(FADEX_CKPT))?;
    mapnet.save(&out.join(MAPNET_CKPT))?;
    restorer.save(&out.join(RESTORER_CKPT))?;
    write_json(
        &out.join(MODEL_META),
        &ModelMeta {
            canonical,
            tokens: ntok,
            zero_tokens: no_deg,
            refq: QualityLevel::Gt,
        },
    )?;
    write_csv(&out.join("restorer_log.csv"), &log.steps)?;
    let vals: Vec<ValRow> = log.val.iter().map(|&(step, val_l2)| ValRow { step, val_l2 }).collect();
    write_csv(&out.join("val_l2.csv"), &vals)?;
    let totals: Vec<f64> = log.steps.iter().map(|s| s.total).collect();
    save_line_plot(&[totals], &out.join("restorer_loss.png"))?;
    if let (Some(a), Some(b)) = (log.initial_val(), log.final_val()) {
        info!("validation L2 {a:.5} -> {b:.5}; wrote {}", out.display());
    }
    Ok(())
}

fn load_models(dir: &Path, no_deg: bool) -> Result<Models> {
    let text = fs::read_to_string(dir.join(MODEL_META)).with_context(|| format!("reading {}", dir.join(MODEL_META).display()))?;
    let meta: ModelMeta = serde_json::from_str(&text)?;
    Ok(Models {
        fadex: Fadex::load(&dir.join(FADEX_CKPT))?,
        mapnet: MapNet::load(&dir.join(MAPNET_CKPT))?,
        restorer: Restorer::load(&dir.join(RESTORER_CKPT))?,
        mode: token_mode(meta.tokens)?,
        canonical: meta.canonical,
        zero_tokens: meta.zero_tokens || no_deg,
    })
}

pub enum Source {
    Scene(String, usize),
    Files {
        input: PathBuf,
        annotation: PathBuf,
        reference: PathBuf,
    },
}

pub fn restore(c: &Common, a: &InferArgs, src: Source) -> Result<()> {
    let cfg = Config::load(c.config.as_deref())?;
    let m = load_models(&a.ckpt, a.no_deg)?;
    let (lq, ann, reference, name) = match src {
        Source::Scene(id, v) => {
            let ds = open_dataset(&cfg)?;
            let rec = ds.manifest.get(&id).with_context(|| format!("no scene {id:?} in the manifest"))?;
            let var = rec.degradations.get(v).with_context(|| format!("{id} has no variant {v}"))?;
            (
                Image::load_png(&ds.path(&var.path))?,
                rec.annotation.clone(),
                Image::load_png(&ds.path(&rec.scene_path))?,
                format!("{id}_v{v}"),
            )
        }
        Source::Files {
            input,
            annotation,
            reference,
        } => {
            let text = fs::read_to_string(&annotation).with_context(|| format!("reading {}", annotation.display()))?;
            let ann: FaceAnnotation = serde_json::from_str(&text).with_context(|| format!("parsing {}", annotation.display()))?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            (Image::load_png(&input)?, ann, Image::load_png(&reference)?, stem)
        }
    };
    let refq = a.refq.unwrap_or(cfg.eval.refq);
    let scale = a.cfg_scale.unwrap_or(cfg.restorer.lambda_cfg);
    let out = infer(&m, &lq, &ann, &reference, refq, scale, c.seed)?;
    let path = c.out.clone().unwrap_or_else(|| PathBuf::from(format!("{name}_restored.png")));
    out.save_png(&path)?;
    info!("wrote {} (refq {refq}, cfg scale {scale})", path.display());
    Ok(())
}

fn run_infer(cfg: &Config, m: &Models, pairs: &[ScenePair], refq: QualityLevel, scale: f64, seed: u64) -> Result<Vec<Image>> {
    pairs
        .iter()
        .map(|p| Ok(infer(m, &p.lq, &p.ann, &p.hq, refq, scale, seed)?))
        .collect::<Result<Vec<_>>>()
        .map(|v| {
            log::debug!("{} restored with protocol {}", v.len(), cfg.eval.protocol);
            v
        })
}

fn score(cfg: &Config, pairs: &[ScenePair], preds: &[Image]) -> Result<MetricTable> {
    let items: Vec<EvalItem<'_>> = pairs
        .iter()
        .zip(preds)
        .map(|(p, pred)| EvalItem {
            id: &p.id,
            pred,
            gt: &p.hq,
            ann: Some(&p.ann),
        })
        .collect();
    let ssim = cfg.eval.ssim();
    Ok(match cfg.eval.protocol.as_str() {
        "gt-face-inserted" => {
            let feather = pairs.iter().map(|p| default_feather(&p.ann.bbox)).min().unwrap_or(0);
            eval_gt_face_inserted(&items, feather, &ssim)?
        }
        "face-only" => eval_face_only(&items, &ssim)?,
        "full" => eval_full(&items, &ssim)?,
        other => bail!("unknown eval protocol {other:?}"),
    })
}

pub fn eval(c: &Common, a: &InferArgs) -> Result<()> {
    let cfg = Config::load(c.config.as_deref())?;
    let m = load_models(&a.ckpt, a.no_deg)?;
    let ds = open_dataset(&cfg)?;
    let pairs = load_pairs(&ds, Some(Split::Test))?;
    if pairs.is_empty() {
        bail!("test split is empty");
    }
    let refq = a.refq.unwrap_or(cfg.eval.refq);
    let scale = a.cfg_scale.unwrap_or(cfg.restorer.lambda_cfg);
    let preds = run_infer(&cfg, &m, &pairs, refq, scale, c.seed)?;
    let lq: Vec<Image> = pairs.iter().map(|p| p.lq.clone()).collect();
    let table = score(&cfg, &pairs, &preds)?;
    let base = score(&cfg, &pairs, &lq)?;
    let out = out_dir(c, "runs/eval")?;
    table.write_delimited(&out.join("metrics.csv"), b',')?;
    table.write_summary(&out.join("summary.json"))?;
    base.write_summary(&out.join("summary_lq.json"))?;
    for (k, v) in table.means() {
        println!("{k:>8} {v:>10.4}  (lq {:.4})", base.mean(&k).unwrap_or(f64::NAN));
    }
    Ok(())
}

pub fn report(c: &Common, a: &InferArgs) -> Result<()> {
    let cfg = Config::load(c.config.as_deref())?;
    let m = load_models(&a.ckpt, a.no_deg)?;
    let ds = open_dataset(&cfg)?;
    let pairs = load_pairs(&ds, Some(Split::Test))?;
    let scale = a.cfg_scale.unwrap_or(cfg.restorer.lambda_cfg);
    let r = robustness_report(&m, &pairs, scale, c.seed)?;
    let out = out_dir(c, "runs/report")?;
    write_json(&out.join("robustness.json"), &r)?;
    save_bar_plot(&[r.rows.iter().map(|row| row.psnr).collect()], &out.join("robustness.png"))?;
    for row in &r.rows {
        println!("{:>7} {:>8.3} dB", row.level.name(), row.psnr);
    }
    println!("ordered (<= 1 inversion of <= 0.2 dB): {}", r.is_ordered(0.2));
    Ok(())
}
