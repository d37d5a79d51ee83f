//! Metrics, GT-face-inserted evaluation, result tables and plots.

mod metrics;
pub mod plot;
mod report;
mod scorer;

pub use metrics::{laplacian_blur_score, mse, psnr, ssim, SsimMode, SsimOptions, PSNR_CAP};
pub use report::{MetricRow, MetricTable};
pub use scorer::{ExternalScorer, ScorerRegistry};

use crate::error::{Error, Result};
use crate::facegeom::{blend_insert, soft_mask, FaceAnnotation};
use crate::image::Image;

/// One evaluation sample.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub pred: &'a Image,
    pub gt: &'a Image,
    pub ann: Option<&'a FaceAnnotation>,
}

fn score_row(id: &str, pred: &Image, gt: &Image, ssim_opt: &SsimOptions) -> Result<MetricRow> {
    let mut row = MetricRow::new(id);
    row.set("psnr", psnr(pred, gt)?);
    row.set("ssim", ssim(pred, gt, ssim_opt)?);
    row.set("blur", laplacian_blur_score(pred));
    Ok(row)
}

/// Composite the GT face into each prediction through a feathered bbox mask,
/// then score the whole scene against GT.
pub fn eval_gt_face_inserted(items: &[EvalItem<'_>], feather: usize, ssim_opt: &SsimOptions) -> Result<MetricTable> {
    let mut t = MetricTable::default();
    for it in items {
        let ann = it
            .ann
            .ok_or_else(|| Error::Data(format!("{}: missing face annotation", it.id)))?;
        let m = soft_mask(&ann.bbox, it.gt.width(), it.gt.height(), feather)?;
        let blended = blend_insert(it.pred, it.gt, &m)?;
        t.rows.push(score_row(it.id, &blended, it.gt, ssim_opt)?);
    }
    Ok(t)
}

/// Score only inside the face bbox.
pub fn eval_face_only(items: &[EvalItem<'_>], ssim_opt: &SsimOptions) -> Result<MetricTable> {
    let mut t = MetricTable::default();
    for it in items {
        let ann = it
            .ann
            .ok_or_else(|| Error::Data(format!("{}: missing face annotation", it.id)))?;
        let b = ann.bbox;
        let p = it.pred.crop(b.x, b.y, b.w, b.h)?;
        let g = it.gt.crop(b.x, b.y, b.w, b.h)?;
        t.rows.push(score_row(it.id, &p, &g, ssim_opt)?);
    }
    Ok(t)
}

/// Plain full-image scores.
pub fn eval_full(items: &[EvalItem<'_>], ssim_opt: &SsimOptions) -> Result<MetricTable> {
    let mut t = MetricTable::default();
    for it in items {
        t.rows.push(score_row(it.id, it.pred, it.gt, ssim_opt)?);
    }
    Ok(t)
}
