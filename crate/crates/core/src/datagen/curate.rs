//! Record filtering with a rejection log.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::evalkit::{laplacian_blur_score, ScorerRegistry};
use crate::image::Image;

/// One stage of the filter. `name` is a built-in (`min-short-side`,
/// `face-present`, `face-area`, `blur`) or `scorer:<registered name>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub name: String,
    #[serde(default)]
    pub threshold: f64,
}

impl FilterSpec {
    pub fn new(name: &str, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            threshold,
        }
    }
}

pub const DEFAULT_FACE_AREA: f64 = 0.01;

/// Image-quality cutoffs for the usual no-reference scorers, applied when
/// scorers under these names are registered.
pub const IQA_THRESHOLDS: [(&str, f64); 3] = [("clipiqa", 0.65), ("musiq", 65.0), ("maniqa", 0.4)];

pub fn iqa_filters(reg: &ScorerRegistry) -> Vec<FilterSpec> {
    IQA_THRESHOLDS
        .iter()
        .filter(|(n, _)| reg.get(n).is_some())
        .map(|(n, t)| FilterSpec::new(&format!("scorer:{n}"), *t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub stage: String,
}

enum Check<'a> {
    MinShortSide(f64),
    FacePresent,
    FaceArea(f64),
    Blur(f64),
    Scorer(&'a str, f64),
}

fn parse<'a>(f: &'a FilterSpec, reg: &ScorerRegistry) -> Result<Check<'a>> {
    Ok(match f.name.as_str() {
        "min-short-side" => Check::MinShortSide(f.threshold),
        "face-present" => Check::FacePresent,
        "face-area" => Check::FaceArea(f.threshold),
        "blur" => Check::Blur(f.threshold),
        other => match other.strip_prefix("scorer:") {
            Some(n) if reg.get(n).is_some() => Check::Scorer(n, f.threshold),
            Some(n) => return Err(Error::Param(format!("filter {other}: no scorer named {n:?}"))),
            None => return Err(Error::Param(format!("unknown filter {other:?}"))),
        },
    })
}

/// Keep records passing every filter in order; the first failing stage is
/// logged per rejected id.
pub fn curate(
    m: &Manifest,
    root: &Path,
    filters: &[FilterSpec],
    reg: &ScorerRegistry,
) -> Result<(Manifest, Vec<Rejection>)> {
    let checks: Vec<Check> = filters.iter().map(|f| parse(f, reg)).collect::<Result<_>>()?;
    let mut kept = Manifest::default();
    let mut log = Vec::new();
    for r in &m.records {
        if checks.is_empty() {
            kept.records.push(r.clone());
            continue;
        }
        let img = Image::load_png(&root.join(&r.scene_path))?;
        let (w, h) = img.dims();
        let mut failed = None;
        for (c, f) in checks.iter().zip(filters) {
            let ok = match *c {
                Check::MinShortSide(t) => w.min(h) as f64 >= t,
                Check::FacePresent => r.annotation.bbox.area() > 0 && r.annotation.validate(w, h).is_ok(),
                Check::FaceArea(t) => r.annotation.bbox.area() as f64 / (w * h) as f64 >= t,
                Check::Blur(t) => laplacian_blur_score(&img) >= t,
                Check::Scorer(n, t) => reg.score(n, std::slice::from_ref(&img))?[0] >= t,
            };
            if !ok {
                failed = Some(f.name.clone());
                break;
            }
        }
        match failed {
            Some(stage) => log.push(Rejection {
                id: r.id.clone(),
                stage,
            }),
            None => kept.records.push(r.clone()),
        }
    }
    Ok((kept, log))
}
