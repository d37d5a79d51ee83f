//! Hook for externally provided quality scorers (no-reference IQA,
//! identity similarity, ...). Nothing is built in.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::Image;

pub trait ExternalScorer: Send + Sync {
    fn name(&self) -> &str;
    /// One score per image.
    fn score(&self, images: &[Image]) -> Result<Vec<f64>>;
}

#[derive(Default)]
pub struct ScorerRegistry {
    scorers: BTreeMap<String, Box<dyn ExternalScorer>>,
}

impl ScorerRegistry {
    pub fn register(&mut self, s: Box<dyn ExternalScorer>) {
        self.scorers.insert(s.name().to_string(), s);
    }

    pub fn get(&self, name: &str) -> Option<&dyn ExternalScorer> {
        self.scorers.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.scorers.keys().map(String::as_str).collect()
    }

    pub fn score(&self, name: &str, images: &[Image]) -> Result<Vec<f64>> {
        let s = self
            .get(name)
            .ok_or_else(|| Error::Param(format!("no scorer registered as {name:?}")))?;
        let v = s.score(images)?;
        if v.len() != images.len() {
            return Err(Error::Data(format!(
                "scorer {name} returned {} scores for {} images",
                v.len(),
                images.len()
            )));
        }
        Ok(v)
    }
}
