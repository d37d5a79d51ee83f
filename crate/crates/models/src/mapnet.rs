//! Degradation mapping network: patch embedding, dual-branch subtractive
//! attention, and grid pooling into 16 + 4 + 1 conditioning tokens.

use std::path::Path;
use std::str::FromStr;

use face2scene_tensor::checkpoint::Checkpoint;
use face2scene_tensor::{Array, Graph, Init, Param, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, too_small, Result};
use crate::fadex::DegCode;
use crate::nn::{to_tokens, Conv2d, LayerNorm, Linear, RmsNorm};

pub const GRIDS: [usize; 3] = [4, 2, 1];
pub const NUM_TOKENS: usize = 21;
/// Smallest code side; the embedded grid is then 4x4.
pub const MIN_CODE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapnetConfig {
    pub in_channels: usize,
    pub heads: usize,
    pub token_dim: usize,
    pub lambda_init: f64,
    /// One MLP for all 21 tokens instead of one per scale.
    pub shared_mlp: bool,
}

impl Default for MapnetConfig {
    fn default() -> Self {
        Self {
            in_channels: 32,
            heads: 8,
            token_dim: 64,
            lambda_init: 0.0,
            shared_mlp: false,
        }
    }
}

impl MapnetConfig {
    pub fn embed_channels(&self) -> usize {
        2 * self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads < 2 || self.heads % 2 != 0 {
            return Err(config(format!("heads must be even, got {}", self.heads)));
        }
        let per = self.heads / 2;
        if self.in_channels == 0 || self.in_channels % per != 0 {
            return Err(config(format!(
                "in_channels {} must split evenly over {per} heads per branch",
                self.in_channels
            )));
        }
        if self.token_dim == 0 {
            return Err(config("token_dim must be positive"));
        }
        Ok(())
    }
}

/// Which token suffix to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TokenMode {
    #[default]
    #[serde(rename = "all")]
    All,
    #[serde(rename = "global+intermediate")]
    GlobalIntermediate,
    #[serde(rename = "global")]
    Global,
}

impl TokenMode {
    pub fn count(self) -> usize {
        match self {
            TokenMode::All => 21,
            TokenMode::GlobalIntermediate => 5,
            TokenMode::Global => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenMode::All => "all",
            TokenMode::GlobalIntermediate => "global+intermediate",
            TokenMode::Global => "global",
        }
    }
}

impl FromStr for TokenMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" | "21" => Ok(TokenMode::All),
            "global+intermediate" | "5" => Ok(TokenMode::GlobalIntermediate),
            "global" | "1" => Ok(TokenMode::Global),
            _ => Err(format!("unknown token mode {s:?} (all, global+intermediate, global)")),
        }
    }
}

/// `T x D` token matrix for one face.
#[derive(Debug, Clone, PartialEq)]
pub struct DegTokens {
    pub tokens: Array,
}

impl DegTokens {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            tokens: Array::zeros(&[n, d]),
        }
    }
}

/// Intermediate values of one attention pass.
pub struct AttnTrace<'g> {
    /// `[N, H/2, L, L]`.
    pub a1: Tensor<'g>,
    pub a2: Tensor<'g>,
    /// Combined heads before RMS norm, `[N, L, 2C]`.
    pub pre_norm: Tensor<'g>,
    pub out: Tensor<'g>,
}

struct TokenMlp {
    fc1: Linear,
    fc2: Linear,
    ln: LayerNorm,
}

impl TokenMlp {
    fn new(store: &mut ParamStore, name: &str, c: usize, d: usize) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), c, 2 * d, true),
            fc2: Linear::new(store, &format!("{name}.fc2"), 2 * d, d, true),
            ln: LayerNorm::new(store, &format!("{name}.ln"), d),
        }
    }

    fn forward<'g>(&self, x: Tensor<'g>) -> Tensor<'g> {
        self.ln.forward(self.fc2.forward(self.fc1.forward(x).relu()))
    }
}

pub struct MapNet {
    pub cfg: MapnetConfig,
    pub store: ParamStore,
    pub embed: Conv2d,
    pub embed_ln: LayerNorm,
    pub q1: Linear,
    pub k1: Linear,
    pub q2: Linear,
    pub k2: Linear,
    pub v: Linear,
    pub lambda: Param,
    pub rms: RmsNorm,
    pub proj: Linear,
    mlps: Vec<TokenMlp>,
}

impl MapNet {
    pub fn new(cfg: &MapnetConfig, seed: u64) -> Result<MapNet> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let c = cfg.in_channels;
        let e = cfg.embed_channels();
        let embed = Conv2d::new(&mut store, "embed", c, e, 3, 2, true);
        let embed_ln = LayerNorm::new(&mut store, "embed.ln", e);
        let q1 = Linear::new(&mut store, "attn.q1", c, c, false);
        let k1 = Linear::new(&mut store, "attn.k1", c, c, false);
        let q2 = Linear::new(&mut store, "attn.q2", c, c, false);
        let k2 = Linear::new(&mut store, "attn.k2", c, c, false);
        let v = Linear::new(&mut store, "attn.v", e, e, false);
        let lambda = store.add("attn.lambda", &[1], Init::Const(cfg.lambda_init));
        let rms = RmsNorm::new(&mut store, "attn.rms", e);
        let proj = Linear::new(&mut store, "attn.proj", e, c, true);
        let n = if cfg.shared_mlp { 1 } else { 3 };
        let mlps = (0..n)
            .map(|i| TokenMlp::new(&mut store, &format!("mlp.{i}"), c, cfg.token_dim))
            .collect();
        Ok(MapNet {
            cfg: cfg.clone(),
            store,
            embed,
            embed_ln,
            q1,
            k1,
            q2,
            k2,
            v,
            lambda,
            rms,
            proj,
            mlps,
        })
    }

    fn check_code(&self, s: &[usize]) -> Result<()> {
        if s.len() != 4 || s[1] != self.cfg.in_channels || s[2] != s[3] {
            return Err(shape(format!(
                "expected code [N, {}, S, S], got {s:?}",
                self.cfg.in_channels
            )));
        }
        if s[2] < MIN_CODE {
            // report in face-crop pixels
            return Err(too_small(2 * s[2], 2 * MIN_CODE));
        }
        Ok(())
    }

    /// Code `[N,C,S,S]` -> tokens `[N, (S/2)^2, 2C]` and the grid side.
    pub fn patch_embed<'g>(&self, code: Tensor<'g>) -> Result<(Tensor<'g>, usize)> {
        self.check_code(&code.shape())?;
        let y = self.embed.forward(code);
        let side = y.dim(2);
        Ok((self.embed_ln.forward(to_tokens(y)), side))
    }

    fn heads(x: Tensor<'_>, nh: usize) -> Tensor<'_> {
        let (n, l, c) = (x.dim(0), x.dim(1), x.dim(2));
        x.reshape(&[n, l, nh, c / nh]).permute(&[0, 2, 1, 3])
    }

    /// Attention over `[N, L, 2C]` tokens, returning `[N, L, C]` and the
    /// intermediates.
    pub fn deg_attn<'g>(&self, f: Tensor<'g>) -> Result<AttnTrace<'g>> {
        let s = f.shape();
        let e = self.cfg.embed_channels();
        if s.len() != 3 || s[2] != e {
            return Err(shape(format!("expected [N, L, {e}], got {s:?}")));
        }
        let g = f.graph();
        let (n, l, c) = (s[0], s[1], self.cfg.in_channels);
        let nh = self.cfg.heads / 2;
        let dh = c / nh;
        let f1 = f.narrow(2, 0, c);
        let f2 = f.narrow(2, c, c);
        let scale = 1.0 / (dh as f64).sqrt();
        let attn = |q: &Linear, k: &Linear, x: Tensor<'g>| {
            let qh = Self::heads(q.forward(x), nh);
            let kh = Self::heads(k.forward(x), nh);
            (qh.matmul(kh.t()) * scale).softmax()
        };
        let a1 = attn(&self.q1, &self.k1, f1);
        let a2 = attn(&self.q2, &self.k2, f2);
        let vh = Self::heads(self.v.forward(f), nh);
        let lam = g.param(&self.lambda);
        let comb = (a1 - a2 * lam).matmul(vh);
        let pre_norm = comb.permute(&[0, 2, 1, 3]).reshape(&[n, l, e]);
        let out = self.proj.forward(self.rms.forward(pre_norm));
        Ok(AttnTrace {
            a1,
            a2,
            pre_norm,
            out,
        })
    }

    /// Cell-mean pooling of `[N, side^2, C]` into `[N, 21, C]`, before
    /// the MLPs.
    pub fn pool_raw<'g>(&self, y: Tensor<'g>, side: usize) -> Result<Tensor<'g>> {
        if side < 4 || y.dim(1) != side * side {
            return Err(too_small(4 * side, 16));
        }
        let g = y.graph();
        let p = g.constant(pooling_matrix(side, side).permute(&[1, 0]));
        Ok(y.permute(&[0, 2, 1]).matmul(p).permute(&[0, 2, 1]))
    }

    /// `[N, side^2, C]` -> tokens `[N, 21, D]`.
    pub fn pool_tokens<'g>(&self, y: Tensor<'g>, side: usize) -> Result<Tensor<'g>> {
        let g = y.graph();
        let pooled = self.pool_raw(y, side)?;
        let mut parts = Vec::with_capacity(3);
        let mut start = 0;
        for (i, gs) in GRIDS.iter().enumerate() {
            let cells = gs * gs;
            let mlp = &self.mlps[if self.cfg.shared_mlp { 0 } else { i }];
            parts.push(mlp.forward(pooled.narrow(1, start, cells)));
            start += cells;
        }
        Ok(g.concat(&parts, 1))
    }

    /// Full mapping on a code batch `[N,C,S,S]` -> `[N, T, D]`.
    pub fn forward<'g>(&self, code: Tensor<'g>, mode: TokenMode) -> Result<Tensor<'g>> {
        let (f, side) = self.patch_embed(code)?;
        let y = self.deg_attn(f)?.out;
        let t = self.pool_tokens(y, side)?;
        let k = mode.count();
        Ok(t.narrow(1, NUM_TOKENS - k, k))
    }

    pub fn map_tokens(&self, code: &DegCode, mode: TokenMode) -> Result<DegTokens> {
        let g = Graph::no_grad();
        let mut s = vec![1];
        s.extend_from_slice(code.features.shape());
        let t = self.forward(g.constant(code.features.clone().reshape(&s)), mode)?;
        let a = t.to_array();
        let d = a.shape()[2];
        let tokens = a.reshape(&[mode.count(), d]);
        if !tokens.all_finite() {
            return Err(crate::ModelError::Contract("non-finite tokens".into()));
        }
        Ok(DegTokens { tokens })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = serde_json::to_string(&self.cfg).expect("config serializes");
        Checkpoint::from_store(cfg, &self.store).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MapNet> {
        let ck = Checkpoint::load(path)?;
        let cfg: MapnetConfig = serde_json::from_str(&ck.config)
            .map_err(|e| config(format!("{}: config echo: {e}", path.display())))?;
        let m = MapNet::new(&cfg, 0)?;
        ck.restore_into(&m.store)?;
        Ok(m)
    }
}

/// `[21, h*w]` row-stochastic matrix of cell means for the 4x4, 2x2 and
/// 1x1 grids, row-major within each grid. Uneven cells use floor/ceil
/// bounds, so they may overlap by one row or column.
pub fn pooling_matrix(h: usize, w: usize) -> Array {
    let mut m = Array::zeros(&[NUM_TOKENS, h * w]);
    let mut row = 0;
    for &gs in &GRIDS {
        for i in 0..gs {
            let (y0, y1) = (i * h / gs, ((i + 1) * h).div_ceil(gs));
            for j in 0..gs {
                let (x0, x1) = (j * w / gs, ((j + 1) * w).div_ceil(gs));
                let wgt = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        m.data_mut()[row * h * w + y * w + x] = wgt;
                    }
                }
                row += 1;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(shape: &[usize], seed: u64) -> Array {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Array::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    fn small() -> MapnetConfig {
        MapnetConfig {
            in_channels: 8,
            token_dim: 6,
            ..Default::default()
        }
    }

    #[test]
    fn embed_shapes_and_norm() {
        let m = MapNet::new(&small(), 1).unwrap();
        let g = Graph::no_grad();
        let (f, side) = m.patch_embed(g.constant(rand_array(&[2, 8, 16, 16], 2))).unwrap();
        assert_eq!((f.shape(), side), (vec![2, 64, 16], 8));
        let (f, side) = m.patch_embed(g.constant(rand_array(&[1, 8, 8, 8], 3))).unwrap();
        assert_eq!(side, 4);
        // gamma = 1, beta = 0 at init
        for row in f.to_array().data().chunks(16) {
            let mu = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 16.0;
            assert!(mu.abs() < 1e-12 && (var - 1.0).abs() < 1e-3);
        }
        assert!(m.patch_embed(g.constant(rand_array(&[1, 8, 7, 7], 3))).is_err());
        assert!(m.patch_embed(g.constant(rand_array(&[1, 6, 8, 8], 3))).is_err());
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let m = MapNet::new(&small(), 4).unwrap();
        let g = Graph::no_grad();
        let t = m.deg_attn(g.constant(rand_array(&[2, 16, 16], 5))).unwrap();
        for a in [t.a1, t.a2] {
            assert_eq!(a.shape(), vec![2, 4, 16, 16]);
            for r in a.to_array().data().chunks(16) {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(t.out.shape(), vec![2, 16, 8]);
    }

    #[test]
    fn pooling_identities() {
        let p = pooling_matrix(4, 4);
        for (r, row) in p.data().chunks(16).take(16).enumerate() {
            assert_eq!(row[r], 1.0);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
        let p = pooling_matrix(8, 8);
        let rows: Vec<&[f64]> = p.data().chunks(64).collect();
        for k in 0..64 {
            let local = rows[..16].iter().map(|r| r[k]).sum::<f64>() / 16.0;
            let mid = rows[16..20].iter().map(|r| r[k]).sum::<f64>() / 4.0;
            assert!((local - rows[20][k]).abs() < 1e-15 && (mid - rows[20][k]).abs() < 1e-15);
        }
        // uneven grids still average to one per row
        for row in pooling_matrix(5, 7).data().chunks(35) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn token_counts_per_mode() {
        for shared in [false, true] {
            let cfg = MapnetConfig {
                shared_mlp: shared,
                ..small()
            };
            let m = MapNet::new(&cfg, 0).unwrap();
            let code = DegCode {
                features: rand_array(&[8, 8, 8], 9),
            };
            for mode in [TokenMode::All, TokenMode::GlobalIntermediate, TokenMode::Global] {
                let t = m.map_tokens(&code, mode).unwrap();
                assert_eq!(t.tokens.shape(), &[mode.count(), 6]);
            }
        }
        assert_eq!("global+intermediate".parse::<TokenMode>().unwrap().count(), 5);
        assert!("most".parse::<TokenMode>().is_err());
    }

    #[test]
    fn config_checks() {
        assert!(MapNet::new(&MapnetConfig { heads: 7, ..small() }, 0).is_err());
        assert!(MapNet::new(&MapnetConfig { in_channels: 6, ..small() }, 0).is_err());
    }
}
