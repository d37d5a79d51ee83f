//! Layers over the tensor tape. Each layer owns `Param` handles registered
//! in a shared `ParamStore` under a name prefix.

use face2scene_tensor::{Array, Init, Param, ParamStore, Tensor};

pub const LN_EPS: f64 = 1e-5;

pub struct Conv2d {
    pub w: Param,
    pub b: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Self {
        let fan_in = cin * k * k;
        let w = store.add(&format!("{name}.w"), &[cout, cin, k, k], Init::Uniform { fan_in, gain: 6f64.sqrt() / 2.0 });
        let b = bias.then(|| store.add(&format!("{name}.b"), &[cout], Init::Zeros));
        Self { w, b, stride, pad: k / 2 }
    }

    /// Same as `new` but registered as non-trainable buffers.
    pub fn frozen(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let fan_in = cin * k * k;
        let w = store.add_buffer(&format!("{name}.w"), &[cout, cin, k, k], Init::Uniform { fan_in, gain: 6f64.sqrt() });
        let b = Some(store.add_buffer(&format!("{name}.b"), &[cout], Init::Zeros));
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn forward<'g>(&self, x: Tensor<'g>) -> Tensor<'g> {
        let g = x.graph();
        let y = x.conv2d(g.param(&self.w), self.stride, self.pad);
        match &self.b {
            Some(b) => {
                let c = b.shape()[0];
                y + g.param(b).reshape(&[1, c, 1, 1])
            }
            None => y,
        }
    }
}

/// `y = x W + b` with `W: [in, out]` over the last axis.
pub struct Linear {
    pub w: Param,
    pub b: Option<Param>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        let w = store.add(&format!("{name}.w"), &[din, dout], Init::Uniform { fan_in: din, gain: 1.0 });
        let b = bias.then(|| store.add(&format!("{name}.b"), &[dout], Init::Zeros));
        Self { w, b }
    }

    pub fn forward<'g>(&self, x: Tensor<'g>) -> Tensor<'g> {
        let g = x.graph();
        let y = x.matmul(g.param(&self.w));
        match &self.b {
            Some(b) => y + g.param(b),
            None => y,
        }
    }
}

/// Normalize over the last axis with a learned affine.
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), &[dim], Init::Ones),
            beta: store.add(&format!("{name}.beta"), &[dim], Init::Zeros),
        }
    }

    pub fn forward<'g>(&self, x: Tensor<'g>) -> Tensor<'g> {
        let g = x.graph();
        normalize_last(x) * g.param(&self.gamma) + g.param(&self.beta)
    }
}

/// Zero mean, unit variance over the last axis, no affine.
pub fn normalize_last(x: Tensor<'_>) -> Tensor<'_> {
    let ax = x.shape().len() - 1;
    let mu = x.mean_axes(&[ax], true);
    let xc = x - mu;
    let var = xc.sqr().mean_axes(&[ax], true);
    xc / (var + LN_EPS).sqrt()
}

pub struct RmsNorm {
    pub scale: Param,
}

impl RmsNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            scale: store.add(&format!("{name}.scale"), &[dim], Init::Ones),
        }
    }

    pub fn forward<'g>(&self, x: Tensor<'g>) -> Tensor<'g> {
        let g = x.graph();
        let ax = x.shape().len() - 1;
        let rms = (x.sqr().mean_axes(&[ax], true) + LN_EPS).sqrt();
        x / rms * g.param(&self.scale)
    }
}

/// Batch normalization over NCHW with running statistics kept as buffers.
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), &[c], Init::Ones),
            beta: store.add(&format!("{name}.beta"), &[c], Init::Zeros),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), &[c], Init::Zeros),
            running_var: store.add_buffer(&format!("{name}.running_var"), &[c], Init::Ones),
            momentum: 0.1,
        }
    }

    /// `train` normalizes with batch statistics; `update_stats` also folds
    /// them into the running buffers.
    pub fn forward<'g>(&self, x: Tensor<'g>, train: bool, update_stats: bool) -> Tensor<'g> {
        let g = x.graph();
        let c = x.dim(1);
        let gamma = g.param(&self.gamma).reshape(&[1, c, 1, 1]);
        let beta = g.param(&self.beta).reshape(&[1, c, 1, 1]);
        if train {
            let mu = x.mean_axes(&[0, 2, 3], true);
            let xc = x - mu;
            let var = xc.sqr().mean_axes(&[0, 2, 3], true);
            if update_stats {
                let n = (x.dim(0) * x.dim(2) * x.dim(3)) as f64;
                let bessel = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let (m, mv, vv) = (self.momentum, mu.value(), var.value());
                self.running_mean.update(|r| {
                    for (r, b) in r.iter_mut().zip(mv.data()) {
                        *r = (1.0 - m) * *r + m * b;
                    }
                });
                self.running_var.update(|r| {
                    for (r, b) in r.iter_mut().zip(vv.data()) {
                        *r = (1.0 - m) * *r + m * b * bessel;
                    }
                });
            }
            xc / (var + LN_EPS).sqrt() * gamma + beta
        } else {
            let mu = g.param(&self.running_mean).reshape(&[1, c, 1, 1]);
            let var = g.param(&self.running_var).reshape(&[1, c, 1, 1]);
            (x - mu) / (var + LN_EPS).sqrt() * gamma + beta
        }
    }
}

/// NCHW -> [N, H*W, C].
pub fn to_tokens(x: Tensor<'_>) -> Tensor<'_> {
    let s = x.shape();
    x.reshape(&[s[0], s[1], s[2] * s[3]]).permute(&[0, 2, 1])
}

/// [N, H*W, C] -> NCHW.
pub fn from_tokens(x: Tensor<'_>, h: usize, w: usize) -> Tensor<'_> {
    let s = x.shape();
    x.permute(&[0, 2, 1]).reshape(&[s[0], s[2], h, w])
}

/// Stack `[H, W, 3]` images into an NCHW array.
pub fn images_to_array(imgs: &[&face2scene_core::Image]) -> Array {
    let (w, h) = imgs[0].dims();
    let mut data = Vec::with_capacity(imgs.len() * 3 * h * w);
    for img in imgs {
        assert_eq!(img.dims(), (w, h), "batch images must share a size");
        for c in 0..3 {
            data.extend((0..h * w).map(|i| img.data()[i * 3 + c]));
        }
    }
    Array::new(&[imgs.len(), 3, h, w], data)
}

/// Inverse of [`images_to_array`] for one batch entry.
pub fn array_to_image(a: &Array, n: usize) -> face2scene_core::Image {
    let s = a.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    assert_eq!(c, 3);
    let base = n * 3 * h * w;
    face2scene_core::Image::from_fn(w, h, |x, y| {
        let i = y * w + x;
        [a.data()[base + i], a.data()[base + h * w + i], a.data()[base + 2 * h * w + i]]
    })
}
