//! Central finite-difference gradient checks.

use crate::{Array, Graph, Tensor};

/// Max abs difference between the analytic gradient of `f` at `x` and a
/// central difference with step `h`.
pub fn check<F>(x: &Array, h: f64, f: F) -> f64
where
    F: for<'g> Fn(Tensor<'g>) -> Tensor<'g>,
{
    let g = Graph::new();
    let v = g.variable(x.clone());
    let y = f(v);
    let grads = g.backward(y);
    let analytic = grads
        .wrt(v)
        .cloned()
        .unwrap_or_else(|| Array::zeros(x.shape()));
    let eval = |xx: Array| {
        let g = Graph::no_grad();
        f(g.constant(xx)).item()
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let num = (eval(xp) - eval(xm)) / (2.0 * h);
        worst = worst.max((num - analytic.data()[i]).abs());
    }
    worst
}
