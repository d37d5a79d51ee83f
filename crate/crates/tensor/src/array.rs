//! Dense row-major n-d arrays and the broadcasting machinery shared by the
//! graph ops.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Array{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Array {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.data.len(), "reshape {:?} -> {shape:?}", self.shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Array) {
        assert_eq!(self.shape, other.shape, "gradient shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Generic axis permutation.
    pub fn permute(&self, perm: &[usize]) -> Array {
        assert_eq!(perm.len(), self.ndim());
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        for_each_offset(&out_shape, &src_strides, |off| out.push(self.data[off]));
        Array::new(&out_shape, out)
    }
}

/// Visit the source offset for every element of `shape` in row-major order,
/// where `src_strides` may contain zeros (broadcast) or be permuted.
pub fn for_each_offset(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize)) {
    let n = numel(shape);
    if n == 0 {
        return;
    }
    if shape.is_empty() {
        f(0);
        return;
    }
    let nd = shape.len();
    let inner = shape[nd - 1];
    let inner_stride = src_strides[nd - 1];
    let mut idx = vec![0usize; nd];
    let mut base = 0usize;
    let outer = n / inner;
    for _ in 0..outer {
        let mut off = base;
        for _ in 0..inner {
            f(off);
            off += inner_stride;
        }
        // advance the outer multi-index
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            base += src_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            base -= src_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides that read `shape` as if broadcast to `target`.
pub fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = target.len() - shape.len();
    (0..target.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

pub fn broadcast_binary(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    if a.shape == b.shape {
        return a.zip_map(b, f);
    }
    let shape = broadcast_shape(&a.shape, &b.shape)
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape, b.shape));
    if b.numel() == 1 && shape == a.shape {
        let bv = b.data[0];
        return a.map(|x| f(x, bv));
    }
    if a.numel() == 1 && shape == b.shape {
        let av = a.data[0];
        return b.map(|y| f(av, y));
    }
    let sa = broadcast_strides(&a.shape, &shape);
    let sb = broadcast_strides(&b.shape, &shape);
    let mut oa = Vec::with_capacity(numel(&shape));
    for_each_offset(&shape, &sa, |o| oa.push(o));
    let mut out = Vec::with_capacity(oa.len());
    let mut i = 0;
    for_each_offset(&shape, &sb, |o| {
        out.push(f(a.data[oa[i]], b.data[o]));
        i += 1;
    });
    Array::new(&shape, out)
}

pub fn broadcast_to(a: &Array, shape: &[usize]) -> Array {
    if a.shape == shape {
        return a.clone();
    }
    let st = broadcast_strides(&a.shape, shape);
    let mut out = Vec::with_capacity(numel(shape));
    for_each_offset(shape, &st, |o| out.push(a.data[o]));
    Array::new(shape, out)
}

/// Sum `grad` (shaped like a broadcast result) back down to `shape`.
pub fn reduce_to_shape(grad: &Array, shape: &[usize]) -> Array {
    if grad.shape == shape {
        return grad.clone();
    }
    let st = broadcast_strides(shape, &grad.shape);
    let mut out = vec![0.0; numel(shape)];
    let mut i = 0;
    for_each_offset(&grad.shape, &st, |o| {
        out[o] += grad.data[i];
        i += 1;
    });
    Array::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes() {
        let a = Array::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let t = a.permute(&[1, 0]);
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn broadcast_row_and_column() {
        let a = Array::new(&[2, 1], vec![1., 2.]);
        let b = Array::new(&[3], vec![10., 20., 30.]);
        let c = broadcast_binary(&a, &b, |x, y| x + y);
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[11., 21., 31., 12., 22., 32.]);
        let r = reduce_to_shape(&c, &[2, 1]);
        assert_eq!(r.data(), &[63., 66.]);
    }

    #[test]
    fn incompatible_shapes() {
        assert!(broadcast_shape(&[2, 3], &[4]).is_none());
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]).unwrap(), vec![4, 5, 3]);
    }
}
