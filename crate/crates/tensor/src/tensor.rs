use crate::error::{Result, TensorError};
use crate::real::Real;

/// Dense, contiguous, row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Like [`Tensor::new`] but panics on a length mismatch.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        Self::new(shape, data).expect("tensor data length")
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let data = vec![value; numel(&shape)];
        Self { shape, data }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(TensorError::Reshape {
                from: self.shape,
                to: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (i, (&ix, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < n, "index {ix} out of bounds for axis {i} of size {n}");
            off = off * n + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Tensor<U>, f: impl Fn(T, U) -> V) -> Tensor<V> {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Sub-tensor at `index` along axis 0, e.g. one sample of a batch.
    pub fn index_axis0(&self, index: usize) -> Tensor<T> {
        let inner: Vec<usize> = self.shape[1..].to_vec();
        let n = numel(&inner);
        Tensor {
            shape: inner,
            data: self.data[index * n..(index + 1) * n].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or(TensorError::Empty("stack"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|x| U::of(x.as_f64()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest elementwise absolute difference to a same-shaped tensor.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }
}

/// Result shape of numpy-style broadcasting, or `None` if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (rank-aligned right), zero on
/// broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Merges adjacent axes whose strides are jointly contiguous. Returns the
/// reduced shape and one stride vector per operand.
pub(crate) fn coalesce(shape: &[usize], strides: &[Vec<usize>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut dims: Vec<usize> = Vec::new();
    let mut sts: Vec<Vec<usize>> = vec![Vec::new(); strides.len()];
    for (axis, &n) in shape.iter().enumerate() {
        if n == 1 {
            continue;
        }
        if let Some(&last) = dims.last() {
            let mergeable = strides
                .iter()
                .zip(&sts)
                .all(|(s, merged)| *merged.last().unwrap() == s[axis] * n);
            if mergeable {
                let k = dims.len() - 1;
                dims[k] = last * n;
                for (s, merged) in strides.iter().zip(sts.iter_mut()) {
                    *merged.last_mut().unwrap() = s[axis];
                }
                continue;
            }
        }
        dims.push(n);
        for (s, merged) in strides.iter().zip(sts.iter_mut()) {
            merged.push(s[axis]);
        }
    }
    if dims.is_empty() {
        dims.push(1);
        for merged in sts.iter_mut() {
            merged.push(0);
        }
    }
    (dims, sts)
}

/// Visits every output position of a coalesced iteration space, calling
/// `inner(offsets, len, inner_strides)` once per innermost run.
pub(crate) fn for_each_run(
    dims: &[usize],
    strides: &[Vec<usize>],
    mut inner: impl FnMut(&[usize], usize, &[usize]),
) {
    let rank = dims.len();
    let last = rank - 1;
    let inner_len = dims[last];
    let inner_strides: Vec<usize> = strides.iter().map(|s| s[last]).collect();
    let mut counter = vec![0usize; last];
    let mut offsets = vec![0usize; strides.len()];
    let outer: usize = dims[..last].iter().product();
    for _ in 0..outer {
        inner(&offsets, inner_len, &inner_strides);
        // odometer increment
        for ax in (0..last).rev() {
            counter[ax] += 1;
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o += s[ax];
            }
            if counter[ax] < dims[ax] {
                break;
            }
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o -= s[ax] * dims[ax];
            }
            counter[ax] = 0;
        }
    }
}

/// Broadcasting elementwise binary op.
pub fn broadcast_zip<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        return Ok(a.zip_map(b, f));
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| TensorError::ShapeMismatch {
        op: "broadcast",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let so = strides_of(&out_shape);
    let (dims, sts) = coalesce(&out_shape, &[so, sa, sb]);
    let mut out = vec![T::zero(); numel(&out_shape)];
    for_each_run(&dims, &sts, |off, len, st| {
        let (o, ia, ib) = (off[0], off[1], off[2]);
        let (so, sa, sb) = (st[0], st[1], st[2]);
        for i in 0..len {
            out[o + i * so] = f(a.data[ia + i * sa], b.data[ib + i * sb]);
        }
    });
    Ok(Tensor {
        shape: out_shape,
        data: out,
    })
}

/// Sums `t` down to `shape`, undoing a broadcast.
pub fn sum_to_shape<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if t.shape == shape {
        return t.clone();
    }
    let st = strides_of(&t.shape);
    let sr = broadcast_strides(shape, &t.shape);
    let (dims, sts) = coalesce(&t.shape, &[st, sr]);
    let mut out = vec![T::zero(); numel(shape)];
    for_each_run(&dims, &sts, |off, len, s| {
        if s[1] == 0 {
            let mut acc = T::zero();
            for i in 0..len {
                acc += t.data[off[0] + i * s[0]];
            }
            out[off[1]] += acc;
        } else {
            for i in 0..len {
                out[off[1] + i * s[1]] += t.data[off[0] + i * s[0]];
            }
        }
    });
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}
