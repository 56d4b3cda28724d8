//! Dense row-major tensors of rank one or two.
//!
//! Rank-1 tensors of length `n` behave as `1 × n` rows wherever a matrix view
//! is needed, which gives numpy-style trailing-dimension broadcasting for the
//! shapes this crate uses: scalars (`[1]`), rows, columns and matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::InvalidTensor(format!(
                "rank must be 1 or 2, got shape {shape:?}"
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!(
                "zero-sized dimension in {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Column vector `n × 1`.
    pub fn column(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len(), 1], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Tensor::matrix(r, c, rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrix view `(rows, cols)`; rank-1 tensors are single rows.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims().0
    }

    pub fn cols(&self) -> usize {
        self.dims().1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Contract(format!("row {i} out of range {r}")));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), c, data)
    }

    /// Column range `[start, end)` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, c) = self.dims();
        if start >= end || end > c {
            return Err(Error::Contract(format!(
                "column slice {start}..{end} out of range {c}"
            )));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Tensor::matrix(r, end - start, data)
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Forward kernels. Each is a pure function of its inputs; the tape in
// `autodiff` records which kernel produced a node and reuses these for replay.
// ---------------------------------------------------------------------------

fn check(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Broadcast result shape for two operands, with its matrix dims.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
) -> Result<(Vec<usize>, usize, usize)> {
    let (ar, ac) = a.dims();
    let (br, bc) = b.dims();
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(ar, br), dim(ac, bc)) {
        (Some(r), Some(c)) => {
            let shape = if a.shape.len() == 1 && b.shape.len() == 1 {
                vec![c]
            } else {
                vec![r, c]
            };
            Ok((shape, r, c))
        }
        _ => Err(Error::Shape {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        }),
    }
}

#[inline]
fn bidx(t: &Tensor, i: usize, j: usize) -> usize {
    let (r, c) = t.dims();
    let ii = if r == 1 { 0 } else { i };
    let jj = if c == 1 { 0 } else { j };
    ii * c + jj
}

fn zip_with(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let (shape, r, c) = broadcast_shape(op, a, b)?;
    let data = if a.shape == b.shape {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(a.data[bidx(a, i, j)], b.data[bidx(b, i, j)]));
            }
        }
        out
    };
    check(op, Tensor { shape, data })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("div", a, b, |x, y| x / y)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    if k != k2 || a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    check("matmul", Tensor::matrix(m, n, out)?)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = a.dims();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor {
        shape: vec![c, r],
        data: out,
    }
}

pub fn sum(a: &Tensor) -> Result<Tensor> {
    check("sum", Tensor::scalar(a.sum_all()))
}

pub fn mean(a: &Tensor) -> Result<Tensor> {
    check("mean", Tensor::scalar(a.sum_all() / a.len() as f64))
}

/// Per-row sums, `r × c → r × 1`.
pub fn row_sums(a: &Tensor) -> Result<Tensor> {
    let (r, _) = a.dims();
    let data = (0..r).map(|i| a.row(i).iter().sum()).collect();
    check("row_sums", Tensor::new(vec![r, 1], data)?)
}

/// Per-column sums, `r × c → 1 × c`.
pub fn col_sums(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims();
    let mut data = vec![0.0; c];
    for i in 0..r {
        for (d, v) in data.iter_mut().zip(a.row(i)) {
            *d += v;
        }
    }
    check("col_sums", Tensor::new(vec![1, c], data)?)
}

pub fn square(a: &Tensor) -> Result<Tensor> {
    check("square", a.map(|v| v * v))
}

pub fn exp(a: &Tensor) -> Result<Tensor> {
    check("exp", a.map(f64::exp))
}

pub fn log(a: &Tensor) -> Result<Tensor> {
    check("log", a.map(f64::ln))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(a: &Tensor) -> Result<Tensor> {
    check("sigmoid", a.map(sigmoid_scalar))
}

pub fn softplus(a: &Tensor) -> Result<Tensor> {
    check("softplus", a.map(softplus_scalar))
}

pub fn scale(a: &Tensor, c: f64) -> Result<Tensor> {
    check("scale", a.map(|v| v * c))
}

pub fn add_scalar(a: &Tensor, c: f64) -> Result<Tensor> {
    check("add_scalar", a.map(|v| v + c))
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let r = first.rows();
    let mut total = 0;
    for p in parts {
        if p.rows() != r || p.shape.len() != 2 {
            return Err(Error::Shape {
                op: "concat_cols",
                left: first.shape.clone(),
                right: p.shape.clone(),
            });
        }
        total += p.cols();
    }
    let mut data = Vec::with_capacity(r * total);
    for i in 0..r {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Tensor::matrix(r, total, data)
}

pub fn broadcast_to(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let target = Tensor::zeros(shape);
    let (out_shape, _, _) = broadcast_shape("broadcast_to", &target, a)?;
    if out_shape != shape {
        return Err(Error::Shape {
            op: "broadcast_to",
            left: a.shape.clone(),
            right: shape.to_vec(),
        });
    }
    add(&target, a)
}

/// Row-wise log-softmax.
pub fn log_softmax(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = a.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|v| v - lse));
    }
    check(
        "log_softmax",
        Tensor {
            shape: a.shape.clone(),
            data,
        },
    )
}

/// Sum `g` down to `shape`, undoing a broadcast.
pub(crate) fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape == shape {
        return g.clone();
    }
    let target = Tensor::zeros(shape);
    let (tr, tc) = target.dims();
    let (gr, gc) = g.dims();
    let mut out = target;
    for i in 0..gr {
        for j in 0..gc {
            let ii = if tr == 1 { 0 } else { i };
            let jj = if tc == 1 { 0 } else { j };
            out.data[ii * tc + jj] += g.data[i * gc + j];
        }
    }
    out
}
