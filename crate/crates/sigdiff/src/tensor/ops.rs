//! Primitive tensor operations and their vector-Jacobian products.

use super::tape::Tape;
use super::{Result, Tensor, TensorError};
use std::rc::Rc;

type Vjp = Box<dyn Fn(&[f64]) -> Vec<f64>>;

/// All traced operands must live on one tape.
fn join_tape(op: &'static str, inputs: &[&Tensor]) -> Result<Option<Tape>> {
    let mut found: Option<Tape> = None;
    for t in inputs {
        if let Some((tape, _)) = t.node_handle() {
            match &found {
                None => found = Some(tape),
                Some(f) => {
                    if !Tape::ptr_eq(f, &tape) {
                        return Err(TensorError::TapeMismatch { op });
                    }
                }
            }
        }
    }
    Ok(found)
}

fn record(tape: Option<Tape>, shape: Vec<usize>, data: Vec<f64>, parents: Vec<(usize, Vjp)>) -> Tensor {
    let out = Tensor::from_vec(shape.clone(), data).expect("internal: shape/data mismatch");
    match tape {
        Some(tape) if !parents.is_empty() => {
            let (ids, vjps): (Vec<usize>, Vec<Vjp>) = parents.into_iter().unzip();
            let id = tape.push(ids, vjps, shape);
            out.with_node(tape, id)
        }
        _ => out,
    }
}

/// Result shape under leading-unit-axis broadcasting, or an error.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let ext = |s: &[usize], i: usize| -> usize {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let (ea, eb) = (ext(a, i), ext(b, i));
        out[i] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return Err(mismatch());
        };
    }
    // A stretched axis is only allowed when every axis before it is extent 1.
    for s in [a, b] {
        let last_bc = (0..rank).filter(|&i| ext(s, i) == 1 && out[i] != 1).next_back();
        if let Some(k) = last_bc {
            if (0..=k).any(|i| ext(s, i) != 1) {
                return Err(mismatch());
            }
        }
    }
    Ok(out)
}

fn binary_ew(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    dfda: impl Fn(f64, f64) -> f64 + 'static,
    dfdb: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let tape = join_tape(op, &[a, b])?;
    let n: usize = shape.iter().product();
    let (na, nb) = (a.numel(), b.numel());
    let ad: Rc<Vec<f64>> = Rc::new(a.data().to_vec());
    let bd: Rc<Vec<f64>> = Rc::new(b.data().to_vec());
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(f(ad[i % na], bd[i % nb]));
    }
    let mut parents: Vec<(usize, Vjp)> = Vec::new();
    if let Some((_, id)) = a.node_handle() {
        let (ad, bd) = (Rc::clone(&ad), Rc::clone(&bd));
        parents.push((
            id,
            Box::new(move |g: &[f64]| {
                let mut acc = vec![0.0; na];
                for (i, gi) in g.iter().enumerate() {
                    acc[i % na] += gi * dfda(ad[i % na], bd[i % nb]);
                }
                acc
            }),
        ));
    }
    if let Some((_, id)) = b.node_handle() {
        let (ad, bd) = (Rc::clone(&ad), Rc::clone(&bd));
        parents.push((
            id,
            Box::new(move |g: &[f64]| {
                let mut acc = vec![0.0; nb];
                for (i, gi) in g.iter().enumerate() {
                    acc[i % nb] += gi * dfdb(ad[i % na], bd[i % nb]);
                }
                acc
            }),
        ));
    }
    Ok(record(tape, shape, data, parents))
}

fn unary_ew(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    // derivative as a function of (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    let tape = join_tape(op, &[x])?;
    let xd: Rc<Vec<f64>> = Rc::new(x.data().to_vec());
    let data: Vec<f64> = xd.iter().map(|&v| f(v)).collect();
    let yd: Rc<Vec<f64>> = Rc::new(data.clone());
    let mut parents: Vec<(usize, Vjp)> = Vec::new();
    if let Some((_, id)) = x.node_handle() {
        parents.push((
            id,
            Box::new(move |g: &[f64]| {
                g.iter()
                    .enumerate()
                    .map(|(i, gi)| gi * df(xd[i], yd[i]))
                    .collect()
            }),
        ));
    }
    Ok(record(tape, x.shape().to_vec(), data, parents))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary_ew("add", self, other, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary_ew("sub", self, other, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary_ew("mul", self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary_ew(
            "div",
            self,
            other,
            |a, b| a / b,
            |_, b| 1.0 / b,
            |a, b| -a / (b * b),
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary_ew("exp", self, f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Result<Tensor> {
        unary_ew("log", self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        unary_ew("sqrt", self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn relu(&self) -> Result<Tensor> {
        unary_ew(
            "relu",
            self,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        unary_ew(
            "sigmoid",
            self,
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    /// `[m,k] x [k,n] -> [m,n]`; one operand may be a rank-1 vector.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        let (a_vec, b_vec) = (self.shape().len() == 1, other.shape().len() == 1);
        if (a_vec && b_vec) || self.shape().len() > 2 || other.shape().len() > 2 {
            return Err(mismatch());
        }
        let (m, k1) = if a_vec {
            (1, self.shape()[0])
        } else {
            (self.shape()[0], self.shape()[1])
        };
        let (k2, n) = if b_vec {
            (other.shape()[0], 1)
        } else {
            (other.shape()[0], other.shape()[1])
        };
        if k1 != k2 {
            return Err(mismatch());
        }
        let k = k1;
        let tape = join_tape("matmul", &[self, other])?;
        let ad: Rc<Vec<f64>> = Rc::new(self.data().to_vec());
        let bd: Rc<Vec<f64>> = Rc::new(other.data().to_vec());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += aip * bd[p * n + j];
                }
            }
        }
        let out_shape = if a_vec {
            vec![n]
        } else if b_vec {
            vec![m]
        } else {
            vec![m, n]
        };
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        if let Some((_, id)) = self.node_handle() {
            let bd = Rc::clone(&bd);
            parents.push((
                id,
                Box::new(move |g: &[f64]| {
                    // dA = G B^T
                    let mut acc = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bd[p * n + j];
                            }
                            acc[i * k + p] = s;
                        }
                    }
                    acc
                }),
            ));
        }
        if let Some((_, id)) = other.node_handle() {
            let ad = Rc::clone(&ad);
            parents.push((
                id,
                Box::new(move |g: &[f64]| {
                    // dB = A^T G
                    let mut acc = vec![0.0; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                acc[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    acc
                }),
            ));
        }
        Ok(record(tape, out_shape, data, parents))
    }

    /// Concatenate along axis 0. Trailing shapes must match.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "no parts".into(),
            });
        }
        let rest = parts[0].shape().get(1..).unwrap_or(&[]).to_vec();
        for p in parts.iter().skip(1) {
            if p.shape().is_empty() || p.shape()[1..] != rest[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        if parts[0].shape().is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "rank-0 tensors cannot be concatenated".into(),
            });
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let tape = join_tape("concat", &refs)?;
        let total: usize = parts.iter().map(|p| p.shape()[0]).sum();
        let mut shape = vec![total];
        shape.extend_from_slice(&rest);
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        let mut offset = 0usize;
        for p in parts {
            let len = p.numel();
            if let Some((_, id)) = p.node_handle() {
                let o = offset;
                parents.push((id, Box::new(move |g: &[f64]| g[o..o + len].to_vec())));
            }
            offset += len;
        }
        Ok(record(tape, shape, data, parents))
    }

    /// Rectangular slice: `out[i] = self[start + i]`, one (start, extent) per axis.
    pub fn slice(&self, start: &[usize], extent: &[usize]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if start.len() != shape.len() || extent.len() != shape.len() {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!(
                    "start/extent rank {}/{} vs tensor rank {}",
                    start.len(),
                    extent.len(),
                    shape.len()
                ),
            });
        }
        for i in 0..shape.len() {
            if start[i] + extent[i] > shape[i] {
                return Err(TensorError::IndexOutOfBounds {
                    op: "slice",
                    index: start[i] + extent[i],
                    extent: shape[i],
                });
            }
        }
        let tape = join_tape("slice", &[self])?;
        let strides = row_major_strides(&shape);
        let n_out: usize = extent.iter().product();
        let positions: Rc<Vec<usize>> = Rc::new(
            (0..n_out)
                .map(|o| {
                    let mut rem = o;
                    let mut src = 0usize;
                    for (ax, e) in extent.iter().enumerate() {
                        let out_strides: usize = extent[ax + 1..].iter().product();
                        let idx = if *e == 0 { 0 } else { rem / out_strides };
                        rem %= out_strides.max(1);
                        src += (start[ax] + idx) * strides[ax];
                    }
                    src
                })
                .collect(),
        );
        let data: Vec<f64> = positions.iter().map(|&p| self.data()[p]).collect();
        let n_in = self.numel();
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        if let Some((_, id)) = self.node_handle() {
            let positions = Rc::clone(&positions);
            parents.push((
                id,
                Box::new(move |g: &[f64]| {
                    let mut acc = vec![0.0; n_in];
                    for (o, &p) in positions.iter().enumerate() {
                        acc[p] += g[o];
                    }
                    acc
                }),
            ));
        }
        Ok(record(tape, extent.to_vec(), data, parents))
    }

    /// Sum of all elements (scalar).
    pub fn sum(&self) -> Result<Tensor> {
        let tape = join_tape("sum", &[self])?;
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        if let Some((_, id)) = self.node_handle() {
            parents.push((id, Box::new(move |g: &[f64]| vec![g[0]; n])));
        }
        Ok(record(tape, vec![], vec![total], parents))
    }

    /// Mean of all elements (scalar).
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(TensorError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let tape = join_tape("mean", &[self])?;
        let n = self.numel();
        let total: f64 = self.data().iter().sum::<f64>() / n as f64;
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        if let Some((_, id)) = self.node_handle() {
            parents.push((id, Box::new(move |g: &[f64]| vec![g[0] / n as f64; n])));
        }
        Ok(record(tape, vec![], vec![total], parents))
    }

    /// Pick rows along axis 0: `out[i] = self[index[i]]`.
    pub fn gather(&self, index: &[usize]) -> Result<Tensor> {
        if self.shape().is_empty() {
            return Err(TensorError::Invalid {
                op: "gather",
                msg: "rank-0 tensor".into(),
            });
        }
        let rows = self.shape()[0];
        let row = self.numel() / rows.max(1);
        for &i in index {
            if i >= rows {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather",
                    index: i,
                    extent: rows,
                });
            }
        }
        let tape = join_tape("gather", &[self])?;
        let mut shape = self.shape().to_vec();
        shape[0] = index.len();
        let mut data = Vec::with_capacity(index.len() * row);
        for &i in index {
            data.extend_from_slice(&self.data()[i * row..(i + 1) * row]);
        }
        let idx: Rc<Vec<usize>> = Rc::new(index.to_vec());
        let n_in = self.numel();
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        if let Some((_, id)) = self.node_handle() {
            parents.push((
                id,
                Box::new(move |g: &[f64]| {
                    let mut acc = vec![0.0; n_in];
                    for (o, &i) in idx.iter().enumerate() {
                        for t in 0..row {
                            acc[i * row + t] += g[o * row + t];
                        }
                    }
                    acc
                }),
            ));
        }
        Ok(record(tape, shape, data, parents))
    }

    /// `out = self` with `values[i]` added into row `index[i]`. Duplicate
    /// indices accumulate.
    pub fn scatter_add(&self, index: &[usize], values: &Tensor) -> Result<Tensor> {
        if self.shape().is_empty() || values.shape().is_empty() {
            return Err(TensorError::Invalid {
                op: "scatter_add",
                msg: "rank-0 operand".into(),
            });
        }
        let rows = self.shape()[0];
        let row = self.numel() / rows.max(1);
        if values.shape()[0] != index.len() || values.shape()[1..] != self.shape()[1..] {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add",
                lhs: self.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        for &i in index {
            if i >= rows {
                return Err(TensorError::IndexOutOfBounds {
                    op: "scatter_add",
                    index: i,
                    extent: rows,
                });
            }
        }
        let tape = join_tape("scatter_add", &[self, values])?;
        let mut data = self.data().to_vec();
        for (o, &i) in index.iter().enumerate() {
            for t in 0..row {
                data[i * row + t] += values.data()[o * row + t];
            }
        }
        let idx: Rc<Vec<usize>> = Rc::new(index.to_vec());
        let n_in = self.numel();
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        if let Some((_, id)) = self.node_handle() {
            parents.push((id, Box::new(move |g: &[f64]| g[..n_in].to_vec())));
        }
        if let Some((_, id)) = values.node_handle() {
            let idx = Rc::clone(&idx);
            parents.push((
                id,
                Box::new(move |g: &[f64]| {
                    let mut acc = Vec::with_capacity(idx.len() * row);
                    for &i in idx.iter() {
                        acc.extend_from_slice(&g[i * row..(i + 1) * row]);
                    }
                    acc
                }),
            ));
        }
        Ok(record(tape, self.shape().to_vec(), data, parents))
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let tape = join_tape("reshape", &[self])?;
        let mut parents: Vec<(usize, Vjp)> = Vec::new();
        if let Some((_, id)) = self.node_handle() {
            parents.push((id, Box::new(move |g: &[f64]| g.to_vec())));
        }
        Ok(record(tape, shape.to_vec(), self.data().to_vec(), parents))
    }

    // -- composites built from primitives --------------------------------

    pub fn flatten(&self) -> Result<Tensor> {
        self.reshape(&[self.numel()])
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.mul(&Tensor::scalar(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.add(&Tensor::scalar(c))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    /// Numerically stable `ln(1 + e^x)`, composed so the gradient is exact.
    pub fn softplus(&self) -> Result<Tensor> {
        // softplus(x) = relu(x) + ln(1 + e^(-|x|)), with -|x| = x - 2 relu(x)
        let r = self.relu()?;
        let neg_abs = self.sub(&r.scale(2.0)?)?;
        r.add(&neg_abs.exp()?.add_scalar(1.0)?.log()?)
    }

    /// `sum((self - other)^2)` as a scalar.
    pub fn squared_error(&self, other: &Tensor) -> Result<Tensor> {
        self.sub(other)?.square()?.sum()
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
