//! Differentiable tensor operations.
//!
//! Elementwise ops broadcast numpy-style (right-aligned). Reductions and the
//! normalizing ops (softmax, log-softmax, layer norm) accumulate in f64
//! regardless of the scalar type, so e.g. softmax rows sum to 1 well within
//! 1e-6 even in f32.

use rand::Rng;

use super::shape;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::threads;

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Sums `grad` (laid out as `from`) down to shape `to`, reversing a broadcast.
fn reduce_to_shape<T: Scalar>(grad: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return grad.to_vec();
    }
    let mut out = vec![T::zero(); shape::numel(to)];
    let st = shape::broadcast_strides(to, from);
    shape::map_broadcast(from, &st, |flat, off| out[off] += grad[flat]);
    out
}

fn permute_data<T: Scalar>(shape: &[usize], data: &[T], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = shape::strides(shape);
    let out_as_in: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![T::zero(); shape::numel(&out_shape)];
    shape::map_broadcast(&out_shape, &out_as_in, |flat, off| out[flat] = data[off]);
    (out_shape, out)
}

/// `out[m,q] += a[m,p] * b[q,p]^T`
fn mm_nt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, p: usize, q: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..q {
            let brow = &b[j * p..(j + 1) * p];
            let mut acc = T::zero();
            for (x, y) in arow.iter().zip(brow) {
                acc += *x * *y;
            }
            out[i * q + j] += acc;
        }
    }
}

/// `out[m,n] += a[p,m]^T * b[p,n]`
fn mm_tn_acc<T: Scalar>(a: &[T], b: &[T], p: usize, m: usize, n: usize, out: &mut [T]) {
    for pp in 0..p {
        let arow = &a[pp * m..(pp + 1) * m];
        let brow = &b[pp * n..(pp + 1) * n];
        for (i, &s) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += s * y;
            }
        }
    }
}

/// Flat element offset of each broadcast batch index into an operand whose
/// batch dims are `own` and whose matrices hold `mat` elements.
fn batch_offsets(own: &[usize], batch_shape: &[usize], mat: usize) -> Vec<usize> {
    let st = shape::broadcast_strides(own, batch_shape);
    let mut offs = vec![0usize; shape::numel(batch_shape)];
    shape::map_broadcast(batch_shape, &st, |flat, off| offs[flat] = off * mat);
    offs
}

impl<T: Scalar> Tensor<T> {
    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = shape::broadcast_shapes(self.shape(), other.shape())
            .ok_or_else(|| shape_err("add", self.shape(), other.shape()))?;
        let sa = shape::broadcast_strides(self.shape(), &out_shape);
        let sb = shape::broadcast_strides(other.shape(), &out_shape);
        let mut data = vec![T::zero(); shape::numel(&out_shape)];
        {
            let (a, b) = (self.data(), other.data());
            shape::zip_broadcast(&out_shape, &sa, &sb, |flat, ao, bo| data[flat] = a[ao] + b[bo]);
        }
        let ash = self.shape().to_vec();
        let bsh = other.shape().to_vec();
        let osh = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                vec![
                    Some(reduce_to_shape(g, &osh, &ash)),
                    Some(reduce_to_shape(g, &osh, &bsh)),
                ]
            },
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.add(&other.scale(-T::one()))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = shape::broadcast_shapes(self.shape(), other.shape())
            .ok_or_else(|| shape_err("mul", self.shape(), other.shape()))?;
        let sa = shape::broadcast_strides(self.shape(), &out_shape);
        let sb = shape::broadcast_strides(other.shape(), &out_shape);
        let mut data = vec![T::zero(); shape::numel(&out_shape)];
        {
            let (a, b) = (self.data(), other.data());
            shape::zip_broadcast(&out_shape, &sa, &sb, |flat, ao, bo| data[flat] = a[ao] * b[bo]);
        }
        let a_t = self.clone();
        let b_t = other.clone();
        let osh = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                let sa = shape::broadcast_strides(a_t.shape(), &osh);
                let sb = shape::broadcast_strides(b_t.shape(), &osh);
                let mut da = vec![T::zero(); a_t.numel()];
                let mut db = vec![T::zero(); b_t.numel()];
                let (ad, bd) = (a_t.data(), b_t.data());
                shape::zip_broadcast(&osh, &sa, &sb, |flat, ao, bo| {
                    da[ao] += g[flat] * bd[bo];
                    db[bo] += g[flat] * ad[ao];
                });
                vec![Some(da), Some(db)]
            },
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_, g| vec![Some(g.iter().map(|&v| v * c).collect())],
        )
    }

    /// Matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || rb < 2 {
            return Err(shape_err("matmul", self.shape(), other.shape()));
        }
        let (m, k) = (self.shape()[ra - 2], self.shape()[ra - 1]);
        let (kb, n) = (other.shape()[rb - 2], other.shape()[rb - 1]);
        if k != kb {
            return Err(shape_err("matmul", self.shape(), other.shape()));
        }
        let batch_shape = shape::broadcast_shapes(&self.shape()[..ra - 2], &other.shape()[..rb - 2])
            .ok_or_else(|| shape_err("matmul", self.shape(), other.shape()))?;
        let nb = shape::numel(&batch_shape);
        let a_off = batch_offsets(&self.shape()[..ra - 2], &batch_shape, m * k);
        let b_off = batch_offsets(&other.shape()[..rb - 2], &batch_shape, k * n);

        let mut out_shape = batch_shape;
        out_shape.extend([m, n]);
        let mut data = vec![T::zero(); nb * m * n];
        {
            let (a, b) = (self.data(), other.data());
            let (a_off, b_off) = (&a_off, &b_off);
            threads::for_each_row(&mut data, n.max(1), move |row, out_row| {
                if n == 0 {
                    return;
                }
                let (batch, i) = (row / m.max(1), row % m.max(1));
                let ao = a_off[batch] + i * k;
                let bo = b_off[batch];
                for kk in 0..k {
                    let s = a[ao + kk];
                    let brow = &b[bo + kk * n..bo + kk * n + n];
                    for (o, &y) in out_row.iter_mut().zip(brow) {
                        *o += s * y;
                    }
                }
            });
        }

        let a_t = self.clone();
        let b_t = other.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |_, g| {
                let mut da = vec![T::zero(); a_t.numel()];
                let mut db = vec![T::zero(); b_t.numel()];
                let (ad, bd) = (a_t.data(), b_t.data());
                for batch in 0..nb {
                    let go = batch * m * n;
                    let (ao, bo) = (a_off[batch], b_off[batch]);
                    mm_nt_acc(
                        &g[go..go + m * n],
                        &bd[bo..bo + k * n],
                        m,
                        n,
                        k,
                        &mut da[ao..ao + m * k],
                    );
                    mm_tn_acc(
                        &ad[ao..ao + m * k],
                        &g[go..go + m * n],
                        m,
                        k,
                        n,
                        &mut db[bo..bo + k * n],
                    );
                }
                vec![Some(da), Some(db)]
            },
        ))
    }

    /// Softmax over the last axis, with max subtraction for stability.
    pub fn softmax(&self) -> Tensor<T> {
        let last = *self.shape().last().expect("softmax needs rank >= 1");
        assert!(last > 0, "softmax over an empty axis");
        let rows = self.numel() / last;
        let mut data = vec![T::zero(); self.numel()];
        for r in 0..rows {
            let row = &self.data()[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(row[0], T::max).as_f64();
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (o, e) in data[r * last..(r + 1) * last].iter_mut().zip(&exps) {
                *o = T::from_f64(e / sum);
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |out, g| {
                let mut dx = vec![T::zero(); out.len()];
                for r in 0..rows {
                    let y = &out[r * last..(r + 1) * last];
                    let gr = &g[r * last..(r + 1) * last];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    for ((o, &yv), &gv) in dx[r * last..(r + 1) * last].iter_mut().zip(y).zip(gr) {
                        *o = T::from_f64(yv.as_f64() * (gv.as_f64() - dot));
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Softmax along an arbitrary axis, via permutation to the last axis.
    pub fn softmax_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        if axis == rank - 1 {
            return Ok(self.softmax());
        }
        let mut perm: Vec<usize> = (0..rank).filter(|&d| d != axis).collect();
        perm.push(axis);
        let mut inv = vec![0usize; rank];
        for (d, &p) in perm.iter().enumerate() {
            inv[p] = d;
        }
        self.permute(&perm)?.softmax().permute(&inv)
    }

    /// Log of the softmax over the last axis, computed directly.
    pub fn log_softmax(&self) -> Tensor<T> {
        let last = *self.shape().last().expect("log_softmax needs rank >= 1");
        assert!(last > 0, "log_softmax over an empty axis");
        let rows = self.numel() / last;
        let mut data = vec![T::zero(); self.numel()];
        for r in 0..rows {
            let row = &self.data()[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(row[0], T::max).as_f64();
            let lse = row
                .iter()
                .map(|v| (v.as_f64() - m).exp())
                .sum::<f64>()
                .ln()
                + m;
            for (o, v) in data[r * last..(r + 1) * last].iter_mut().zip(row) {
                *o = T::from_f64(v.as_f64() - lse);
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |out, g| {
                let mut dx = vec![T::zero(); out.len()];
                for r in 0..rows {
                    let y = &out[r * last..(r + 1) * last];
                    let gr = &g[r * last..(r + 1) * last];
                    let gsum: f64 = gr.iter().map(|v| v.as_f64()).sum();
                    for ((o, &yv), &gv) in dx[r * last..(r + 1) * last].iter_mut().zip(y).zip(gr) {
                        *o = T::from_f64(gv.as_f64() - yv.as_f64().exp() * gsum);
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// the learned elementwise affine `gamma * x + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let last = *self
            .shape()
            .last()
            .ok_or_else(|| shape_err("layer_norm", self.shape(), gamma.shape()))?;
        if gamma.shape() != [last] {
            return Err(shape_err("layer_norm", self.shape(), gamma.shape()));
        }
        if beta.shape() != [last] {
            return Err(shape_err("layer_norm", self.shape(), beta.shape()));
        }
        let rows = self.numel() / last;
        let mut data = vec![T::zero(); self.numel()];
        for r in 0..rows {
            let row = &self.data()[r * last..(r + 1) * last];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / last as f64;
            let var = row
                .iter()
                .map(|v| (v.as_f64() - mean).powi(2))
                .sum::<f64>()
                / last as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for ((o, v), (gm, bt)) in data[r * last..(r + 1) * last]
                .iter_mut()
                .zip(row)
                .zip(gamma.data().iter().zip(beta.data()))
            {
                let xhat = (v.as_f64() - mean) * inv;
                *o = T::from_f64(gm.as_f64() * xhat + bt.as_f64());
            }
        }
        let x_t = self.clone();
        let gamma_t = gamma.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |_, g| {
                let mut dx = vec![T::zero(); x_t.numel()];
                let mut dgamma = vec![0.0f64; last];
                let mut dbeta = vec![0.0f64; last];
                let xd = x_t.data();
                let gm: Vec<f64> = gamma_t.data().iter().map(|v| v.as_f64()).collect();
                for r in 0..rows {
                    let row = &xd[r * last..(r + 1) * last];
                    let gr = &g[r * last..(r + 1) * last];
                    let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / last as f64;
                    let var = row
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>()
                        / last as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> =
                        row.iter().map(|v| (v.as_f64() - mean) * inv).collect();
                    let h: Vec<f64> = gr
                        .iter()
                        .zip(&gm)
                        .map(|(gv, gmv)| gv.as_f64() * gmv)
                        .collect();
                    let mh = h.iter().sum::<f64>() / last as f64;
                    let mhx = h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / last as f64;
                    for j in 0..last {
                        dx[r * last + j] = T::from_f64((h[j] - mh - xhat[j] * mhx) * inv);
                        dgamma[j] += gr[j].as_f64() * xhat[j];
                        dbeta[j] += gr[j].as_f64();
                    }
                }
                vec![
                    Some(dx),
                    Some(dgamma.into_iter().map(T::from_f64).collect()),
                    Some(dbeta.into_iter().map(T::from_f64).collect()),
                ]
            },
        ))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |out, g| {
                vec![Some(
                    out.iter()
                        .zip(g)
                        .map(|(&y, &gv)| if y > T::zero() { gv } else { T::zero() })
                        .collect(),
                )]
            },
        )
    }

    /// Same data, new shape with an equal element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        if shape::numel(new_shape) != self.numel() {
            return Err(Error::Contract(format!(
                "reshape {:?} -> {new_shape:?} changes element count",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            move |_, g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `d` takes input axis `perm[d]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm.iter().all(|&p| {
                if p >= rank || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(Error::Contract(format!(
                "permute {perm:?} is not a permutation of axes for shape {:?}",
                self.shape()
            )));
        }
        let (out_shape, data) = permute_data(self.shape(), self.data(), perm);
        let mut inv = vec![0usize; rank];
        for (d, &p) in perm.iter().enumerate() {
            inv[p] = d;
        }
        let osh = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |_, g| vec![Some(permute_data(&osh, g, &inv).1)],
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::Contract(format!(
                "transpose_last needs rank >= 2, got {:?}",
                self.shape()
            )));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total: f64 = self.data().iter().map(|v| v.as_f64()).sum();
        let n = self.numel();
        let sh = self.shape().to_vec();
        Tensor::from_op(vec![], vec![T::from_f64(total)], vec![self.clone()], {
            move |_, g| {
                let _ = &sh;
                vec![Some(vec![g[0]; n])]
            }
        })
    }

    /// Sums out one axis.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(Error::Contract(format!(
                "sum_axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let mid = self.shape()[axis];
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape.remove(axis);
        let mut acc = vec![0.0f64; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                for i in 0..inner {
                    acc[o * inner + i] += self.data()[base + i].as_f64();
                }
            }
        }
        let data = acc.into_iter().map(T::from_f64).collect();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |_, g| {
                let mut dx = vec![T::zero(); outer * mid * inner];
                for o in 0..outer {
                    for m in 0..mid {
                        let base = (o * mid + m) * inner;
                        for i in 0..inner {
                            dx[base + i] = g[o * inner + i];
                        }
                    }
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Selects one element per row along the last axis: `out[r] = x[r, ids[r]]`.
    pub fn gather_last(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let last = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Contract("gather_last needs rank >= 1".into()))?;
        let rows = self.numel() / last.max(1);
        if ids.len() != rows {
            return Err(Error::Contract(format!(
                "gather_last got {} ids for {rows} rows",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= last) {
            return Err(Error::TokenOutOfRange {
                id: bad as u32,
                vocab: last,
            });
        }
        let data: Vec<T> = ids
            .iter()
            .enumerate()
            .map(|(r, &id)| self.data()[r * last + id])
            .collect();
        let out_shape = self.shape()[..self.rank() - 1].to_vec();
        let ids: Vec<usize> = ids.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |_, g| {
                let mut dx = vec![T::zero(); n];
                for (r, &id) in ids.iter().enumerate() {
                    dx[r * last + id] = g[r];
                }
                vec![Some(dx)]
            },
        ))
    }
}

/// Looks up embedding rows: `table` is `[vocab, dim]`, output is
/// `prefix_shape ++ [dim]`. Gradient scatter-adds into the table.
pub fn embedding<T: Scalar>(
    table: &Tensor<T>,
    ids: &[u32],
    prefix_shape: &[usize],
) -> Result<Tensor<T>> {
    if table.rank() != 2 {
        return Err(Error::Contract(format!(
            "embedding table must be rank 2, got {:?}",
            table.shape()
        )));
    }
    let (vocab, dim) = (table.shape()[0], table.shape()[1]);
    if ids.len() != shape::numel(prefix_shape) {
        return Err(Error::Contract(format!(
            "embedding got {} ids for prefix shape {prefix_shape:?}",
            ids.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::TokenOutOfRange { id: bad, vocab });
    }
    let mut data = vec![T::zero(); ids.len() * dim];
    for (i, &id) in ids.iter().enumerate() {
        data[i * dim..(i + 1) * dim]
            .copy_from_slice(&table.data()[id as usize * dim..(id as usize + 1) * dim]);
    }
    let mut out_shape = prefix_shape.to_vec();
    out_shape.push(dim);
    let ids: Vec<u32> = ids.to_vec();
    Ok(Tensor::from_op(
        out_shape,
        data,
        vec![table.clone()],
        move |_, g| {
            let mut dt = vec![T::zero(); vocab * dim];
            for (i, &id) in ids.iter().enumerate() {
                let row = &mut dt[id as usize * dim..(id as usize + 1) * dim];
                for (o, &gv) in row.iter_mut().zip(&g[i * dim..(i + 1) * dim]) {
                    *o += gv;
                }
            }
            vec![Some(dt)]
        },
    ))
}

/// Inverted dropout: keeps each element with probability `1 - rate` and
/// scales survivors by `1 / (1 - rate)`, so the expectation is unchanged.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, rate: f64, rng: &mut R) -> Tensor<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if rate == 0.0 {
        return x.clone();
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    x.mul(&Tensor::new(x.shape(), mask))
        .expect("dropout mask shares the input shape")
}
