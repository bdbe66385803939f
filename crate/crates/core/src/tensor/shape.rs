//! Shape arithmetic shared by the tensor kernels.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Broadcast two shapes right-aligned; `None` when incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// Strides into `shape` viewed as broadcast up to `out_rank` dims, with 0 on
/// broadcast (size-1 or missing) axes.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let mut out = vec![0; out_shape.len()];
    let offset = out_shape.len() - shape.len();
    for i in 0..shape.len() {
        if shape[i] != 1 {
            out[offset + i] = own[i];
        }
    }
    out
}

/// Walks every index of `shape`, yielding flat offsets into two broadcast
/// sources. An odometer over the output index.
pub fn zip_broadcast(shape: &[usize], a_strides: &[usize], b_strides: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut a_off = 0usize;
    let mut b_off = 0usize;
    for flat in 0..total {
        f(flat, a_off, b_off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            a_off += a_strides[d];
            b_off += b_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            a_off -= a_strides[d] * shape[d];
            b_off -= b_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Walks every index of `shape`, yielding the flat offset into one broadcast
/// source (used to reduce an output-shaped gradient onto a parent shape).
pub fn map_broadcast(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    zip_broadcast(shape, src_strides, &vec![0; shape.len()], |flat, off, _| f(flat, off));
}
