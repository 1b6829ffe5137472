//! Numeric kernels backing the tape primitives.
//!
//! `scatter_add_rows` sums each (row, column) bucket in value-sorted order so
//! per-node aggregates are independent of edge enumeration order; this is what
//! makes the model's outputs bit-exact under node relabeling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn map1(x: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::new(x.shape().to_vec(), x.values().iter().map(|&v| f(v)).collect())
}

pub(crate) fn map2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "elementwise op on shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), values)
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::Dimension(format!(
            "matmul on shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let av = a.values();
    let bv = b.values();
    for i in 0..m {
        for p in 0..k {
            let aip = av[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bv[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bpj) in orow.iter_mut().zip(brow) {
                *o += aip * bpj;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::Dimension(format!("transpose on shape {:?}", x.shape())));
    }
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x.at(i, j);
        }
    }
    Tensor::new(vec![c, r], out)
}

pub(crate) fn sum_all(x: &Tensor) -> Result<Tensor> {
    Tensor::scalar(x.values().iter().sum())
}

pub(crate) fn sum_cols(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::Dimension(format!("sum_cols on shape {:?}", x.shape())));
    }
    let out = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
    Tensor::new(vec![x.rows(), 1], out)
}

pub(crate) fn fill(scalar: &Tensor, shape: &[usize]) -> Result<Tensor> {
    Tensor::filled(shape.to_vec(), scalar.item()?)
}

pub(crate) fn gather_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::Dimension(format!("gather_rows on shape {:?}", x.shape())));
    }
    let c = x.cols();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        if i >= x.rows() {
            return Err(Error::Contract(format!(
                "gather index {} out of range for {} rows",
                i,
                x.rows()
            )));
        }
        out.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), c], out)
}

/// Sum rows of `x` into `n_rows` output rows keyed by `idx`. Each output cell
/// is accumulated in ascending value order, so the result depends only on the
/// multiset of addends, not on their order in `x`.
pub(crate) fn scatter_add_rows(x: &Tensor, idx: &[usize], n_rows: usize) -> Result<Tensor> {
    if x.shape().len() != 2 || idx.len() != x.rows() {
        return Err(Error::Dimension(format!(
            "scatter_add_rows on shape {:?} with {} indices",
            x.shape(),
            idx.len()
        )));
    }
    let c = x.cols();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
    for (e, &i) in idx.iter().enumerate() {
        if i >= n_rows {
            return Err(Error::Contract(format!(
                "scatter index {} out of range for {} rows",
                i, n_rows
            )));
        }
        buckets[i].push(e);
    }
    let mut out = vec![0.0; n_rows * c];
    let mut addends: Vec<f64> = Vec::new();
    for (r, bucket) in buckets.iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        for col in 0..c {
            addends.clear();
            addends.extend(bucket.iter().map(|&e| x.at(e, col)));
            addends.sort_by(f64::total_cmp);
            out[r * c + col] = addends.iter().sum();
        }
    }
    Tensor::new(vec![n_rows, c], out)
}

pub(crate) fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if x.shape().len() != 2 || axis > 1 || start + len > x.shape()[axis] {
        return Err(Error::Dimension(format!(
            "narrow(axis={}, start={}, len={}) on shape {:?}",
            axis,
            start,
            len,
            x.shape()
        )));
    }
    let (r, c) = (x.rows(), x.cols());
    let mut out;
    let shape;
    if axis == 0 {
        out = Vec::with_capacity(len * c);
        for i in start..start + len {
            out.extend_from_slice(x.row(i));
        }
        shape = vec![len, c];
    } else {
        out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x.row(i)[start..start + len]);
        }
        shape = vec![r, len];
    }
    Tensor::new(shape, out)
}

/// Embed `x` into a zero tensor whose `axis` has size `total`, at `start`.
pub(crate) fn pad(x: &Tensor, axis: usize, start: usize, total: usize) -> Result<Tensor> {
    if x.shape().len() != 2 || axis > 1 || start + x.shape()[axis] > total {
        return Err(Error::Dimension(format!(
            "pad(axis={}, start={}, total={}) on shape {:?}",
            axis,
            start,
            total,
            x.shape()
        )));
    }
    let (r, c) = (x.rows(), x.cols());
    if axis == 0 {
        let mut out = vec![0.0; total * c];
        for i in 0..r {
            out[(start + i) * c..(start + i + 1) * c].copy_from_slice(x.row(i));
        }
        Tensor::new(vec![total, c], out)
    } else {
        let mut out = vec![0.0; r * total];
        for i in 0..r {
            out[i * total + start..i * total + start + c].copy_from_slice(x.row(i));
        }
        Tensor::new(vec![r, total], out)
    }
}

/// Per-segment maximum of a column vector; panics are avoided by requiring
/// every segment to be non-empty at the call site.
pub(crate) fn segment_max(x: &Tensor, idx: &[usize], n_segments: usize) -> Result<Vec<f64>> {
    let mut out = vec![f64::NEG_INFINITY; n_segments];
    for (e, &seg) in idx.iter().enumerate() {
        let v = x.values()[e];
        if v > out[seg] {
            out[seg] = v;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("segment_max over an empty segment".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn matmul_basis_selection() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.values(), &[2.0]);
    }

    #[test]
    fn scatter_is_order_independent() {
        let x = Tensor::column(vec![0.1, 0.3, 0.2]).unwrap();
        let a = scatter_add_rows(&x, &[0, 0, 0], 1).unwrap();
        let y = Tensor::column(vec![0.3, 0.2, 0.1]).unwrap();
        let b = scatter_add_rows(&y, &[0, 0, 0], 1).unwrap();
        assert_eq!(a.values()[0].to_bits(), b.values()[0].to_bits());
    }

    #[test]
    fn narrow_pad_inverse() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let n = narrow(&x, 1, 1, 2).unwrap();
        assert_eq!(n.values(), &[2.0, 3.0, 5.0, 6.0]);
        let p = pad(&n, 1, 1, 3).unwrap();
        assert_eq!(p.values(), &[0.0, 2.0, 3.0, 0.0, 5.0, 6.0]);
    }
}
