use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    Train,
    McInference,
    Off,
}

/// `c = alpha * a·b + beta * c` for row-major `a[m,k]`, `b[k,n]`, `c[m,n]`.
/// `trans_a` / `trans_b` read `a` as `[k,m]` / `b` as `[n,k]` transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the (m, k, n) geometry and strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if a.shape().len() != 2 || b.shape().len() != 2 || k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, out.data_mut());
    Ok(out)
}

/// `y = x·W + b` for `x[batch, in]`, `W[in, out]`, `b[out]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (batch, fan_in) = x.dims2();
    let (w_in, fan_out) = w.dims2();
    if x.shape().len() != 2 || w.shape().len() != 2 || fan_in != w_in {
        return Err(Error::Shape {
            op: "dense",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let mut y = Tensor::zeros(&[batch, fan_out]);
    if let Some(b) = b {
        if b.len() != fan_out {
            return Err(Error::Shape {
                op: "dense bias",
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        for row in y.data_mut().chunks_exact_mut(fan_out) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(batch, fan_in, fan_out, x.data(), false, w.data(), false, 1.0, y.data_mut());
    Ok(y)
}

/// Gradients of [`dense_forward`]: `(dx, dW, db)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, fan_in) = x.dims2();
    let (_, fan_out) = w.dims2();
    if dy.shape() != [batch, fan_out] {
        return Err(Error::Shape {
            op: "dense backward",
            left: vec![batch, fan_out],
            right: dy.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(&[batch, fan_in]);
    let mut dw = Tensor::zeros(&[fan_in, fan_out]);
    let mut db = Tensor::zeros(&[fan_out]);
    dense_backward_into(x, w, dy, Some(&mut dx), &mut dw, Some(&mut db));
    Ok((dx, dw, db))
}

/// Accumulates dense gradients into existing buffers.
pub(crate) fn dense_backward_into(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    dx: Option<&mut Tensor>,
    dw: &mut Tensor,
    db: Option<&mut Tensor>,
) {
    let (batch, fan_in) = x.dims2();
    let (_, fan_out) = w.dims2();
    if let Some(dx) = dx {
        gemm(batch, fan_out, fan_in, dy.data(), false, w.data(), true, 1.0, dx.data_mut());
    }
    gemm(fan_in, batch, fan_out, x.data(), true, dy.data(), false, 1.0, dw.data_mut());
    if let Some(db) = db {
        let acc = db.data_mut();
        for row in dy.data().chunks_exact(fan_out) {
            for (a, g) in acc.iter_mut().zip(row) {
                *a += g;
            }
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gathers rows of `table[n_ids, dim]`.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (n_ids, dim) = table.dims2();
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        if id >= n_ids {
            return Err(Error::Lookup { id, len: n_ids });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), dim], out)
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut Stream) -> Vec<f64> {
    let scale = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.uniform() < p { 0.0 } else { scale })
        .collect()
}

pub(crate) fn check_dropout_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(vec![format!(
            "dropout probability must lie in [0, 1), got {p}"
        )]))
    }
}

pub fn dropout(x: &Tensor, p: f64, mode: DropoutMode, rng: &mut Stream) -> Result<Tensor> {
    check_dropout_p(p)?;
    if mode == DropoutMode::Off || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), p, rng);
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok(y)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (_, k) = logits.dims2();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean negative log-likelihood of `labels` and the softmax probabilities.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, k) = logits.dims2();
    if labels.len() != batch {
        return Err(Error::Shape {
            op: "softmax_xent",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label, classes: k });
    }
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - (row[label] - max);
    }
    Ok((loss / batch as f64, softmax(logits)))
}
