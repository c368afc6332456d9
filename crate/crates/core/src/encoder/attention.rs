//! Scaled dot-product attention restricted by a binary mask.

use super::linalg::{dot, Matrix};
use crate::augment::AttentionMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `n × n`; exactly zero wherever the mask is unset.
    pub weights: Matrix,
    /// `n × d_v`
    pub output: Matrix,
}

/// Softmax of `q·kᵀ/√d_k` over the keys allowed for each query, applied to `v`.
///
/// Every query row of `mask` must have at least one set bit; otherwise the
/// softmax is undefined and [`Error::DegenerateMask`] is returned.
pub fn masked_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &AttentionMask,
) -> Result<AttentionOutput> {
    if let Some(row) = (0..mask.size()).find(|&i| mask.row_sum(i) == 0) {
        return Err(Error::DegenerateMask { row });
    }
    Ok(attend(q, k, v, mask))
}

/// Like [`masked_attention`] but a query with no visible key gets an all-zero
/// weight row and output. The encoder uses this so that strict masks, whose
/// context rows are empty, still run.
pub(crate) fn attend(q: &Matrix, k: &Matrix, v: &Matrix, mask: &AttentionMask) -> AttentionOutput {
    let n = q.rows;
    assert_eq!(k.rows, n);
    assert_eq!(v.rows, n);
    assert_eq!(mask.size(), n, "mask size");
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut weights = Matrix::zeros(n, n);
    for i in 0..n {
        let allowed = mask.row(i);
        let row = weights.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if allowed[j] {
                let s = dot(q.row(i), k.row(j)) * scale;
                row[j] = s;
                max = max.max(s);
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for j in 0..n {
            if allowed[j] {
                row[j] = (row[j] - max).exp();
                sum += row[j];
            }
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    let output = weights.matmul(v);
    AttentionOutput { weights, output }
}

/// Gradients of [`attend`] given the upstream gradient of its output.
pub(crate) struct AttentionGrads {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
}

pub(crate) fn attend_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    weights: &Matrix,
    d_output: &Matrix,
) -> AttentionGrads {
    let n = q.rows;
    let scale = 1.0 / (q.cols as f64).sqrt();
    let dv = weights.t_matmul(d_output);
    // d_weights[i][j] = d_output_i · v_j
    let d_weights = d_output.matmul_t(v);
    let mut d_scores = Matrix::zeros(n, n);
    for i in 0..n {
        let a = weights.row(i);
        let da = d_weights.row(i);
        let inner = dot(a, da);
        for (j, ds) in d_scores.row_mut(i).iter_mut().enumerate() {
            *ds = a[j] * (da[j] - inner) * scale;
        }
    }
    AttentionGrads {
        dq: d_scores.matmul(k),
        dk: d_scores.t_matmul(q),
        dv,
    }
}
