//! Block-sparse attention: forward kernel, dense masked oracle, and the
//! exact backward pass.
//!
//! The sparse kernel only ever materializes score buffers for selected
//! blocks (|selected| x b^2 cells per query-block row), never the dense
//! n x n matrix. The dense oracle computes full attention with additive
//! -inf masking outside the expanded block mask and is the correctness
//! reference for everything else.

mod encoder;

pub use encoder::{
    attention_probabilities, embed_tokens, encoder_layer_forward,
    encoder_layer_forward_with_stats, multi_head_attention, read_params, write_params,
    EncoderLayerParams,
};

use crate::error::{Error, Result};
use crate::mask::{AttentionConfig, BlockMask};
use crate::numeric::{dot, masked_row_softmax, Matrix};

/// Per-head attention inputs: Q, K, V of shape n x d_head plus the shared
/// block mask.
#[derive(Debug, Clone)]
pub struct AttentionTensors {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub mask: BlockMask,
    pub cfg: AttentionConfig,
}

impl AttentionTensors {
    pub fn new(q: Matrix, k: Matrix, v: Matrix, mask: BlockMask, cfg: AttentionConfig) -> Result<Self> {
        let t = AttentionTensors { q, k, v, mask, cfg };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let n = self.cfg.n;
        let d = self.q.cols();
        if self.q.rows() != n || self.k.rows() != n || self.v.rows() != n {
            return Err(Error::invalid(format!(
                "Q/K/V must have n={n} rows, got {}/{}/{}",
                self.q.rows(),
                self.k.rows(),
                self.v.rows()
            )));
        }
        if self.k.cols() != d || self.v.cols() != d {
            return Err(Error::invalid("Q/K/V column counts differ"));
        }
        if self.mask.num_blocks() != self.cfg.num_blocks() {
            return Err(Error::invalid(format!(
                "mask has {} blocks, config implies {}",
                self.mask.num_blocks(),
                self.cfg.num_blocks()
            )));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        1.0 / (self.q.cols() as f64).sqrt()
    }
}

/// Score-buffer accounting for the sparse kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreBufferStats {
    /// Total score cells allocated over the call: |selected| * b^2.
    pub score_cells: usize,
    /// Largest single buffer: max over query blocks of |row| * b^2.
    pub peak_cells: usize,
}

impl ScoreBufferStats {
    pub fn merge(&mut self, other: ScoreBufferStats) {
        self.score_cells += other.score_cells;
        self.peak_cells = self.peak_cells.max(other.peak_cells);
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak_cells * std::mem::size_of::<f64>()
    }
}

/// Sparse scaled-dot-product attention over the block mask.
pub fn sparse_attention_forward(t: &AttentionTensors) -> Result<Matrix> {
    sparse_attention_forward_with_stats(t).map(|(out, _)| out)
}

/// Sparse forward that also reports how many score cells were touched.
pub fn sparse_attention_forward_with_stats(
    t: &AttentionTensors,
) -> Result<(Matrix, ScoreBufferStats)> {
    t.validate()?;
    let n = t.cfg.n;
    let b = t.cfg.b;
    let d = t.q.cols();
    let scale = t.scale();
    let mut out = Matrix::zeros(n, d);
    let mut stats = ScoreBufferStats::default();

    let mut selected: Vec<usize> = Vec::new();
    for i in 0..t.mask.num_blocks() {
        selected.clear();
        selected.extend(t.mask.row(i));
        if selected.is_empty() {
            return Err(Error::ContractViolation(format!(
                "mask row {i} is empty"
            )));
        }

        // score tile buffer for this query block only
        let cells = selected.len() * b * b;
        stats.score_cells += cells;
        stats.peak_cells = stats.peak_cells.max(cells);
        let mut scores = vec![0.0f64; cells];
        for (si, &j) in selected.iter().enumerate() {
            for s in 0..b {
                let q_pos = i * b + s;
                if q_pos >= n {
                    break;
                }
                let q_row = t.q.row(q_pos);
                let tile = &mut scores[si * b * b + s * b..si * b * b + s * b + b];
                for (t_local, slot) in tile.iter_mut().enumerate() {
                    let k_pos = j * b + t_local;
                    if k_pos < n {
                        *slot = dot(q_row, t.k.row(k_pos));
                    }
                }
            }
        }

        for s in 0..b {
            let q_pos = i * b + s;
            if q_pos >= n {
                break;
            }
            // softmax over the union of in-range keys of selected blocks,
            // accumulated in ascending key order
            let mut max = f64::NEG_INFINITY;
            for (si, &j) in selected.iter().enumerate() {
                let limit = b.min(n.saturating_sub(j * b));
                for t_local in 0..limit {
                    max = max.max(scale * scores[si * b * b + s * b + t_local]);
                }
            }
            let mut denom = 0.0;
            for (si, &j) in selected.iter().enumerate() {
                let limit = b.min(n.saturating_sub(j * b));
                for t_local in 0..limit {
                    denom += (scale * scores[si * b * b + s * b + t_local] - max).exp();
                }
            }
            let out_row = out.row_mut(q_pos);
            for (si, &j) in selected.iter().enumerate() {
                let limit = b.min(n.saturating_sub(j * b));
                for t_local in 0..limit {
                    let p = (scale * scores[si * b * b + s * b + t_local] - max).exp() / denom;
                    let v_row = t.v.row(j * b + t_local);
                    for (o, vv) in out_row.iter_mut().zip(v_row) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
    Ok((out, stats))
}

/// Dense reference: full n x n scores, -inf outside the expanded block
/// mask, standard softmax, weighted sum of V.
pub fn dense_oracle(t: &AttentionTensors) -> Result<Matrix> {
    t.validate()?;
    let n = t.cfg.n;
    let b = t.cfg.b;
    let d = t.q.cols();
    let scale = t.scale();
    let mut out = Matrix::zeros(n, d);
    let mut scores = vec![0.0f64; n];
    let mut allowed = vec![false; n];
    for q_pos in 0..n {
        let q_row = t.q.row(q_pos);
        for k_pos in 0..n {
            scores[k_pos] = dot(q_row, t.k.row(k_pos));
            allowed[k_pos] = t.mask.contains(q_pos / b, k_pos / b);
        }
        let probs = masked_row_softmax(&scores, &allowed, scale)?;
        let out_row = out.row_mut(q_pos);
        for (k_pos, &p) in probs.iter().enumerate() {
            if p != 0.0 {
                for (o, vv) in out_row.iter_mut().zip(t.v.row(k_pos)) {
                    *o += p * vv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of the sparse forward with respect to Q, K, and V.
#[derive(Debug, Clone)]
pub struct AttentionGradients {
    pub d_q: Matrix,
    pub d_k: Matrix,
    pub d_v: Matrix,
}

/// Exact analytic backward of [`sparse_attention_forward`]. Score-space
/// gradients outside selected blocks are identically zero, so K/V rows
/// that no query attends to receive zero gradient.
pub fn attention_backward(t: &AttentionTensors, upstream: &Matrix) -> Result<AttentionGradients> {
    t.validate()?;
    let n = t.cfg.n;
    let b = t.cfg.b;
    let d = t.q.cols();
    if upstream.rows() != n || upstream.cols() != d {
        return Err(Error::invalid(format!(
            "upstream gradient must be {n}x{d}, got {}x{}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    let scale = t.scale();
    let mut d_q = Matrix::zeros(n, d);
    let mut d_k = Matrix::zeros(n, d);
    let mut d_v = Matrix::zeros(n, d);

    let mut keys: Vec<usize> = Vec::new();
    for i in 0..t.mask.num_blocks() {
        keys.clear();
        for j in t.mask.row(i) {
            let limit = b.min(n.saturating_sub(j * b));
            keys.extend((0..limit).map(|t_local| j * b + t_local));
        }
        for s in 0..b {
            let q_pos = i * b + s;
            if q_pos >= n {
                break;
            }
            let q_row = t.q.row(q_pos);
            // recompute the softmax over the attended set
            let mut probs: Vec<f64> = keys
                .iter()
                .map(|&k_pos| scale * dot(q_row, t.k.row(k_pos)))
                .collect();
            let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - max).exp();
                denom += *p;
            }
            for p in probs.iter_mut() {
                *p /= denom;
            }

            let up_row = upstream.row(q_pos);
            // dp_t = dO . V_t ; dot = sum_t p_t dp_t
            let mut inner = 0.0;
            let mut dps: Vec<f64> = Vec::with_capacity(keys.len());
            for (&k_pos, &p) in keys.iter().zip(&probs) {
                let dp = dot(up_row, t.v.row(k_pos));
                inner += p * dp;
                dps.push(dp);
            }
            for ((&k_pos, &p), &dp) in keys.iter().zip(&probs).zip(&dps) {
                let dscore = p * (dp - inner) * scale;
                // dV_t += p * dO ; dQ += dscore * K_t ; dK_t += dscore * Q
                for (dst, &u) in d_v.row_mut(k_pos).iter_mut().zip(up_row) {
                    *dst += p * u;
                }
                for (dst, &kk) in d_q.row_mut(q_pos).iter_mut().zip(t.k.row(k_pos)) {
                    *dst += dscore * kk;
                }
                for (dst, &qq) in d_k.row_mut(k_pos).iter_mut().zip(q_row) {
                    *dst += dscore * qq;
                }
            }
        }
    }
    Ok(AttentionGradients { d_q, d_k, d_v })
}
