//! A single transformer encoder layer wired to the sparse kernel, plus the
//! dense attention-probability producer used to seed frequency counts.
//!
//! The layer follows the post-norm backbone convention: multi-head
//! attention + residual + layer norm, feed-forward (4x width, GELU) +
//! residual + layer norm.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    sparse_attention_forward_with_stats, AttentionTensors, ScoreBufferStats,
};
use crate::error::{Error, Result};
use crate::mask::{AttentionConfig, BlockMask};
use crate::numeric::{dot, read_matrix, write_matrix, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Weights for one encoder layer. Biases and layer-norm parameters are
/// stored as 1 x d matrices so the whole struct serializes uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub d_model: usize,
    pub heads: usize,
    pub w_q: Matrix,
    pub b_q: Matrix,
    pub w_k: Matrix,
    pub b_k: Matrix,
    pub w_v: Matrix,
    pub b_v: Matrix,
    pub w_o: Matrix,
    pub b_o: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
    pub ln1_gamma: Matrix,
    pub ln1_beta: Matrix,
    pub ln2_gamma: Matrix,
    pub ln2_beta: Matrix,
}

impl EncoderLayerParams {
    /// Seeded uniform init; biases zero, layer-norm gain one.
    pub fn seeded(d_model: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {d_model} must be a positive multiple of heads {heads}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_ff = 4 * d_model;
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        };
        Ok(EncoderLayerParams {
            d_model,
            heads,
            w_q: uniform(d_model, d_model),
            b_q: Matrix::zeros(1, d_model),
            w_k: uniform(d_model, d_model),
            b_k: Matrix::zeros(1, d_model),
            w_v: uniform(d_model, d_model),
            b_v: Matrix::zeros(1, d_model),
            w_o: uniform(d_model, d_model),
            b_o: Matrix::zeros(1, d_model),
            w_ff1: uniform(d_model, d_ff),
            b_ff1: Matrix::zeros(1, d_ff),
            w_ff2: uniform(d_ff, d_model),
            b_ff2: Matrix::zeros(1, d_model),
            ln1_gamma: Matrix::from_fn(1, d_model, |_, _| 1.0),
            ln1_beta: Matrix::zeros(1, d_model),
            ln2_gamma: Matrix::from_fn(1, d_model, |_, _| 1.0),
            ln2_beta: Matrix::zeros(1, d_model),
        })
    }

    fn validate(&self) -> Result<()> {
        let d = self.d_model;
        let d_ff = self.w_ff1.cols();
        let shapes = [
            ("w_q", &self.w_q, d, d),
            ("b_q", &self.b_q, 1, d),
            ("w_k", &self.w_k, d, d),
            ("b_k", &self.b_k, 1, d),
            ("w_v", &self.w_v, d, d),
            ("b_v", &self.b_v, 1, d),
            ("w_o", &self.w_o, d, d),
            ("b_o", &self.b_o, 1, d),
            ("w_ff1", &self.w_ff1, d, d_ff),
            ("b_ff1", &self.b_ff1, 1, d_ff),
            ("w_ff2", &self.w_ff2, d_ff, d),
            ("b_ff2", &self.b_ff2, 1, d),
            ("ln1_gamma", &self.ln1_gamma, 1, d),
            ("ln1_beta", &self.ln1_beta, 1, d),
            ("ln2_gamma", &self.ln2_gamma, 1, d),
            ("ln2_beta", &self.ln2_beta, 1, d),
        ];
        for (name, m, rows, cols) in shapes {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::invalid(format!(
                    "{name} has shape {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::invalid("d_model must be a multiple of heads"));
        }
        Ok(())
    }
}

fn affine(x: &Matrix, w: &Matrix, bias: &Matrix) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias.row(0)) {
            *o += b;
        }
    }
    Ok(out)
}

fn layer_norm(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> Matrix {
    let d = x.cols();
    Matrix::from_fn(x.rows(), d, |r, c| {
        let row = x.row(r);
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        (x.get(r, c) - mean) / (var + LAYER_NORM_EPS).sqrt() * gamma.get(0, c) + beta.get(0, c)
    })
}

fn gelu(x: f64) -> f64 {
    // tanh approximation
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn head_slice(full: &Matrix, head: usize, d_head: usize) -> Matrix {
    Matrix::from_fn(full.rows(), d_head, |r, c| full.get(r, head * d_head + c))
}

/// Multi-head sparse attention sublayer (projections, per-head kernel over
/// the shared mask, concat, output projection). Returns the sublayer
/// output before the residual, plus buffer stats summed over heads.
pub fn multi_head_attention(
    x: &Matrix,
    params: &EncoderLayerParams,
    mask: &BlockMask,
) -> Result<(Matrix, ScoreBufferStats)> {
    params.validate()?;
    let n = x.rows();
    if x.cols() != params.d_model {
        return Err(Error::invalid(format!(
            "input width {} != d_model {}",
            x.cols(),
            params.d_model
        )));
    }
    let d_head = params.d_model / params.heads;
    let q_full = affine(x, &params.w_q, &params.b_q)?;
    let k_full = affine(x, &params.w_k, &params.b_k)?;
    let v_full = affine(x, &params.w_v, &params.b_v)?;

    // block size consistent with the mask geometry
    let b = n.div_ceil(mask.num_blocks());
    let cfg = AttentionConfig {
        n,
        b,
        w: 1,
        g: Vec::new(),
        k: 0,
        k_topk: None,
        k_ast: None,
        d_model: params.d_model,
        heads: params.heads,
    };

    let mut concat = Matrix::zeros(n, params.d_model);
    let mut stats = ScoreBufferStats::default();
    for h in 0..params.heads {
        let tensors = AttentionTensors::new(
            head_slice(&q_full, h, d_head),
            head_slice(&k_full, h, d_head),
            head_slice(&v_full, h, d_head),
            mask.clone(),
            cfg.clone(),
        )?;
        let (head_out, head_stats) = sparse_attention_forward_with_stats(&tensors)?;
        stats.merge(head_stats);
        for r in 0..n {
            for c in 0..d_head {
                concat.set(r, h * d_head + c, head_out.get(r, c));
            }
        }
    }
    Ok((affine(&concat, &params.w_o, &params.b_o)?, stats))
}

/// Full encoder layer: attention + residual + norm, feed-forward +
/// residual + norm.
pub fn encoder_layer_forward(
    x: &Matrix,
    params: &EncoderLayerParams,
    mask: &BlockMask,
) -> Result<Matrix> {
    encoder_layer_forward_with_stats(x, params, mask).map(|(out, _)| out)
}

pub fn encoder_layer_forward_with_stats(
    x: &Matrix,
    params: &EncoderLayerParams,
    mask: &BlockMask,
) -> Result<(Matrix, ScoreBufferStats)> {
    let (attn, stats) = multi_head_attention(x, params, mask)?;
    let mut h = x.clone();
    for (dst, a) in h.as_mut_slice().iter_mut().zip(attn.as_slice()) {
        *dst += a;
    }
    let h = layer_norm(&h, &params.ln1_gamma, &params.ln1_beta);

    let mut ff = affine(&h, &params.w_ff1, &params.b_ff1)?;
    for v in ff.as_mut_slice() {
        *v = gelu(*v);
    }
    let ff = affine(&ff, &params.w_ff2, &params.b_ff2)?;

    let mut out = h;
    for (dst, f) in out.as_mut_slice().iter_mut().zip(ff.as_slice()) {
        *dst += f;
    }
    Ok((layer_norm(&out, &params.ln2_gamma, &params.ln2_beta), stats))
}

/// Dense per-head attention probabilities (no mask), one row-stochastic
/// n x n matrix per head. This is the pluggable attention source that
/// stands in for a pre-trained backbone when accumulating frequencies.
///
/// `temperature` divides the logits; values below 1 concentrate the rows
/// the way a trained backbone's attention is concentrated. A randomly
/// initialized encoder at temperature 1 is near-uniform and nothing ever
/// crosses the counting threshold.
pub fn attention_probabilities(
    x: &Matrix,
    params: &EncoderLayerParams,
    temperature: f64,
) -> Result<Vec<Matrix>> {
    params.validate()?;
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    let n = x.rows();
    let d_head = params.d_model / params.heads;
    let scale = 1.0 / (d_head as f64).sqrt() / temperature;
    let q_full = affine(x, &params.w_q, &params.b_q)?;
    let k_full = affine(x, &params.w_k, &params.b_k)?;
    let mut heads = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let q = head_slice(&q_full, h, d_head);
        let k = head_slice(&k_full, h, d_head);
        let mut probs = Matrix::zeros(n, n);
        for r in 0..n {
            let raw: Vec<f64> = (0..n).map(|c| scale * dot(q.row(r), k.row(c))).collect();
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            let exps: Vec<f64> = raw
                .iter()
                .map(|&s| {
                    let e = (s - max).exp();
                    denom += e;
                    e
                })
                .collect();
            for (c, e) in exps.into_iter().enumerate() {
                probs.set(r, c, e / denom);
            }
        }
        heads.push(probs);
    }
    Ok(heads)
}

/// Token embedding (seeded table) plus sinusoidal position encoding.
pub fn embed_tokens(ids: &[u32], vocab_size: u32, d_model: usize, seed: u64) -> Result<Matrix> {
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} out of range for |V|={vocab_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = Matrix::from_fn(vocab_size as usize, d_model, |_, _| {
        rng.random::<f64>() * 2.0 - 1.0
    });
    Ok(Matrix::from_fn(ids.len(), d_model, |pos, c| {
        let angle = pos as f64 / 10000f64.powf((2 * (c / 2)) as f64 / d_model as f64);
        let positional = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        table.get(ids[pos] as usize, c) + 0.1 * positional
    }))
}

const PARAM_NAMES: [&str; 16] = [
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "w_ff1", "b_ff1", "w_ff2", "b_ff2",
    "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta",
];

fn param_fields(params: &EncoderLayerParams) -> [(&'static str, &Matrix); 16] {
    [
        ("w_q", &params.w_q),
        ("b_q", &params.b_q),
        ("w_k", &params.w_k),
        ("b_k", &params.b_k),
        ("w_v", &params.w_v),
        ("b_v", &params.b_v),
        ("w_o", &params.w_o),
        ("b_o", &params.b_o),
        ("w_ff1", &params.w_ff1),
        ("b_ff1", &params.b_ff1),
        ("w_ff2", &params.w_ff2),
        ("b_ff2", &params.b_ff2),
        ("ln1_gamma", &params.ln1_gamma),
        ("ln1_beta", &params.ln1_beta),
        ("ln2_gamma", &params.ln2_gamma),
        ("ln2_beta", &params.ln2_beta),
    ]
}

/// Writes the layer as a directory of matrix files plus `manifest.txt`.
pub fn write_params(params: &EncoderLayerParams, dir: &Path) -> Result<()> {
    params.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.txt"))?);
    writeln!(manifest, "d_model={} heads={}", params.d_model, params.heads)?;
    for (name, m) in param_fields(params) {
        let file = format!("{name}.bin");
        write_matrix(m, &dir.join(&file))?;
        writeln!(manifest, "{name}\t{file}")?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn read_params(dir: &Path) -> Result<EncoderLayerParams> {
    let manifest_path = dir.join("manifest.txt");
    let mut lines = BufReader::new(File::open(&manifest_path)?).lines();
    let header = lines.next().ok_or_else(|| {
        Error::format(format!("{}: empty manifest", manifest_path.display()))
    })??;
    let (d_model, heads) = parse_manifest_header(&header).ok_or_else(|| {
        Error::format(format!(
            "{}: bad manifest header {header:?}",
            manifest_path.display()
        ))
    })?;
    let mut files: HashMap<String, String> = HashMap::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(name), Some(file), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(format!(
                "{}: bad manifest line {line:?}",
                manifest_path.display()
            )));
        };
        files.insert(name.to_string(), file.to_string());
    }
    let load = |name: &str| -> Result<Matrix> {
        let file = files.get(name).ok_or_else(|| {
            Error::format(format!(
                "{}: manifest missing parameter {name}",
                manifest_path.display()
            ))
        })?;
        read_matrix(&dir.join(file))
    };
    let params = EncoderLayerParams {
        d_model,
        heads,
        w_q: load(PARAM_NAMES[0])?,
        b_q: load(PARAM_NAMES[1])?,
        w_k: load(PARAM_NAMES[2])?,
        b_k: load(PARAM_NAMES[3])?,
        w_v: load(PARAM_NAMES[4])?,
        b_v: load(PARAM_NAMES[5])?,
        w_o: load(PARAM_NAMES[6])?,
        b_o: load(PARAM_NAMES[7])?,
        w_ff1: load(PARAM_NAMES[8])?,
        b_ff1: load(PARAM_NAMES[9])?,
        w_ff2: load(PARAM_NAMES[10])?,
        b_ff2: load(PARAM_NAMES[11])?,
        ln1_gamma: load(PARAM_NAMES[12])?,
        ln1_beta: load(PARAM_NAMES[13])?,
        ln2_gamma: load(PARAM_NAMES[14])?,
        ln2_beta: load(PARAM_NAMES[15])?,
    };
    params.validate()?;
    Ok(params)
}

fn parse_manifest_header(header: &str) -> Option<(usize, usize)> {
    let mut parts = header.split_whitespace();
    let d = parts.next()?.strip_prefix("d_model=")?.parse().ok()?;
    let h = parts.next()?.strip_prefix("heads=")?.parse().ok()?;
    Some((d, h))
}
