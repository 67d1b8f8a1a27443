//! Seeded verification sweeps: sparse-vs-dense oracle equivalence and
//! analytic-vs-numeric gradient checks over randomized configurations.
//!
//! All randomness flows through ChaCha8 seeded from a single u64, so every
//! sweep is reproducible from the command line.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::TokenAdjacency;
use crate::attention::{
    attention_backward, dense_oracle, sparse_attention_forward, AttentionTensors,
};
use crate::error::Result;
use crate::frequency::{accumulate_frequency, lookup_pair_scores, FrequencyMatrix};
use crate::mask::{build_mask, AttentionConfig};
use crate::numeric::{finite_diff_gradient, Matrix};

/// Default randomized sweep axes for oracle equivalence.
pub const SWEEP_N: [usize; 4] = [17, 64, 128, 256];
pub const SWEEP_B: [usize; 3] = [4, 8, 16];
pub const SWEEP_W: [usize; 2] = [1, 3];
pub const SWEEP_G: [usize; 3] = [0, 1, 2];
pub const SWEEP_K: [usize; 3] = [0, 2, 3];

#[derive(Debug, Clone, Copy)]
pub struct EquivalenceReport {
    pub cases: usize,
    pub max_abs_dev: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradientReport {
    pub cases: usize,
    pub max_rel_err: f64,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Random mask fixture: a frequency matrix fed by a few concentrated
/// attention rows plus a random sparse adjacency, run through the real
/// mask builder.
pub fn random_mask_inputs(
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Result<(crate::frequency::PairScoreMatrix, TokenAdjacency)> {
    let vocab = 32u32;
    let mut fm = FrequencyMatrix::new(vocab);
    let ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
    let m = n.min(8);
    let mut attn = Matrix::zeros(m, m);
    for r in 0..m {
        let hot = rng.random_range(0..m);
        for c in 0..m {
            let w = if c == hot {
                0.9
            } else if m > 1 {
                0.1 / (m - 1) as f64
            } else {
                0.0
            };
            attn.set(r, c, if m == 1 { 1.0 } else { w });
        }
    }
    accumulate_frequency(&mut fm, &ids[..m], &attn, 0.1)?;
    let pairs: Vec<(usize, usize)> = (0..2 * n)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .collect();
    let adjacency = TokenAdjacency::from_pairs(n, 2, pairs)?;
    let pair_scores = lookup_pair_scores(&fm, &ids)?;
    Ok((pair_scores, adjacency))
}

/// Builds a seeded random attention instance at the given geometry.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    b: usize,
    w: usize,
    g_count: usize,
    k: usize,
    d_head: usize,
) -> Result<AttentionTensors> {
    let nb = n.div_ceil(b);
    let cfg = AttentionConfig {
        n,
        b,
        w,
        g: (0..g_count.min(nb)).collect(),
        k,
        k_topk: None,
        k_ast: None,
        d_model: d_head,
        heads: 1,
    };
    let (pair_scores, adjacency) = random_mask_inputs(rng, n)?;
    let mask = build_mask(&cfg, &pair_scores, &adjacency)?;
    AttentionTensors::new(
        random_matrix(rng, n, d_head),
        random_matrix(rng, n, d_head),
        random_matrix(rng, n, d_head),
        mask,
        cfg,
    )
}

/// Runs `cases` sparse-vs-dense comparisons cycling over the sweep axes
/// (or pinned `n`/`b` when given) and reports the worst deviation.
pub fn equivalence_sweep(
    seed: u64,
    cases: usize,
    pin_n: Option<usize>,
    pin_b: Option<usize>,
) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs_dev: f64 = 0.0;
    for case in 0..cases {
        let n = pin_n.unwrap_or(SWEEP_N[case % SWEEP_N.len()]);
        let b = pin_b.unwrap_or(SWEEP_B[case / SWEEP_N.len() % SWEEP_B.len()]);
        let w = SWEEP_W[case % SWEEP_W.len()];
        let g = SWEEP_G[case % SWEEP_G.len()];
        let k = SWEEP_K[case % SWEEP_K.len()];
        let d_head = [4, 8, 16][case % 3];
        let t = random_instance(&mut rng, n, b, w, g, k, d_head)?;
        let sparse = sparse_attention_forward(&t)?;
        let dense = dense_oracle(&t)?;
        max_abs_dev = max_abs_dev.max(sparse.max_abs_diff(&dense));
    }
    Ok(EquivalenceReport {
        cases,
        max_abs_dev,
    })
}

/// Elementwise relative error with a floor that keeps near-zero entries
/// from dominating.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Runs `cases` gradient checks (n <= 32) against central finite
/// differences with the given eps and reports the worst relative error.
pub fn gradient_sweep(seed: u64, cases: usize, eps: f64) -> Result<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x6772616421));
    let mut max_rel_err: f64 = 0.0;
    for case in 0..cases {
        let n = 5 + rng.random_range(0..28).min(27); // 5..=32
        let b = [4, 8][case % 2];
        let w = SWEEP_W[case % SWEEP_W.len()];
        let g = SWEEP_G[case % SWEEP_G.len()];
        let k = SWEEP_K[case % SWEEP_K.len()];
        let d_head = [2, 3, 4][case % 3];
        let t = random_instance(&mut rng, n, b, w, g, k, d_head)?;
        let readout = random_matrix(&mut rng, n, d_head);

        let analytic = attention_backward(&t, &readout)?;
        let loss = |q: &Matrix, k_m: &Matrix, v: &Matrix| -> Result<f64> {
            let probe = AttentionTensors::new(
                q.clone(),
                k_m.clone(),
                v.clone(),
                t.mask.clone(),
                t.cfg.clone(),
            )?;
            let out = sparse_attention_forward(&probe)?;
            Ok(out
                .as_slice()
                .iter()
                .zip(readout.as_slice())
                .map(|(a, b)| a * b)
                .sum())
        };
        let fd_q = finite_diff_gradient(|m| loss(m, &t.k, &t.v), &t.q, eps)?;
        let fd_k = finite_diff_gradient(|m| loss(&t.q, m, &t.v), &t.k, eps)?;
        let fd_v = finite_diff_gradient(|m| loss(&t.q, &t.k, m), &t.v, eps)?;
        max_rel_err = max_rel_err
            .max(max_relative_error(&analytic.d_q, &fd_q))
            .max(max_relative_error(&analytic.d_k, &fd_k))
            .max(max_relative_error(&analytic.d_v, &fd_v));
    }
    Ok(GradientReport {
        cases,
        max_rel_err,
    })
}
