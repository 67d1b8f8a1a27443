//! Analytical cost model and measured scaling/memory benchmark.
//!
//! The analytic side bounds the number of selected blocks per mask; the
//! measured side builds real masks from code fixtures, runs the sparse
//! kernel, and records block counts, score-buffer sizes, and wall time.
//! Benchmarks run single-threaded for stable numbers.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::{build_token_adjacency, parse_to_tree};
use crate::attention::{sparse_attention_forward_with_stats, AttentionTensors};
use crate::error::Result;
use crate::frequency::{lookup_pair_scores, FrequencyMatrix};
use crate::mask::{build_mask, AttentionConfig};
use crate::numeric::Matrix;
use crate::tokenizer::{build_vocabulary, split_surface, tokenize, Vocabulary};

/// One benchmark record. `ratio` compares sparse score cells against the
/// dense n^2 baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub fixture: String,
    pub n: usize,
    pub b: usize,
    pub w: usize,
    pub g: usize,
    pub k: usize,
    pub selected_blocks: usize,
    pub dense_blocks: usize,
    pub score_cells_sparse: usize,
    pub score_cells_dense: usize,
    pub ratio: f64,
    pub wall_time_secs: f64,
    pub peak_score_bytes: usize,
}

/// Upper bound on selected blocks: ceil(n/b) * min(ceil(n/b), w + |g| + 2k)
/// (with the two top-k budgets counted separately under ablation overrides).
pub fn analytic_block_bound(cfg: &AttentionConfig) -> usize {
    let nb = cfg.num_blocks();
    let per_row = cfg.w + cfg.g.len() + cfg.topk_budget() + cfg.ast_budget();
    nb * per_row.min(nb)
}

/// A named code fixture for the measured benchmark.
#[derive(Debug, Clone)]
pub struct BenchFixture {
    pub name: String,
    pub source: String,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub language: String,
    pub distance_cap: usize,
    pub seed: u64,
    /// Timing runs per configuration; the median is reported.
    pub timing_runs: usize,
    /// Vocabulary for frequency lookups. Built from the fixture when absent.
    pub vocab: Option<Vocabulary>,
    /// Corpus frequency counts. Zero counts when absent.
    pub frequency: Option<FrequencyMatrix>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            language: "java".into(),
            distance_cap: 2,
            seed: 7,
            timing_runs: 5,
            vocab: None,
            frequency: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct BenchOutcome {
    pub reports: Vec<CostReport>,
    /// Per-fixture failures; the run continues past them.
    pub errors: Vec<String>,
}

/// Repeats `source` until it holds at least `want_tokens` surface tokens.
pub fn tile_source_to_tokens(source: &str, want_tokens: usize) -> String {
    let unit_tokens = split_surface(source).len().max(1);
    let repeats = want_tokens.div_ceil(unit_tokens);
    let mut out = String::with_capacity(source.len() * repeats + repeats);
    for _ in 0..repeats {
        out.push_str(source);
        if !source.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

fn median_secs(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

/// Builds a mask per (config, fixture) pair from the real pipeline and
/// measures the sparse kernel on seeded tensors.
pub fn measure_scaling(
    cfgs: &[AttentionConfig],
    fixtures: &[BenchFixture],
    opts: &BenchOptions,
) -> BenchOutcome {
    let mut outcome = BenchOutcome::default();
    for fixture in fixtures {
        for cfg in cfgs {
            match measure_one(cfg, fixture, opts) {
                Ok(report) => outcome.reports.push(report),
                Err(e) => outcome
                    .errors
                    .push(format!("{} (n={}): {e}", fixture.name, cfg.n)),
            }
        }
    }
    outcome
}

fn measure_one(
    cfg: &AttentionConfig,
    fixture: &BenchFixture,
    opts: &BenchOptions,
) -> Result<CostReport> {
    cfg.validate()?;
    let tiled = tile_source_to_tokens(&fixture.source, cfg.n);
    let vocab = match &opts.vocab {
        Some(v) => v.clone(),
        None => build_vocabulary(&[tiled.as_str()], 4096)?,
    };
    let toks = tokenize(&tiled, &vocab, cfg.n)?;
    let cfg = cfg.clone().with_n(toks.len());

    let tree = parse_to_tree(&tiled, &opts.language)?;
    let adjacency = build_token_adjacency(&tree, &toks, opts.distance_cap)?;
    let frequency = match &opts.frequency {
        Some(f) => f.clone(),
        None => FrequencyMatrix::new(vocab.size() as u32),
    };
    let pair_scores = lookup_pair_scores(&frequency, toks.ids())?;
    let mask = build_mask(&cfg, &pair_scores, &adjacency)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d_head = cfg.head_dim().max(1);
    let rand_m = |rng: &mut ChaCha8Rng| {
        Matrix::from_fn(cfg.n, d_head, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    };
    let tensors = AttentionTensors::new(
        rand_m(&mut rng),
        rand_m(&mut rng),
        rand_m(&mut rng),
        mask.clone(),
        cfg.clone(),
    )?;

    let mut times = Vec::with_capacity(opts.timing_runs.max(1));
    let mut stats = Default::default();
    for _ in 0..opts.timing_runs.max(1) {
        let start = Instant::now();
        let (_, s) = sparse_attention_forward_with_stats(&tensors)?;
        times.push(start.elapsed().as_secs_f64());
        stats = s;
    }

    let selected = mask.selected_blocks();
    let nb = cfg.num_blocks();
    let sparse_cells = selected * cfg.b * cfg.b;
    let dense_cells = cfg.n * cfg.n;
    Ok(CostReport {
        fixture: fixture.name.clone(),
        n: cfg.n,
        b: cfg.b,
        w: cfg.w,
        g: cfg.g.len(),
        k: cfg.k,
        selected_blocks: selected,
        dense_blocks: nb * nb,
        score_cells_sparse: sparse_cells,
        score_cells_dense: dense_cells,
        ratio: sparse_cells as f64 / dense_cells as f64,
        wall_time_secs: median_secs(times),
        peak_score_bytes: stats.peak_bytes(),
    })
}

/// One JSON object per line.
pub fn reports_to_jsonl(reports: &[CostReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(
            &serde_json::to_string(r)
                .map_err(|e| crate::Error::Numeric(format!("json encode: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Companion plain-text table.
pub fn reports_to_table(reports: &[CostReport]) -> String {
    let mut out = String::from(
        "fixture               n      b   w  g  k  selected  dense_blk  ratio   peak_KiB   ms\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{:<20} {:>6} {:>4} {:>3} {:>2} {:>2} {:>9} {:>10} {:>6.4} {:>9.1} {:>7.3}\n",
            r.fixture,
            r.n,
            r.b,
            r.w,
            r.g,
            r.k,
            r.selected_blocks,
            r.dense_blocks,
            r.ratio,
            r.peak_score_bytes as f64 / 1024.0,
            r.wall_time_secs * 1e3,
        ));
    }
    out
}

/// R^2 of the least-squares polynomial of the given degree through
/// (xs, ys). Degree 1 is the linear fit, degree 2 the quadratic one.
pub fn polyfit_r2(xs: &[f64], ys: &[f64], degree: usize) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(degree + 1 <= xs.len(), "underdetermined fit");
    let m = degree + 1;
    // normal equations: (X^T X) c = X^T y
    let mut ata = vec![0.0f64; m * m];
    let mut aty = vec![0.0f64; m];
    for (&x, &y) in xs.iter().zip(ys) {
        let mut powers = vec![1.0f64; m];
        for p in 1..m {
            powers[p] = powers[p - 1] * x;
        }
        for i in 0..m {
            aty[i] += powers[i] * y;
            for j in 0..m {
                ata[i * m + j] += powers[i] * powers[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting
    let mut coeffs = aty.clone();
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&a, &b| {
                ata[a * m + col]
                    .abs()
                    .partial_cmp(&ata[b * m + col].abs())
                    .unwrap()
            })
            .unwrap();
        if pivot != col {
            for j in 0..m {
                ata.swap(col * m + j, pivot * m + j);
            }
            coeffs.swap(col, pivot);
        }
        let diag = ata[col * m + col];
        for row in col + 1..m {
            let factor = ata[row * m + col] / diag;
            for j in col..m {
                ata[row * m + j] -= factor * ata[col * m + j];
            }
            coeffs[row] -= factor * coeffs[col];
        }
    }
    for col in (0..m).rev() {
        for j in col + 1..m {
            let c = coeffs[j];
            coeffs[col] -= ata[col * m + j] * c;
        }
        coeffs[col] /= ata[col * m + col];
    }

    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let mut fit = 0.0;
        let mut pow = 1.0;
        for &c in &coeffs {
            fit += c * pow;
            pow *= x;
        }
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - mean) * (y - mean);
    }
    if ss_tot == 0.0 {
        return 1.0;
    }
    1.0 - ss_res / ss_tot
}
