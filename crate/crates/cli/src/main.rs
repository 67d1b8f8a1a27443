//! Command-line pipeline: vocab -> frequency -> adjacency -> mask ->
//! attention / verification / benchmarks.
//!
//! Every randomized command takes an explicit `--seed`; all randomness
//! flows through ChaCha8 from that one value, so artifacts are
//! bit-reproducible. Failures exit nonzero with a diagnostic naming the
//! stage that failed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sasa_core::ast::{
    build_token_adjacency, parse_to_tree, read_adjacency_file, write_adjacency_file,
    TokenAdjacency,
};
use sasa_core::attention::{
    attention_probabilities, embed_tokens, sparse_attention_forward_with_stats,
    AttentionTensors, EncoderLayerParams,
};
use sasa_core::bench::{
    analytic_block_bound, measure_scaling, reports_to_jsonl, reports_to_table, BenchFixture,
    BenchOptions,
};
use sasa_core::frequency::{
    accumulate_from_heads, lookup_pair_scores, read_frequency_file, write_frequency_file,
    FrequencyMatrix, HeadAggregation, PairScoreMatrix,
};
use sasa_core::harness::{equivalence_sweep, gradient_sweep};
use sasa_core::mask::{build_mask, read_mask_file, write_mask_file, AttentionConfig};
use sasa_core::numeric::{read_matrix, write_matrix};
use sasa_core::tokenizer::{
    build_vocabulary, read_vocab_file, tokenize, write_vocab_file, Vocabulary,
};

#[derive(Parser)]
#[command(name = "sasa", about = "Structure-aware block-sparse attention pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from code files.
    BuildVocab(BuildVocabArgs),
    /// Accumulate the attention frequency matrix over a corpus.
    BuildFreq(BuildFreqArgs),
    /// Build the AST adjacency file for one input.
    BuildAdj(BuildAdjArgs),
    /// Compose the four patterns into a block-mask file.
    BuildMask(BuildMaskArgs),
    /// Sparse attention forward over supplied tensor files.
    Attn(AttnArgs),
    /// Oracle-equivalence and gradient-check sweeps.
    Verify(VerifyArgs),
    /// Scaling/memory benchmark over code fixtures.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct GeometryArgs {
    /// Sequence length (tokens, including CLS/SEP).
    #[arg(long, default_value_t = 1024)]
    n: usize,
    /// Block size.
    #[arg(long, default_value_t = 32)]
    b: usize,
    /// Window size in blocks (odd).
    #[arg(long, default_value_t = 3)]
    w: usize,
    /// Global block indices (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
    g: Vec<usize>,
    /// Shared top-k budget for the frequency and AST patterns.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Override the frequency-pattern budget (ablation).
    #[arg(long)]
    k_topk: Option<usize>,
    /// Override the AST-pattern budget (ablation).
    #[arg(long)]
    k_ast: Option<usize>,
    /// Disable the frequency top-k pattern (same as --k-topk 0).
    #[arg(long)]
    no_topk: bool,
    /// Disable the AST pattern (same as --k-ast 0).
    #[arg(long)]
    no_ast: bool,
    /// Model width.
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 4)]
    heads: usize,
}

impl GeometryArgs {
    fn to_config(&self) -> Result<AttentionConfig> {
        let cfg = AttentionConfig {
            n: self.n,
            b: self.b,
            w: self.w,
            g: self.g.clone(),
            k: self.k,
            k_topk: if self.no_topk { Some(0) } else { self.k_topk },
            k_ast: if self.no_ast { Some(0) } else { self.k_ast },
            d_model: self.d_model,
            heads: self.heads,
        };
        cfg.validate().context("stage config: invalid geometry")?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Output vocab file.
    #[arg(long)]
    out: PathBuf,
    /// Maximum vocabulary size including the 4 reserved ids.
    #[arg(long, default_value_t = 8192)]
    max_size: usize,
    /// Input code files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttnSource {
    /// Toy encoder running dense attention (seeded stand-in backbone).
    Toy,
    /// Per-input matrix files from --attn-dir.
    Files,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Mean,
    Max,
}

#[derive(Args)]
struct BuildFreqArgs {
    /// Vocabulary file.
    #[arg(long)]
    vocab: PathBuf,
    /// Output frequency file.
    #[arg(long)]
    out: PathBuf,
    /// Attention threshold for counting a pair.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// RNG seed (ChaCha8) for the toy encoder.
    #[arg(long)]
    seed: u64,
    /// Max tokens per sample.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    /// Where per-sample attention comes from.
    #[arg(long, value_enum, default_value_t = AttnSource::Toy)]
    attn_source: AttnSource,
    /// Logit temperature for the toy encoder; below 1 concentrates rows
    /// like a trained backbone.
    #[arg(long, default_value_t = 0.1)]
    temperature: f64,
    /// Directory of `<input-file-name>.attn` matrices for --attn-source files.
    #[arg(long)]
    attn_dir: Option<PathBuf>,
    /// How heads are combined before thresholding.
    #[arg(long, value_enum, default_value_t = AggArg::Mean)]
    agg: AggArg,
    /// Worker shards; partial matrices are merged (order-insensitive).
    #[arg(long, default_value_t = 1)]
    shards: usize,
    /// Input code files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct BuildAdjArgs {
    /// Vocabulary file.
    #[arg(long)]
    vocab: PathBuf,
    /// Output adjacency file.
    #[arg(long)]
    out: PathBuf,
    /// Grammar id.
    #[arg(long, default_value = "java")]
    lang: String,
    /// Tree-distance cap for structural connections.
    #[arg(long = "D", default_value_t = 2)]
    distance_cap: usize,
    /// Max tokens.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    /// Input code file.
    input: PathBuf,
}

#[derive(Args)]
struct BuildMaskArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Output mask file.
    #[arg(long)]
    out: PathBuf,
    /// Input code file; its token count caps n.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Vocabulary file (required with --input or --freq).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Frequency file; zero pair scores when absent.
    #[arg(long)]
    freq: Option<PathBuf>,
    /// Adjacency file; derived from --input when absent, empty otherwise.
    #[arg(long)]
    adj: Option<PathBuf>,
    #[arg(long, default_value = "java")]
    lang: String,
    #[arg(long = "D", default_value_t = 2)]
    distance_cap: usize,
}

#[derive(Args)]
struct AttnArgs {
    /// Query matrix file (n x d_head).
    #[arg(long)]
    q: PathBuf,
    /// Key matrix file.
    #[arg(long)]
    k: PathBuf,
    /// Value matrix file.
    #[arg(long)]
    v: PathBuf,
    /// Mask file (provides n and b).
    #[arg(long)]
    mask: PathBuf,
    /// Output matrix file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Pin the sequence length (otherwise sweeps 17/64/128/256).
    #[arg(long)]
    n: Option<usize>,
    /// Pin the block size (otherwise sweeps 4/8/16).
    #[arg(long)]
    b: Option<usize>,
    /// RNG seed (ChaCha8).
    #[arg(long)]
    seed: u64,
    /// Oracle-equivalence cases.
    #[arg(long, default_value_t = 200)]
    cases: usize,
    /// Gradient-check cases.
    #[arg(long, default_value_t = 50)]
    grad_cases: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Sequence lengths to sweep (comma separated); overrides --n.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Code fixture files; each is tiled to the requested length.
    #[arg(long = "fixture", required = true)]
    fixtures: Vec<PathBuf>,
    /// RNG seed (ChaCha8) for the timed tensors.
    #[arg(long)]
    seed: u64,
    /// Timing runs per configuration (median reported).
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value = "java")]
    lang: String,
    #[arg(long = "D", default_value_t = 2)]
    distance_cap: usize,
    /// Optional vocab file for frequency lookups.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Optional frequency file.
    #[arg(long)]
    freq: Option<PathBuf>,
    /// JSON-lines report output.
    #[arg(long)]
    out: PathBuf,
    /// Optional plain-text table output.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let status = match cli.command {
        Command::BuildVocab(args) => build_vocab(args),
        Command::BuildFreq(args) => build_freq(args),
        Command::BuildAdj(args) => build_adj(args),
        Command::BuildMask(args) => build_mask_cmd(args),
        Command::Attn(args) => attn(args),
        Command::Verify(args) => verify(args),
        Command::Bench(args) => bench(args),
    };
    if let Err(e) = status {
        eprintln!("sasa: {e:#}");
        std::process::exit(1);
    }
}

fn read_source(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("stage read-input: cannot read {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    read_vocab_file(path).context("stage vocab-load")
}

fn build_vocab(args: BuildVocabArgs) -> Result<()> {
    let mut corpus = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        corpus.push(read_source(path)?);
    }
    let vocab = build_vocabulary(&corpus, args.max_size).context("stage vocab-build")?;
    write_vocab_file(&vocab, &args.out).context("stage vocab-write")?;
    println!(
        "vocab: {} tokens from {} files -> {}",
        vocab.size(),
        args.inputs.len(),
        args.out.display()
    );
    Ok(())
}

fn build_freq(args: BuildFreqArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    if matches!(args.attn_source, AttnSource::Files) && args.attn_dir.is_none() {
        bail!("stage config: --attn-source files requires --attn-dir");
    }
    let agg = match args.agg {
        AggArg::Mean => HeadAggregation::Mean,
        AggArg::Max => HeadAggregation::Max,
    };

    // tokenize everything up front so shard workers only run numeric code
    let mut samples: Vec<(String, Vec<u32>)> = Vec::new();
    for path in &args.inputs {
        let source = read_source(path)?;
        let toks = tokenize(&source, &vocab, args.n).context("stage tokenize")?;
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        samples.push((name, toks.ids().to_vec()));
    }

    let params = EncoderLayerParams::seeded(args.d_model, args.heads, args.seed)
        .context("stage encoder-init")?;
    let embed_seed = args.seed.wrapping_add(1);
    let vocab_size = vocab.size() as u32;

    let accumulate_one = |fm: &mut FrequencyMatrix, name: &str, ids: &[u32]| -> Result<()> {
        let heads: Vec<sasa_core::numeric::Matrix> = match args.attn_source {
            AttnSource::Toy => {
                let x = embed_tokens(ids, vocab_size, args.d_model, embed_seed)
                    .context("stage embed")?;
                attention_probabilities(&x, &params, args.temperature)
                    .context("stage toy-attention")?
            }
            AttnSource::Files => {
                let dir = args.attn_dir.as_ref().unwrap();
                let path = dir.join(format!("{name}.attn"));
                vec![read_matrix(&path)
                    .with_context(|| format!("stage attn-load: {}", path.display()))?]
            }
        };
        accumulate_from_heads(fm, ids, &heads, args.threshold, agg)
            .with_context(|| format!("stage accumulate: sample {name}"))
    };

    let shards = args.shards.max(1).min(samples.len().max(1));
    let mut fm = FrequencyMatrix::new(vocab_size);
    if shards <= 1 {
        for (name, ids) in &samples {
            accumulate_one(&mut fm, name, ids)?;
        }
    } else {
        // partition-and-merge: counts are integer sums, so the shard split
        // cannot change the result
        let chunks: Vec<&[(String, Vec<u32>)]> =
            samples.chunks(samples.len().div_ceil(shards)).collect();
        let partials: Vec<Result<FrequencyMatrix>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        let mut partial = FrequencyMatrix::new(vocab_size);
                        for (name, ids) in chunk {
                            accumulate_one(&mut partial, name, ids)?;
                        }
                        Ok(partial)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for partial in partials {
            fm.merge(&partial?).context("stage merge")?;
        }
    }

    write_frequency_file(&fm, args.threshold, &args.out).context("stage freq-write")?;
    println!(
        "freq: {} samples, {} pairs -> {}",
        fm.samples_seen(),
        fm.num_pairs(),
        args.out.display()
    );
    Ok(())
}

fn build_adj(args: BuildAdjArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let source = read_source(&args.input)?;
    let toks = tokenize(&source, &vocab, args.n).context("stage tokenize")?;
    let tree = parse_to_tree(&source, &args.lang).context("stage parse")?;
    let adj = build_token_adjacency(&tree, &toks, args.distance_cap).context("stage adjacency")?;
    write_adjacency_file(&adj, &args.out).context("stage adjacency-write")?;
    println!(
        "adjacency: n={} entries={} -> {}",
        adj.n(),
        adj.num_entries(),
        args.out.display()
    );
    Ok(())
}

fn build_mask_cmd(args: BuildMaskArgs) -> Result<()> {
    let mut cfg = args.geometry.to_config()?;

    let toks = match (&args.input, &args.vocab) {
        (Some(input), Some(vocab_path)) => {
            let vocab = load_vocab(vocab_path)?;
            let source = read_source(input)?;
            Some(tokenize(&source, &vocab, cfg.n).context("stage tokenize")?)
        }
        (Some(_), None) => bail!("stage config: --input requires --vocab"),
        (None, _) => None,
    };
    if let Some(toks) = &toks {
        cfg = cfg.with_n(toks.len());
    }

    let pair_scores = match (&args.freq, &toks) {
        (Some(freq_path), Some(toks)) => {
            let (fm, _) = read_frequency_file(freq_path).context("stage freq-load")?;
            lookup_pair_scores(&fm, toks.ids()).context("stage freq-lookup")?
        }
        (Some(_), None) => bail!("stage config: --freq requires --input and --vocab"),
        (None, _) => PairScoreMatrix::zeros(cfg.n),
    };

    let adjacency: TokenAdjacency = match (&args.adj, &toks, &args.input) {
        (Some(adj_path), _, _) => {
            let adj = read_adjacency_file(adj_path).context("stage adjacency-load")?;
            if adj.n() != cfg.n {
                bail!(
                    "stage adjacency-load: file has n={}, mask needs n={}",
                    adj.n(),
                    cfg.n
                );
            }
            adj
        }
        (None, Some(toks), Some(input)) => {
            let source = read_source(input)?;
            let tree = parse_to_tree(&source, &args.lang).context("stage parse")?;
            build_token_adjacency(&tree, toks, args.distance_cap).context("stage adjacency")?
        }
        (None, _, _) => TokenAdjacency::empty(cfg.n, args.distance_cap),
    };

    let mask = build_mask(&cfg, &pair_scores, &adjacency).context("stage mask-build")?;
    write_mask_file(&mask, &cfg, &args.out).context("stage mask-write")?;
    println!(
        "mask: {} blocks, {} selected (bound {}) -> {}",
        cfg.num_blocks(),
        mask.selected_blocks(),
        analytic_block_bound(&cfg),
        args.out.display()
    );
    Ok(())
}

fn attn(args: AttnArgs) -> Result<()> {
    let (mask, header_cfg) = read_mask_file(&args.mask).context("stage mask-load")?;
    let q = read_matrix(&args.q).context("stage tensor-load: Q")?;
    let k = read_matrix(&args.k).context("stage tensor-load: K")?;
    let v = read_matrix(&args.v).context("stage tensor-load: V")?;
    let mut cfg = header_cfg.clone();
    cfg.d_model = q.cols().max(1);
    cfg.heads = 1;
    let tensors =
        AttentionTensors::new(q, k, v, mask, cfg).context("stage attention: shape check")?;
    let (out, stats) =
        sparse_attention_forward_with_stats(&tensors).context("stage attention")?;
    write_matrix(&out, &args.out).context("stage tensor-write")?;
    println!(
        "attn: n={} score_cells={} peak_bytes={} -> {}",
        header_cfg.n,
        stats.score_cells,
        stats.peak_bytes(),
        args.out.display()
    );
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    let eq = equivalence_sweep(args.seed, args.cases, args.n, args.b)
        .context("stage verify-equivalence")?;
    println!(
        "oracle equivalence: {} cases, max |sparse - dense| = {:.3e}",
        eq.cases, eq.max_abs_dev
    );
    let grad =
        gradient_sweep(args.seed, args.grad_cases, args.eps).context("stage verify-gradient")?;
    println!(
        "gradient check: {} cases, max relative error = {:.3e}",
        grad.cases, grad.max_rel_err
    );
    if eq.max_abs_dev >= 1e-10 {
        bail!(
            "stage verify: oracle deviation {:.3e} exceeds 1e-10",
            eq.max_abs_dev
        );
    }
    if grad.max_rel_err > 1e-4 {
        bail!(
            "stage verify: gradient error {:.3e} exceeds 1e-4",
            grad.max_rel_err
        );
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let base = args.geometry.to_config()?;
    let ns = args.sweep.clone().unwrap_or_else(|| vec![base.n]);
    let cfgs: Vec<AttentionConfig> = ns.iter().map(|&n| base.clone().with_n(n)).collect();

    let mut fixtures = Vec::with_capacity(args.fixtures.len());
    for path in &args.fixtures {
        fixtures.push(BenchFixture {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            source: read_source(path)?,
        });
    }

    let vocab = match &args.vocab {
        Some(path) => Some(load_vocab(path)?),
        None => None,
    };
    let frequency = match &args.freq {
        Some(path) => Some(read_frequency_file(path).context("stage freq-load")?.0),
        None => None,
    };
    let opts = BenchOptions {
        language: args.lang.clone(),
        distance_cap: args.distance_cap,
        seed: args.seed,
        timing_runs: args.runs,
        vocab,
        frequency,
    };

    let outcome = measure_scaling(&cfgs, &fixtures, &opts);
    for err in &outcome.errors {
        eprintln!("sasa bench: fixture failed: {err}");
    }
    if outcome.reports.is_empty() {
        bail!("stage bench: every fixture/config failed");
    }
    let jsonl = reports_to_jsonl(&outcome.reports).context("stage bench-report")?;
    std::fs::write(&args.out, jsonl)
        .with_context(|| format!("stage bench-write: {}", args.out.display()))?;
    let table = reports_to_table(&outcome.reports);
    if let Some(table_path) = &args.table {
        std::fs::write(table_path, &table)
            .with_context(|| format!("stage bench-write: {}", table_path.display()))?;
    }
    print!("{table}");
    Ok(())
}
