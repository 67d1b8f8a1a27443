//! Block-mask construction: the four attention patterns and their union.
//!
//! A mask is a set of (query-block, key-block) pairs. Four patterns feed
//! it: a sliding window around the diagonal, symmetric global blocks,
//! top-k blocks by corpus frequency mass, and top-k blocks by structural
//! adjacency mass. Provenance bits record which patterns contributed each
//! selected pair, which is what the ablation tests key on.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::ast::{block_reduce_sum, BlockScores, TokenAdjacency};
use crate::error::{Error, Result};
use crate::frequency::PairScoreMatrix;

/// Sequence/mask geometry plus encoder widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionConfig {
    /// Sequence length in tokens.
    pub n: usize,
    /// Block size.
    pub b: usize,
    /// Window size in blocks; odd.
    pub w: usize,
    /// Global block indices.
    pub g: Vec<usize>,
    /// Top-k budget in blocks, shared by the frequency and AST patterns.
    pub k: usize,
    /// Frequency-pattern budget override (ablation hook).
    pub k_topk: Option<usize>,
    /// AST-pattern budget override (ablation hook).
    pub k_ast: Option<usize>,
    pub d_model: usize,
    pub heads: usize,
}

impl AttentionConfig {
    /// w=3, |g|=2 (blocks 0 and 1), k=3, b=32, n=1024.
    pub fn paper_default() -> Self {
        AttentionConfig {
            n: 1024,
            b: 32,
            w: 3,
            g: vec![0, 1],
            k: 3,
            k_topk: None,
            k_ast: None,
            d_model: 64,
            heads: 4,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn num_blocks(&self) -> usize {
        self.n.div_ceil(self.b)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn topk_budget(&self) -> usize {
        self.k_topk.unwrap_or(self.k)
    }

    pub fn ast_budget(&self) -> usize {
        self.k_ast.unwrap_or(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be >= 1"));
        }
        if self.b == 0 {
            return Err(Error::invalid("block size must be >= 1"));
        }
        if self.w % 2 == 0 || self.w == 0 {
            return Err(Error::invalid(format!("window size {} must be odd", self.w)));
        }
        let nb = self.num_blocks();
        if let Some(&bad) = self.g.iter().find(|&&g| g >= nb) {
            return Err(Error::invalid(format!(
                "global block {bad} out of range for {nb} blocks"
            )));
        }
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Bitset over the four patterns, rendered as `LGTA` with `-` for absent
/// bits (e.g. `L-T-`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance(u8);

impl Provenance {
    pub const LOCAL: Provenance = Provenance(1);
    pub const GLOBAL: Provenance = Provenance(2);
    pub const TOPK: Provenance = Provenance(4);
    pub const AST: Provenance = Provenance(8);

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, other: Provenance) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Provenance) {
        self.0 |= other.0;
    }

    /// True when removing `pattern` leaves no contributing pattern.
    pub fn only(self, pattern: Provenance) -> bool {
        self.0 == pattern.0
    }

    pub fn parse(s: &str) -> Option<Provenance> {
        let bytes = s.as_bytes();
        if bytes.len() != 4 {
            return None;
        }
        let mut p = Provenance::default();
        for (i, (&got, (on, flag))) in bytes
            .iter()
            .zip([
                (b'L', Provenance::LOCAL),
                (b'G', Provenance::GLOBAL),
                (b'T', Provenance::TOPK),
                (b'A', Provenance::AST),
            ])
            .enumerate()
        {
            if got == on {
                p.insert(flag);
            } else if got != b'-' {
                let _ = i;
                return None;
            }
        }
        Some(p)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (on, flag) in [
            ('L', Provenance::LOCAL),
            ('G', Provenance::GLOBAL),
            ('T', Provenance::TOPK),
            ('A', Provenance::AST),
        ] {
            write!(f, "{}", if self.contains(flag) { on } else { '-' })?;
        }
        Ok(())
    }
}

/// The union mask: per query-block row, the sorted selected key blocks and
/// the provenance of each selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    num_blocks: usize,
    rows: Vec<std::collections::BTreeMap<usize, Provenance>>,
}

impl BlockMask {
    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    /// Selected key blocks for query block `i`, ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].keys().copied()
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.rows[i].contains_key(&j)
    }

    pub fn provenance(&self, i: usize, j: usize) -> Option<Provenance> {
        self.rows[i].get(&j).copied()
    }

    /// Total number of selected block pairs.
    pub fn selected_blocks(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, Provenance)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(&j, &p)| (i, j, p)))
    }

    /// True when every pair of `self` appears in `other`.
    pub fn is_subset_of(&self, other: &BlockMask) -> bool {
        self.num_blocks == other.num_blocks
            && self.pairs().all(|(i, j, _)| other.contains(i, j))
    }

    /// A mask selecting every block pair (the dense baseline).
    pub fn all_blocks(num_blocks: usize) -> Self {
        let mut rows = Vec::with_capacity(num_blocks);
        for _ in 0..num_blocks {
            let row = (0..num_blocks)
                .map(|j| (j, Provenance::LOCAL))
                .collect();
            rows.push(row);
        }
        BlockMask { num_blocks, rows }
    }

    fn from_patterns(num_blocks: usize, patterns: &[(&BTreeSet<(usize, usize)>, Provenance)]) -> Self {
        let mut rows = vec![std::collections::BTreeMap::new(); num_blocks];
        for (set, flag) in patterns {
            for &(i, j) in *set {
                rows[i]
                    .entry(j)
                    .or_insert_with(Provenance::default)
                    .insert(*flag);
            }
        }
        BlockMask { num_blocks, rows }
    }
}

/// Sliding-window pairs: |i - j| <= floor(w / 2), clipped to range.
pub fn local_pattern(cfg: &AttentionConfig) -> Result<BTreeSet<(usize, usize)>> {
    cfg.validate()?;
    let nb = cfg.num_blocks();
    let half = cfg.w / 2;
    let mut out = BTreeSet::new();
    for i in 0..nb {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(nb - 1);
        for j in lo..=hi {
            out.insert((i, j));
        }
    }
    Ok(out)
}

/// Global pairs: i in g or j in g (global attention is symmetric).
pub fn global_pattern(cfg: &AttentionConfig) -> Result<BTreeSet<(usize, usize)>> {
    cfg.validate()?;
    let nb = cfg.num_blocks();
    let mut out = BTreeSet::new();
    for &gb in &cfg.g {
        for j in 0..nb {
            out.insert((gb, j));
            out.insert((j, gb));
        }
    }
    Ok(out)
}

/// Per query row, the k key blocks with the largest scores. Ties break
/// toward the smaller block index; zero-scored blocks are never selected.
pub fn topk_pattern(scores: &BlockScores, k: usize) -> BTreeSet<(usize, usize)> {
    let nb = scores.num_blocks();
    let mut out = BTreeSet::new();
    if k == 0 {
        return out;
    }
    let mut order: Vec<usize> = Vec::with_capacity(nb);
    for i in 0..nb {
        let row = scores.row(i);
        order.clear();
        order.extend((0..nb).filter(|&j| row[j] > 0));
        // descending score, ascending index on ties
        order.sort_by(|&a, &b| row[b].cmp(&row[a]).then_with(|| a.cmp(&b)));
        for &j in order.iter().take(k) {
            out.insert((i, j));
        }
    }
    out
}

/// Algorithm-1 union: local + global + top-k over reduced frequency scores
/// + top-k over reduced adjacency scores, with provenance per pair.
pub fn build_mask(
    cfg: &AttentionConfig,
    pair_scores: &PairScoreMatrix,
    adjacency: &TokenAdjacency,
) -> Result<BlockMask> {
    cfg.validate()?;
    if pair_scores.n() != cfg.n || adjacency.n() != cfg.n {
        return Err(Error::invalid(format!(
            "dimension mismatch: cfg.n={}, pair scores n={}, adjacency n={}",
            cfg.n,
            pair_scores.n(),
            adjacency.n()
        )));
    }
    let local = local_pattern(cfg)?;
    let global = global_pattern(cfg)?;
    let freq_blocks = block_reduce_sum(cfg.n, pair_scores.entries(), cfg.b)?;
    let ast_blocks = block_reduce_sum(cfg.n, adjacency.entries(), cfg.b)?;
    let topk = topk_pattern(&freq_blocks, cfg.topk_budget());
    let ast = topk_pattern(&ast_blocks, cfg.ast_budget());

    Ok(BlockMask::from_patterns(
        cfg.num_blocks(),
        &[
            (&local, Provenance::LOCAL),
            (&global, Provenance::GLOBAL),
            (&topk, Provenance::TOPK),
            (&ast, Provenance::AST),
        ],
    ))
}

/// Mask file: header `n=<n> b=<b> w=<w> g=<csv> k=<k>`, then sorted
/// `i<TAB>j<TAB>provenance` lines.
pub fn write_mask_file(mask: &BlockMask, cfg: &AttentionConfig, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let g_csv: Vec<String> = cfg.g.iter().map(|g| g.to_string()).collect();
    writeln!(
        w,
        "n={} b={} w={} g={} k={}",
        cfg.n,
        cfg.b,
        cfg.w,
        g_csv.join(","),
        cfg.k
    )?;
    for (i, j, p) in mask.pairs() {
        writeln!(w, "{i}\t{j}\t{p}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a mask file back into the mask plus the header geometry
/// (n, b, w, g, k).
pub fn read_mask_file(path: &Path) -> Result<(BlockMask, AttentionConfig)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(format!("{}: empty mask file", path.display())))??;
    let cfg = parse_mask_header(&header)
        .ok_or_else(|| Error::format(format!("{}: bad header {header:?}", path.display())))?;
    let nb = cfg.num_blocks();
    let mut rows = vec![std::collections::BTreeMap::new(); nb];
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(i), Some(j), Some(p), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::format(format!(
                "{}: bad mask line {line:?}",
                path.display()
            )));
        };
        let i: usize = i
            .parse()
            .map_err(|_| Error::format(format!("{}: bad block index in {line:?}", path.display())))?;
        let j: usize = j
            .parse()
            .map_err(|_| Error::format(format!("{}: bad block index in {line:?}", path.display())))?;
        if i >= nb || j >= nb {
            return Err(Error::format(format!(
                "{}: block pair ({i}, {j}) out of range for {nb} blocks",
                path.display()
            )));
        }
        let p = Provenance::parse(p).ok_or_else(|| {
            Error::format(format!("{}: bad provenance in {line:?}", path.display()))
        })?;
        if p.is_empty() {
            return Err(Error::format(format!(
                "{}: empty provenance in {line:?}",
                path.display()
            )));
        }
        rows[i].insert(j, p);
    }
    Ok((BlockMask { num_blocks: nb, rows }, cfg))
}

fn parse_mask_header(header: &str) -> Option<AttentionConfig> {
    let mut parts = header.split_whitespace();
    let n = parts.next()?.strip_prefix("n=")?.parse().ok()?;
    let b = parts.next()?.strip_prefix("b=")?.parse().ok()?;
    let w = parts.next()?.strip_prefix("w=")?.parse().ok()?;
    let g_csv = parts.next()?.strip_prefix("g=")?;
    let g = if g_csv.is_empty() {
        Vec::new()
    } else {
        g_csv
            .split(',')
            .map(|s| s.parse().ok())
            .collect::<Option<Vec<usize>>>()?
    };
    let k = parts.next()?.strip_prefix("k=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    let mut cfg = AttentionConfig::paper_default();
    cfg.n = n;
    cfg.b = b;
    cfg.w = w;
    cfg.g = g;
    cfg.k = k;
    Some(cfg)
}
