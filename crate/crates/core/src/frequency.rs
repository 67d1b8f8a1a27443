//! Corpus-level attention frequency counts and per-input pair-score lookups.
//!
//! A preprocessing pass feeds per-sample attention matrices through
//! [`accumulate_frequency`]; whenever a token pair's attention weight
//! exceeds the threshold its vocab-id pair is counted. At mask-build time
//! [`lookup_pair_scores`] maps a token sequence back to an n x n score
//! matrix from those counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Sparse |V| x |V| directed count matrix. Counts are directed because
/// attention is row-normalized and asymmetric.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyMatrix {
    vocab_size: u32,
    counts: BTreeMap<(u32, u32), u64>,
    samples_seen: u64,
}

/// How per-head attention matrices are combined before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadAggregation {
    /// Average the head matrices (keeps rows stochastic). Default.
    Mean,
    /// A pair counts when any single head exceeds the threshold.
    Max,
}

impl FrequencyMatrix {
    pub fn new(vocab_size: u32) -> Self {
        FrequencyMatrix {
            vocab_size,
            counts: BTreeMap::new(),
            samples_seen: 0,
        }
    }

    /// Builds a matrix from explicit counts (all >= 1, ids < vocab_size).
    pub fn from_counts(
        vocab_size: u32,
        counts: impl IntoIterator<Item = (u32, u32, u64)>,
        samples_seen: u64,
    ) -> Result<Self> {
        let mut fm = FrequencyMatrix::new(vocab_size);
        fm.samples_seen = samples_seen;
        for (i, j, c) in counts {
            if i >= vocab_size || j >= vocab_size {
                return Err(Error::invalid(format!(
                    "count key ({i}, {j}) out of range for |V|={vocab_size}"
                )));
            }
            if c == 0 {
                return Err(Error::invalid("zero count entries are not stored"));
            }
            *fm.counts.entry((i, j)).or_insert(0) += c;
        }
        Ok(fm)
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn num_pairs(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, i: u32, j: u32) -> u64 {
        self.counts.get(&(i, j)).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        self.counts.iter().map(|(&(i, j), &c)| (i, j, c))
    }

    /// Commutative, associative merge: shard counts built on corpus halves
    /// combine into exactly the whole-corpus matrix.
    pub fn merge(&mut self, other: &FrequencyMatrix) -> Result<()> {
        if self.vocab_size != other.vocab_size {
            return Err(Error::invalid(format!(
                "cannot merge frequency matrices over different vocabularies ({} vs {})",
                self.vocab_size, other.vocab_size
            )));
        }
        for (&key, &c) in &other.counts {
            *self.counts.entry(key).or_insert(0) += c;
        }
        self.samples_seen += other.samples_seen;
        Ok(())
    }
}

fn check_sample(fm: &FrequencyMatrix, ids: &[u32], attn: &Matrix, threshold: f64) -> Result<()> {
    if attn.rows() != ids.len() || attn.cols() != ids.len() {
        return Err(Error::invalid(format!(
            "attention shape {}x{} does not match {} token ids",
            attn.rows(),
            attn.cols(),
            ids.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold must lie in (0, 1)"));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= fm.vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} out of range for |V|={}",
            fm.vocab_size
        )));
    }
    Ok(())
}

fn check_row_stochastic(attn: &Matrix) -> Result<()> {
    for r in 0..attn.rows() {
        let sum: f64 = attn.row(r).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "attention row {r} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// Counts every position pair whose attention weight exceeds `threshold`:
/// counts[ids[i]][ids[j]] += 1 per qualifying (i, j). Repeated vocab pairs
/// within one sample increment once per position pair.
pub fn accumulate_frequency(
    fm: &mut FrequencyMatrix,
    ids: &[u32],
    attn: &Matrix,
    threshold: f64,
) -> Result<()> {
    check_sample(fm, ids, attn, threshold)?;
    check_row_stochastic(attn)?;
    for i in 0..ids.len() {
        let row = attn.row(i);
        for (j, &w) in row.iter().enumerate() {
            if w > threshold {
                *fm.counts.entry((ids[i], ids[j])).or_insert(0) += 1;
            }
        }
    }
    fm.samples_seen += 1;
    Ok(())
}

/// Accumulates one sample from per-head attention matrices.
///
/// `Mean` averages the heads first (the average of row-stochastic matrices
/// is row-stochastic); `Max` counts a pair when any head exceeds the
/// threshold. Each head matrix must itself be row-stochastic.
pub fn accumulate_from_heads(
    fm: &mut FrequencyMatrix,
    ids: &[u32],
    heads: &[Matrix],
    threshold: f64,
    aggregation: HeadAggregation,
) -> Result<()> {
    if heads.is_empty() {
        return Err(Error::invalid("no attention heads supplied"));
    }
    for h in heads {
        check_sample(fm, ids, h, threshold)?;
        check_row_stochastic(h)?;
    }
    match aggregation {
        HeadAggregation::Mean => {
            let n = ids.len();
            let mut mean = Matrix::zeros(n, n);
            let scale = 1.0 / heads.len() as f64;
            for h in heads {
                for (d, s) in mean.as_mut_slice().iter_mut().zip(h.as_slice()) {
                    *d += scale * s;
                }
            }
            accumulate_frequency(fm, ids, &mean, threshold)
        }
        HeadAggregation::Max => {
            for i in 0..ids.len() {
                for j in 0..ids.len() {
                    if heads.iter().any(|h| h.get(i, j) > threshold) {
                        *fm.counts.entry((ids[i], ids[j])).or_insert(0) += 1;
                    }
                }
            }
            fm.samples_seen += 1;
            Ok(())
        }
    }
}

/// Dense n x n pair-score matrix for one input: values[i][j] equals the
/// corpus count for the vocab pair (ids[i], ids[j]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairScoreMatrix {
    n: usize,
    values: Vec<u64>,
}

impl PairScoreMatrix {
    pub fn zeros(n: usize) -> Self {
        PairScoreMatrix {
            n,
            values: vec![0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.values[i * self.n + j]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    /// Nonzero entries, for block reduction.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.values.iter().enumerate().filter_map(|(flat, &v)| {
            (v > 0).then_some((flat / self.n, flat % self.n, v))
        })
    }
}

/// Looks up the corpus counts for every position pair of `ids`.
pub fn lookup_pair_scores(fm: &FrequencyMatrix, ids: &[u32]) -> Result<PairScoreMatrix> {
    if let Some(&bad) = ids.iter().find(|&&id| id >= fm.vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} out of range for |V|={}",
            fm.vocab_size
        )));
    }
    let n = ids.len();
    let mut out = PairScoreMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            out.values[i * n + j] = fm.count(ids[i], ids[j]);
        }
    }
    Ok(out)
}

/// Frequency file: header `|V|=<size> samples=<count> threshold=<t>`, then
/// sorted `i<TAB>j<TAB>count` lines.
pub fn write_frequency_file(fm: &FrequencyMatrix, threshold: f64, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "|V|={} samples={} threshold={}",
        fm.vocab_size, fm.samples_seen, threshold
    )?;
    for (i, j, c) in fm.iter() {
        writeln!(w, "{i}\t{j}\t{c}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frequency_file(path: &Path) -> Result<(FrequencyMatrix, f64)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(format!("{}: empty frequency file", path.display())))??;
    let (vocab_size, samples, threshold) = parse_header(&header)
        .ok_or_else(|| Error::format(format!("{}: bad header {header:?}", path.display())))?;
    let mut fm = FrequencyMatrix::new(vocab_size);
    fm.samples_seen = samples;
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(i), Some(j), Some(c), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::format(format!(
                "{}: bad frequency line {line:?}",
                path.display()
            )));
        };
        let key = (
            i.parse()
                .map_err(|_| Error::format(format!("{}: bad id in {line:?}", path.display())))?,
            j.parse()
                .map_err(|_| Error::format(format!("{}: bad id in {line:?}", path.display())))?,
        );
        let count: u64 = c
            .parse()
            .map_err(|_| Error::format(format!("{}: bad count in {line:?}", path.display())))?;
        if key.0 >= vocab_size || key.1 >= vocab_size {
            return Err(Error::format(format!(
                "{}: id pair {key:?} out of range for |V|={vocab_size}",
                path.display()
            )));
        }
        if count == 0 {
            return Err(Error::format(format!(
                "{}: zero count entry {line:?}",
                path.display()
            )));
        }
        fm.counts.insert(key, count);
    }
    Ok((fm, threshold))
}

fn parse_header(header: &str) -> Option<(u32, u64, f64)> {
    let mut parts = header.split_whitespace();
    let v = parts.next()?.strip_prefix("|V|=")?.parse().ok()?;
    let s = parts.next()?.strip_prefix("samples=")?.parse().ok()?;
    let t = parts.next()?.strip_prefix("threshold=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((v, s, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stochastic(n: usize, rows: Vec<Vec<f64>>) -> Matrix {
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Matrix::from_vec(n, n, data).unwrap()
    }

    #[test]
    fn all_entries_above_threshold_count() {
        let mut fm = FrequencyMatrix::new(10);
        let attn = stochastic(
            3,
            vec![
                vec![0.5, 0.3, 0.2],
                vec![0.5, 0.3, 0.2],
                vec![0.5, 0.3, 0.2],
            ],
        );
        accumulate_frequency(&mut fm, &[4, 5, 6], &attn, 0.1).unwrap();
        assert_eq!(fm.num_pairs(), 9);
        assert_eq!(fm.count(4, 4), 1);
        assert_eq!(fm.count(6, 4), 1);
        assert_eq!(fm.samples_seen(), 1);
    }

    #[test]
    fn uniform_attention_below_threshold_counts_nothing() {
        let n = 20;
        let mut fm = FrequencyMatrix::new(40);
        let attn = Matrix::from_fn(n, n, |_, _| 1.0 / n as f64);
        let ids: Vec<u32> = (0..n as u32).collect();
        accumulate_frequency(&mut fm, &ids, &attn, 0.1).unwrap();
        assert_eq!(fm.num_pairs(), 0);
        assert_eq!(fm.samples_seen(), 1);
    }

    #[test]
    fn repeated_vocab_pairs_increment_per_position_pair() {
        let mut fm = FrequencyMatrix::new(8);
        // both rows put all mass on column 0; ids repeat the same pair
        let attn = stochastic(2, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        accumulate_frequency(&mut fm, &[5, 5], &attn, 0.1).unwrap();
        assert_eq!(fm.count(5, 5), 2);
    }

    #[test]
    fn rejects_non_stochastic_rows_and_bad_shapes() {
        let mut fm = FrequencyMatrix::new(8);
        let bad = stochastic(2, vec![vec![0.9, 0.3], vec![0.5, 0.5]]);
        assert!(accumulate_frequency(&mut fm, &[1, 2], &bad, 0.1).is_err());
        let ok = stochastic(2, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(accumulate_frequency(&mut fm, &[1, 2, 3], &ok, 0.1).is_err());
        assert!(accumulate_frequency(&mut fm, &[1, 2], &ok, 1.5).is_err());
        assert!(accumulate_frequency(&mut fm, &[1, 99], &ok, 0.1).is_err());
    }

    #[test]
    fn lookup_on_empty_matrix_is_zero() {
        let fm = FrequencyMatrix::new(16);
        let p = lookup_pair_scores(&fm, &[1, 2, 3]).unwrap();
        assert_eq!(p.total(), 0);
    }

    #[test]
    fn lookup_places_counts_by_position() {
        let mut fm = FrequencyMatrix::new(16);
        fm.counts.insert((4, 5), 7);
        let p = lookup_pair_scores(&fm, &[4, 5]).unwrap();
        assert_eq!(p.get(0, 1), 7);
        assert_eq!(p.get(0, 0), 0);
        assert_eq!(p.get(1, 0), 0);
        assert_eq!(p.get(1, 1), 0);
    }

    #[test]
    fn lookup_matches_cell_by_cell_oracle() {
        let mut fm = FrequencyMatrix::new(32);
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            state
        };
        for _ in 0..200 {
            let i = (next() % 32) as u32;
            let j = (next() % 32) as u32;
            *fm.counts.entry((i, j)).or_insert(0) += next() % 4 + 1;
        }
        let ids: Vec<u32> = (0..64).map(|_| (next() % 32) as u32).collect();
        let p = lookup_pair_scores(&fm, &ids).unwrap();
        for (a, &ia) in ids.iter().enumerate() {
            for (b, &ib) in ids.iter().enumerate() {
                assert_eq!(p.get(a, b), fm.counts.get(&(ia, ib)).copied().unwrap_or(0));
            }
        }
    }

    #[test]
    fn max_aggregation_counts_any_head_hit() {
        let mut fm = FrequencyMatrix::new(8);
        let h1 = stochastic(2, vec![vec![0.95, 0.05], vec![0.5, 0.5]]);
        let h2 = stochastic(2, vec![vec![0.05, 0.95], vec![0.5, 0.5]]);
        accumulate_from_heads(&mut fm, &[4, 5], &[h1, h2], 0.9, HeadAggregation::Max).unwrap();
        assert_eq!(fm.count(4, 4), 1);
        assert_eq!(fm.count(4, 5), 1);
        assert_eq!(fm.count(5, 4), 0);
    }

    #[test]
    fn mean_aggregation_thresholds_the_average() {
        let mut fm = FrequencyMatrix::new(8);
        let h1 = stochastic(2, vec![vec![0.95, 0.05], vec![0.5, 0.5]]);
        let h2 = stochastic(2, vec![vec![0.05, 0.95], vec![0.5, 0.5]]);
        accumulate_from_heads(&mut fm, &[4, 5], &[h1, h2], 0.9, HeadAggregation::Mean).unwrap();
        // averages are 0.5 everywhere in row 0: nothing exceeds 0.9
        assert_eq!(fm.num_pairs(), 0);
    }

    #[test]
    fn frequency_file_roundtrip() {
        let mut fm = FrequencyMatrix::new(64);
        fm.counts.insert((4, 9), 3);
        fm.counts.insert((9, 4), 1);
        fm.counts.insert((63, 0), 11);
        fm.samples_seen = 5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("freq.txt");
        write_frequency_file(&fm, 0.1, &path).unwrap();
        let (back, threshold) = read_frequency_file(&path).unwrap();
        assert_eq!(fm, back);
        assert_eq!(threshold, 0.1);
    }

    proptest! {
        /// Permuting sample order yields identical counts, and shard merge
        /// equals the whole-corpus build.
        #[test]
        fn accumulation_commutes_and_merges(seed in 0u64..500, samples in 2usize..8) {
            let vocab = 12u32;
            let n = 4usize;
            let mut state = seed.wrapping_add(7);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                state
            };
            let mut batch: Vec<(Vec<u32>, Matrix)> = Vec::new();
            for _ in 0..samples {
                let ids: Vec<u32> = (0..n).map(|_| (next() % vocab as u64) as u32).collect();
                // random row-stochastic matrix
                let mut m = Matrix::zeros(n, n);
                for r in 0..n {
                    let raw: Vec<f64> = (0..n).map(|_| (next() % 1000 + 1) as f64).collect();
                    let sum: f64 = raw.iter().sum();
                    for (c, v) in raw.iter().enumerate() {
                        m.set(r, c, v / sum);
                    }
                }
                batch.push((ids, m));
            }

            let mut forward = FrequencyMatrix::new(vocab);
            for (ids, m) in &batch {
                accumulate_frequency(&mut forward, ids, m, 0.1).unwrap();
            }
            let mut reversed = FrequencyMatrix::new(vocab);
            for (ids, m) in batch.iter().rev() {
                accumulate_frequency(&mut reversed, ids, m, 0.1).unwrap();
            }
            prop_assert_eq!(&forward, &reversed);

            let split = batch.len() / 2;
            let mut left = FrequencyMatrix::new(vocab);
            let mut right = FrequencyMatrix::new(vocab);
            for (ids, m) in &batch[..split] {
                accumulate_frequency(&mut left, ids, m, 0.1).unwrap();
            }
            for (ids, m) in &batch[split..] {
                accumulate_frequency(&mut right, ids, m, 0.1).unwrap();
            }
            left.merge(&right).unwrap();
            prop_assert_eq!(&forward, &left);
        }

        /// Lookup never fabricates mass: the dense total is bounded by the
        /// stored counts times the pair multiplicity of the input.
        #[test]
        fn lookup_mass_is_bounded(seed in 0u64..200) {
            let vocab = 6u32;
            let mut state = seed.wrapping_add(3);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                state
            };
            let mut fm = FrequencyMatrix::new(vocab);
            for _ in 0..10 {
                let i = (next() % vocab as u64) as u32;
                let j = (next() % vocab as u64) as u32;
                *fm.counts.entry((i, j)).or_insert(0) += 1;
            }
            let ids: Vec<u32> = (0..8).map(|_| (next() % vocab as u64) as u32).collect();
            let p = lookup_pair_scores(&fm, &ids).unwrap();
            // multiplicity of vocab pair (a,b) in ids
            let mut mult = std::collections::HashMap::new();
            for &a in &ids {
                for &b in &ids {
                    *mult.entry((a, b)).or_insert(0u64) += 1;
                }
            }
            let bound: u64 = fm.iter().map(|(i, j, c)| c * mult.get(&(i, j)).copied().unwrap_or(0)).sum();
            prop_assert!(p.total() <= bound);
            prop_assert_eq!(p.total(), bound); // lookup is exact, not just bounded
        }
    }
}
