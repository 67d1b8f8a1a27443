//! Adjacency file format: header `n=<n> D=<D>`, then sorted `i<TAB>j` lines
//! with i <= j. Symmetric closure is applied on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::ast::TokenAdjacency;
use crate::error::{Error, Result};

pub fn write_adjacency_file(adj: &TokenAdjacency, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "n={} D={}", adj.n(), adj.distance_cap())?;
    for (i, j) in adj.upper_entries() {
        writeln!(w, "{i}\t{j}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_adjacency_file(path: &Path) -> Result<TokenAdjacency> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(format!("{}: empty adjacency file", path.display())))??;
    let (n, cap) = parse_header(&header)
        .ok_or_else(|| Error::format(format!("{}: bad header {header:?}", path.display())))?;
    let mut pairs = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(i), Some(j), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(format!(
                "{}: bad adjacency line {line:?}",
                path.display()
            )));
        };
        let i: usize = i
            .parse()
            .map_err(|_| Error::format(format!("{}: bad index in {line:?}", path.display())))?;
        let j: usize = j
            .parse()
            .map_err(|_| Error::format(format!("{}: bad index in {line:?}", path.display())))?;
        if i > j {
            return Err(Error::format(format!(
                "{}: entries must satisfy i <= j, got {line:?}",
                path.display()
            )));
        }
        pairs.push((i, j));
    }
    TokenAdjacency::from_pairs(n, cap, pairs)
}

fn parse_header(header: &str) -> Option<(usize, usize)> {
    let mut parts = header.split_whitespace();
    let n = parts.next()?.strip_prefix("n=")?.parse().ok()?;
    let cap = parts.next()?.strip_prefix("D=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((n, cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{build_token_adjacency, parse_to_tree};
    use crate::tokenizer::{build_vocabulary, tokenize};

    #[test]
    fn roundtrip_preserves_adjacency() {
        let source = "while (i < n) { f(i); i = i + 1; }";
        let vocab = build_vocabulary(&[source], 256).unwrap();
        let toks = tokenize(source, &vocab, 256).unwrap();
        let tree = parse_to_tree(source, "java").unwrap();
        let adj = build_token_adjacency(&tree, &toks, 2).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.txt");
        write_adjacency_file(&adj, &path).unwrap();
        let back = read_adjacency_file(&path).unwrap();
        assert_eq!(adj, back);
    }

    #[test]
    fn rejects_lower_triangle_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.txt");
        std::fs::write(&path, "n=4 D=2\n2\t1\n").unwrap();
        assert!(read_adjacency_file(&path).is_err());
    }

    #[test]
    fn rejects_out_of_range_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.txt");
        std::fs::write(&path, "n=4 D=2\n1\t9\n").unwrap();
        assert!(read_adjacency_file(&path).is_err());
    }
}
