//! Syntax trees, token/node alignment, and the structural adjacency matrix.
//!
//! Source code is parsed with tree-sitter into an owned concrete syntax
//! tree. Each non-special token is aligned to the deepest node covering its
//! byte span, and two tokens are "structurally connected" when the tree
//! distance between their nodes is at most a cap `D`. The resulting sparse
//! n x n adjacency is what the mask builder reduces into block scores.

mod io;

pub use io::{read_adjacency_file, write_adjacency_file};

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizedCode;

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct SyntaxNode {
    kind: String,
    start: usize,
    end: usize,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
}

impl SyntaxNode {
    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn byte_range(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Owned concrete syntax tree in arena form.
#[derive(Debug, Clone)]
pub struct SyntaxTree {
    nodes: Vec<SyntaxNode>,
    root: NodeId,
}

impl SyntaxTree {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &SyntaxNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    /// First node of the given kind in depth-first preorder.
    pub fn find_first(&self, kind: &str) -> Option<NodeId> {
        self.preorder().find(|&id| self.nodes[id].kind == kind)
    }

    pub fn preorder(&self) -> impl Iterator<Item = NodeId> + '_ {
        let mut stack = vec![self.root];
        std::iter::from_fn(move || {
            let id = stack.pop()?;
            stack.extend(self.nodes[id].children.iter().rev());
            Some(id)
        })
    }

    pub fn has_parse_errors(&self) -> bool {
        self.preorder()
            .any(|id| self.nodes[id].kind == "ERROR" || self.nodes[id].kind == "MISSING")
    }

    /// Deepest node whose byte range covers `[start, end)`.
    pub fn covering_node(&self, start: usize, end: usize) -> Option<NodeId> {
        let root = &self.nodes[self.root];
        if start < root.start || end > root.end {
            return None;
        }
        let mut cur = self.root;
        'descend: loop {
            for &c in &self.nodes[cur].children {
                let n = &self.nodes[c];
                if n.start <= start && end <= n.end && n.start < n.end {
                    cur = c;
                    continue 'descend;
                }
            }
            return Some(cur);
        }
    }

    /// Edge count on the path between two nodes.
    pub fn distance(&self, a: NodeId, b: NodeId) -> usize {
        let depth = |mut id: NodeId| {
            let mut d = 0;
            while let Some(p) = self.nodes[id].parent {
                id = p;
                d += 1;
            }
            d
        };
        let (mut a, mut b) = (a, b);
        let (mut da, mut db) = (depth(a), depth(b));
        let mut dist = 0;
        while da > db {
            a = self.nodes[a].parent.unwrap();
            da -= 1;
            dist += 1;
        }
        while db > da {
            b = self.nodes[b].parent.unwrap();
            db -= 1;
            dist += 1;
        }
        while a != b {
            a = self.nodes[a].parent.unwrap();
            b = self.nodes[b].parent.unwrap();
            dist += 2;
        }
        dist
    }
}

/// Parses `source` with the grammar registered under `language`.
/// Parse errors surface as `ERROR`/`MISSING` nodes, not failures.
pub fn parse_to_tree(source: &str, language: &str) -> Result<SyntaxTree> {
    let grammar = match language {
        "java" => tree_sitter_java::language(),
        other => return Err(Error::UnsupportedLanguage(other.to_string())),
    };
    let mut parser = tree_sitter::Parser::new();
    parser
        .set_language(&grammar)
        .map_err(|e| Error::Numeric(format!("grammar rejected by tree-sitter: {e}")))?;
    let tree = parser
        .parse(source, None)
        .ok_or_else(|| Error::Numeric("tree-sitter returned no tree".into()))?;

    let mut nodes = Vec::new();
    let root = copy_node(tree.root_node(), None, &mut nodes);
    Ok(SyntaxTree { nodes, root })
}

fn copy_node(ts: tree_sitter::Node<'_>, parent: Option<NodeId>, nodes: &mut Vec<SyntaxNode>) -> NodeId {
    let id = nodes.len();
    let kind = if ts.is_missing() {
        "MISSING".to_string()
    } else {
        ts.kind().to_string()
    };
    nodes.push(SyntaxNode {
        kind,
        start: ts.start_byte(),
        end: ts.end_byte(),
        parent,
        children: Vec::new(),
    });
    let mut cursor = ts.walk();
    let children: Vec<NodeId> = ts
        .children(&mut cursor)
        .map(|c| copy_node(c, Some(id), nodes))
        .collect();
    nodes[id].children = children;
    id
}

/// Maps each token to the deepest tree node covering its span. Special
/// tokens (CLS/SEP/PAD) have no AST node and map to `None`.
pub fn align_tokens(tree: &SyntaxTree, toks: &TokenizedCode) -> Result<Vec<Option<NodeId>>> {
    let mut assignment = Vec::with_capacity(toks.len());
    for i in 0..toks.len() {
        if toks.is_special(i) {
            assignment.push(None);
            continue;
        }
        let (s, e) = toks.spans()[i];
        match tree.covering_node(s, e) {
            Some(id) => assignment.push(Some(id)),
            None => {
                return Err(Error::Alignment {
                    index: i,
                    reason: format!("span {s}..{e} outside the parsed byte range"),
                })
            }
        }
    }
    Ok(assignment)
}

/// Sparse symmetric token-pair adjacency with a tree-distance cap.
/// Both orientations of each off-diagonal entry are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAdjacency {
    n: usize,
    distance_cap: usize,
    entries: BTreeSet<(u32, u32)>,
}

impl TokenAdjacency {
    /// Builds an adjacency from explicit pairs (symmetric closure applied).
    pub fn from_pairs(
        n: usize,
        distance_cap: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut entries = BTreeSet::new();
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "adjacency pair ({i}, {j}) out of range for n={n}"
                )));
            }
            entries.insert((i as u32, j as u32));
            entries.insert((j as u32, i as u32));
        }
        Ok(TokenAdjacency {
            n,
            distance_cap,
            entries,
        })
    }

    pub fn empty(n: usize, distance_cap: usize) -> Self {
        TokenAdjacency {
            n,
            distance_cap,
            entries: BTreeSet::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distance_cap(&self) -> usize {
        self.distance_cap
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.contains(&(i as u32, j as u32))
    }

    /// Number of stored ordered pairs (off-diagonal entries count twice).
    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    /// All ordered entries with unit weight, for block reduction.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.entries
            .iter()
            .map(|&(i, j)| (i as usize, j as usize, 1u64))
    }

    /// Ordered entries with i <= j (the file representation).
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries
            .iter()
            .filter(|&&(i, j)| i <= j)
            .map(|&(i, j)| (i as usize, j as usize))
    }
}

/// Connects token pairs whose aligned nodes are within `distance_cap` tree
/// edges of each other (plus the diagonal for every non-special token).
pub fn build_token_adjacency(
    tree: &SyntaxTree,
    toks: &TokenizedCode,
    distance_cap: usize,
) -> Result<TokenAdjacency> {
    if distance_cap < 1 {
        return Err(Error::invalid("distance cap must be >= 1"));
    }
    let assignment = align_tokens(tree, toks)?;
    let mut entries: BTreeSet<(u32, u32)> = BTreeSet::new();

    // ancestor buckets: node -> [(token, hops)] for hops 0..=cap
    let mut buckets: HashMap<NodeId, Vec<(u32, usize)>> = HashMap::new();
    for (tok, node) in assignment.iter().enumerate() {
        let Some(mut id) = *node else { continue };
        entries.insert((tok as u32, tok as u32));
        let mut hops = 0;
        loop {
            buckets.entry(id).or_default().push((tok as u32, hops));
            if hops == distance_cap {
                break;
            }
            match tree.parent(id) {
                Some(p) => {
                    id = p;
                    hops += 1;
                }
                None => break,
            }
        }
    }

    // The minimum of hops_a + hops_b over shared ancestors is the true tree
    // distance (attained at the LCA), so a <= cap check per bucket suffices.
    for bucket in buckets.values_mut() {
        bucket.sort_unstable_by_key(|&(_, hops)| hops);
        for a in 0..bucket.len() {
            let (ta, ha) = bucket[a];
            for &(tb, hb) in &bucket[a + 1..] {
                if ha + hb > distance_cap {
                    break;
                }
                if ta != tb {
                    entries.insert((ta, tb));
                    entries.insert((tb, ta));
                }
            }
        }
    }

    Ok(TokenAdjacency {
        n: toks.len(),
        distance_cap,
        entries,
    })
}

/// Block-pair score matrix produced by summing a sparse n x n matrix over
/// b x b tiles. Exact integer arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockScores {
    num_blocks: usize,
    values: Vec<u64>,
}

impl BlockScores {
    pub fn zeros(num_blocks: usize) -> Self {
        BlockScores {
            num_blocks,
            values: vec![0; num_blocks * num_blocks],
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.values[i * self.num_blocks + j]
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.values[i * self.num_blocks..(i + 1) * self.num_blocks]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }
}

/// Sums entries of a sparse n x n matrix over b x b tiles.
pub fn block_reduce_sum(
    n: usize,
    entries: impl IntoIterator<Item = (usize, usize, u64)>,
    b: usize,
) -> Result<BlockScores> {
    if b == 0 {
        return Err(Error::invalid("block size must be >= 1"));
    }
    let num_blocks = n.div_ceil(b);
    let mut scores = BlockScores::zeros(num_blocks);
    for (i, j, w) in entries {
        assert!(i < n && j < n, "entry ({i}, {j}) out of range for n={n}");
        scores.values[(i / b) * num_blocks + (j / b)] += w;
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{build_vocabulary, tokenize};

    fn toks_of(source: &str) -> TokenizedCode {
        let vocab = build_vocabulary(&[source], 4096).unwrap();
        tokenize(source, &vocab, 4096).unwrap()
    }

    #[test]
    fn parse_while_statement() {
        let tree = parse_to_tree("while(a){b();}", "java").unwrap();
        let root = tree.root();
        assert_eq!(tree.node(root).kind(), "program");
        assert_eq!(tree.children(root).len(), 1);
        let child = tree.children(root)[0];
        assert_eq!(tree.node(child).kind(), "while_statement");
    }

    #[test]
    fn parse_empty_source() {
        let tree = parse_to_tree("", "java").unwrap();
        assert_eq!(tree.children(tree.root()).len(), 0);
    }

    #[test]
    fn unknown_language_is_rejected() {
        assert!(matches!(
            parse_to_tree("x", "klingon"),
            Err(Error::UnsupportedLanguage(_))
        ));
    }

    #[test]
    fn broken_source_yields_error_nodes_not_failure() {
        let tree = parse_to_tree("while ((((", "java").unwrap();
        assert!(tree.has_parse_errors());
    }

    const FIG2_SNIPPET: &str = "\
while (b < d.length && c < e.length) {
    if (d[b] < e[c]) {
        b = b + 1;
    } else {
        c = c + 1;
    }
}
";

    #[test]
    fn fig2_condition_holds_two_length_accesses() {
        let tree = parse_to_tree(FIG2_SNIPPET, "java").unwrap();
        let while_id = tree.find_first("while_statement").expect("while statement");
        let cond = tree.children(while_id)[1];
        assert_eq!(tree.node(cond).kind(), "parenthesized_expression");
        let mut accesses = 0;
        let mut stack = vec![cond];
        while let Some(id) = stack.pop() {
            if tree.node(id).kind() == "field_access" {
                accesses += 1;
            }
            stack.extend(tree.children(id));
        }
        assert_eq!(accesses, 2);
    }

    #[test]
    fn align_maps_while_keyword_to_its_leaf() {
        let source = "while(a){b();}";
        let toks = toks_of(source);
        let tree = parse_to_tree(source, "java").unwrap();
        let assignment = align_tokens(&tree, &toks).unwrap();
        // CLS gets no assignment
        assert!(assignment[0].is_none());
        let while_tok = toks.token_at_start(0).unwrap();
        let node = assignment[while_tok].unwrap();
        assert_eq!(tree.node(node).kind(), "while");
        assert!(tree.node(node).is_leaf());
    }

    #[test]
    fn align_assigns_every_token_by_exhaustive_scan() {
        let source = "int total = 0;\nfor (int i = 0; i < 9; i++) { total += i * 2; }\n";
        let toks = toks_of(source);
        assert!(toks.len() >= 30);
        let tree = parse_to_tree(source, "java").unwrap();
        let assignment = align_tokens(&tree, &toks).unwrap();
        for i in 0..toks.len() {
            if toks.is_special(i) {
                assert!(assignment[i].is_none());
                continue;
            }
            let id = assignment[i].expect("every non-special token aligned");
            // brute-force check: no strictly deeper node also covers the span
            let (s, e) = toks.spans()[i];
            let (ns, ne) = tree.node(id).byte_range();
            assert!(ns <= s && e <= ne);
            for &c in tree.children(id) {
                let (cs, ce) = tree.node(c).byte_range();
                assert!(!(cs <= s && e <= ce && cs < ce), "deeper cover exists");
            }
        }
    }

    #[test]
    fn siblings_connect_at_distance_two() {
        let source = "f(a);";
        let toks = toks_of(source);
        let tree = parse_to_tree(source, "java").unwrap();
        let adj = build_token_adjacency(&tree, &toks, 2).unwrap();
        // "(" and ")" are siblings inside argument_list: distance 2
        let open = toks.token_at_start(1).unwrap();
        let close = toks.token_at_start(3).unwrap();
        assert!(adj.contains(open, close));
    }

    #[test]
    fn disjoint_methods_do_not_connect_at_small_cap() {
        let source = "class A { void f() { int x = 1; } void g() { int y = 2; } }";
        let toks = toks_of(source);
        let tree = parse_to_tree(source, "java").unwrap();
        let adj = build_token_adjacency(&tree, &toks, 2).unwrap();
        let x = toks.token_at_start(source.find("x =").unwrap()).unwrap();
        let y = toks.token_at_start(source.find("y =").unwrap()).unwrap();
        assert!(!adj.contains(x, y));
        assert!(adj.contains(x, x));
    }

    #[test]
    fn fig2_length_tokens_connect_at_cap_six_and_survive_insertion() {
        let toks = toks_of(FIG2_SNIPPET);
        let tree = parse_to_tree(FIG2_SNIPPET, "java").unwrap();

        let first = FIG2_SNIPPET.find("length").unwrap();
        let second = FIG2_SNIPPET[first + 1..].find("length").unwrap() + first + 1;
        let t1 = toks.token_at_start(first).unwrap();
        let t2 = toks.token_at_start(second).unwrap();

        let assignment = align_tokens(&tree, &toks).unwrap();
        assert_eq!(
            tree.distance(assignment[t1].unwrap(), assignment[t2].unwrap()),
            6
        );

        let adj = build_token_adjacency(&tree, &toks, 6).unwrap();
        assert!(adj.contains(t1, t2));
        // one hop short misses them
        let adj5 = build_token_adjacency(&tree, &toks, 5).unwrap();
        assert!(!adj5.contains(t1, t2));

        // insert an unrelated statement after the while loop; the tokens move
        // in the sequence but their tree distance and connection are stable
        let edited = format!("{FIG2_SNIPPET}for (int q = 0; q < 3; q++) {{ b = b - 1; }}\n");
        let toks2 = toks_of(&edited);
        let tree2 = parse_to_tree(&edited, "java").unwrap();
        let u1 = toks2.token_at_start(first).unwrap();
        let u2 = toks2.token_at_start(second).unwrap();
        let adj2 = build_token_adjacency(&tree2, &toks2, 6).unwrap();
        assert!(adj2.contains(u1, u2));

        let assignment2 = align_tokens(&tree2, &toks2).unwrap();
        assert_eq!(
            tree2.distance(assignment2[u1].unwrap(), assignment2[u2].unwrap()),
            6
        );
    }

    #[test]
    fn adjacency_is_symmetric_with_full_diagonal() {
        let source = "int a = f(1, 2) + g(3);";
        let toks = toks_of(source);
        let tree = parse_to_tree(source, "java").unwrap();
        let adj = build_token_adjacency(&tree, &toks, 2).unwrap();
        for (i, j, _) in adj.entries() {
            assert!(adj.contains(j, i));
        }
        for i in 0..toks.len() {
            assert_eq!(adj.contains(i, i), !toks.is_special(i));
        }
    }

    #[test]
    fn cap_zero_is_rejected() {
        let source = "x;";
        let toks = toks_of(source);
        let tree = parse_to_tree(source, "java").unwrap();
        assert!(build_token_adjacency(&tree, &toks, 0).is_err());
    }

    #[test]
    fn reduce_single_entry() {
        let scores = block_reduce_sum(8, vec![(0, 0, 1)], 4).unwrap();
        assert_eq!(scores.get(0, 0), 1);
        assert_eq!(scores.total(), 1);
    }

    #[test]
    fn reduce_full_ones_single_block() {
        let n = 6;
        let all = (0..n).flat_map(|i| (0..n).map(move |j| (i, j, 1u64)));
        let scores = block_reduce_sum(n, all, n).unwrap();
        assert_eq!(scores.num_blocks(), 1);
        assert_eq!(scores.get(0, 0), (n * n) as u64);
    }

    #[test]
    fn reduce_matches_dense_tiling_oracle() {
        // random sparse 64x64, b=8, against a dense tile-sum reference
        let n = 64;
        let b = 8;
        let mut state = 0xfeed_5eed_u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            state
        };
        let mut dense = vec![0u64; n * n];
        let mut entries = Vec::new();
        for _ in 0..300 {
            let i = (next() % n as u64) as usize;
            let j = (next() % n as u64) as usize;
            let w = next() % 5 + 1;
            dense[i * n + j] += w;
            entries.push((i, j, w));
        }
        let scores = block_reduce_sum(n, entries, b).unwrap();
        for bi in 0..n / b {
            for bj in 0..n / b {
                let mut want = 0;
                for s in 0..b {
                    for t in 0..b {
                        want += dense[(bi * b + s) * n + (bj * b + t)];
                    }
                }
                assert_eq!(scores.get(bi, bj), want);
            }
        }
    }

    #[test]
    fn reduce_conserves_total_mass() {
        let source = "while (i < n) { i = i + 1; sum = sum + i; }";
        let toks = toks_of(source);
        let tree = parse_to_tree(source, "java").unwrap();
        let adj = build_token_adjacency(&tree, &toks, 2).unwrap();
        let scores = block_reduce_sum(adj.n(), adj.entries(), 4).unwrap();
        assert_eq!(scores.total(), adj.num_entries() as u64);
    }
}
