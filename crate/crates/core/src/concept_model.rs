//! Latent graphical model over `m` binary concepts.
//!
//! Concept vectors `c ∈ {0,1}^m` and context vectors `d ∈ {⋄,0,1}^m` are
//! packed into bitmasks (bit `i` holds coordinate `i`), which caps `m` at 32.
//! Exact queries enumerate all `2^m` concept vectors and refuse to run past
//! an enumeration cap.
//!
//! Models are Bayesian networks: a DAG plus one Bernoulli table per node,
//! indexed by the joint assignment of the node's parents. Undirected (MRF)
//! graphs are supported for structural queries only (`neighbors`,
//! `separated`); for a DAG those queries run on the moral graph.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::Seeded;

/// Hard upper bound on `m` imposed by the packed representation.
pub const MAX_CONCEPTS: usize = 32;

/// Default cap for exhaustive `2^m` enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Assignment `c ∈ {0,1}^m` to every concept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConceptVector {
    m: u8,
    bits: u32,
}

impl ConceptVector {
    pub fn new(bits: &[u8]) -> Result<Self> {
        check_m(bits.len())?;
        let mut code = 0u32;
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => code |= 1 << i,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "concept entry {i} is {other}, expected 0 or 1"
                    )))
                }
            }
        }
        Ok(Self {
            m: bits.len() as u8,
            bits: code,
        })
    }

    /// Builds a vector from its bitmask; bits at positions `>= m` are dropped.
    pub fn from_code(m: usize, code: u32) -> Self {
        debug_assert!(m <= MAX_CONCEPTS);
        Self {
            m: m as u8,
            bits: code & low_mask(m),
        }
    }

    pub fn m(&self) -> usize {
        self.m as usize
    }

    /// Bitmask with bit `i` equal to `c_i`.
    pub fn code(&self) -> u32 {
        self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    /// `c_(i→value)`.
    pub fn with(&self, i: usize, value: bool) -> Self {
        let bits = if value {
            self.bits | 1 << i
        } else {
            self.bits & !(1 << i)
        };
        Self { m: self.m, bits }
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.m()).map(|i| self.get(i) as u8).collect()
    }

    /// Rank in lexicographic order with coordinate 0 most significant.
    pub fn lex_rank(&self) -> u64 {
        (0..self.m()).fold(0u64, |acc, i| acc * 2 + self.get(i) as u64)
    }

    /// Compact label such as `101`.
    pub fn label(&self) -> String {
        (0..self.m())
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }

    /// Every vector of length `m` in lexicographic order.
    pub fn all(m: usize) -> impl Iterator<Item = ConceptVector> {
        let n = 1u64 << m;
        (0..n).map(move |rank| {
            let mut bits = 0u32;
            for i in 0..m {
                if rank >> (m - 1 - i) & 1 == 1 {
                    bits |= 1 << i;
                }
            }
            ConceptVector { m: m as u8, bits }
        })
    }
}

impl PartialOrd for ConceptVector {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConceptVector {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.m, self.lex_rank()).cmp(&(other.m, other.lex_rank()))
    }
}

impl fmt::Display for ConceptVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One coordinate of a context vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Entry {
    /// `⋄`: the concept is not conditioned on.
    Diamond,
    Zero,
    One,
}

impl Entry {
    /// Numeric convention used in exported files: `-1` for `⋄`.
    pub fn as_i8(self) -> i8 {
        match self {
            Entry::Diamond => -1,
            Entry::Zero => 0,
            Entry::One => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Entry::Diamond),
            0 => Some(Entry::Zero),
            1 => Some(Entry::One),
            _ => None,
        }
    }
}

/// Context `d ∈ {⋄,0,1}^m`: the observed (core) concepts of a prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ContextVector {
    m: u8,
    observed: u32,
    // subset of `observed`
    values: u32,
}

impl ContextVector {
    pub fn new(entries: &[Entry]) -> Result<Self> {
        check_m(entries.len())?;
        let mut observed = 0;
        let mut values = 0;
        for (i, e) in entries.iter().enumerate() {
            match e {
                Entry::Diamond => {}
                Entry::Zero => observed |= 1 << i,
                Entry::One => {
                    observed |= 1 << i;
                    values |= 1 << i;
                }
            }
        }
        Ok(Self {
            m: entries.len() as u8,
            observed,
            values,
        })
    }

    pub fn from_parts(m: usize, observed: u32, values: u32) -> Self {
        let observed = observed & low_mask(m);
        Self {
            m: m as u8,
            observed,
            values: values & observed,
        }
    }

    pub fn all_diamond(m: usize) -> Self {
        Self::from_parts(m, 0, 0)
    }

    /// The fully observed context equal to `c`.
    pub fn observing(c: &ConceptVector) -> Self {
        Self::from_parts(c.m(), low_mask(c.m()), c.code())
    }

    pub fn m(&self) -> usize {
        self.m as usize
    }

    pub fn observed_mask(&self) -> u32 {
        self.observed
    }

    pub fn value_bits(&self) -> u32 {
        self.values
    }

    pub fn entry(&self, i: usize) -> Entry {
        if self.observed >> i & 1 == 0 {
            Entry::Diamond
        } else if self.values >> i & 1 == 1 {
            Entry::One
        } else {
            Entry::Zero
        }
    }

    pub fn entries(&self) -> Vec<Entry> {
        (0..self.m()).map(|i| self.entry(i)).collect()
    }

    /// `d_(i→entry)`.
    pub fn with(&self, i: usize, entry: Entry) -> Self {
        let bit = 1u32 << i;
        let (observed, values) = match entry {
            Entry::Diamond => (self.observed & !bit, self.values & !bit),
            Entry::Zero => (self.observed | bit, self.values & !bit),
            Entry::One => (self.observed | bit, self.values | bit),
        };
        Self {
            m: self.m,
            observed,
            values,
        }
    }

    /// True when `c` agrees with every observed coordinate.
    pub fn is_consistent(&self, c: &ConceptVector) -> bool {
        (c.code() ^ self.values) & self.observed == 0
    }

    /// Rank in lexicographic order (coordinate 0 most significant, `⋄ < 0 < 1`).
    pub fn lex_rank(&self) -> u64 {
        (0..self.m()).fold(0u64, |acc, i| {
            acc * 3
                + match self.entry(i) {
                    Entry::Diamond => 0,
                    Entry::Zero => 1,
                    Entry::One => 2,
                }
        })
    }

    /// Compact label with `*` standing for `⋄`, e.g. `1*0`.
    pub fn label(&self) -> String {
        (0..self.m())
            .map(|i| match self.entry(i) {
                Entry::Diamond => '*',
                Entry::Zero => '0',
                Entry::One => '1',
            })
            .collect()
    }

    /// Every context of length `m` in lexicographic order.
    pub fn all(m: usize) -> impl Iterator<Item = ContextVector> {
        let n = 3u64.pow(m as u32);
        (0..n).map(move |rank| {
            let mut rest = rank;
            let mut entries = vec![Entry::Diamond; m];
            for i in (0..m).rev() {
                entries[i] = match rest % 3 {
                    0 => Entry::Diamond,
                    1 => Entry::Zero,
                    _ => Entry::One,
                };
                rest /= 3;
            }
            ContextVector::new(&entries).expect("m already validated")
        })
    }
}

impl PartialOrd for ContextVector {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ContextVector {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.m, self.lex_rank()).cmp(&(other.m, other.lex_rank()))
    }
}

impl fmt::Display for ContextVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphKind {
    Dag,
    Mrf,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::Dag => "dag",
            GraphKind::Mrf => "mrf",
        }
    }
}

/// Dependency graph `G_C` over concept ids `0..m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptGraph {
    m: usize,
    kind: GraphKind,
    edges: Vec<(usize, usize)>,
}

impl ConceptGraph {
    pub fn new(m: usize, kind: GraphKind, edges: Vec<(usize, usize)>) -> Result<Self> {
        check_m(m)?;
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &edges {
            if a >= m || b >= m {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) references a node outside 0..{m}"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            let key = match kind {
                GraphKind::Dag => (a, b),
                GraphKind::Mrf => (a.min(b), a.max(b)),
            };
            if !seen.insert(key) || (kind == GraphKind::Dag && seen.contains(&(b, a))) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({a}, {b})")));
            }
        }
        let graph = Self { m, kind, edges };
        if kind == GraphKind::Dag {
            graph.topological_order()?;
        }
        Ok(graph)
    }

    pub fn empty(m: usize, kind: GraphKind) -> Result<Self> {
        Self::new(m, kind, Vec::new())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Parents of `i` in edge-list order (empty for MRFs).
    pub fn parents(&self, i: usize) -> Vec<usize> {
        match self.kind {
            GraphKind::Dag => self
                .edges
                .iter()
                .filter(|&&(_, b)| b == i)
                .map(|&(a, _)| a)
                .collect(),
            GraphKind::Mrf => Vec::new(),
        }
    }

    /// Kahn's algorithm with smallest-id tie breaking.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let mut indegree = vec![0usize; self.m];
        for &(_, b) in &self.edges {
            indegree[b] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..self.m).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.m);
        while let Some(&next) = ready.iter().next() {
            ready.remove(&next);
            order.push(next);
            for &(a, b) in &self.edges {
                if a == next {
                    indegree[b] -= 1;
                    if indegree[b] == 0 {
                        ready.insert(b);
                    }
                }
            }
        }
        if order.len() == self.m {
            Ok(order)
        } else {
            Err(Error::Cyclic)
        }
    }

    /// Adjacency bitmasks of the undirected skeleton; for a DAG, of the
    /// moral graph (co-parents joined, orientation dropped).
    pub fn moral_adjacency(&self) -> Vec<u32> {
        let mut adj = vec![0u32; self.m];
        for &(a, b) in &self.edges {
            adj[a] |= 1 << b;
            adj[b] |= 1 << a;
        }
        if self.kind == GraphKind::Dag {
            for child in 0..self.m {
                let parents = self.parents(child);
                for (k, &p) in parents.iter().enumerate() {
                    for &q in &parents[k + 1..] {
                        adj[p] |= 1 << q;
                        adj[q] |= 1 << p;
                    }
                }
            }
        }
        adj
    }

    /// `ne(i)`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let adj = self.moral_adjacency()[i];
        (0..self.m).filter(|&j| adj >> j & 1 == 1).collect()
    }

    /// Connected-component id per node of the moral graph.
    pub fn components(&self) -> Vec<usize> {
        let adj = self.moral_adjacency();
        let mut comp = vec![usize::MAX; self.m];
        let mut next = 0;
        for start in 0..self.m {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = next;
            while let Some(v) = stack.pop() {
                for w in 0..self.m {
                    if adj[v] >> w & 1 == 1 && comp[w] == usize::MAX {
                        comp[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Whether `i` and `j` lie in different connected components.
    pub fn separated(&self, i: usize, j: usize) -> bool {
        let comp = self.components();
        comp[i] != comp[j]
    }
}

/// Random DAG over the fixed topological order `0..m`: node `i` draws an
/// edge count uniformly from `0..=min(i, max_parents)` and then that many
/// distinct parents among `0..i`.
pub fn random_dag(m: usize, max_parents: usize, seed: u64) -> Result<ConceptGraph> {
    check_m(m)?;
    let mut rng = Seeded::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..m {
        let bound = i.min(max_parents);
        let k = rng.random_range(0..=bound);
        let mut parents = index::sample(&mut rng, i, k).into_vec();
        parents.sort_unstable();
        edges.extend(parents.into_iter().map(|p| (p, i)));
    }
    ConceptGraph::new(m, GraphKind::Dag, edges)
}

/// Bernoulli table for one node: `probs[row] = P(C_i = 1 | parents)`, where
/// bit `k` of `row` is the value of `parents[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpt {
    pub parents: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Cpt {
    fn row(&self, c: &ConceptVector) -> usize {
        self.parents
            .iter()
            .enumerate()
            .fold(0, |row, (k, &p)| row | (c.get(p) as usize) << k)
    }

    /// `P(C_i = 1 | parents as in c)`.
    pub fn prob_one(&self, c: &ConceptVector) -> f64 {
        self.probs[self.row(c)]
    }
}

/// Ground-truth distribution `p` over concept vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentModel {
    graph: ConceptGraph,
    cpts: Vec<Cpt>,
    order: Vec<usize>,
}

impl LatentModel {
    pub fn new(graph: ConceptGraph, cpts: Vec<Cpt>) -> Result<Self> {
        if graph.kind() != GraphKind::Dag {
            return Err(Error::InvalidArgument(
                "a latent model needs a DAG to define its conditional tables".into(),
            ));
        }
        if cpts.len() != graph.m() {
            return Err(Error::LengthMismatch {
                expected: graph.m(),
                got: cpts.len(),
            });
        }
        for (i, cpt) in cpts.iter().enumerate() {
            let mut expected = graph.parents(i);
            let mut got = cpt.parents.clone();
            expected.sort_unstable();
            got.sort_unstable();
            if expected != got {
                return Err(Error::InvalidArgument(format!(
                    "table for node {i} lists parents {:?}, graph has {:?}",
                    cpt.parents, expected
                )));
            }
            let rows = 1usize << cpt.parents.len();
            if cpt.probs.len() != rows {
                return Err(Error::LengthMismatch {
                    expected: rows,
                    got: cpt.probs.len(),
                });
            }
            if let Some(p) = cpt.probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                return Err(Error::InvalidArgument(format!(
                    "table entry {p} for node {i} is outside (0, 1)"
                )));
            }
        }
        let order = graph.topological_order()?;
        Ok(Self { graph, cpts, order })
    }

    /// Edgeless model with `P(C_i = 1) = probs[i]`.
    pub fn independent(probs: &[f64]) -> Result<Self> {
        let graph = ConceptGraph::empty(probs.len(), GraphKind::Dag)?;
        let cpts = probs
            .iter()
            .map(|&p| Cpt {
                parents: Vec::new(),
                probs: vec![p],
            })
            .collect();
        Self::new(graph, cpts)
    }

    pub fn m(&self) -> usize {
        self.graph.m()
    }

    pub fn graph(&self) -> &ConceptGraph {
        &self.graph
    }

    pub fn cpts(&self) -> &[Cpt] {
        &self.cpts
    }

    pub fn joint_prob(&self, c: &ConceptVector) -> f64 {
        debug_assert_eq!(c.m(), self.m());
        self.cpts
            .iter()
            .enumerate()
            .map(|(i, cpt)| {
                let q = cpt.prob_one(c);
                if c.get(i) {
                    q
                } else {
                    1.0 - q
                }
            })
            .product()
    }

    pub fn exact(&self) -> Result<ExactDistribution> {
        self.exact_capped(DEFAULT_ENUMERATION_CAP)
    }

    pub fn exact_capped(&self, cap: usize) -> Result<ExactDistribution> {
        self.check_cap(cap)?;
        let m = self.m();
        let probs = (0..1u64 << m)
            .map(|code| self.joint_prob(&ConceptVector::from_code(m, code as u32)))
            .collect();
        Ok(ExactDistribution { m, probs })
    }

    /// `p(c | d)` for every `c`, by exhaustive enumeration.
    pub fn conditional(&self, d: &ContextVector) -> Result<ExactDistribution> {
        self.conditional_capped(d, DEFAULT_ENUMERATION_CAP)
    }

    pub fn conditional_capped(&self, d: &ContextVector, cap: usize) -> Result<ExactDistribution> {
        if d.m() != self.m() {
            return Err(Error::LengthMismatch {
                expected: self.m(),
                got: d.m(),
            });
        }
        let mut dist = self.exact_capped(cap)?;
        let m = self.m();
        for (code, p) in dist.probs.iter_mut().enumerate() {
            if !d.is_consistent(&ConceptVector::from_code(m, code as u32)) {
                *p = 0.0;
            }
        }
        let z: f64 = dist.probs.iter().sum();
        dist.probs.iter_mut().for_each(|p| *p /= z);
        Ok(dist)
    }

    /// `P(C_i = 1)` from the exact marginal.
    pub fn marginal_one(&self, i: usize) -> Result<f64> {
        let dist = self.exact()?;
        Ok(dist.marginal_one(i))
    }

    /// `ln(p(C_i = 0) / p(C_i = 1))`.
    pub fn marginal_log_odds(&self, i: usize) -> Result<f64> {
        let dist = self.exact()?;
        let one = dist.marginal_one(i);
        let zero = dist.probs.iter().sum::<f64>() - one;
        Ok((zero / one).ln())
    }

    /// One ancestral draw.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> ConceptVector {
        let mut c = ConceptVector::from_code(self.m(), 0);
        for &i in &self.order {
            let q = self.cpts[i].prob_one(&c);
            if rng.random::<f64>() < q {
                c = c.with(i, true);
            }
        }
        c
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<ConceptVector> {
        let mut rng = Seeded::seed_from_u64(seed);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    fn check_cap(&self, cap: usize) -> Result<()> {
        if self.m() > cap {
            Err(Error::EnumerationCap { m: self.m(), cap })
        } else {
            Ok(())
        }
    }

    /// Plain-text serialization with 17 significant digits per parameter.
    pub fn to_text(&self) -> String {
        let mut out = String::from("lincon-model v1\n");
        out += &format!("m {}\nkind {}\nedges {}\n", self.m(), self.graph.kind().as_str(), self.graph.edges().len());
        for (a, b) in self.graph.edges() {
            out += &format!("{a} {b}\n");
        }
        for (i, cpt) in self.cpts.iter().enumerate() {
            let parents = if cpt.parents.is_empty() {
                "-".to_string()
            } else {
                cpt.parents
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            out += &format!("node {i} parents {parents}\n");
            for (row, p) in cpt.probs.iter().enumerate() {
                out += &format!("{row} {p:.16e}\n");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unexpected end of input, expected {what}"),
            })
        };
        let (n, header) = next("header")?;
        if header != "lincon-model v1" {
            return Err(parse_err(n, "unknown header"));
        }
        let m = keyed(next("m")?, "m")?.parse::<usize>().map_err(|e| parse_err(n, e))?;
        let kind = match keyed(next("kind")?, "kind")? {
            "dag" => GraphKind::Dag,
            "mrf" => GraphKind::Mrf,
            _ => return Err(parse_err(n, "kind must be dag or mrf")),
        };
        let (en, edge_line) = next("edges")?;
        let n_edges = keyed((en, edge_line), "edges")?
            .parse::<usize>()
            .map_err(|e| parse_err(en, e))?;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let (ln, line) = next("edge")?;
            let nums = parse_usizes(ln, line)?;
            if nums.len() != 2 {
                return Err(parse_err(ln, "edge needs two node ids"));
            }
            edges.push((nums[0], nums[1]));
        }
        let graph = ConceptGraph::new(m, kind, edges)?;
        let mut cpts = Vec::with_capacity(m);
        for i in 0..m {
            let (ln, line) = next("node")?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "node" || parts[2] != "parents" {
                return Err(parse_err(ln, "expected `node <i> parents <list>`"));
            }
            if parts[1].parse::<usize>().ok() != Some(i) {
                return Err(parse_err(ln, format!("expected node {i}")));
            }
            let parents = if parts[3] == "-" {
                Vec::new()
            } else {
                parts[3]
                    .split(',')
                    .map(|s| s.parse::<usize>().map_err(|e| parse_err(ln, e)))
                    .collect::<Result<Vec<_>>>()?
            };
            let rows = 1usize << parents.len();
            let mut probs = vec![f64::NAN; rows];
            for _ in 0..rows {
                let (rn, row_line) = next("table row")?;
                let mut it = row_line.split_whitespace();
                let row = it
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&r| r < rows)
                    .ok_or_else(|| parse_err(rn, "bad row index"))?;
                let p = it
                    .next()
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| parse_err(rn, "bad parameter"))?;
                probs[row] = p;
            }
            cpts.push(Cpt { parents, probs });
        }
        Self::new(graph, cpts)
    }
}

/// Draws every table parameter uniformly from `[lo, hi]`.
pub fn random_cpts(graph: &ConceptGraph, lo: f64, hi: f64, seed: u64) -> Result<LatentModel> {
    if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "parameter range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1"
        )));
    }
    let mut rng = Seeded::seed_from_u64(seed);
    let cpts = (0..graph.m())
        .map(|i| {
            let parents = graph.parents(i);
            let probs = (0..1usize << parents.len())
                .map(|_| {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..=hi)
                    }
                })
                .collect();
            Cpt { parents, probs }
        })
        .collect();
    LatentModel::new(graph.clone(), cpts)
}

/// Probability vector over all `2^m` concept vectors, indexed by
/// [`ConceptVector::code`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    m: usize,
    probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, c: &ConceptVector) -> f64 {
        self.probs[c.code() as usize]
    }

    pub fn marginal_one(&self, i: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(code, _)| code >> i & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

fn low_mask(m: usize) -> u32 {
    if m >= 32 {
        u32::MAX
    } else {
        (1u32 << m) - 1
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 || m > MAX_CONCEPTS {
        Err(Error::InvalidArgument(format!(
            "concept count {m} must be in 1..={MAX_CONCEPTS}"
        )))
    } else {
        Ok(())
    }
}

fn parse_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn keyed<'a>((n, line): (usize, &'a str), key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| parse_err(n, format!("expected `{key} <value>`")))
}

fn parse_usizes(n: usize, line: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| parse_err(n, e)))
        .collect()
}
