//! Steering vectors, cosine summaries, context projections and cluster
//! exports over trained or constructed tables.

use crate::concept_model::{ConceptGraph, ConceptVector, ContextVector, Entry, LatentModel};
use crate::data::Vocab;
use crate::embedding::RepresentationTables;
use crate::error::{Error, Result};
use crate::linalg::{self, cosine, dot, norm, sub};

/// Vectors at or below this norm are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Default relative singular-value cutoff for projection bases.
pub const BASIS_CUTOFF: f64 = 1e-10;

/// Default relative tolerance for [`numerical_rank`].
pub const RANK_TOL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Unembedding,
    Embedding,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Unembedding => "unembedding",
            Side::Embedding => "embedding",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteeringVector {
    /// Base vector label with the varied coordinate shown as `x`.
    pub label: String,
    pub vector: Vec<f64>,
}

impl SteeringVector {
    pub fn is_zero(&self) -> bool {
        norm(&self.vector) <= ZERO_NORM
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteeringSet {
    pub concept: usize,
    pub side: Side,
    pub vectors: Vec<SteeringVector>,
}

impl SteeringSet {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.vector.len())
    }

    /// Nonzero vectors, the ones cosine statistics use.
    pub fn usable(&self) -> Vec<&[f64]> {
        self.vectors
            .iter()
            .filter(|v| !v.is_zero())
            .map(|v| v.vector.as_slice())
            .collect()
    }

    pub fn zero_count(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_zero()).count()
    }

    /// Mean of all vectors.
    pub fn mean_vector(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for v in &self.vectors {
            for (o, x) in out.iter_mut().zip(&v.vector) {
                *o += x;
            }
        }
        let n = self.vectors.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Mean with the standard error of the mean over `count` values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosSummary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl CosSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::TooFewVectors(0));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            stderr,
            count: n,
        })
    }
}

fn varied_label(base: String, i: usize) -> String {
    base.chars()
        .enumerate()
        .map(|(k, ch)| if k == i { 'x' } else { ch })
        .collect()
}

pub fn steering_vectors(
    tables: &RepresentationTables,
    vocab: &Vocab,
    i: usize,
    side: Side,
) -> Result<SteeringSet> {
    if i >= vocab.m() {
        return Err(Error::InvalidArgument(format!(
            "concept {i} outside 0..{}",
            vocab.m()
        )));
    }
    let mut vectors = Vec::new();
    match side {
        Side::Unembedding => {
            for c in vocab.concepts().iter().filter(|c| !c.get(i)) {
                if let (Some(lo), Some(hi)) = (vocab.concept_id(c), vocab.concept_id(&c.with(i, true))) {
                    vectors.push(SteeringVector {
                        label: varied_label(c.label(), i),
                        vector: sub(tables.g_row(hi), tables.g_row(lo)),
                    });
                }
            }
        }
        Side::Embedding => {
            for d in vocab.contexts().iter().filter(|d| d.entry(i) == Entry::Zero) {
                if let (Some(lo), Some(hi)) = (vocab.context_id(d), vocab.context_id(&d.with(i, Entry::One))) {
                    vectors.push(SteeringVector {
                        label: varied_label(d.label(), i),
                        vector: sub(tables.f_row(hi), tables.f_row(lo)),
                    });
                }
            }
        }
    }
    if vectors.is_empty() {
        return Err(Error::EmptySteeringSet {
            concept: i,
            side: side.as_str().into(),
        });
    }
    Ok(SteeringSet {
        concept: i,
        side,
        vectors,
    })
}

/// Unit vectors, their sum and the sum of their outer products.
struct Moments {
    n: usize,
    sum: Vec<f64>,
    outer: Vec<f64>,
}

impl Moments {
    fn of(vectors: &[&[f64]]) -> Self {
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut sum = vec![0.0; dim];
        let mut outer = vec![0.0; dim * dim];
        for v in vectors {
            let n = norm(v);
            let u: Vec<f64> = v.iter().map(|x| x / n).collect();
            for a in 0..dim {
                sum[a] += u[a];
                for b in 0..dim {
                    outer[a * dim + b] += u[a] * u[b];
                }
            }
        }
        Self {
            n: vectors.len(),
            sum,
            outer,
        }
    }
}

/// Summary from the sum and the sum of squares of `count` values.
fn summary_from_sums(total: f64, total_sq: f64, count: usize) -> Result<CosSummary> {
    if count == 0 {
        return Err(Error::TooFewVectors(0));
    }
    let n = count as f64;
    let mean = (total / n).clamp(-1.0, 1.0);
    let stderr = if count > 1 {
        let var = ((total_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(CosSummary { mean, stderr, count })
}

fn pairwise(set: &SteeringSet, absolute: bool) -> Result<CosSummary> {
    let usable = set.usable();
    if usable.len() < 2 {
        return Err(Error::TooFewVectors(usable.len()));
    }
    if !absolute {
        // Σ_{a<b} cos = (|Σ û|² − n) / 2 and Σ_{a<b} cos² = (|Σ ûûᵀ|²_F − n) / 2.
        let mo = Moments::of(&usable);
        let n = mo.n as f64;
        let total = (dot(&mo.sum, &mo.sum) - n) / 2.0;
        let total_sq = (dot(&mo.outer, &mo.outer) - n) / 2.0;
        return summary_from_sums(total, total_sq, mo.n * (mo.n - 1) / 2);
    }
    let mut values = Vec::with_capacity(usable.len() * (usable.len() - 1) / 2);
    for a in 0..usable.len() {
        for b in a + 1..usable.len() {
            let c = cosine(usable[a], usable[b]).expect("nonzero vectors");
            values.push(c.abs());
        }
    }
    CosSummary::from_values(&values)
}

/// Mean signed cosine over unordered distinct pairs.
pub fn avg_pairwise_cos(set: &SteeringSet) -> Result<CosSummary> {
    pairwise(set, false)
}

pub fn avg_pairwise_abs_cos(set: &SteeringSet) -> Result<CosSummary> {
    pairwise(set, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossMode {
    /// Mean signed cosine over the product of the two sets.
    Signed,
    /// Mean absolute cosine over the product of the two sets.
    Absolute,
    /// One absolute cosine between the two mean vectors.
    MeanVectors,
}

pub fn avg_cross_cos(a: &SteeringSet, b: &SteeringSet, mode: CrossMode) -> Result<CosSummary> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    if mode == CrossMode::MeanVectors {
        let c = cosine(&a.mean_vector(), &b.mean_vector()).ok_or(Error::TooFewVectors(0))?;
        return CosSummary::from_values(&[c.abs()]);
    }
    let (ua, ub) = (a.usable(), b.usable());
    if ua.is_empty() || ub.is_empty() {
        return Err(Error::TooFewVectors(ua.len().min(ub.len())));
    }
    if mode == CrossMode::Signed {
        let (ma, mb) = (Moments::of(&ua), Moments::of(&ub));
        return summary_from_sums(dot(&ma.sum, &mb.sum), dot(&ma.outer, &mb.outer), ma.n * mb.n);
    }
    let mut values = Vec::with_capacity(ua.len() * ub.len());
    for x in &ua {
        for y in &ub {
            values.push(cosine(x, y).expect("nonzero vectors").abs());
        }
    }
    CosSummary::from_values(&values)
}

/// Absolute-cosine matrix between the steering sets of `concepts`.
pub fn concept_heatmap(
    tables: &RepresentationTables,
    vocab: &Vocab,
    concepts: &[usize],
    side: Side,
) -> Result<Vec<Vec<CosSummary>>> {
    if concepts.is_empty() {
        return Err(Error::InvalidArgument("heatmap needs at least one concept".into()));
    }
    let sets = concepts
        .iter()
        .map(|&i| steering_vectors(tables, vocab, i, side))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(sets.len());
    for (a, sa) in sets.iter().enumerate() {
        let mut row = Vec::with_capacity(sets.len());
        for (b, sb) in sets.iter().enumerate() {
            row.push(if a == b {
                if sa.usable().len() >= 2 {
                    avg_pairwise_abs_cos(sa)?
                } else {
                    CosSummary::from_values(&[1.0])?
                }
            } else {
                avg_cross_cos(sa, sb, CrossMode::Absolute)?
            });
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Contexts leaving concept `i` unobserved.
    DiamondOnly,
    /// Additionally observing every neighbor of `i`.
    Mrf { neighbors: Vec<usize> },
}

impl ProjectionMode {
    pub fn mrf(graph: &ConceptGraph, i: usize) -> Self {
        ProjectionMode::Mrf {
            neighbors: graph.neighbors(i),
        }
    }
}

/// Orthonormal basis of a span of embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub dim: usize,
    pub basis: Vec<Vec<f64>>,
}

impl Projection {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.basis {
            let w = dot(b, v);
            for (o, x) in out.iter_mut().zip(b) {
                *o += w * x;
            }
        }
        out
    }
}

/// Contexts spanning `Π_i` under `mode`.
pub fn basis_contexts(vocab: &Vocab, i: usize, mode: &ProjectionMode) -> Vec<ContextVector> {
    vocab
        .contexts()
        .iter()
        .filter(|d| d.entry(i) == Entry::Diamond)
        .filter(|d| match mode {
            ProjectionMode::DiamondOnly => true,
            ProjectionMode::Mrf { neighbors } => {
                neighbors.iter().all(|&j| d.entry(j) != Entry::Diamond)
            }
        })
        .copied()
        .collect()
}

pub fn context_projection(
    tables: &RepresentationTables,
    vocab: &Vocab,
    i: usize,
    mode: &ProjectionMode,
) -> Result<Projection> {
    let contexts = basis_contexts(vocab, i, mode);
    if contexts.is_empty() {
        return Err(Error::Precondition(format!(
            "no context in the vocabulary spans the projection for concept {i}"
        )));
    }
    let rows: Vec<&[f64]> = contexts
        .iter()
        .map(|d| tables.f_row(vocab.context_id(d).expect("context from vocabulary")))
        .collect();
    Ok(Projection {
        dim: tables.dim(),
        basis: linalg::orthonormal_basis(&rows, BASIS_CUTOFF),
    })
}

pub fn project(set: &SteeringSet, projection: &Projection) -> Result<SteeringSet> {
    if set.dim() != projection.dim {
        return Err(Error::DimensionMismatch(set.dim(), projection.dim));
    }
    Ok(SteeringSet {
        concept: set.concept,
        side: set.side,
        vectors: set
            .vectors
            .iter()
            .map(|v| SteeringVector {
                label: v.label.clone(),
                vector: projection.apply(&v.vector),
            })
            .collect(),
    })
}

/// Singular values at least `rel_tol` times the largest.
pub fn numerical_rank(set: &SteeringSet, rel_tol: f64) -> usize {
    let rows: Vec<&[f64]> = set.vectors.iter().map(|v| v.vector.as_slice()).collect();
    linalg::numerical_rank(&rows, rel_tol)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPoint {
    pub label: String,
    pub pc1: f64,
    pub pc2: f64,
}

/// Separation of the rows with `c_i = 1` from those with `c_i = 0` along
/// the difference of the two class means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConceptMargin {
    pub concept: usize,
    /// `min` projection of class 1 minus `max` projection of class 0, in
    /// units of the unit direction; positive means linearly separated.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterExport {
    pub points: Vec<ClusterPoint>,
    pub margins: Vec<Option<ConceptMargin>>,
    /// True when the unembedding rows have (numerically) zero variance.
    pub degenerate: bool,
}

pub fn cluster_export(tables: &RepresentationTables, vocab: &Vocab) -> Result<ClusterExport> {
    let n = vocab.n_concepts();
    if n < 3 {
        return Err(Error::Precondition(format!("need at least 3 concept vectors, got {n}")));
    }
    let dim = tables.dim();
    let mut mean = vec![0.0; dim];
    for c in 0..n {
        for (m, x) in mean.iter_mut().zip(tables.g_row(c)) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = (0..n).map(|c| sub(tables.g_row(c), &mean)).collect();
    let total_var: f64 = centered.iter().map(|r| dot(r, r)).sum::<f64>() / n as f64;
    let degenerate = total_var < 1e-24;

    let refs: Vec<&[f64]> = centered.iter().map(|r| r.as_slice()).collect();
    let components = if degenerate {
        Vec::new()
    } else {
        linalg::orthonormal_basis(&refs, 0.0)
    };
    let coord = |row: &[f64], k: usize| components.get(k).map_or(0.0, |b| dot(b, row));
    let points = (0..n)
        .map(|c| ClusterPoint {
            label: vocab.concept(c).label(),
            pc1: coord(&centered[c], 0),
            pc2: coord(&centered[c], 1),
        })
        .collect();

    let margins = (0..vocab.m())
        .map(|i| {
            let (ones, zeros): (Vec<usize>, Vec<usize>) = (0..n).partition(|&c| vocab.concept(c).get(i));
            if ones.is_empty() || zeros.is_empty() || degenerate {
                return None;
            }
            let class_mean = |ids: &[usize]| {
                let mut acc = vec![0.0; dim];
                for &c in ids {
                    for (a, x) in acc.iter_mut().zip(tables.g_row(c)) {
                        *a += x / ids.len() as f64;
                    }
                }
                acc
            };
            let w = sub(&class_mean(&ones), &class_mean(&zeros));
            let wn = norm(&w);
            if wn <= ZERO_NORM {
                return Some(ConceptMargin { concept: i, margin: 0.0 });
            }
            let proj = |c: usize| dot(tables.g_row(c), &w) / wn;
            let lo1 = ones.iter().map(|&c| proj(c)).fold(f64::INFINITY, f64::min);
            let hi0 = zeros.iter().map(|&c| proj(c)).fold(f64::NEG_INFINITY, f64::max);
            Some(ConceptMargin {
                concept: i,
                margin: lo1 - hi0,
            })
        })
        .collect();
    Ok(ClusterExport {
        points,
        margins,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalityReport {
    pub i: usize,
    pub j: usize,
    /// `|cos(Δg_{c,i}, f(d_{j→c_j}) − f(d_{j→⋄}))|` per admissible `(c, d)`.
    pub embedding_cos: Vec<f64>,
    /// `|cos(Δg_{c,i}, Δg_{c,j})|` per `c`.
    pub steering_cos: Vec<f64>,
    /// Pairs skipped because one of the vectors was zero.
    pub skipped: usize,
}

impl OrthogonalityReport {
    pub fn max_embedding_cos(&self) -> f64 {
        self.embedding_cos.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_steering_cos(&self) -> f64 {
        self.steering_cos.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_steering_cos(&self) -> f64 {
        if self.steering_cos.is_empty() {
            return f64::NAN;
        }
        self.steering_cos.iter().sum::<f64>() / self.steering_cos.len() as f64
    }
}

pub fn orthogonality_check(
    tables: &RepresentationTables,
    vocab: &Vocab,
    model: &LatentModel,
    i: usize,
    j: usize,
) -> Result<OrthogonalityReport> {
    if i == j {
        return Err(Error::Precondition("orthogonality needs two distinct concepts".into()));
    }
    if !model.graph().separated(i, j) {
        return Err(Error::Precondition(format!(
            "concepts {i} and {j} are not separated in the graph"
        )));
    }
    if !vocab.is_full() || vocab.m() != model.m() {
        return Err(Error::Precondition("orthogonality check needs the full vocabulary".into()));
    }
    let g_diff = |c: &ConceptVector, k: usize| {
        let hi = vocab.concept_id(&c.with(k, true)).expect("full vocabulary");
        let lo = vocab.concept_id(&c.with(k, false)).expect("full vocabulary");
        sub(tables.g_row(hi), tables.g_row(lo))
    };
    let mut report = OrthogonalityReport {
        i,
        j,
        embedding_cos: Vec::new(),
        steering_cos: Vec::new(),
        skipped: 0,
    };
    for c in vocab.concepts() {
        let di = g_diff(c, i);
        match cosine(&di, &g_diff(c, j)) {
            Some(v) => report.steering_cos.push(v.abs()),
            None => report.skipped += 1,
        }
        let cj = if c.get(j) { Entry::One } else { Entry::Zero };
        for d in vocab.contexts() {
            if d.entry(i) != Entry::Diamond || d.entry(j) != Entry::Diamond || !d.is_consistent(c) {
                continue;
            }
            let base = tables.f_row(vocab.context_id(d).expect("full vocabulary"));
            let set = tables.f_row(vocab.context_id(&d.with(j, cj)).expect("full vocabulary"));
            match cosine(&di, &sub(set, base)) {
                Some(v) => report.embedding_cos.push(v.abs()),
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_model::GraphKind;
    use crate::data::full_vocab;
    use crate::embedding::{construct_log_odds_tables, exact_match_tables, init_tables};
    use approx::assert_abs_diff_eq;

    fn set(vs: &[&[f64]]) -> SteeringSet {
        SteeringSet {
            concept: 0,
            side: Side::Unembedding,
            vectors: vs
                .iter()
                .map(|v| SteeringVector {
                    label: String::new(),
                    vector: v.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn steering_set_sizes() {
        let v1 = full_vocab(1).unwrap();
        let t1 = init_tables(&v1, 2, 1.0, 0).unwrap();
        let s = steering_vectors(&t1, &v1, 0, Side::Unembedding).unwrap();
        assert_eq!(s.vectors.len(), 1);
        assert_eq!(s.vectors[0].vector, sub(t1.g_row(1), t1.g_row(0)));
        let v3 = full_vocab(3).unwrap();
        let t3 = init_tables(&v3, 3, 1.0, 0).unwrap();
        assert_eq!(steering_vectors(&t3, &v3, 0, Side::Unembedding).unwrap().vectors.len(), 4);
        // embedding: d_i = 0 with the other two free in {⋄,0,1}
        assert_eq!(steering_vectors(&t3, &v3, 0, Side::Embedding).unwrap().vectors.len(), 9);
    }

    #[test]
    fn missing_counterfactuals() {
        let vocab = Vocab::new(
            2,
            vec![ConceptVector::new(&[0, 0]).unwrap(), ConceptVector::new(&[0, 1]).unwrap()],
            vec![ContextVector::all_diamond(2)],
        )
        .unwrap();
        let t = init_tables(&vocab, 2, 1.0, 0).unwrap();
        assert!(matches!(
            steering_vectors(&t, &vocab, 0, Side::Unembedding),
            Err(Error::EmptySteeringSet { concept: 0, .. })
        ));
    }

    #[test]
    fn pairwise_summaries() {
        assert_abs_diff_eq!(avg_pairwise_cos(&set(&[&[1.0, 2.0], &[2.0, 4.0]])).unwrap().mean, 1.0, epsilon = 1e-15);
        assert_eq!(avg_pairwise_cos(&set(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap().mean, 0.0);
        assert!(matches!(avg_pairwise_cos(&set(&[&[1.0, 0.0], &[0.0, 0.0]])), Err(Error::TooFewVectors(1))));
        let v: &[f64] = &[0.3, -1.0];
        assert_abs_diff_eq!(avg_cross_cos(&set(&[v]), &set(&[v]), CrossMode::Signed).unwrap().mean, 1.0, epsilon = 1e-15);
        assert_eq!(
            avg_cross_cos(&set(&[&[1.0, 0.0]]), &set(&[&[0.0, 1.0]]), CrossMode::Absolute).unwrap().mean,
            0.0
        );
        assert!(avg_cross_cos(&set(&[&[1.0]]), &set(&[&[0.0, 1.0]]), CrossMode::Signed).is_err());
    }

    fn brute(a: &[Vec<f64>], b: &[Vec<f64>], same: bool) -> (f64, f64) {
        let mut vals = Vec::new();
        for (x, va) in a.iter().enumerate() {
            for (y, vb) in b.iter().enumerate() {
                if !same || x < y {
                    vals.push(cosine(va, vb).unwrap());
                }
            }
        }
        let s = CosSummary::from_values(&vals).unwrap();
        (s.mean, s.stderr)
    }

    #[test]
    fn moment_summaries_match_brute_force() {
        let vocab = full_vocab(3).unwrap();
        let t = init_tables(&vocab, 4, 1.0, 11).unwrap();
        let u = steering_vectors(&t, &vocab, 1, Side::Unembedding).unwrap();
        let e = steering_vectors(&t, &vocab, 1, Side::Embedding).unwrap();
        let uv: Vec<Vec<f64>> = u.vectors.iter().map(|v| v.vector.clone()).collect();
        let ev: Vec<Vec<f64>> = e.vectors.iter().map(|v| v.vector.clone()).collect();
        let (m, se) = brute(&uv, &uv, true);
        let fast = avg_pairwise_cos(&u).unwrap();
        assert_abs_diff_eq!(fast.mean, m, epsilon = 1e-12);
        assert_abs_diff_eq!(fast.stderr, se, epsilon = 1e-10);
        assert_eq!(fast.count, 6);
        let (m, se) = brute(&uv, &ev, false);
        let fast = avg_cross_cos(&u, &e, CrossMode::Signed).unwrap();
        assert_abs_diff_eq!(fast.mean, m, epsilon = 1e-12);
        assert_abs_diff_eq!(fast.stderr, se, epsilon = 1e-10);
        assert_eq!(fast.count, 4 * 9);
    }

    #[test]
    fn projection_behaviour() {
        // m = 1, f rows = standard basis over (⋄), (0), (1)
        let vocab = full_vocab(1).unwrap();
        let mut f = vec![0.0; 9];
        for k in 0..3 {
            f[k * 4] = 1.0;
        }
        let t = RepresentationTables::from_parts(3, f, vec![0.0; 6]).unwrap();
        let p = context_projection(&t, &vocab, 0, &ProjectionMode::DiamondOnly).unwrap();
        assert_eq!(p.rank(), 1);
        let projected = p.apply(t.f_row(2));
        assert!(norm(&projected) < 1e-15);
        let inside = p.apply(t.f_row(0));
        assert_abs_diff_eq!(inside[0].abs(), 1.0, epsilon = 1e-12);

        let dup = linalg::orthonormal_basis(&[&[1.0, 1.0], &[1.0, 1.0]], BASIS_CUTOFF);
        assert_eq!(dup.len(), 1);
    }

    #[test]
    fn project_is_idempotent() {
        let proj = Projection {
            dim: 3,
            basis: vec![vec![1.0, 0.0, 0.0]],
        };
        let s = set(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[3.0, 1.0, -1.0]]);
        let once = project(&s, &proj).unwrap();
        assert_eq!(once.vectors[0].vector, vec![1.0, 0.0, 0.0]);
        assert!(once.vectors[1].is_zero());
        let twice = project(&once, &proj).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn ranks() {
        assert_eq!(numerical_rank(&set(&[&[1.0, 0.0], &[2.0, 0.0]]), RANK_TOL), 1);
        assert_eq!(numerical_rank(&set(&[&[1.0, 0.0], &[0.0, 1.0]]), RANK_TOL), 2);
    }

    #[test]
    fn clusters() {
        let vocab = full_vocab(2).unwrap();
        // rows ±v with small noise, sign given by c_0
        let mut g = Vec::new();
        for c in vocab.concepts() {
            let s = if c.get(0) { 1.0 } else { -1.0 };
            g.extend([s * 5.0 + 0.01 * c.code() as f64, 0.02 * c.code() as f64]);
        }
        let t = RepresentationTables::from_parts(2, vec![0.0; 18], g).unwrap();
        let export = cluster_export(&t, &vocab).unwrap();
        assert!(!export.degenerate);
        assert!(export.margins[0].unwrap().margin > 9.0);
        for p in &export.points {
            let sign = if p.label.starts_with('1') { 1.0 } else { -1.0 };
            assert!(sign * p.pc1 * export.points[3].pc1.signum() > 0.0);
        }
        let flat = RepresentationTables::from_parts(2, vec![0.0; 18], vec![1.0; 8]).unwrap();
        assert!(cluster_export(&flat, &vocab).unwrap().degenerate);
    }

    #[test]
    fn orthogonality_on_exact_match() {
        let model = LatentModel::independent(&[0.35, 0.6]).unwrap();
        let vocab = full_vocab(2).unwrap();
        let t = exact_match_tables(&model, &vocab, 3).unwrap();
        let r = orthogonality_check(&t, &vocab, &model, 0, 1).unwrap();
        assert!(!r.embedding_cos.is_empty());
        assert!(r.max_embedding_cos() <= 1e-8, "{}", r.max_embedding_cos());
        assert!(orthogonality_check(&t, &vocab, &model, 1, 1).is_err());
        let chain = LatentModel::new(
            ConceptGraph::new(2, GraphKind::Dag, vec![(0, 1)]).unwrap(),
            vec![
                crate::concept_model::Cpt { parents: vec![], probs: vec![0.5] },
                crate::concept_model::Cpt { parents: vec![0], probs: vec![0.3, 0.7] },
            ],
        )
        .unwrap();
        assert!(orthogonality_check(&t, &vocab, &chain, 0, 1).is_err());
    }

    #[test]
    fn log_odds_construction_projection() {
        let model = LatentModel::independent(&[0.8, 0.5]).unwrap();
        let vocab = full_vocab(2).unwrap();
        let t = construct_log_odds_tables(&model, &vocab, 0.5).unwrap();
        let raw = steering_vectors(&t, &vocab, 0, Side::Unembedding).unwrap();
        let raw_min = raw
            .usable()
            .iter()
            .flat_map(|a| raw.usable().into_iter().map(move |b| cosine(a, b).unwrap().abs()))
            .fold(1.0, f64::min);
        assert!(raw_min < 1.0 - 1e-3, "{raw_min}");
        let proj = context_projection(&t, &vocab, 0, &ProjectionMode::DiamondOnly).unwrap();
        let projected = project(&raw, &proj).unwrap();
        let s = avg_pairwise_abs_cos(&projected).unwrap();
        assert_abs_diff_eq!(s.mean, 1.0, epsilon = 1e-10);
        assert_eq!(numerical_rank(&projected, RANK_TOL), 1);
        // zero log-odds: the projected vectors vanish
        let raw1 = steering_vectors(&t, &vocab, 1, Side::Unembedding).unwrap();
        let proj1 = context_projection(&t, &vocab, 1, &ProjectionMode::DiamondOnly).unwrap();
        assert_eq!(project(&raw1, &proj1).unwrap().zero_count(), 2);
        let clean = construct_log_odds_tables(&model, &vocab, 0.0).unwrap();
        let cs = steering_vectors(&clean, &vocab, 0, Side::Unembedding).unwrap();
        assert_eq!(cs.vectors[0].vector, cs.vectors[1].vector);
    }
}
