//! Masked-prediction datasets and vocabularies over `Ĉ ⊆ C` and `D̂ ⊆ D`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};

use crate::concept_model::{
    ConceptVector, ContextVector, LatentModel, DEFAULT_ENUMERATION_CAP,
};
use crate::error::{Error, Result};
use crate::Seeded;

/// Acceptance probability below which a rejection sampler is refused.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// Attempts at redrawing a mask before giving up on an unreachable `D̂`.
const MASK_RETRIES: usize = 10_000;

/// Binary mask `μ`: bit `i` set means coordinate `i` stays observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mask {
    m: u8,
    keep: u32,
}

impl Mask {
    pub fn new(keep: &[u8]) -> Result<Self> {
        let c = ConceptVector::new(keep)?;
        Ok(Self {
            m: c.m() as u8,
            keep: c.code(),
        })
    }

    pub fn from_bits(m: usize, keep: u32) -> Self {
        let c = ConceptVector::from_code(m, keep);
        Self {
            m: m as u8,
            keep: c.code(),
        }
    }

    pub fn all_ones(m: usize) -> Self {
        Self::from_bits(m, u32::MAX)
    }

    pub fn all_zeros(m: usize) -> Self {
        Self::from_bits(m, 0)
    }

    pub fn m(&self) -> usize {
        self.m as usize
    }

    pub fn keep_bits(&self) -> u32 {
        self.keep
    }

    pub fn observed_count(&self) -> usize {
        self.keep.count_ones() as usize
    }
}

pub fn apply_mask(c: &ConceptVector, mask: &Mask) -> ContextVector {
    debug_assert_eq!(c.m(), mask.m());
    ContextVector::from_parts(c.m(), mask.keep, c.code())
}

/// Each coordinate observed independently with probability `observe_prob`.
pub fn draw_mask<R: Rng + ?Sized>(m: usize, observe_prob: f64, rng: &mut R) -> Mask {
    let mut keep = 0u32;
    for i in 0..m {
        if rng.random::<f64>() < observe_prob {
            keep |= 1 << i;
        }
    }
    Mask::from_bits(m, keep)
}

pub fn sample_mask(m: usize, observe_prob: f64, seed: u64) -> Result<Mask> {
    check_prob(observe_prob)?;
    Ok(draw_mask(m, observe_prob, &mut Seeded::seed_from_u64(seed)))
}

/// Ordered `Ĉ` and `D̂` with dense ids (the one-hot positions).
#[derive(Clone, Debug)]
pub struct Vocab {
    m: usize,
    concepts: Vec<ConceptVector>,
    contexts: Vec<ContextVector>,
    concept_index: HashMap<ConceptVector, usize>,
    context_index: HashMap<ContextVector, usize>,
    masks: Option<Vec<Mask>>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
            && self.concepts == other.concepts
            && self.contexts == other.contexts
            && self.masks == other.masks
    }
}

impl Vocab {
    /// Sorts both sets lexicographically; duplicates are rejected.
    pub fn new(
        m: usize,
        mut concepts: Vec<ConceptVector>,
        mut contexts: Vec<ContextVector>,
    ) -> Result<Self> {
        if concepts.is_empty() || contexts.is_empty() {
            return Err(Error::InvalidArgument("vocabulary sets must be nonempty".into()));
        }
        if let Some(bad) = concepts.iter().find(|c| c.m() != m) {
            return Err(Error::LengthMismatch { expected: m, got: bad.m() });
        }
        if let Some(bad) = contexts.iter().find(|d| d.m() != m) {
            return Err(Error::LengthMismatch { expected: m, got: bad.m() });
        }
        concepts.sort();
        contexts.sort();
        if concepts.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate concept vector".into()));
        }
        if contexts.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate context vector".into()));
        }
        let concept_index = concepts.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let context_index = contexts.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        Ok(Self {
            m,
            concepts,
            contexts,
            concept_index,
            context_index,
            masks: None,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn concepts(&self) -> &[ConceptVector] {
        &self.concepts
    }

    pub fn contexts(&self) -> &[ContextVector] {
        &self.contexts
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn concept(&self, id: usize) -> ConceptVector {
        self.concepts[id]
    }

    pub fn context(&self, id: usize) -> ContextVector {
        self.contexts[id]
    }

    pub fn concept_id(&self, c: &ConceptVector) -> Option<usize> {
        self.concept_index.get(c).copied()
    }

    pub fn context_id(&self, d: &ContextVector) -> Option<usize> {
        self.context_index.get(d).copied()
    }

    /// Generating mask set for restricted-context vocabularies.
    pub fn masks(&self) -> Option<&[Mask]> {
        self.masks.as_deref()
    }

    pub fn is_full(&self) -> bool {
        self.concepts.len() == 1 << self.m && self.contexts.len() as u64 == 3u64.pow(self.m as u32)
    }

    pub fn has_all_concepts(&self) -> bool {
        self.concepts.len() == 1 << self.m
    }

    /// FNV-1a over the ordered labels; identifies the id assignment.
    pub fn ordering_hash(&self) -> u64 {
        let mut text = String::new();
        for c in &self.concepts {
            let _ = write!(text, "{c};");
        }
        text.push('|');
        for d in &self.contexts {
            let _ = write!(text, "{d};");
        }
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// `Ĉ = C`, `D̂ = D`.
pub fn full_vocab(m: usize) -> Result<Vocab> {
    if m > DEFAULT_ENUMERATION_CAP || m == 0 {
        return Err(Error::EnumerationCap {
            m,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    Vocab::new(
        m,
        ConceptVector::all(m).collect(),
        ContextVector::all(m).collect(),
    )
}

/// `D̂ = {apply_mask(c, μ) : c ∈ concepts, μ ∈ masks}`.
pub fn contexts_from_masks(
    m: usize,
    concepts: Vec<ConceptVector>,
    masks: &[Mask],
) -> Result<Vocab> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("mask set is empty".into()));
    }
    if let Some(bad) = masks.iter().find(|mu| mu.m() != m) {
        return Err(Error::LengthMismatch { expected: m, got: bad.m() });
    }
    let contexts: BTreeSet<ContextVector> = concepts
        .iter()
        .flat_map(|c| masks.iter().map(move |mu| apply_mask(c, mu)))
        .collect();
    let mut unique: Vec<Mask> = masks.to_vec();
    unique.sort();
    unique.dedup();
    let mut vocab = Vocab::new(m, concepts, contexts.into_iter().collect())?;
    vocab.masks = Some(unique);
    Ok(vocab)
}

/// Draws `max_masks` masks uniformly from `{0,1}^m` and keeps the distinct
/// ones; `Ĉ` stays full.
pub fn restrict_contexts(m: usize, max_masks: usize, seed: u64) -> Result<Vocab> {
    if max_masks == 0 {
        return Err(Error::InvalidArgument("max_masks must be at least 1".into()));
    }
    if m > DEFAULT_ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            m,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let mut rng = Seeded::seed_from_u64(seed);
    let masks: Vec<Mask> = (0..max_masks).map(|_| draw_mask(m, 0.5, &mut rng)).collect();
    contexts_from_masks(m, ConceptVector::all(m).collect(), &masks)
}

/// Draws from the model and rejects anything outside `Ĉ`.
#[derive(Clone, Debug)]
pub struct RejectionSampler {
    accept: Vec<bool>,
    acceptance: f64,
}

impl RejectionSampler {
    pub fn new(model: &LatentModel, vocab: &Vocab) -> Result<Self> {
        let m = model.m();
        if vocab.has_all_concepts() {
            return Ok(Self {
                accept: Vec::new(),
                acceptance: 1.0,
            });
        }
        let joint = model.exact()?;
        let mut accept = vec![false; 1 << m];
        for c in vocab.concepts() {
            accept[c.code() as usize] = true;
        }
        let acceptance: f64 = joint
            .probs()
            .iter()
            .zip(&accept)
            .filter(|(_, &a)| a)
            .map(|(p, _)| p)
            .sum();
        if acceptance < MIN_ACCEPTANCE {
            return Err(Error::SamplerStall {
                acceptance,
                floor: MIN_ACCEPTANCE,
            });
        }
        Ok(Self { accept, acceptance })
    }

    /// Probability that one model draw lands in `Ĉ`.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    pub fn accepts(&self, c: &ConceptVector) -> bool {
        self.accept.is_empty() || self.accept[c.code() as usize]
    }

    pub fn draw<R: Rng + ?Sized>(&self, model: &LatentModel, rng: &mut R) -> ConceptVector {
        loop {
            let c = model.sample_one(rng);
            if self.accepts(&c) {
                return c;
            }
        }
    }
}

/// Selects `⌈keep_fraction · 2^m⌉` concept vectors uniformly as `Ĉ`;
/// `D̂` holds every masked version of them.
pub fn restrict_concepts(
    model: &LatentModel,
    keep_fraction: f64,
    seed: u64,
) -> Result<(Vocab, RejectionSampler)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction {keep_fraction} must lie in (0, 1]"
        )));
    }
    let m = model.m();
    if m > DEFAULT_ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            m,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let total = 1usize << m;
    let keep = ((keep_fraction * total as f64).ceil() as usize).clamp(1, total);
    let mut rng = Seeded::seed_from_u64(seed);
    let concepts: Vec<ConceptVector> = index::sample(&mut rng, total, keep)
        .into_iter()
        .map(|code| ConceptVector::from_code(m, code as u32))
        .collect();
    let masks: Vec<Mask> = (0..1u32 << m).map(|k| Mask::from_bits(m, k)).collect();
    let vocab = contexts_from_masks(m, concepts, &masks)?;
    let sampler = RejectionSampler::new(model, &vocab)?;
    Ok((vocab, sampler))
}

/// Draws `(context id, concept id)` training pairs.
#[derive(Clone, Debug)]
pub struct PairSampler<'a> {
    model: &'a LatentModel,
    vocab: &'a Vocab,
    rejection: RejectionSampler,
    observe_prob: f64,
}

impl<'a> PairSampler<'a> {
    pub fn new(model: &'a LatentModel, vocab: &'a Vocab, observe_prob: f64) -> Result<Self> {
        check_prob(observe_prob)?;
        if model.m() != vocab.m() {
            return Err(Error::LengthMismatch {
                expected: model.m(),
                got: vocab.m(),
            });
        }
        let rejection = RejectionSampler::new(model, vocab)?;
        Ok(Self {
            model,
            vocab,
            rejection,
            observe_prob,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, usize)> {
        let c = self.rejection.draw(self.model, rng);
        let c_id = self.vocab.concept_id(&c).expect("accepted concept lies in the vocabulary");
        let m = self.vocab.m();
        if let Some(masks) = self.vocab.masks() {
            let mu = masks[rng.random_range(0..masks.len())];
            let d = apply_mask(&c, &mu);
            let d_id = self.vocab.context_id(&d).expect("mask closure");
            return Ok((d_id, c_id));
        }
        for _ in 0..MASK_RETRIES {
            let d = apply_mask(&c, &draw_mask(m, self.observe_prob, rng));
            if let Some(d_id) = self.vocab.context_id(&d) {
                return Ok((d_id, c_id));
            }
        }
        Err(Error::Precondition(format!(
            "no mask of concept {c} lands in the context vocabulary"
        )))
    }

    pub fn fill<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<(usize, usize)>) -> Result<()> {
        out.clear();
        for _ in 0..n {
            out.push(self.draw(rng)?);
        }
        Ok(())
    }
}

/// Fixed list of training pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub pairs: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One pair per line: `d0..d{m-1},c0..c{m-1}` with `-1` for `⋄`.
    pub fn to_csv(&self, vocab: &Vocab) -> String {
        let m = vocab.m();
        let mut out = String::new();
        let header: Vec<String> = (0..m)
            .map(|i| format!("d{i}"))
            .chain((0..m).map(|i| format!("c{i}")))
            .collect();
        out += &header.join(",");
        out.push('\n');
        for &(d_id, c_id) in &self.pairs {
            let d = vocab.context(d_id);
            let c = vocab.concept(c_id);
            let fields: Vec<String> = d
                .entries()
                .iter()
                .map(|e| e.as_i8().to_string())
                .chain(c.to_bits().iter().map(|b| b.to_string()))
                .collect();
            out += &fields.join(",");
            out.push('\n');
        }
        out
    }
}

pub fn build_dataset(
    model: &LatentModel,
    vocab: &Vocab,
    n: usize,
    observe_prob: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let sampler = PairSampler::new(model, vocab, observe_prob)?;
    let mut rng = Seeded::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    sampler.fill(n, &mut rng, &mut pairs)?;
    Ok(Dataset { pairs })
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_model::Entry;

    fn cv(bits: &[u8]) -> ConceptVector {
        ConceptVector::new(bits).unwrap()
    }

    #[test]
    fn masking() {
        let c = cv(&[1, 0, 1]);
        let d = apply_mask(&c, &Mask::new(&[1, 0, 1]).unwrap());
        assert_eq!(d.entries(), vec![Entry::One, Entry::Diamond, Entry::One]);
        assert_eq!(apply_mask(&c, &Mask::all_ones(3)), ContextVector::observing(&c));
        assert_eq!(apply_mask(&c, &Mask::all_zeros(3)), ContextVector::all_diamond(3));
    }

    #[test]
    fn mask_sampling_extremes_and_mean() {
        assert_eq!(sample_mask(5, 1.0, 3).unwrap(), Mask::all_ones(5));
        assert_eq!(sample_mask(5, 0.0, 3).unwrap(), Mask::all_zeros(5));
        assert!(sample_mask(5, 1.5, 3).is_err());
        let mut rng = Seeded::seed_from_u64(17);
        let total: usize = (0..10_000)
            .map(|_| draw_mask(10, 0.5, &mut rng).observed_count())
            .sum();
        let mean = total as f64 / 10_000.0;
        // sd of the mean is sqrt(10 * 0.25 / 10000) = 0.0158
        assert!((mean - 5.0).abs() < 0.15, "{mean}");
    }

    #[test]
    fn full_vocab_sizes_and_bijection() {
        let v1 = full_vocab(1).unwrap();
        assert_eq!(v1.n_concepts(), 2);
        assert_eq!(v1.n_contexts(), 3);
        assert_eq!(v1.context(0), ContextVector::all_diamond(1));
        let v3 = full_vocab(3).unwrap();
        assert_eq!((v3.n_concepts(), v3.n_contexts()), (8, 27));
        let top = cv(&[1, 1, 1]);
        let id = v3.concept_id(&top).unwrap();
        assert_eq!(v3.concept(id), top);
        for (id, d) in v3.contexts().iter().enumerate() {
            assert_eq!(v3.context_id(d), Some(id));
        }
        assert!(full_vocab(21).is_err());
    }

    #[test]
    fn restricted_contexts() {
        let v = contexts_from_masks(3, ConceptVector::all(3).collect(), &[Mask::all_ones(3)]).unwrap();
        assert_eq!(v.n_contexts(), 8);
        assert!(v.contexts().iter().all(|d| d.observed_mask() == 0b111));
        let r = restrict_contexts(10, 50, 4).unwrap();
        assert!(r.masks().unwrap().len() <= 50);
        assert_eq!(r, restrict_contexts(10, 50, 4).unwrap());
        assert!(restrict_contexts(3, 0, 4).is_err());
    }

    #[test]
    fn restricted_concepts_counts() {
        let model = LatentModel::independent(&[0.5; 10]).unwrap();
        let (vocab, sampler) = restrict_concepts(&model, 0.5, 8).unwrap();
        assert_eq!(vocab.n_concepts(), 512);
        assert!((sampler.acceptance() - 0.5).abs() < 1e-12);
        let small = LatentModel::independent(&[0.5; 3]).unwrap();
        let (full, s) = restrict_concepts(&small, 1.0, 8).unwrap();
        assert_eq!(full.n_concepts(), 8);
        assert_eq!(s.acceptance(), 1.0);
        assert!(restrict_concepts(&small, 0.0, 8).is_err());
    }

    #[test]
    fn stalling_sampler_rejected() {
        let model = LatentModel::independent(&[1e-4; 2]).unwrap();
        let vocab = Vocab::new(2, vec![cv(&[1, 1])], vec![ContextVector::all_diamond(2)]).unwrap();
        assert!(matches!(
            RejectionSampler::new(&model, &vocab),
            Err(Error::SamplerStall { .. })
        ));
    }

    #[test]
    fn dataset_pairs_are_consistent() {
        let model = LatentModel::independent(&[0.3, 0.6, 0.5]).unwrap();
        let vocab = full_vocab(3).unwrap();
        let ds = build_dataset(&model, &vocab, 2000, 0.5, 1).unwrap();
        for &(d, c) in &ds.pairs {
            assert!(vocab.context(d).is_consistent(&vocab.concept(c)));
        }
        let observed = build_dataset(&model, &vocab, 100, 1.0, 1).unwrap();
        for &(d, c) in &observed.pairs {
            assert_eq!(vocab.context(d), ContextVector::observing(&vocab.concept(c)));
        }
        assert_eq!(ds, build_dataset(&model, &vocab, 2000, 0.5, 1).unwrap());
    }

    #[test]
    fn csv_export_uses_minus_one_for_diamond() {
        let vocab = full_vocab(2).unwrap();
        let d = ContextVector::new(&[Entry::Diamond, Entry::One]).unwrap();
        let ds = Dataset {
            pairs: vec![(vocab.context_id(&d).unwrap(), vocab.concept_id(&cv(&[0, 1])).unwrap())],
        };
        assert_eq!(ds.to_csv(&vocab), "d0,d1,c0,c1\n-1,1,0,1\n");
    }
}
