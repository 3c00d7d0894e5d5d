use lincon_core::concept_model::{random_cpts, random_dag, ConceptGraph, ConceptVector, ContextVector, GraphKind};
use lincon_core::data::{apply_mask, full_vocab, restrict_concepts, restrict_contexts, PairSampler};
use lincon_core::dynamics::{random_pair_init, run_pair_gd, verify_pair, PairTolerances};
use lincon_core::embedding::{finite_diff_check, init_tables, softmax_in_place};
use lincon_core::geometry::{context_projection, numerical_rank, project, steering_vectors, ProjectionMode, Side, RANK_TOL};
use lincon_core::Seeded;
use proptest::prelude::*;
use rand::SeedableRng;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(32)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn joint_distribution_is_normalized(m in 1usize..=6, seed in any::<u64>()) {
        let model = random_cpts(&random_dag(m, m, seed).unwrap(), 0.3, 0.7, seed ^ 1).unwrap();
        let exact = model.exact().unwrap();
        let total: f64 = exact.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(exact.probs().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn conditioning_renormalizes_the_joint(m in 1usize..=5, seed in any::<u64>(), pick in any::<u32>()) {
        let model = random_cpts(&random_dag(m, m, seed).unwrap(), 0.3, 0.7, seed ^ 2).unwrap();
        let contexts: Vec<ContextVector> = ContextVector::all(m).collect();
        let d = contexts[pick as usize % contexts.len()];
        let cond = model.conditional(&d).unwrap();
        let mass: f64 = ConceptVector::all(m).filter(|c| d.is_consistent(c)).map(|c| model.joint_prob(&c)).sum();
        for c in ConceptVector::all(m) {
            let expected = if d.is_consistent(&c) { model.joint_prob(&c) / mass } else { 0.0 };
            prop_assert!((cond.prob(&c) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_components_are_independent(half in 1usize..=3, seed in any::<u64>()) {
        let m = 2 * half;
        let mut edges = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                if (a < half) == (b < half) && (seed >> (a * m + b)) & 1 == 1 {
                    edges.push((a, b));
                }
            }
        }
        let graph = ConceptGraph::new(m, GraphKind::Dag, edges).unwrap();
        let model = random_cpts(&graph, 0.3, 0.7, seed).unwrap();
        let exact = model.exact().unwrap();
        for i in 0..m {
            for j in 0..m {
                prop_assert_eq!(graph.separated(i, j), graph.separated(j, i));
                if i != j && (i < half) != (j < half) {
                    prop_assert!(graph.separated(i, j));
                    let both: f64 = ConceptVector::all(m).filter(|c| c.get(i) && c.get(j)).map(|c| exact.prob(&c)).sum();
                    prop_assert!((both - exact.marginal_one(i) * exact.marginal_one(j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vocab_ids_round_trip(m in 1usize..=8, max_masks in 1usize..40, seed in any::<u64>()) {
        for vocab in [full_vocab(m).unwrap(), restrict_contexts(m, max_masks, seed).unwrap()] {
            for k in 0..vocab.n_contexts() {
                prop_assert_eq!(vocab.context_id(&vocab.context(k)), Some(k));
            }
            for k in 0..vocab.n_concepts() {
                prop_assert_eq!(vocab.concept_id(&vocab.concept(k)), Some(k));
            }
        }
    }

    #[test]
    fn restricted_contexts_come_from_drawn_masks(m in 1usize..=8, max_masks in 1usize..40, seed in any::<u64>()) {
        let vocab = restrict_contexts(m, max_masks, seed).unwrap();
        let masks = vocab.masks().unwrap();
        prop_assert!(masks.len() <= max_masks);
        for d in vocab.contexts() {
            let keep = d.observed_mask();
            prop_assert!(masks.iter().any(|mu| mu.keep_bits() == keep));
        }
        for c in vocab.concepts() {
            for mu in masks {
                prop_assert!(vocab.context_id(&apply_mask(c, mu)).is_some());
            }
        }
    }

    #[test]
    fn restricted_concepts_are_the_only_draws(m in 2usize..=6, frac in 0.2f64..1.0, seed in any::<u64>()) {
        let model = random_cpts(&random_dag(m, m, seed).unwrap(), 0.3, 0.7, seed ^ 3).unwrap();
        let (vocab, sampler) = restrict_concepts(&model, frac, seed).unwrap();
        prop_assert_eq!(vocab.n_concepts(), ((frac * (1u64 << m) as f64).ceil() as usize).min(1 << m));
        for d in vocab.contexts() {
            prop_assert!(vocab.concepts().iter().any(|c| d.is_consistent(c)));
        }
        let mut rng = Seeded::seed_from_u64(seed);
        for _ in 0..200 {
            let c = sampler.draw(&model, &mut rng);
            prop_assert!(vocab.concept_id(&c).is_some());
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences(m in 2usize..=3, dim in 1usize..=4, seed in any::<u64>()) {
        let model = random_cpts(&random_dag(m, m, seed).unwrap(), 0.3, 0.7, seed ^ 4).unwrap();
        let vocab = full_vocab(m).unwrap();
        let tables = init_tables(&vocab, dim, 1.0, seed ^ 5).unwrap();
        let sampler = PairSampler::new(&model, &vocab, 0.5).unwrap();
        let mut batch = Vec::new();
        sampler.fill(16, &mut Seeded::seed_from_u64(seed ^ 6), &mut batch).unwrap();
        let report = finite_diff_check(&tables, &batch, 1e-5, seed).unwrap();
        prop_assert!(report.max_rel_err <= 1e-5, "relative error {}", report.max_rel_err);
    }

    #[test]
    fn softmax_is_shift_invariant(x in prop::collection::vec(-20.0f64..20.0, 1..12), shift in -100.0f64..100.0) {
        let mut a = x.clone();
        let mut b: Vec<f64> = x.iter().map(|v| v + shift).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent_and_bounds_rank(m in 2usize..=4, dim in 2usize..=8, seed in any::<u64>()) {
        let graph = random_dag(m, m, seed).unwrap();
        let vocab = full_vocab(m).unwrap();
        let tables = init_tables(&vocab, dim, 1.0, seed ^ 7).unwrap();
        for i in 0..m {
            let set = steering_vectors(&tables, &vocab, i, Side::Unembedding).unwrap();
            for mode in [ProjectionMode::DiamondOnly, ProjectionMode::mrf(&graph, i)] {
                let p = context_projection(&tables, &vocab, i, &mode).unwrap();
                let once = project(&set, &p).unwrap();
                let twice = project(&once, &p).unwrap();
                for (a, b) in once.vectors.iter().zip(&twice.vectors) {
                    for (x, y) in a.vector.iter().zip(&b.vector) {
                        prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                    }
                }
                prop_assert!(numerical_rank(&once, RANK_TOL) <= p.rank());
                prop_assert!(p.rank() <= dim);
            }
        }
    }

    #[test]
    fn pair_gd_invariants_hold(dim in 1usize..=6, seed in any::<u64>()) {
        let (u, v, eta) = random_pair_init(dim, seed).unwrap();
        let traj = run_pair_gd(&u, &v, eta, 2000).unwrap();
        let report = verify_pair(&traj, PairTolerances::default()).unwrap();
        for name in ["loss_strictly_decreasing", "cos_non_decreasing", "sum_direction_conserved"] {
            let check = report.get(name).unwrap();
            prop_assert!(check.pass, "{} failed with margin {}", name, check.worst_margin);
        }
    }
}

#[test]
fn sampler_frequencies_match_enumeration() {
    let m = 3;
    let model = random_cpts(&random_dag(m, m, 9).unwrap(), 0.3, 0.7, 10).unwrap();
    let exact = model.exact().unwrap();
    let n = 50_000;
    let mut counts = vec![0usize; 1 << m];
    for c in model.sample(n, 11) {
        counts[c.code() as usize] += 1;
    }
    for c in ConceptVector::all(m) {
        let p = exact.prob(&c);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = counts[c.code() as usize] as f64 / n as f64;
        assert!((freq - p).abs() <= 5.0 * se, "{}: {freq} vs {p}", c.label());
    }
}
