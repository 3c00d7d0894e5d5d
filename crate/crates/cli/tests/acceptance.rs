//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Optional positional arguments filter criteria by substring of their id.

use std::process::ExitCode;
use std::time::Instant;

use lincon::external::{analyze, synthetic_fixture, ExternalMode, ExternalVectorFile, FixtureKind, FixtureSpec};
use lincon::reproduce::{reproduce, ReproduceOptions, ReproduceOutcome, Target};
use lincon::runner::Column;
use lincon::verify::{verify, VerifySettings, VerifyTarget};
use lincon_core::concept_model::{random_cpts, random_dag, ConceptVector, ContextVector};
use lincon_core::data::{full_vocab, PairSampler};
use lincon_core::embedding::{finite_diff_check, init_tables};
use lincon_core::Seeded;
use rand::SeedableRng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn and(self, other: Verdict) -> Verdict {
        Verdict::new(self.pass && other.pass, format!("{}; {}", self.detail, other.detail))
    }
}

fn run_variant(target: Target, variant: &str) -> (ReproduceOutcome, f64) {
    let start = Instant::now();
    let out = reproduce(
        target,
        &ReproduceOptions {
            variant: Some(variant.into()),
            ..Default::default()
        },
    )
    .expect("bundled variant");
    (out, start.elapsed().as_secs_f64())
}

fn col(out: &ReproduceOutcome, variant: &str, c: Column) -> f64 {
    out.variant(variant)
        .and_then(|v| v.outcome.aggregate(c))
        .map_or(f64::NAN, |a| a.mean)
}

fn replicates(out: &ReproduceOutcome, variant: &str) -> usize {
    out.variant(variant).map_or(0, |v| v.outcome.successes().count())
}

fn fmt_cols(out: &ReproduceOutcome, variant: &str) -> String {
    let [u, e, x] = Column::ALL.map(|c| col(out, variant, c));
    format!("{variant}: u {u:.4} e {e:.4} x {x:.4}")
}

fn all_columns_at_least(target: Target, variant: &str, min_reps: usize, floor: f64, budget_s: f64) -> Verdict {
    let (out, secs) = run_variant(target, variant);
    let reps = replicates(&out, variant);
    let ok = reps >= min_reps && Column::ALL.iter().all(|&c| col(&out, variant, c) >= floor) && secs <= budget_s;
    Verdict::new(ok, format!("{} ({reps} reps, {secs:.0} s)", fmt_cols(&out, variant)))
}

fn table1() -> Verdict {
    ["m3", "m4", "m5"]
        .into_iter()
        .map(|v| all_columns_at_least(Target::Table1, v, 5, 0.90, 600.0))
        .reduce(Verdict::and)
        .expect("three variants")
}

fn table2() -> Verdict {
    all_columns_at_least(Target::Table2Adam, "m4", 1, 0.90, f64::INFINITY)
}

fn table3() -> Verdict {
    let (out, secs) = run_variant(Target::Table3Masks, "max_masks_50");
    let reps = replicates(&out, "max_masks_50");
    let u = col(&out, "max_masks_50", Column::Unembedding);
    Verdict::new(
        reps >= 3 && u >= 0.90 && secs <= 1200.0,
        format!("{} ({reps} reps, {secs:.0} s)", fmt_cols(&out, "max_masks_50")),
    )
}

fn table4() -> Verdict {
    let (out, _) = run_variant(Target::Table4Positivity, "keep_0.5");
    let u = col(&out, "keep_0.5", Column::Unembedding);
    let e = col(&out, "keep_0.5", Column::Embedding);
    Verdict::new(u >= 0.85 && u > e, fmt_cols(&out, "keep_0.5"))
}

fn fig7() -> Verdict {
    let out = reproduce(Target::Fig7Dims, &ReproduceOptions::default()).expect("bundled target");
    let us: Vec<f64> = ["dim_7", "dim_5", "dim_4"]
        .iter()
        .map(|v| col(&out, v, Column::Unembedding))
        .collect();
    let floor = us.iter().all(|&u| u >= 0.80);
    let trend = us.windows(2).all(|w| w[1] <= w[0] + 0.05);
    Verdict::new(
        floor && trend,
        format!("u at dims 7/5/4 = {:.4}/{:.4}/{:.4}", us[0], us[1], us[2]),
    )
}

fn fig2() -> Verdict {
    let out = reproduce(Target::Fig2Clusters, &ReproduceOptions::default()).expect("bundled target");
    let a = out.variant("a").expect("variant a");
    let margins: Vec<f64> = a
        .outcome
        .successes()
        .map(|r| {
            r.clusters
                .as_ref()
                .and_then(|c| c.margins.first().copied().flatten())
                .map_or(f64::NEG_INFINITY, |m| m.margin)
        })
        .collect();
    let separated = !margins.is_empty() && margins.iter().all(|&m| m > 0.0);
    let c = out.variant("c").expect("variant c");
    let per_concept: Vec<f64> = c
        .outcome
        .successes()
        .flat_map(|r| (0..3).map(|i| r.cosines.concept(i, Column::Unembedding).map_or(f64::NAN, |s| s.mean)).collect::<Vec<_>>())
        .collect();
    let aligned = per_concept.len() == 3 && per_concept.iter().all(|&v| v >= 0.9);
    Verdict::new(
        separated && aligned,
        format!("variant a c1 margin {margins:.4?}; variant c per-concept u {per_concept:.4?}"),
    )
}

fn fig5() -> Verdict {
    let out = reproduce(Target::Fig5Heatmap, &ReproduceOptions::default()).expect("bundled target");
    let v = out.variant("separated_pairs").expect("variant");
    let mut pass = v.outcome.successes().count() > 0;
    let mut detail = Vec::new();
    for r in v.outcome.successes() {
        let [u, e] = r.heatmap.as_ref().expect("heatmap enabled");
        for (side, h) in [("unembedding", u), ("embedding", e)] {
            let n = h.len();
            let diag = (0..n).map(|i| h[i][i].mean).fold(f64::INFINITY, f64::min);
            let off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| h[i][j].mean)
                .collect();
            let off_mean = off.iter().sum::<f64>() / off.len() as f64;
            pass &= diag >= 0.9 && off_mean <= 0.3;
            detail.push(format!("{side} min diag {diag:.4} off-diag mean {off_mean:.4}"));
        }
    }
    let ortho = verify(VerifyTarget::Thm41Ortho, &VerifySettings::default()).expect("suite runs");
    detail.push(ortho.report.render().lines().next().unwrap_or_default().trim().to_string());
    Verdict::new(pass && ortho.passed(), detail.join("; "))
}

fn gradient_oracle() -> Verdict {
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let m = 2 + (k % 3) as usize;
        let graph = random_dag(m, m, 100 + k).expect("graph");
        let model = random_cpts(&graph, 0.3, 0.7, 200 + k).expect("cpts");
        let vocab = full_vocab(m).expect("vocab");
        let tables = init_tables(&vocab, 2 + (k % 4) as usize, 1.0, 300 + k).expect("tables");
        let sampler = PairSampler::new(&model, &vocab, 0.5).expect("sampler");
        let mut rng = Seeded::seed_from_u64(400 + k);
        let mut batch = Vec::new();
        sampler.fill(32, &mut rng, &mut batch).expect("batch");
        let report = finite_diff_check(&tables, &batch, 1e-5, 500 + k).expect("check");
        worst = worst.max(report.max_rel_err);
    }
    Verdict::new(worst <= 1e-5, format!("max relative error {worst:.2e} over 20 instances"))
}

fn probability_oracle() -> Verdict {
    let n = 200_000;
    let mut worst_z: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for m in 1..=4usize {
        let graph = random_dag(m, m, 10 + m as u64).expect("graph");
        let model = random_cpts(&graph, 0.3, 0.7, 20 + m as u64).expect("cpts");
        let exact = model.exact().expect("exact");
        let mut counts = vec![0usize; 1 << m];
        for c in model.sample(n, 30 + m as u64) {
            counts[c.code() as usize] += 1;
        }
        for c in ConceptVector::all(m) {
            let p = exact.prob(&c);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = counts[c.code() as usize] as f64 / n as f64;
            worst_z = worst_z.max((freq - p).abs() / se);
        }
        for d in ContextVector::all(m) {
            let total: f64 = model.conditional(&d).expect("conditional").probs().iter().sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
        }
    }
    Verdict::new(
        worst_z <= 5.0 && worst_sum <= 1e-12,
        format!("max |z| {worst_z:.2}; max |sum - 1| {worst_sum:.1e}"),
    )
}

fn suite(targets: &[VerifyTarget]) -> Verdict {
    targets
        .iter()
        .map(|&t| {
            let out = verify(t, &VerifySettings::default()).expect("suite runs");
            let failed: Vec<String> = out
                .report
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| c.name.clone())
                .collect();
            let names: Vec<String> = out.report.checks.iter().map(|c| format!("{} {:.2e}", c.name, c.worst_margin)).collect();
            Verdict::new(
                out.passed(),
                format!("{t}: {} checks [{}]{}", out.report.checks.len(), names.join(", "), if failed.is_empty() { String::new() } else { format!(" FAILED {failed:?}") }),
            )
        })
        .reduce(Verdict::and)
        .expect("at least one target")
}

fn fixture(kind: FixtureKind, seed: u64) -> (ExternalVectorFile, ExternalVectorFile) {
    let spec = FixtureSpec {
        kind,
        labels: 27,
        dim: 64,
        pairs: 20,
        noise: 0.05,
        seed,
    };
    let (a, b) = synthetic_fixture(&spec).expect("fixture");
    (ExternalVectorFile::parse(&a).expect("file a"), ExternalVectorFile::parse(&b).expect("file b"))
}

fn external_orthogonal() -> Verdict {
    let (a, b) = fixture(FixtureKind::Orthogonal, 1);
    let r = analyze(&a, &b, ExternalMode::Mean).expect("analysis");
    let off = r.max_off_diagonal();
    Verdict::new(off < 0.1, format!("max off-diagonal |cos| {off:.4} over {} labels", r.labels_a.len()))
}

fn external_correlated() -> Verdict {
    let (a, b) = fixture(FixtureKind::Correlated, 2);
    let mut pass = true;
    let mut detail = Vec::new();
    for mode in [ExternalMode::Mean, ExternalMode::Pairwise] {
        let r = analyze(&a, &b, mode).expect("analysis");
        let first = r.ranks.iter().filter(|x| x.rank == 1).count();
        let gap = r
            .ranks
            .iter()
            .map(|x| x.matching - x.best_other.as_ref().map_or(0.0, |o| o.1))
            .fold(f64::INFINITY, f64::min);
        pass &= r.ranks.len() == 27 && first == 27;
        detail.push(format!("{mode}: matching label first for {first}/27, min gap {gap:.4}"));
    }
    Verdict::new(pass, detail.join("; "))
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("c01_table1_sgd", table1),
        ("c02_table2_adam_m4", table2),
        ("c03_table3_max_masks_50", table3),
        ("c04_table4_positivity", table4),
        ("c05_fig7_dimension_sweep", fig7),
        ("c06_fig2_clusters", fig2),
        ("c07_fig5_orthogonality", fig5),
        ("c08_gradient_finite_differences", gradient_oracle),
        ("c09_exact_probability_oracle", probability_oracle),
        ("c10_pair_dynamics_suite", || suite(&[VerifyTarget::ThmC2])),
        ("c11_fixed_and_joint_dynamics", || suite(&[VerifyTarget::Thm33, VerifyTarget::Thm35])),
        ("c12_constructive_geometry", || suite(&[VerifyTarget::Thm31Construct, VerifyTarget::ThmB2Rank])),
        ("c13_exponential_bound", || suite(&[VerifyTarget::PropC1])),
        ("ext1_orthogonal_fixture", external_orthogonal),
        ("ext2_correlated_fixture_ranking", external_correlated),
    ];
    let mut failures = 0;
    let mut ran = 0;
    for (id, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!v.pass);
        println!("{tag} {id} [{:.1} s] {}", start.elapsed().as_secs_f64(), v.detail);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
