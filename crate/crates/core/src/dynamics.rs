//! Gradient-descent subproblems on exponential losses, run step by step so
//! their monotonicity and alignment properties can be checked exactly.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::concept_model::{Entry, LatentModel};
use crate::data::Vocab;
use crate::embedding::RepresentationTables;
use crate::error::{Error, Result};
use crate::linalg::{add, cosine, dot, norm, sub};
use crate::Seeded;

/// Steps at which full vectors are kept: every step below 100, then a
/// geometric schedule with ratio 1.2, always including the last step.
pub fn log_schedule(total_steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=total_steps.min(99)).collect();
    let mut next = 100.0f64;
    while (next as usize) <= total_steps {
        let t = next as usize;
        if out.last() != Some(&t) {
            out.push(t);
        }
        next *= 1.2;
    }
    if out.last() != Some(&total_steps) {
        out.push(total_steps);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSnapshot {
    pub step: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Per-step scalars of a pair run; index `t` is step `t`, step 0 is the
/// initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTrajectory {
    pub eta: f64,
    pub loss: Vec<f64>,
    pub cos: Vec<f64>,
    pub norm_u: Vec<f64>,
    pub norm_v: Vec<f64>,
    /// `cos(u_t + v_t, u_0 + v_0)`.
    pub sum_cos: Vec<f64>,
    pub snapshots: Vec<PairSnapshot>,
}

impl PairTrajectory {
    pub fn steps(&self) -> usize {
        self.loss.len().saturating_sub(1)
    }

    /// Delimited rows `t,loss,cos,norm_u,norm_v,sum_cos` on the snapshot
    /// schedule.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,loss,cos,norm_u,norm_v,sum_cos\n");
        for s in &self.snapshots {
            let t = s.step;
            out += &format!(
                "{t},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.loss[t], self.cos[t], self.norm_u[t], self.norm_v[t], self.sum_cos[t]
            );
        }
        out
    }
}

/// GD on `L(u, v) = exp(−uᵀv)`.
pub fn run_pair_gd(u0: &[f64], v0: &[f64], eta: f64, steps: usize) -> Result<PairTrajectory> {
    if u0.len() != v0.len() {
        return Err(Error::DimensionMismatch(u0.len(), v0.len()));
    }
    let c0 = cosine(u0, v0)
        .ok_or_else(|| Error::Precondition("initial vectors must be nonzero".into()))?;
    if (c0 + 1.0).abs() <= 1e-12 {
        return Err(Error::Precondition(
            "initial vectors are antiparallel (u0 = -a v0 with a > 0)".into(),
        ));
    }
    let l0 = (-dot(u0, v0)).exp();
    if !(eta > 0.0 && eta < 1.0 / l0) {
        return Err(Error::Precondition(format!(
            "step size {eta} must lie in (0, 1/L(u0, v0) = {:.6e})",
            1.0 / l0
        )));
    }
    let sum0 = add(u0, v0);
    let schedule = log_schedule(steps);
    let mut next_snap = 0;
    let mut u = u0.to_vec();
    let mut v = v0.to_vec();
    let mut traj = PairTrajectory {
        eta,
        loss: Vec::with_capacity(steps + 1),
        cos: Vec::with_capacity(steps + 1),
        norm_u: Vec::with_capacity(steps + 1),
        norm_v: Vec::with_capacity(steps + 1),
        sum_cos: Vec::with_capacity(steps + 1),
        snapshots: Vec::with_capacity(schedule.len()),
    };
    for t in 0..=steps {
        let l = (-dot(&u, &v)).exp();
        traj.loss.push(l);
        traj.cos.push(cosine(&u, &v).unwrap_or(0.0));
        traj.norm_u.push(norm(&u));
        traj.norm_v.push(norm(&v));
        traj.sum_cos.push(cosine(&add(&u, &v), &sum0).unwrap_or(1.0));
        if schedule.get(next_snap) == Some(&t) {
            traj.snapshots.push(PairSnapshot {
                step: t,
                u: u.clone(),
                v: v.clone(),
            });
            next_snap += 1;
        }
        if t == steps {
            break;
        }
        let s = eta * l;
        for k in 0..u.len() {
            let (uk, vk) = (u[k], v[k]);
            u[k] = uk + s * vk;
            v[k] = vk + s * uk;
        }
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub pass: bool,
    pub first_violation: Option<usize>,
    /// Signed slack of the tightest step; negative when violated.
    pub worst_margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out += &format!(
                "{} {} worst_margin={:.6e}{}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.worst_margin,
                c.first_violation
                    .map(|s| format!(" first_violation_step={s}"))
                    .unwrap_or_default()
            );
        }
        out
    }

    fn push_series(&mut self, name: &str, margins: impl Iterator<Item = (usize, f64)>) {
        let mut worst = f64::INFINITY;
        let mut first = None;
        for (step, m) in margins {
            if m < worst {
                worst = m;
            }
            if first.is_none() && !(m >= 0.0) {
                first = Some(step);
            }
        }
        self.checks.push(PropertyCheck {
            name: name.into(),
            pass: first.is_none(),
            first_violation: first,
            worst_margin: worst,
        });
    }

    fn push_scalar(&mut self, name: &str, margin: f64) {
        self.checks.push(PropertyCheck {
            name: name.into(),
            pass: margin >= 0.0,
            first_violation: None,
            worst_margin: margin,
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTolerances {
    /// Slack allowed on each cosine decrease.
    pub cos_slack: f64,
    /// Required final cosine.
    pub target_cos: f64,
    /// Allowed deviation of `cos(u_t + v_t, u_0 + v_0)` from 1.
    pub sum_tol: f64,
}

impl Default for PairTolerances {
    fn default() -> Self {
        Self {
            cos_slack: 1e-12,
            target_cos: 0.99,
            sum_tol: 1e-12,
        }
    }
}

/// Margin for a strict inequality `d > 0`: zero differences count as
/// violations.
fn strict(d: f64) -> f64 {
    if d > 0.0 {
        d
    } else {
        d - f64::MIN_POSITIVE
    }
}

/// Checks the pair-GD properties on every recorded step.
pub fn verify_pair(traj: &PairTrajectory, tol: PairTolerances) -> Result<PropertyReport> {
    let n = traj.loss.len();
    if n < 2 {
        return Err(Error::Precondition("trajectory needs at least two steps".into()));
    }
    let mut report = PropertyReport::default();
    report.push_series(
        "loss_strictly_decreasing",
        (1..n).map(|t| (t, strict(traj.loss[t - 1] - traj.loss[t]))),
    );
    report.push_series(
        "cos_non_decreasing",
        (1..n).map(|t| (t, traj.cos[t] - traj.cos[t - 1] + tol.cos_slack)),
    );
    let last = n - 1;
    let quarter = last - last / 4;
    let growth = (traj.norm_u[last] - 2.0 * traj.norm_u[0]).min(traj.norm_v[last] - 2.0 * traj.norm_v[0]);
    report.push_scalar("norms_double", growth);
    report.push_series(
        "norms_increasing_last_quarter",
        (quarter + 1..n).map(|t| {
            let d = (traj.norm_u[t] - traj.norm_u[t - 1]).min(traj.norm_v[t] - traj.norm_v[t - 1]);
            (t, strict(d))
        }),
    );
    report.push_scalar("final_cos_reaches_target", traj.cos[last] - tol.target_cos);
    report.push_series(
        "sum_direction_conserved",
        (0..n).map(|t| (t, tol.sum_tol - (1.0 - traj.sum_cos[t]).abs())),
    );
    Ok(report)
}

/// Result of GD on `Σ_k exp(−Δ_k·w1) + exp(Δ_k·w0)` with `w1`, `w0` frozen.
/// Random admissible pair init: unit-norm `u0`, `v0` with
/// `cos(u0, v0) ≥ −0.9`, and `η = 0.5 / L(u0, v0)`.
pub fn random_pair_init(dim: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = Seeded::seed_from_u64(seed);
    let unit = |rng: &mut Seeded| loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
        }
    };
    for _ in 0..10_000 {
        let u = unit(&mut rng);
        let v = unit(&mut rng);
        if dot(&u, &v) >= -0.9 {
            let eta = 0.5 * dot(&u, &v).exp();
            return Ok((u, v, eta));
        }
    }
    Err(Error::Precondition("could not draw an admissible pair init".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSuiteRun {
    pub seed: u64,
    pub dim: usize,
    pub eta: f64,
    pub initial_cos: f64,
    pub final_cos: f64,
    pub report: PropertyReport,
}

/// Runs `n` random inits cycling through dimensions {2, 8, 32}.
pub fn pair_suite(n: usize, steps: usize, seed: u64, tol: PairTolerances) -> Result<Vec<PairSuiteRun>> {
    const DIMS: [usize; 3] = [2, 8, 32];
    (0..n)
        .map(|r| {
            let dim = DIMS[r % DIMS.len()];
            let run_seed = seed.wrapping_mul(1_000_003).wrapping_add(r as u64);
            let (u0, v0, eta) = random_pair_init(dim, run_seed)?;
            let traj = run_pair_gd(&u0, &v0, eta, steps)?;
            Ok(PairSuiteRun {
                seed: run_seed,
                dim,
                eta,
                initial_cos: traj.cos[0],
                final_cos: *traj.cos.last().expect("step 0"),
                report: verify_pair(&traj, tol)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedEmbeddingRun {
    pub eta: f64,
    pub halvings: usize,
    pub loss: Vec<f64>,
    /// Per step, `cos(Δ_k, w1 − w0)` for every `k`.
    pub margin_cos: Vec<Vec<f64>>,
    /// Per step, the smallest pairwise `cos(Δ_a, Δ_b)` (1 when `K = 1`).
    pub min_pairwise_cos: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
}

fn fixed_loss(deltas: &[Vec<f64>], w1: &[f64], w0: &[f64]) -> f64 {
    deltas
        .iter()
        .map(|d| (-dot(d, w1)).exp() + dot(d, w0).exp())
        .sum()
}

fn fixed_step(deltas: &mut [Vec<f64>], w1: &[f64], w0: &[f64], eta: f64) {
    for d in deltas.iter_mut() {
        let a = (-dot(d, w1)).exp();
        let b = dot(d, w0).exp();
        for k in 0..d.len() {
            d[k] += eta * (a * w1[k] - b * w0[k]);
        }
    }
}

fn min_pairwise(vs: &[Vec<f64>]) -> f64 {
    let mut best: f64 = 1.0;
    for a in 0..vs.len() {
        for b in a + 1..vs.len() {
            best = best.min(cosine(&vs[a], &vs[b]).unwrap_or(0.0));
        }
    }
    best
}

pub fn run_fixed_embedding(
    inits: &[Vec<f64>],
    w1: &[f64],
    w0: &[f64],
    eta: f64,
    steps: usize,
) -> Result<FixedEmbeddingRun> {
    if inits.is_empty() {
        return Err(Error::InvalidArgument("need at least one steering vector".into()));
    }
    if w1.len() != w0.len() {
        return Err(Error::DimensionMismatch(w1.len(), w0.len()));
    }
    if let Some(bad) = inits.iter().find(|d| d.len() != w1.len()) {
        return Err(Error::DimensionMismatch(bad.len(), w1.len()));
    }
    let margin = sub(w1, w0);
    if norm(&margin) == 0.0 {
        return Err(Error::Precondition("the two context embeddings must differ".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {eta} must be positive")));
    }
    let mut deltas = inits.to_vec();
    let l0 = fixed_loss(&deltas, w1, w0);
    let mut eta = eta;
    let mut halvings = 0;
    loop {
        let mut trial = deltas.clone();
        fixed_step(&mut trial, w1, w0, eta);
        if fixed_loss(&trial, w1, w0) < l0 {
            break;
        }
        eta /= 2.0;
        halvings += 1;
        if halvings > 200 {
            return Err(Error::Precondition("no step size decreases the loss".into()));
        }
    }
    let mut run = FixedEmbeddingRun {
        eta,
        halvings,
        loss: Vec::with_capacity(steps + 1),
        margin_cos: Vec::with_capacity(steps + 1),
        min_pairwise_cos: Vec::with_capacity(steps + 1),
        deltas: Vec::new(),
    };
    for t in 0..=steps {
        run.loss.push(fixed_loss(&deltas, w1, w0));
        run.margin_cos.push(deltas.iter().map(|d| cosine(d, &margin).unwrap_or(0.0)).collect());
        run.min_pairwise_cos.push(min_pairwise(&deltas));
        if t < steps {
            fixed_step(&mut deltas, w1, w0, eta);
        }
    }
    run.deltas = deltas;
    Ok(run)
}

/// Per-step record of the joint subproblem.
/// Checks a fixed-embedding run: strictly decreasing loss, margin cosines
/// non-decreasing after `burn_in` steps, and final alignment at `target_cos`.
pub fn verify_fixed(run: &FixedEmbeddingRun, burn_in: usize, cos_slack: f64, target_cos: f64) -> PropertyReport {
    let mut report = PropertyReport::default();
    report.push_series(
        "loss_strictly_decreasing",
        run.loss.windows(2).enumerate().map(|(t, w)| (t + 1, strict(w[0] - w[1]))),
    );
    report.push_series(
        "margin_cos_non_decreasing_after_burn_in",
        run.margin_cos
            .windows(2)
            .enumerate()
            .skip(burn_in)
            .map(|(t, w)| {
                let worst = w[1]
                    .iter()
                    .zip(&w[0])
                    .map(|(b, a)| b - a + cos_slack)
                    .fold(f64::INFINITY, f64::min);
                (t + 1, worst)
            }),
    );
    let last_pair = *run.min_pairwise_cos.last().expect("step 0");
    let last_margin = run
        .margin_cos
        .last()
        .expect("step 0")
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    report.push_scalar("final_min_pairwise_cos", last_pair - target_cos);
    report.push_scalar("final_min_margin_cos", last_margin - target_cos);
    report
}

/// Reference fixed-embedding instance: orthonormal `w1`, `w0` and `k`
/// Gaussian steering inits with standard deviation `1/√dim`.
pub fn fixed_reference_instance(k: usize, dim: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let frame = orthonormal_frame(dim, 2, seed)?;
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive sd");
    let mut rng = Seeded::seed_from_u64(seed ^ 0x5eed);
    let inits = (0..k)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    Ok((inits, frame[0].clone(), frame[1].clone()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointStep {
    pub step: usize,
    pub loss: f64,
    /// `max |ℓ^{a,i} − ℓ^{b,j}| / max ℓ` over both sides and all `i, j`.
    pub loss_spread: f64,
    /// Relative spread of `⟨v_i, V⟩` across `i`, `V = Σ_j v_j`.
    pub inner_spread: f64,
    /// Mean of `⟨v_i, V⟩` across `i`.
    pub inner_mean: f64,
    pub min_pairwise_cos: f64,
    /// Smallest `cos(u1 − u2, v_i)`.
    pub min_margin_cos: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointRun {
    pub eta: f64,
    pub steps: Vec<JointStep>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub vs: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointConfig {
    pub k: usize,
    pub dim: usize,
    pub c_u: f64,
    pub c_v: f64,
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
}

/// Orthonormal columns from a seeded Gaussian matrix via QR.
pub fn orthonormal_frame(dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count > dim {
        return Err(Error::Precondition(format!(
            "cannot fit {count} orthogonal vectors in dimension {dim}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = Seeded::seed_from_u64(seed);
    let a = DMatrix::from_fn(dim, count, |_, _| normal.sample(&mut rng));
    let q = a.qr().q();
    Ok((0..count).map(|c| q.column(c).iter().copied().collect()).collect())
}

fn joint_record(step: usize, u1: &[f64], u2: &[f64], vs: &[Vec<f64>]) -> JointStep {
    let l1: Vec<f64> = vs.iter().map(|v| (-dot(u1, v)).exp()).collect();
    let l2: Vec<f64> = vs.iter().map(|v| dot(u2, v).exp()).collect();
    let all = l1.iter().chain(&l2);
    let hi = all.clone().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = all.copied().fold(f64::INFINITY, f64::min);
    let dim = u1.len();
    let mut total = vec![0.0; dim];
    for v in vs {
        for (t, x) in total.iter_mut().zip(v) {
            *t += x;
        }
    }
    let inner: Vec<f64> = vs.iter().map(|v| dot(v, &total)).collect();
    let ihi = inner.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ilo = inner.iter().copied().fold(f64::INFINITY, f64::min);
    let imean = inner.iter().sum::<f64>() / inner.len() as f64;
    let delta = sub(u1, u2);
    JointStep {
        step,
        loss: l1.iter().sum::<f64>() + l2.iter().sum::<f64>(),
        loss_spread: (hi - lo) / hi,
        inner_spread: (ihi - ilo) / imean.abs().max(f64::MIN_POSITIVE),
        inner_mean: imean,
        min_pairwise_cos: min_pairwise(vs),
        min_margin_cos: vs
            .iter()
            .map(|v| cosine(&delta, v).unwrap_or(0.0))
            .fold(1.0, f64::min),
    }
}

/// Full-gradient GD on `Σ_i exp(−u1·v_i) + exp(u2·v_i)` from an exactly
/// orthogonal frame with `|u1| = |u2| = c_u` and `|v_i| = c_v`.
pub fn run_joint(cfg: &JointConfig) -> Result<JointRun> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if cfg.dim < cfg.k + 2 {
        return Err(Error::Precondition(format!(
            "dimension {} leaves no room for {} orthogonal vectors",
            cfg.dim,
            cfg.k + 2
        )));
    }
    if !(cfg.c_u > 0.0 && cfg.c_v > 0.0 && cfg.eta > 0.0) {
        return Err(Error::InvalidArgument("norms and step size must be positive".into()));
    }
    let frame = orthonormal_frame(cfg.dim, cfg.k + 2, cfg.seed)?;
    let mut u1: Vec<f64> = frame[0].iter().map(|x| x * cfg.c_u).collect();
    let mut u2: Vec<f64> = frame[1].iter().map(|x| x * cfg.c_u).collect();
    let mut vs: Vec<Vec<f64>> = frame[2..]
        .iter()
        .map(|f| f.iter().map(|x| x * cfg.c_v).collect())
        .collect();
    let mut steps = Vec::with_capacity(cfg.steps + 1);
    steps.push(joint_record(0, &u1, &u2, &vs));
    for t in 1..=cfg.steps {
        let l1: Vec<f64> = vs.iter().map(|v| (-dot(&u1, v)).exp()).collect();
        let l2: Vec<f64> = vs.iter().map(|v| dot(&u2, v).exp()).collect();
        let mut g1 = vec![0.0; cfg.dim];
        let mut g2 = vec![0.0; cfg.dim];
        for (i, v) in vs.iter().enumerate() {
            for k in 0..cfg.dim {
                g1[k] -= l1[i] * v[k];
                g2[k] += l2[i] * v[k];
            }
        }
        for (i, v) in vs.iter_mut().enumerate() {
            for k in 0..cfg.dim {
                v[k] -= cfg.eta * (-l1[i] * u1[k] + l2[i] * u2[k]);
            }
        }
        for k in 0..cfg.dim {
            u1[k] -= cfg.eta * g1[k];
            u2[k] -= cfg.eta * g2[k];
        }
        let rec = joint_record(t, &u1, &u2, &vs);
        if t == 1 && rec.loss >= steps[0].loss {
            return Err(Error::Precondition(format!(
                "step size {} increases the loss on the first step",
                cfg.eta
            )));
        }
        steps.push(rec);
    }
    Ok(JointRun {
        eta: cfg.eta,
        steps,
        u1,
        u2,
        vs,
    })
}

/// Checks the symmetric invariants and final alignment of a joint run.
pub fn verify_joint(run: &JointRun, invariant_tol: f64, target_cos: f64) -> PropertyReport {
    let mut report = PropertyReport::default();
    report.push_series(
        "loss_uniform_across_sides_and_concepts",
        run.steps.iter().map(|s| (s.step, invariant_tol - s.loss_spread)),
    );
    report.push_series(
        "inner_product_uniform",
        run.steps.iter().map(|s| (s.step, invariant_tol - s.inner_spread)),
    );
    report.push_series(
        "inner_product_increasing",
        run.steps.windows(2).map(|w| {
            (w[1].step, strict(w[1].inner_mean - w[0].inner_mean))
        }),
    );
    let last = run.steps.last().expect("at least the initial step");
    report.push_scalar("final_min_pairwise_cos", last.min_pairwise_cos - target_cos);
    report.push_scalar("final_min_margin_cos", last.min_margin_cos - target_cos);
    report
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropC1Pair {
    pub concept_label: String,
    pub context_label: String,
    /// `ln exp(−Δgᵀ Δf) = −Δgᵀ Δf`.
    pub log_lhs: f64,
    pub log_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropC1Report {
    pub concept: usize,
    pub epsilon: f64,
    /// `max |p̂(c|d) − p(c|d)|` over the vocabulary.
    pub measured_error: f64,
    pub min_positive_prob: f64,
    /// False when `measured_error < ε < min_positive_prob` fails; the bound
    /// is then not asserted.
    pub hypothesis_holds: bool,
    pub pairs: Vec<PropC1Pair>,
}

impl PropC1Report {
    pub fn violations(&self) -> usize {
        self.pairs.iter().filter(|p| !(p.log_lhs < p.log_bound)).count()
    }

    pub fn all_pass(&self) -> bool {
        self.hypothesis_holds && !self.pairs.is_empty() && self.violations() == 0
    }

    /// Smallest `log_bound − log_lhs` over the pairs.
    pub fn worst_margin(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.log_bound - p.log_lhs)
            .fold(f64::INFINITY, f64::min)
    }
}

/// The bound `ε² / ((p0 − ε)(p1 − ε))` in log space, or `None` when either
/// factor is non-positive.
pub fn prop_c1_log_bound(eps: f64, p0: f64, p1: f64) -> Option<f64> {
    if p0 <= eps || p1 <= eps || eps <= 0.0 {
        return None;
    }
    Some(2.0 * eps.ln() - (p0 - eps).ln() - (p1 - eps).ln())
}

/// Largest `|p̂(c|d) − p(c|d)|` and smallest positive `p(c|d)` over the
/// vocabulary.
pub fn conditional_fit(tables: &RepresentationTables, vocab: &Vocab, model: &LatentModel) -> Result<(f64, f64)> {
    let mut max_err: f64 = 0.0;
    let mut min_pos = f64::INFINITY;
    for (d_id, d) in vocab.contexts().iter().enumerate() {
        let truth = model.conditional(d)?;
        let pred = tables.predict(d_id);
        for (c_id, c) in vocab.concepts().iter().enumerate() {
            let p = truth.prob(c);
            max_err = max_err.max((pred[c_id] - p).abs());
            if p > 0.0 {
                min_pos = min_pos.min(p);
            }
        }
    }
    Ok((max_err, min_pos))
}

/// Checks `exp(−(g(c_{i→1}) − g(c_{i→0}))ᵀ(f(d_{i→1}) − f(d_{i→0}))) <
/// ε² / ((p(c_{i→0}|d_{i→0}) − ε)(p(c_{i→1}|d_{i→1}) − ε))` for every
/// counterfactual pair with both conditionals positive.
pub fn check_prop_c1(
    tables: &RepresentationTables,
    vocab: &Vocab,
    model: &LatentModel,
    i: usize,
    eps: f64,
) -> Result<PropC1Report> {
    if i >= vocab.m() {
        return Err(Error::InvalidArgument(format!("concept {i} outside 0..{}", vocab.m())));
    }
    let (measured, min_pos) = conditional_fit(tables, vocab, model)?;
    let hypothesis_holds = measured < eps && eps < min_pos;
    let mut report = PropC1Report {
        concept: i,
        epsilon: eps,
        measured_error: measured,
        min_positive_prob: min_pos,
        hypothesis_holds,
        pairs: Vec::new(),
    };
    if !hypothesis_holds {
        return Ok(report);
    }
    for d in vocab.contexts().iter().filter(|d| d.entry(i) == Entry::Zero) {
        let d1 = d.with(i, Entry::One);
        let (Some(d0_id), Some(d1_id)) = (vocab.context_id(d), vocab.context_id(&d1)) else {
            continue;
        };
        let cond0 = model.conditional(d)?;
        let cond1 = model.conditional(&d1)?;
        let df = sub(tables.f_row(d1_id), tables.f_row(d0_id));
        for c in vocab.concepts().iter().filter(|c| c.get(i)) {
            let c0 = c.with(i, false);
            let (Some(c1_id), Some(c0_id)) = (vocab.concept_id(c), vocab.concept_id(&c0)) else {
                continue;
            };
            let p0 = cond0.prob(&c0);
            let p1 = cond1.prob(c);
            if p0 <= 0.0 || p1 <= 0.0 {
                continue;
            }
            let dg = sub(tables.g_row(c1_id), tables.g_row(c0_id));
            let log_bound = prop_c1_log_bound(eps, p0, p1).expect("eps below every positive conditional");
            report.pairs.push(PropC1Pair {
                concept_label: c.label(),
                context_label: d.label(),
                log_lhs: -dot(&dg, &df),
                log_bound,
            });
        }
    }
    Ok(report)
}
