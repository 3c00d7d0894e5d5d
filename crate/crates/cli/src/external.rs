//! Steering analysis over exported embedding/unembedding vector files.
//!
//! File format: header `label,pair,side,v0,...,v{dim-1}`, one row per vector,
//! `side` 0 or 1. A steering vector is `side 1 − side 0` for one
//! `(label, pair)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use lincon_core::dynamics::orthonormal_frame;
use lincon_core::geometry::{avg_cross_cos, avg_pairwise_abs_cos, CrossMode, Side, SteeringSet, SteeringVector};
use lincon_core::linalg::sub;
use lincon_core::Seeded;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::runner::fmt_f64;

#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no complete counterfactual pair in the file")]
    Empty,
}

fn parse_err(line: usize, msg: impl Into<String>) -> ExternalError {
    ExternalError::Parse { line, msg: msg.into() }
}

/// Parsed vector file: label → pair id → the two sides.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalVectorFile {
    pub dim: usize,
    pub rows: BTreeMap<String, BTreeMap<String, [Option<Vec<f64>>; 2]>>,
}

impl ExternalVectorFile {
    pub fn parse(text: &str) -> Result<Self, ExternalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 || cols[..3] != ["label", "pair", "side"] {
            return Err(parse_err(1, "header must start with label,pair,side,v0"));
        }
        for (k, c) in cols[3..].iter().enumerate() {
            if *c != format!("v{k}") {
                return Err(parse_err(1, format!("expected column v{k}, found {c:?}")));
            }
        }
        let dim = cols.len() - 3;
        let mut rows: BTreeMap<String, BTreeMap<String, [Option<Vec<f64>>; 2]>> = BTreeMap::new();
        for (idx, line) in lines {
            let n = idx + 1;
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != dim + 3 {
                return Err(parse_err(n, format!("expected {} fields, found {}", dim + 3, cells.len())));
            }
            let side: usize = match cells[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(n, format!("side must be 0 or 1, found {other:?}"))),
            };
            let values = cells[3..]
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| parse_err(n, format!("bad value {c:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let slot = rows
                .entry(cells[0].to_string())
                .or_default()
                .entry(cells[1].to_string())
                .or_insert([None, None]);
            if slot[side].is_some() {
                return Err(parse_err(
                    n,
                    format!("duplicate side {side} for label {:?} pair {:?}", cells[0], cells[1]),
                ));
            }
            slot[side] = Some(values);
        }
        Ok(Self { dim, rows })
    }

    /// Steering vectors per label in pair-id order, and the count of pairs
    /// skipped for a missing side.
    pub fn steering(&self) -> (BTreeMap<String, Vec<(String, Vec<f64>)>>, usize) {
        let mut out = BTreeMap::new();
        let mut skipped = 0;
        for (label, pairs) in &self.rows {
            let mut diffs = Vec::new();
            for (pair, sides) in pairs {
                match sides {
                    [Some(s0), Some(s1)] => diffs.push((pair.clone(), sub(s1, s0))),
                    _ => skipped += 1,
                }
            }
            if !diffs.is_empty() {
                out.insert(label.clone(), diffs);
            }
        }
        (out, skipped)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExternalMode {
    /// `|cos|` between the mean steering vectors of two labels.
    Mean,
    /// Mean `|cos|` over all pairs of steering vectors of two labels.
    Pairwise,
}

impl FromStr for ExternalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(ExternalMode::Mean),
            "pairwise" => Ok(ExternalMode::Pairwise),
            other => Err(format!("unknown mode {other:?}; available: mean, pairwise")),
        }
    }
}

impl fmt::Display for ExternalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExternalMode::Mean => "mean",
            ExternalMode::Pairwise => "pairwise",
        })
    }
}

fn to_set(k: usize, diffs: &[(String, Vec<f64>)]) -> SteeringSet {
    SteeringSet {
        concept: k,
        side: Side::Embedding,
        vectors: diffs
            .iter()
            .map(|(pair, v)| SteeringVector {
                label: pair.clone(),
                vector: v.clone(),
            })
            .collect(),
    }
}

fn similarity(a: &SteeringSet, b: &SteeringSet, mode: ExternalMode) -> f64 {
    let cross = match mode {
        ExternalMode::Mean => CrossMode::MeanVectors,
        ExternalMode::Pairwise => CrossMode::Absolute,
    };
    avg_cross_cos(a, b, cross).map(|s| s.mean).unwrap_or(f64::NAN)
}

/// Within-file heatmap: mean `|cos|` between the steering vectors of two
/// labels; the diagonal uses distinct pairs of the same label.
fn heatmap(sets: &[SteeringSet]) -> Vec<Vec<f64>> {
    sets.iter()
        .map(|a| {
            sets.iter()
                .map(|b| {
                    if a.concept == b.concept {
                        avg_pairwise_abs_cos(a).map(|s| s.mean).unwrap_or(f64::NAN)
                    } else {
                        avg_cross_cos(a, b, CrossMode::Absolute).map(|s| s.mean).unwrap_or(f64::NAN)
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchRank {
    pub label: String,
    /// 1-based rank of the same label among all labels of file B.
    pub rank: usize,
    pub matching: f64,
    pub best_other: Option<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalAnalysis {
    pub mode: ExternalMode,
    pub labels_a: Vec<String>,
    pub labels_b: Vec<String>,
    /// `|cos|` between label `i` of A and label `j` of B.
    pub similarity: Vec<Vec<f64>>,
    pub ranks: Vec<MatchRank>,
    pub heatmap_a: Vec<Vec<f64>>,
    pub heatmap_b: Vec<Vec<f64>>,
    pub skipped_a: usize,
    pub skipped_b: usize,
}

impl ExternalAnalysis {
    /// Largest similarity between different labels.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, la) in self.labels_a.iter().enumerate() {
            for (j, lb) in self.labels_b.iter().enumerate() {
                if la != lb {
                    worst = worst.max(self.similarity[i][j]);
                }
            }
        }
        worst
    }

    pub fn similarity_csv(&self) -> String {
        let mut out = String::from("label_a,label_b,abs_cos\n");
        for (i, la) in self.labels_a.iter().enumerate() {
            for (j, lb) in self.labels_b.iter().enumerate() {
                out += &format!("{la},{lb},{}\n", fmt_f64(self.similarity[i][j]));
            }
        }
        out
    }

    pub fn ranks_csv(&self) -> String {
        let mut out = String::from("label,matching_rank,matching_abs_cos,best_other_label,best_other_abs_cos\n");
        for r in &self.ranks {
            let (ol, ov) = match &r.best_other {
                Some((l, v)) => (l.clone(), fmt_f64(*v)),
                None => (String::new(), String::new()),
            };
            out += &format!("{},{},{},{ol},{ov}\n", r.label, r.rank, fmt_f64(r.matching));
        }
        out
    }

    pub fn heatmap_csv(labels: &[String], matrix: &[Vec<f64>]) -> String {
        let mut out = format!("label,{}\n", labels.join(","));
        for (l, row) in labels.iter().zip(matrix) {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            out += &format!("{l},{}\n", cells.join(","));
        }
        out
    }
}

pub fn analyze(
    a: &ExternalVectorFile,
    b: &ExternalVectorFile,
    mode: ExternalMode,
) -> Result<ExternalAnalysis, ExternalError> {
    if a.dim != b.dim {
        return Err(ExternalError::DimensionMismatch(a.dim, b.dim));
    }
    let (sa, skipped_a) = a.steering();
    let (sb, skipped_b) = b.steering();
    if sa.is_empty() || sb.is_empty() {
        return Err(ExternalError::Empty);
    }
    let labels_a: Vec<String> = sa.keys().cloned().collect();
    let labels_b: Vec<String> = sb.keys().cloned().collect();
    let sets_a: Vec<SteeringSet> = sa.values().enumerate().map(|(k, d)| to_set(k, d)).collect();
    let sets_b: Vec<SteeringSet> = sb.values().enumerate().map(|(k, d)| to_set(k, d)).collect();
    let similarity: Vec<Vec<f64>> = sets_a
        .iter()
        .map(|x| sets_b.iter().map(|y| similarity(x, y, mode)).collect())
        .collect();
    let mut ranks = Vec::new();
    for (i, la) in labels_a.iter().enumerate() {
        let Some(j) = labels_b.iter().position(|lb| lb == la) else {
            continue;
        };
        let matching = similarity[i][j];
        let rank = 1 + similarity[i]
            .iter()
            .enumerate()
            .filter(|&(k, &v)| k != j && v >= matching)
            .count();
        let best_other = similarity[i]
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(k, &v)| (labels_b[k].clone(), v));
        ranks.push(MatchRank {
            label: la.clone(),
            rank,
            matching,
            best_other,
        });
    }
    Ok(ExternalAnalysis {
        mode,
        heatmap_a: heatmap(&sets_a),
        heatmap_b: heatmap(&sets_b),
        labels_a,
        labels_b,
        similarity,
        ranks,
        skipped_a,
        skipped_b,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    /// One orthonormal direction per label.
    Orthogonal,
    /// Labels in groups of three share a common component.
    Correlated,
}

impl FromStr for FixtureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orthogonal" => Ok(FixtureKind::Orthogonal),
            "correlated" => Ok(FixtureKind::Correlated),
            other => Err(format!("unknown fixture kind {other:?}; available: orthogonal, correlated")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub labels: usize,
    pub dim: usize,
    pub pairs: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Two synthetic vector files sharing per-label steering directions; pair
/// bases and noise differ between the files.
pub fn synthetic_fixture(spec: &FixtureSpec) -> lincon_core::Result<(String, String)> {
    let groups = spec.labels.div_ceil(3);
    let needed = match spec.kind {
        FixtureKind::Orthogonal => spec.labels,
        FixtureKind::Correlated => spec.labels + groups,
    };
    let frame = orthonormal_frame(spec.dim, needed, spec.seed)?;
    let directions: Vec<Vec<f64>> = (0..spec.labels)
        .map(|k| match spec.kind {
            FixtureKind::Orthogonal => frame[k].clone(),
            FixtureKind::Correlated => {
                let shared = &frame[spec.labels + k / 3];
                frame[k].iter().zip(shared).map(|(a, b)| 0.8 * a + 0.6 * b).collect()
            }
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let write = |stream: u64| {
        let mut rng = Seeded::seed_from_u64(spec.seed ^ stream);
        let mut out = String::from("label,pair,side");
        for k in 0..spec.dim {
            out += &format!(",v{k}");
        }
        out.push('\n');
        let noise_sd = spec.noise / (spec.dim as f64).sqrt();
        for (k, dir) in directions.iter().enumerate() {
            for p in 0..spec.pairs {
                let base: Vec<f64> = (0..spec.dim).map(|_| normal.sample(&mut rng)).collect();
                let shifted: Vec<f64> = base
                    .iter()
                    .zip(dir)
                    .map(|(b, d)| b + d + noise_sd * normal.sample(&mut rng))
                    .collect();
                for (side, v) in [(0, &base), (1, &shifted)] {
                    let cells: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
                    out += &format!("concept_{k:02},pair_{p:03},{side},{}\n", cells.join(","));
                }
            }
        }
        out
    };
    Ok((write(0xa), write(0xb)))
}
