//! Bundled experiment targets with published comparison values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::ExperimentConfig;
use crate::runner::{
    aggregate_header, aggregate_row, errors_csv, fmt_f64, replicate_status, run_experiment, write_replicate,
    Column, OutputSink, RunOutcome,
};
use crate::verify::UnknownTarget;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Target {
    Table1,
    Table2Adam,
    Table3Masks,
    Table4Positivity,
    Fig2Clusters,
    Fig7Dims,
    Fig5Heatmap,
}

impl Target {
    pub const ALL: [Target; 7] = [
        Target::Table1,
        Target::Table2Adam,
        Target::Table3Masks,
        Target::Table4Positivity,
        Target::Fig2Clusters,
        Target::Fig7Dims,
        Target::Fig5Heatmap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Table1 => "table1",
            Target::Table2Adam => "table2-adam",
            Target::Table3Masks => "table3-masks",
            Target::Table4Positivity => "table4-positivity",
            Target::Fig2Clusters => "fig2-clusters",
            Target::Fig7Dims => "fig7-dims",
            Target::Fig5Heatmap => "fig5-heatmap",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = UnknownTarget;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| UnknownTarget {
            name: s.into(),
            available: Self::ALL.map(|t| t.name()).join(", "),
        })
    }
}

/// Published mean and standard error for one cosine column.
pub type Published = Option<(f64, f64)>;

#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
    /// Unembedding, embedding, cross.
    pub published: [Published; 3],
}

struct Recipe {
    m: usize,
    dim: usize,
    replicates: usize,
    optimizer: &'static str,
    lr: f64,
    init_scale: f64,
    steps: usize,
    probe_every: usize,
    data: String,
    edges: &'static str,
    metrics: &'static str,
}

impl Recipe {
    fn sgd(m: usize, steps: usize, replicates: usize) -> Self {
        Self {
            m,
            dim: m,
            replicates,
            optimizer: "sgd",
            lr: 0.1,
            init_scale: 1.0,
            steps,
            probe_every: 1000,
            data: "vocab = \"full\"".into(),
            edges: "",
            metrics: "",
        }
    }

    fn adam(m: usize, lr: f64, steps: usize, replicates: usize) -> Self {
        Self {
            optimizer: "adam",
            lr,
            ..Self::sgd(m, steps, replicates)
        }
    }

    fn toml(&self) -> String {
        format!(
            r#"schema_version = 1
replicates = {}
seed = 1

[model]
m = {}
{}

[data]
{}

[train]
optimizer = "{}"
learning_rate = {}
batch_size = 100
max_steps = {}
stop_window = 0
log_every = 100
init_scale = {:?}
dim = {}

[metrics]
probe_every = {}
{}
"#,
            self.replicates,
            self.m,
            self.edges,
            self.data,
            self.optimizer,
            self.lr,
            self.steps,
            self.init_scale,
            self.dim,
            self.probe_every,
            self.metrics
        )
    }

    fn variant(self, name: &str, published: [Published; 3]) -> Variant {
        Variant {
            name: name.into(),
            config: ExperimentConfig::from_toml(&self.toml()).expect("bundled config is valid"),
            published,
        }
    }
}

fn pub3(u: (f64, f64), e: (f64, f64), x: (f64, f64)) -> [Published; 3] {
    [Some(u), Some(e), Some(x)]
}

/// Bundled variants for `target`.
pub fn variants(target: Target) -> Vec<Variant> {
    match target {
        Target::Table1 => vec![
            Recipe::sgd(3, 20_000, 5).variant("m3", pub3((0.972, 0.006), (0.982, 0.005), (0.980, 0.005))),
            Recipe::sgd(4, 40_000, 5).variant("m4", pub3((0.975, 0.005), (0.971, 0.005), (0.973, 0.005))),
            Recipe::sgd(5, 60_000, 5).variant("m5", pub3((0.988, 0.004), (0.981, 0.004), (0.984, 0.004))),
        ],
        Target::Table2Adam => vec![
            Recipe::adam(3, 0.001, 20_000, 5).variant("m3", pub3((0.910, 0.015), (0.923, 0.013), (0.926, 0.012))),
            Recipe::adam(4, 0.001, 20_000, 5).variant("m4", pub3((0.972, 0.005), (0.959, 0.005), (0.965, 0.005))),
        ],
        Target::Table3Masks => [(50, (0.974, 0.009), (0.946, 0.014), (0.959, 0.011)), (100, (0.957, 0.009), (0.915, 0.013), (0.934, 0.011))]
            .into_iter()
            .map(|(n, u, e, x)| {
                let mut r = Recipe::adam(10, 0.01, 20_000, 3);
                r.data = format!("vocab = \"max_masks\"\nmax_masks = {n}");
                r.probe_every = 2000;
                r.variant(&format!("max_masks_{n}"), pub3(u, e, x))
            })
            .collect(),
        Target::Table4Positivity => {
            let mut r = Recipe::adam(10, 0.01, 20_000, 1);
            r.data = "vocab = \"keep_fraction\"\nkeep_fraction = 0.5".into();
            r.probe_every = 2000;
            vec![r.variant("keep_0.5", pub3((0.951, 0.011), (0.777, 0.010), (0.855, 0.011)))]
        }
        Target::Fig2Clusters => [("a", "[\"100\"]"), ("b", "[\"110\"]"), ("c", "")]
            .into_iter()
            .map(|(name, masks)| {
                let mut r = Recipe::sgd(3, 20_000, 1);
                if !masks.is_empty() {
                    r.data = format!("vocab = \"masks\"\nmasks = {masks}");
                }
                r.metrics = "clusters = true";
                r.variant(name, [None, None, None])
            })
            .collect(),
        Target::Fig7Dims => [7, 5, 4]
            .into_iter()
            .map(|dim| {
                let mut r = Recipe::adam(7, 0.01, 20_000, 2);
                r.dim = dim;
                r.variant(&format!("dim_{dim}"), [None, None, None])
            })
            .collect(),
        Target::Fig5Heatmap => {
            let mut r = Recipe::sgd(4, 20_000, 1);
            r.dim = 8;
            r.init_scale = 0.01;
            r.edges = "edges = [[0, 1], [2, 3]]";
            r.metrics = "heatmap = true";
            vec![r.variant("separated_pairs", [None, None, None])]
        }
    }
}

#[derive(Debug)]
pub struct VariantOutcome {
    pub name: String,
    pub published: [Published; 3],
    pub outcome: RunOutcome,
}

#[derive(Debug)]
pub struct ReproduceOutcome {
    pub target: Target,
    pub variants: Vec<VariantOutcome>,
}

impl ReproduceOutcome {
    pub fn variant(&self, name: &str) -> Option<&VariantOutcome> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn failures(&self) -> usize {
        self.variants.iter().map(|v| v.outcome.errors().count()).sum()
    }

    /// Aggregate table with the published values beside each column.
    pub fn table_csv(&self) -> String {
        let mut out = format!("variant,{}", aggregate_header());
        for c in Column::ALL {
            out += &format!(",published_{0},published_{0}_se", c.as_str());
        }
        out.push('\n');
        for v in &self.variants {
            out += &format!("{},{}", v.name, aggregate_row(&v.outcome));
            for p in v.published {
                match p {
                    Some((mean, se)) => out += &format!(",{mean},{se}"),
                    None => out += ",,",
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReproduceOptions {
    /// Run only the named variant.
    pub variant: Option<String>,
    pub replicates: Option<usize>,
    pub max_steps: Option<usize>,
}

pub fn reproduce(target: Target, opts: &ReproduceOptions) -> Result<ReproduceOutcome, String> {
    let mut chosen = variants(target);
    if let Some(name) = &opts.variant {
        chosen.retain(|v| &v.name == name);
        if chosen.is_empty() {
            let names: Vec<String> = variants(target).into_iter().map(|v| v.name).collect();
            return Err(format!("target {target} has no variant {name:?}; available: {}", names.join(", ")));
        }
    }
    let variants = chosen
        .into_iter()
        .map(|mut v| {
            if let Some(n) = opts.replicates {
                v.config.replicates = n;
            }
            if let Some(n) = opts.max_steps {
                v.config.train.max_steps = n;
            }
            VariantOutcome {
                name: v.name,
                published: v.published,
                outcome: run_experiment(&v.config),
            }
        })
        .collect();
    Ok(ReproduceOutcome { target, variants })
}

/// Writes `table.csv`, per-variant run directories and the manifest.
pub fn write_reproduce(out: &ReproduceOutcome, dir: &Path) -> std::io::Result<PathBuf> {
    let mut sink = OutputSink::new(dir)?;
    let mut config_text = String::new();
    let mut reps = Vec::new();
    for v in &out.variants {
        let text = v.outcome.config.to_toml();
        config_text += &format!("# variant {}\n{text}\n", v.name);
        let prefix = format!("{}/", v.name);
        sink.write(&format!("{prefix}config.toml"), &text)?;
        for r in v.outcome.successes() {
            write_replicate(&mut sink, &prefix, r, v.outcome.config.metrics.checkpoint)?;
        }
        sink.write(
            &format!("{prefix}aggregate.csv"),
            format!("{}\n{}\n", aggregate_header(), aggregate_row(&v.outcome)),
        )?;
        sink.write(&format!("{prefix}errors.csv"), errors_csv(v.outcome.errors()))?;
        reps.extend(replicate_status(&v.outcome));
    }
    sink.write("table.csv", out.table_csv())?;
    if out.target == Target::Fig7Dims {
        sink.write("dims.csv", dims_csv(out))?;
    }
    sink.finish(&config_text, &reps)
}

/// Unembedding aggregate per hidden dimension, largest first.
pub fn dims_csv(out: &ReproduceOutcome) -> String {
    let mut s = String::from("dim,unembedding,unembedding_se,embedding,embedding_se\n");
    for v in &out.variants {
        let cell = |c| {
            v.outcome
                .aggregate(c)
                .map(|a| format!("{},{}", fmt_f64(a.mean), fmt_f64(a.stderr)))
                .unwrap_or_else(|| ",".into())
        };
        s += &format!(
            "{},{},{}\n",
            v.outcome.config.dim(),
            cell(Column::Unembedding),
            cell(Column::Embedding)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_target_has_valid_variants() {
        for t in Target::ALL {
            let vs = variants(t);
            assert!(!vs.is_empty());
            for v in vs {
                v.config.validate().unwrap();
            }
        }
        assert!("table9".parse::<Target>().unwrap_err().available.contains("fig7-dims"));
    }

    #[test]
    fn bundled_hyperparameters() {
        let t1 = variants(Target::Table1);
        assert!(t1.iter().all(|v| v.config.train.learning_rate == 0.1 && v.config.train.batch_size == 100));
        assert!(t1.iter().all(|v| v.config.replicates >= 5 && v.config.dim() == v.config.model.m));
        let t2 = variants(Target::Table2Adam);
        assert!(t2.iter().all(|v| v.config.train.learning_rate == 0.001));
        let dims: Vec<usize> = variants(Target::Fig7Dims).iter().map(|v| v.config.dim()).collect();
        assert_eq!(dims, vec![7, 5, 4]);
        let f5 = &variants(Target::Fig5Heatmap)[0].config;
        assert_eq!((f5.dim(), f5.train.init_scale, f5.metrics.heatmap), (8, 0.01, true));
    }

    #[test]
    fn short_run_writes_table() {
        let opts = ReproduceOptions {
            variant: Some("m3".into()),
            replicates: Some(2),
            max_steps: Some(300),
        };
        let out = reproduce(Target::Table1, &opts).unwrap();
        assert_eq!(out.variants.len(), 1);
        let table = out.table_csv();
        assert!(table.lines().nth(1).unwrap().starts_with("m3,3,3,2,"));
        assert!(table.contains(",0.972,0.006,"));
        let bad = ReproduceOptions {
            variant: Some("m9".into()),
            ..Default::default()
        };
        assert!(reproduce(Target::Table1, &bad).is_err());
    }
}
