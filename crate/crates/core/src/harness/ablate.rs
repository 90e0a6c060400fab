use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, mean_std, train, HarnessError, MetricsReport, TrainConfig};
use crate::cornergraph::{split, CornerGraph};
use crate::gnn::{BaseLayerKind, SymmetryMode};
use crate::heads::Task;

/// One rung of the ablation ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    DeepSets,
    Mpnn,
    Gatv2,
    Gatv2FrameAveraging,
    Gatv2GroupConv,
    ShotUnconditional,
    ShotConditional,
    ShotConditionalGroupConv,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::DeepSets,
        Variant::Mpnn,
        Variant::Gatv2,
        Variant::Gatv2FrameAveraging,
        Variant::Gatv2GroupConv,
        Variant::ShotUnconditional,
        Variant::ShotConditional,
        Variant::ShotConditionalGroupConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DeepSets => "deepsets",
            Variant::Mpnn => "mpnn",
            Variant::Gatv2 => "gatv2",
            Variant::Gatv2FrameAveraging => "gatv2+frame_averaging",
            Variant::Gatv2GroupConv => "gatv2+group_conv",
            Variant::ShotUnconditional => "shot_unconditional",
            Variant::ShotConditional => "shot_conditional",
            Variant::ShotConditionalGroupConv => "shot_conditional+group_conv",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Variant::ShotUnconditional | Variant::ShotConditional | Variant::ShotConditionalGroupConv => Task::Shot,
            _ => Task::Receiver,
        }
    }

    /// The metric the ladder ranks by.
    pub fn headline_metric(self) -> &'static str {
        match self.task() {
            Task::Shot => "f1",
            _ => "top3",
        }
    }

    /// Published value of the headline metric on professional data.
    pub fn reference_value(self) -> f64 {
        match self {
            Variant::DeepSets => 0.713,
            Variant::Mpnn => 0.723,
            Variant::Gatv2 => 0.748,
            Variant::Gatv2FrameAveraging => 0.780,
            Variant::Gatv2GroupConv => 0.782,
            Variant::ShotUnconditional => 0.521,
            Variant::ShotConditional => 0.677,
            Variant::ShotConditionalGroupConv => 0.712,
        }
    }

    pub fn config(self, budget: &AblationBudget, seed: u64) -> TrainConfig {
        let (base_layer, symmetry_mode, conditional) = match self {
            Variant::DeepSets => (BaseLayerKind::DeepSets, SymmetryMode::None, false),
            Variant::Mpnn => (BaseLayerKind::Mpnn, SymmetryMode::None, false),
            Variant::Gatv2 => (BaseLayerKind::Gatv2, SymmetryMode::None, false),
            Variant::Gatv2FrameAveraging => (BaseLayerKind::Gatv2, SymmetryMode::FrameAveraging, false),
            Variant::Gatv2GroupConv => (BaseLayerKind::Gatv2, SymmetryMode::GroupConvolution, false),
            Variant::ShotUnconditional => (BaseLayerKind::Gatv2, SymmetryMode::None, false),
            Variant::ShotConditional => (BaseLayerKind::Gatv2, SymmetryMode::None, true),
            Variant::ShotConditionalGroupConv => (BaseLayerKind::Gatv2, SymmetryMode::GroupConvolution, true),
        };
        TrainConfig {
            base_layer,
            symmetry_mode,
            conditional,
            steps: budget.steps,
            batch_size: budget.batch_size,
            learning_rate: budget.learning_rate,
            eval_every: budget.eval_every,
            seed,
            ..TrainConfig::for_task(self.task())
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown ablation variant `{s}`")))
    }
}

/// Training budget shared by every rung.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationBudget {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    /// Train share of the shared train/test split.
    pub split_ratio: f64,
    pub split_seed: u64,
}

/// One line of the machine-readable table. Aggregate rows have no seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub variant: String,
    pub task: Task,
    pub seed: Option<u64>,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub records: Vec<AblationRecord>,
}

impl AblationTable {
    /// Per-seed values of `metric` for `variant`, in seed order.
    pub fn values(&self, variant: Variant, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.variant == variant.name() && r.metric == metric && r.seed.is_some())
            .map(|r| r.value)
            .collect()
    }

    /// Mean and sample standard deviation of the headline metric.
    pub fn summary(&self, variant: Variant) -> Option<(f64, f64)> {
        let v = self.values(variant, variant.headline_metric());
        (!v.is_empty()).then(|| mean_std(&v))
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
    }
}

fn metric_rows(m: &MetricsReport) -> Vec<(&'static str, f64)> {
    [("top1", m.top1), ("top3", m.top3), ("precision", m.precision), ("recall", m.recall), ("f1", m.f1)]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
}

/// Trains every variant once per seed on a shared split and tabulates the
/// test metrics, followed by mean, standard deviation and the published
/// reference per variant.
pub fn ablate(variants: &[Variant], dataset: &[CornerGraph], seeds: &[u64], budget: &AblationBudget) -> Result<AblationTable, HarnessError> {
    let (train_set, test_set) = split(dataset, budget.split_ratio, budget.split_seed)?;
    let jobs: Vec<(Variant, u64)> = variants.iter().flat_map(|v| seeds.iter().map(move |s| (*v, *s))).collect();
    let workers = std::thread::available_parallelism().map_or(1, usize::from).min(jobs.len()).max(1);
    let mut results: Vec<Option<Result<MetricsReport, HarnessError>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (jobs, train_set, test_set) = (&jobs, &train_set, &test_set);
                scope.spawn(move || {
                    (w..jobs.len())
                        .step_by(workers)
                        .map(|j| {
                            let (variant, seed) = jobs[j];
                            let run = train(&variant.config(budget, seed), train_set);
                            let report = run.and_then(|r| evaluate(&r.checkpoint.to_model()?, test_set));
                            (j, report)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (j, r) in h.join().expect("ablation worker panicked") {
                results[j] = Some(r);
            }
        }
    });

    let mut table = AblationTable::default();
    for ((variant, seed), report) in jobs.iter().zip(results) {
        let report = report.expect("every job ran")?;
        for (metric, value) in metric_rows(&report) {
            table.records.push(AblationRecord {
                variant: variant.name().into(),
                task: variant.task(),
                seed: Some(*seed),
                metric: metric.into(),
                value,
            });
        }
    }
    for v in variants {
        let m = v.headline_metric();
        let (mean, std) = mean_std(&table.values(*v, m));
        for (metric, value) in [(format!("{m}_mean"), mean), (format!("{m}_std"), std), (format!("reference_{m}"), v.reference_value())] {
            table.records.push(AblationRecord {
                variant: v.name().into(),
                task: v.task(),
                seed: None,
                metric,
                value,
            });
        }
    }
    Ok(table)
}
