//! Experiment drivers: the A/B comparison of coupled versus independent
//! pair training, multi-exit training with anytime/budgeted evaluation, the
//! parameter-noise robustness probe, and penultimate-feature dumps. All
//! results land as CSV/JSON files under an output directory and are fully
//! reproducible from `(config, seeds)`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_blobs, load_mnist_idx, BlobSpec, Dataset, Split};
use crate::dynamic_eval::{evaluate_anytime, evaluate_budgeted, BudgetProfile};
use crate::error::{Result, SilaError};
use crate::models::{MultiExitSpec, NetworkSpec, ParameterSet};
use crate::rng::derive_seed;
use crate::training::{
    dataset_nll, eval_logits_multi_exit, metrics_from_logits, train_multi_exit, train_pair,
    LossMode, TrainConfig, TrainReport,
};
use crate::autodiff::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PairAb,
    MultiExit,
    RobustnessProbe,
    FeatureDump,
}

/// Where the train/validation/test splits come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs(BlobSpec),
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

/// Train / validation / test triple.
pub struct DataBundle {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DataSource {
    /// Materialize the splits. Blobs are split 70/15/15; for IDX files the
    /// last 15% of the training set is carved off as validation, since
    /// budgeted calibration needs held-out confidences.
    pub fn load(&self) -> Result<DataBundle> {
        match self {
            DataSource::Blobs(spec) => {
                let (train, validation, test) = generate_blobs(spec)?;
                Ok(DataBundle {
                    train,
                    validation,
                    test,
                })
            }
            DataSource::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let full = load_mnist_idx(train_images, train_labels, Split::Train)?;
                let test = load_mnist_idx(test_images, test_labels, Split::Test)?;
                let cut = full.len() - full.len() * 15 / 100;
                let head: Vec<usize> = (0..cut).collect();
                let tail: Vec<usize> = (cut..full.len()).collect();
                let (tf, tl) = full.gather(&head);
                let (vf, vl) = full.gather(&tail);
                Ok(DataBundle {
                    train: Dataset::new(tf, full.dim(), tl, full.classes(), Split::Train)?,
                    validation: Dataset::new(vf, full.dim(), vl, full.classes(), Split::Validation)?,
                    test,
                })
            }
        }
    }
}

/// One experiment: data, training regimen, architectures, seeds, outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    /// First network of a pair (also the probe/feature-dump network).
    pub network: Option<NetworkSpec>,
    /// Second network of a pair; defaults to `network`.
    pub network2: Option<NetworkSpec>,
    pub multi_exit: Option<MultiExitSpec>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Budgets for the dynamic protocols; defaults to five points spanning
    /// the profile's cost range.
    pub budgets: Option<Vec<f64>>,
    /// Noise levels for the robustness probe.
    pub sigmas: Option<Vec<f64>>,
    /// Repetitions per noise level.
    pub repetitions: Option<usize>,
    /// Restrict the pair experiment to these arms.
    pub arms: Option<Vec<LossMode>>,
    /// Evaluate a saved parameter set instead of training one.
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(SilaError::Config("seed list must not be empty".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    fn network1(&self) -> Result<&NetworkSpec> {
        self.network
            .as_ref()
            .ok_or_else(|| SilaError::Config("experiment needs a `network` spec".into()))
    }

    fn network2(&self) -> Result<&NetworkSpec> {
        Ok(self.network2.as_ref().unwrap_or(self.network1()?))
    }

    fn multi_exit(&self) -> Result<&MultiExitSpec> {
        self.multi_exit
            .as_ref()
            .ok_or_else(|| SilaError::Config("experiment needs a `multi_exit` spec".into()))
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Final-epoch metrics of one trained net plus its best top-1.
#[derive(Clone, Copy, Debug)]
struct ArmOutcome {
    top1: f64,
    topk: f64,
    best: f64,
    nll: f64,
}

impl ArmOutcome {
    fn from_report(report: &TrainReport) -> Self {
        let last = report.final_record().expect("training ran at least one epoch");
        Self {
            top1: last.top1,
            topk: last.topk,
            best: report.best_top1(),
            nll: last.nll,
        }
    }
}

/// Summary of the pair A/B experiment, one row per `(arm, net)`.
#[derive(Clone, Debug, Default)]
pub struct PairSummary {
    /// `(arm, net index 1/2, metric medians and means)`
    pub rows: Vec<PairSummaryRow>,
}

#[derive(Clone, Debug)]
pub struct PairSummaryRow {
    pub arm: LossMode,
    pub net: usize,
    pub top1_median: f64,
    pub top1_mean: f64,
    pub topk_median: f64,
    pub topk_mean: f64,
    pub best_median: f64,
    pub best_mean: f64,
    pub nll_median: f64,
    pub nll_mean: f64,
}

impl PairSummary {
    pub fn row(&self, arm: LossMode, net: usize) -> Option<&PairSummaryRow> {
        self.rows.iter().find(|r| r.arm == arm && r.net == net)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(PAIR_SUMMARY_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.arm.as_str(),
                r.net,
                r.top1_median,
                r.top1_mean,
                r.topk_median,
                r.topk_mean,
                r.best_median,
                r.best_mean,
                r.nll_median,
                r.nll_mean
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<PairSummary> {
        let rows = read_csv_rows(path, PAIR_SUMMARY_HEADER)?;
        let mut summary = PairSummary::default();
        for (line, fields) in rows {
            let arm: LossMode = fields[0].parse()?;
            let net = fields[1].parse().map_err(|e: std::num::ParseIntError| {
                SilaError::Parse {
                    file: path.display().to_string(),
                    line,
                    message: e.to_string(),
                }
            })?;
            let f = parse_f64_fields(path, line, &fields[2..])?;
            summary.rows.push(PairSummaryRow {
                arm,
                net,
                top1_median: f[0],
                top1_mean: f[1],
                topk_median: f[2],
                topk_mean: f[3],
                best_median: f[4],
                best_mean: f[5],
                nll_median: f[6],
                nll_mean: f[7],
            });
        }
        Ok(summary)
    }
}

const PAIR_SUMMARY_HEADER: &str =
    "arm,net,top1_median,top1_mean,topk_median,topk_mean,best_median,best_mean,nll_median,nll_mean";

const DEFAULT_ARMS: [LossMode; 4] = [
    LossMode::Independent,
    LossMode::Sila,
    LossMode::Dml,
    LossMode::SilaDml,
];

/// Train every arm for every seed under identical data order and initial
/// conditions, write per-run report CSVs as they finish, and summarize
/// medians and means across seeds.
pub fn run_pair_ab(config: &ExperimentConfig) -> Result<PairSummary> {
    config.validate()?;
    let spec1 = config.network1()?;
    let spec2 = config.network2()?;
    let bundle = config.data.load()?;
    let arms = config.arms.clone().unwrap_or_else(|| DEFAULT_ARMS.to_vec());
    ensure_dir(&config.out_dir)?;

    let mut outcomes: Vec<(LossMode, usize, Vec<ArmOutcome>)> = arms
        .iter()
        .flat_map(|&arm| [(arm, 1, Vec::new()), (arm, 2, Vec::new())])
        .collect();

    for &seed in &config.seeds {
        let seed_dir = config.out_dir.join(format!("seed{seed}"));
        ensure_dir(&seed_dir)?;
        for &arm in &arms {
            let train_cfg = TrainConfig {
                loss_mode: arm,
                seed,
                ..config.train.clone()
            };
            let (_, _, r1, r2) =
                train_pair(spec1, spec2, &bundle.train, &bundle.test, &train_cfg)?;
            // flush partial results before moving on
            r1.to_csv(&seed_dir.join(format!("{}_net1.csv", arm.as_str())))?;
            r2.to_csv(&seed_dir.join(format!("{}_net2.csv", arm.as_str())))?;
            for (net, report) in [(1usize, &r1), (2usize, &r2)] {
                outcomes
                    .iter_mut()
                    .find(|(a, n, _)| *a == arm && *n == net)
                    .expect("outcome slot exists")
                    .2
                    .push(ArmOutcome::from_report(report));
            }
        }
    }

    let mut summary = PairSummary::default();
    for (arm, net, runs) in outcomes {
        let pick = |f: fn(&ArmOutcome) -> f64| -> (f64, f64) {
            let mut v: Vec<f64> = runs.iter().map(f).collect();
            (median(&mut v), mean(&v))
        };
        let (top1_median, top1_mean) = pick(|o| o.top1);
        let (topk_median, topk_mean) = pick(|o| o.topk);
        let (best_median, best_mean) = pick(|o| o.best);
        let (nll_median, nll_mean) = pick(|o| o.nll);
        summary.rows.push(PairSummaryRow {
            arm,
            net,
            top1_median,
            top1_mean,
            topk_median,
            topk_mean,
            best_median,
            best_mean,
            nll_median,
            nll_mean,
        });
    }
    summary.to_csv(&config.out_dir.join("summary.csv"))?;
    Ok(summary)
}

/// Robustness probe: mean and stddev of the training-NLL increase after
/// adding parameter noise, per noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub base_nll: f64,
    pub repetitions: usize,
    /// `(sigma, mean delta-NLL, stddev)` with sigmas ascending.
    pub entries: Vec<(f64, f64, f64)>,
}

impl RobustnessReport {
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sigma,mean_delta_nll,std_delta_nll,base_nll,repetitions\n");
        for (sigma, mean, std) in &self.entries {
            out.push_str(&format!(
                "{sigma},{mean},{std},{},{}\n",
                self.base_nll, self.repetitions
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<RobustnessReport> {
        let rows = read_csv_rows(path, "sigma,mean_delta_nll,std_delta_nll,base_nll,repetitions")?;
        let mut report = RobustnessReport {
            base_nll: 0.0,
            repetitions: 0,
            entries: Vec::new(),
        };
        for (line, fields) in rows {
            let f = parse_f64_fields(path, line, &fields[..4])?;
            report.entries.push((f[0], f[1], f[2]));
            report.base_nll = f[3];
            report.repetitions = fields[4].parse().map_err(|e: std::num::ParseIntError| {
                SilaError::Parse {
                    file: path.display().to_string(),
                    line,
                    message: e.to_string(),
                }
            })?;
        }
        Ok(report)
    }
}

/// Header-checked CSV rows as `(line number, fields)`.
fn read_csv_rows(path: &Path, expected_header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| SilaError::Parse {
        file: file.clone(),
        line: 1,
        message: "empty file".into(),
    })?;
    if header != expected_header {
        return Err(SilaError::Parse {
            file,
            line: 1,
            message: format!("expected header {expected_header:?}, got {header:?}"),
        });
    }
    let width = expected_header.split(',').count();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != width {
            return Err(SilaError::Parse {
                file,
                line: idx + 1,
                message: format!("expected {width} fields, got {}", fields.len()),
            });
        }
        rows.push((idx + 1, fields));
    }
    Ok(rows)
}

fn parse_f64_fields(path: &Path, line: usize, fields: &[String]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse().map_err(|e: std::num::ParseFloatError| SilaError::Parse {
                file: path.display().to_string(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

/// For each noise level, draw `repetitions` perturbed copies of the
/// parameters and average the training-NLL change against the clean model.
/// Sigma 0 gives exactly zero change.
pub fn run_robustness_probe(
    params: &ParameterSet,
    data: &Dataset,
    sigmas: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    if repetitions == 0 {
        return Err(SilaError::Config("repetitions must be at least 1".into()));
    }
    let mut sigmas = sigmas.to_vec();
    sigmas.sort_by(|a, b| a.total_cmp(b));
    let base_nll = dataset_nll(params, data)?;
    let mut entries = Vec::with_capacity(sigmas.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        let mut deltas = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let draw_seed = derive_seed(seed, (si * repetitions + rep) as u64);
            let noisy = params.perturbed(sigma, draw_seed)?;
            deltas.push(dataset_nll(&noisy, data)? - base_nll);
        }
        let m = mean(&deltas);
        let var = if deltas.len() > 1 {
            deltas.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (deltas.len() - 1) as f64
        } else {
            0.0
        };
        entries.push((sigma, m, var.sqrt()));
    }
    Ok(RobustnessReport {
        base_nll,
        repetitions,
        entries,
    })
}

/// Train the configured pair under both the coupled and independent arms,
/// probe each net 1, and write one robustness CSV per arm.
pub fn run_robustness_experiment(config: &ExperimentConfig) -> Result<Vec<(LossMode, RobustnessReport)>> {
    config.validate()?;
    let bundle = config.data.load()?;
    let sigmas = config
        .sigmas
        .clone()
        .unwrap_or_else(|| vec![0.0, 0.01, 0.05, 0.1]);
    let repetitions = config.repetitions.unwrap_or(20);
    ensure_dir(&config.out_dir)?;

    let mut reports = Vec::new();
    if let Some(path) = &config.checkpoint {
        let params = ParameterSet::load(path)?;
        let report = run_robustness_probe(
            &params,
            &bundle.train,
            &sigmas,
            repetitions,
            derive_seed(config.seeds[0], 17),
        )?;
        report.to_csv(&config.out_dir.join("robustness_checkpoint.csv"))?;
        reports.push((config.train.loss_mode, report));
        return Ok(reports);
    }

    let spec1 = config.network1()?;
    let spec2 = config.network2()?;
    for arm in [LossMode::Sila, LossMode::Independent] {
        let train_cfg = TrainConfig {
            loss_mode: arm,
            seed: config.seeds[0],
            ..config.train.clone()
        };
        let (p1, _, _, _) = train_pair(spec1, spec2, &bundle.train, &bundle.test, &train_cfg)?;
        let report = run_robustness_probe(
            &p1,
            &bundle.train,
            &sigmas,
            repetitions,
            derive_seed(config.seeds[0], 17),
        )?;
        report.to_csv(
            &config
                .out_dir
                .join(format!("robustness_{}.csv", arm.as_str())),
        )?;
        reports.push((arm, report));
    }
    Ok(reports)
}

/// Dump penultimate-layer features of every sample as
/// `f0,..,f{H-1},label` CSV rows.
pub fn run_feature_dump(params: &ParameterSet, data: &Dataset, path: &Path) -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.constant(&[data.len(), data.dim()], data.features().to_vec())?;
    let staged = params.stage_frozen(&mut tape)?;
    let feats = staged.penultimate_features(&mut tape, x)?;
    let width = tape.shape(feats)[1];
    let values = tape.values(feats);
    let mut out = String::new();
    for j in 0..width {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for i in 0..data.len() {
        for v in &values[i * width..(i + 1) * width] {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", data.label(i)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Train (or load) the pair's first network and dump its training-set
/// features.
pub fn run_feature_experiment(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let bundle = config.data.load()?;
    ensure_dir(&config.out_dir)?;
    let params = if let Some(path) = &config.checkpoint {
        ParameterSet::load(path)?
    } else {
        let spec1 = config.network1()?;
        let spec2 = config.network2()?;
        let train_cfg = TrainConfig {
            seed: config.seeds[0],
            ..config.train.clone()
        };
        let (p1, _, _, _) = train_pair(spec1, spec2, &bundle.train, &bundle.test, &train_cfg)?;
        p1
    };
    let path = config.out_dir.join("features_net1.csv");
    run_feature_dump(&params, &bundle.train, &path)?;
    Ok(path)
}

/// Per-seed artifacts of the multi-exit experiment: for both arms, the
/// trained checkpoint, per-exit reports, and both protocol curves.
pub struct MultiExitOutcome {
    /// `per_exit_top1[arm index][seed index][exit]`, arms ordered
    /// `[sila, independent]`.
    pub per_exit_top1: [Vec<Vec<f64>>; 2],
}

/// Train the multi-exit chain twice per seed — siamese-coupled and the
/// conventional sum of per-exit cross-entropies — and emit anytime plus
/// budgeted curves for both arms.
pub fn run_multi_exit(config: &ExperimentConfig) -> Result<MultiExitOutcome> {
    config.validate()?;
    let spec = config.multi_exit()?;
    let bundle = config.data.load()?;
    let profile = BudgetProfile::from_spec(spec)?;
    let budgets = config.budgets.clone().unwrap_or_else(|| {
        let (lo, hi) = (profile.min_cost(), profile.max_cost());
        (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
    });
    for &b in &budgets {
        if b < profile.min_cost() {
            return Err(SilaError::BudgetTooSmall {
                budget: b,
                min_cost: profile.min_cost(),
            });
        }
    }
    ensure_dir(&config.out_dir)?;

    let arms = [LossMode::Sila, LossMode::Independent];
    let mut per_exit_top1: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for &seed in &config.seeds {
        let seed_dir = config.out_dir.join(format!("seed{seed}"));
        ensure_dir(&seed_dir)?;
        for (ai, &arm) in arms.iter().enumerate() {
            let train_cfg = TrainConfig {
                loss_mode: arm,
                seed,
                beta: if arm == LossMode::Sila {
                    config.train.beta.clone()
                } else {
                    vec![]
                },
                ..config.train.clone()
            };
            let (params, reports) =
                train_multi_exit(spec, &bundle.train, &bundle.test, &train_cfg)?;
            params.save(&seed_dir.join(format!("{}_checkpoint.json", arm.as_str())))?;
            for (c, report) in reports.iter().enumerate() {
                report.to_csv(&seed_dir.join(format!("{}_exit{}.csv", arm.as_str(), c + 1)))?;
            }
            let anytime = evaluate_anytime(&params, &bundle.test, &profile, &budgets)?;
            anytime.to_csv(&seed_dir.join(format!("{}_anytime.csv", arm.as_str())))?;
            let budgeted =
                evaluate_budgeted(&params, &bundle.test, &bundle.validation, &profile, &budgets)?;
            budgeted.to_csv(&seed_dir.join(format!("{}_budgeted.csv", arm.as_str())))?;

            let per_exit = eval_logits_multi_exit(&params, &bundle.test)?;
            per_exit_top1[ai].push(
                per_exit
                    .iter()
                    .map(|logits| {
                        metrics_from_logits(logits, spec.classes, bundle.test.labels(), 1).top1
                    })
                    .collect(),
            );
        }
    }

    // per-exit summary across seeds
    let mut summary = ExitSummary::default();
    for (ai, &arm) in arms.iter().enumerate() {
        for exit in 0..spec.exits() {
            let mut v: Vec<f64> = per_exit_top1[ai].iter().map(|s| s[exit]).collect();
            let med = median(&mut v);
            summary.rows.push(ExitSummaryRow {
                arm,
                exit: exit + 1,
                top1_median: med,
                top1_mean: mean(&v),
            });
        }
    }
    summary.to_csv(&config.out_dir.join("summary_exits.csv"))?;
    Ok(MultiExitOutcome { per_exit_top1 })
}

/// Per-exit accuracy summary of the multi-exit experiment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExitSummary {
    pub rows: Vec<ExitSummaryRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitSummaryRow {
    pub arm: LossMode,
    /// 1-based exit index.
    pub exit: usize,
    pub top1_median: f64,
    pub top1_mean: f64,
}

impl ExitSummary {
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("arm,exit,top1_median,top1_mean\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.arm.as_str(),
                r.exit,
                r.top1_median,
                r.top1_mean
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<ExitSummary> {
        let rows = read_csv_rows(path, "arm,exit,top1_median,top1_mean")?;
        let mut summary = ExitSummary::default();
        for (line, fields) in rows {
            let arm: LossMode = fields[0].parse()?;
            let exit = fields[1].parse().map_err(|e: std::num::ParseIntError| {
                SilaError::Parse {
                    file: path.display().to_string(),
                    line,
                    message: e.to_string(),
                }
            })?;
            let f = parse_f64_fields(path, line, &fields[2..])?;
            summary.rows.push(ExitSummaryRow {
                arm,
                exit,
                top1_median: f[0],
                top1_mean: f[1],
            });
        }
        Ok(summary)
    }
}

/// Write the configured splits as CSV files under the output directory.
pub fn run_gen_data(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    let bundle = config.data.load()?;
    ensure_dir(&config.out_dir)?;
    bundle.train.to_csv(&config.out_dir.join("train.csv"))?;
    bundle
        .validation
        .to_csv(&config.out_dir.join("validation.csv"))?;
    bundle.test.to_csv(&config.out_dir.join("test.csv"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_source() -> DataSource {
        DataSource::Blobs(BlobSpec {
            classes: 2,
            per_class: 30,
            center_spread: 4.0,
            noise_std: 0.6,
            dim: 2,
            seed: 11,
        })
    }

    fn tiny_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::PairAb,
            data: blob_source(),
            train: TrainConfig {
                epochs: 2,
                batch_size: 8,
                milestones: vec![],
                beta: vec![1.0, 1.0],
                loss_mode: LossMode::Sila,
                seed: 0,
                ..TrainConfig::default()
            },
            network: Some(NetworkSpec::new(2, vec![4], 2)),
            network2: None,
            multi_exit: Some(MultiExitSpec::new(2, vec![vec![4], vec![4]], 2)),
            out_dir: out.to_path_buf(),
            seeds: vec![1, 2],
            budgets: None,
            sigmas: Some(vec![0.0, 0.05]),
            repetitions: Some(3),
            arms: None,
            checkpoint: None,
        }
    }

    #[test]
    fn pair_ab_summary_has_one_row_per_arm_and_net() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let summary = run_pair_ab(&config).unwrap();
        assert_eq!(summary.rows.len(), 8); // 4 arms x 2 nets
        for arm in DEFAULT_ARMS {
            for net in [1, 2] {
                assert!(summary.row(arm, net).is_some());
            }
        }
        assert!(dir.path().join("seed1/sila_net1.csv").exists());
        assert!(dir.path().join("seed2/sila_dml_net2.csv").exists());
        // the summary and every per-run report re-parse with our readers
        let back = PairSummary::from_csv(&dir.path().join("summary.csv")).unwrap();
        assert_eq!(back.rows.len(), summary.rows.len());
        assert_eq!(back.row(LossMode::Sila, 1).unwrap().top1_median,
                   summary.row(LossMode::Sila, 1).unwrap().top1_median);
        let report = TrainReport::from_csv(&dir.path().join("seed1/sila_net1.csv")).unwrap();
        assert_eq!(report.epochs.len(), config.train.epochs);
    }

    #[test]
    fn restricted_arms_match_direct_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.seeds = vec![1];
        config.arms = Some(vec![LossMode::Independent]);
        run_pair_ab(&config).unwrap();

        let bundle = config.data.load().unwrap();
        let train_cfg = TrainConfig {
            loss_mode: LossMode::Independent,
            seed: 1,
            ..config.train.clone()
        };
        let (_, _, r1, _) = train_pair(
            config.network.as_ref().unwrap(),
            config.network.as_ref().unwrap(),
            &bundle.train,
            &bundle.test,
            &train_cfg,
        )
        .unwrap();
        let written =
            std::fs::read_to_string(dir.path().join("seed1/independent_net1.csv")).unwrap();
        assert_eq!(written, r1.to_csv_string());
    }

    #[test]
    fn pair_ab_reruns_are_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut ca = tiny_config(dir_a.path());
        ca.seeds = vec![3];
        ca.arms = Some(vec![LossMode::Sila]);
        let mut cb = tiny_config(dir_b.path());
        cb.seeds = vec![3];
        cb.arms = Some(vec![LossMode::Sila]);
        run_pair_ab(&ca).unwrap();
        run_pair_ab(&cb).unwrap();
        for file in ["summary.csv", "seed3/sila_net1.csv", "seed3/sila_net2.csv"] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between reruns");
        }
    }

    #[test]
    fn robustness_probe_zero_sigma_is_exactly_zero() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let reports = run_robustness_experiment(&config).unwrap();
        assert_eq!(reports.len(), 2);
        for (_, report) in &reports {
            let zero = report.entries.iter().find(|(s, _, _)| *s == 0.0).unwrap();
            assert_eq!(zero.1, 0.0);
            assert_eq!(zero.2, 0.0);
            assert!(report.entries.windows(2).all(|w| w[0].0 <= w[1].0));
        }
        // re-parseable by our own reader
        let path = dir.path().join("robustness_sila.csv");
        let back = RobustnessReport::from_csv(&path).unwrap();
        assert_eq!(&back, &reports[0].1);
        assert!(dir.path().join("robustness_independent.csv").exists());
    }

    /// The coupled arm should sit in a flatter minimum than independent
    /// training: a smaller NLL increase under the same parameter noise.
    #[test]
    fn coupled_training_is_less_noise_sensitive() {
        let blobs = BlobSpec {
            classes: 4,
            per_class: 286,
            center_spread: 2.5,
            noise_std: 1.0,
            dim: 2,
            seed: 2024,
        };
        let (train, _, test) = generate_blobs(&blobs).unwrap();
        let spec = NetworkSpec::new(2, vec![16, 16], 4);
        let mut deltas = Vec::new();
        for arm in [LossMode::Sila, LossMode::Independent] {
            let config = TrainConfig {
                epochs: 40,
                batch_size: 128,
                initial_lr: 0.1,
                milestones: vec![25, 35],
                lr_decay: 0.1,
                beta: vec![1.0, 1.0],
                loss_mode: arm,
                lambda_dml: 1.0,
                momentum: 0.0,
                seed: 1,
                top_k: None,
            };
            let (p1, _, _, _) = train_pair(&spec, &spec, &train, &test, &config).unwrap();
            let report =
                run_robustness_probe(&p1, &train, &[0.0, 0.01, 0.05, 0.1], 20, 606).unwrap();
            deltas.push(report.entries.last().unwrap().1);
        }
        assert!(
            deltas[0] <= deltas[1],
            "coupled delta {} should not exceed independent delta {}",
            deltas[0],
            deltas[1]
        );
    }

    #[test]
    fn feature_dump_matches_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let path = run_feature_experiment(&config).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let bundle = config.data.load().unwrap();
        assert_eq!(lines.len(), bundle.train.len() + 1);
        // hidden width 4 -> 4 features + label
        assert_eq!(lines[0].split(',').count(), 5);

        // recompute and compare
        let train_cfg = TrainConfig {
            seed: config.seeds[0],
            ..config.train.clone()
        };
        let (p1, _, _, _) = train_pair(
            config.network.as_ref().unwrap(),
            config.network.as_ref().unwrap(),
            &bundle.train,
            &bundle.test,
            &train_cfg,
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape
            .constant(
                &[bundle.train.len(), bundle.train.dim()],
                bundle.train.features().to_vec(),
            )
            .unwrap();
        let staged = p1.stage_frozen(&mut tape).unwrap();
        let feats = staged.penultimate_features(&mut tape, x).unwrap();
        let values = tape.values(feats);
        for (i, line) in lines[1..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            for j in 0..4 {
                let got: f64 = fields[j].parse().unwrap();
                assert!((got - values[i * 4 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_exit_emits_four_curves_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.seeds = vec![5];
        config.train.beta = vec![];
        let outcome = run_multi_exit(&config).unwrap();
        for arm in ["sila", "independent"] {
            for proto in ["anytime", "budgeted"] {
                let p = dir.path().join(format!("seed5/{arm}_{proto}.csv"));
                assert!(p.exists(), "{p:?} missing");
                // re-parseable by our own reader
                let curve = crate::dynamic_eval::EvalCurve::from_csv(&p).unwrap();
                assert!(!curve.points.is_empty());
            }
        }
        let summary = ExitSummary::from_csv(&dir.path().join("summary_exits.csv")).unwrap();
        assert_eq!(summary.rows.len(), 4); // 2 arms x 2 exits
        assert_eq!(outcome.per_exit_top1[0][0].len(), 2);
    }

    #[test]
    fn gen_data_writes_reparseable_splits() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        run_gen_data(&config).unwrap();
        for (name, split) in [
            ("train.csv", Split::Train),
            ("validation.csv", Split::Validation),
            ("test.csv", Split::Test),
        ] {
            let ds = Dataset::from_csv(&dir.path().join(name), Some(2), split).unwrap();
            assert!(!ds.is_empty());
            assert_eq!(ds.dim(), 2);
        }
    }

    #[test]
    fn config_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        let back = ExperimentConfig::from_json_file(&path).unwrap();
        assert_eq!(back.seeds, config.seeds);
        assert_eq!(back.train.loss_mode, config.train.loss_mode);
    }
}
