//! Anytime-prediction and budgeted-batch evaluation of trained multi-exit
//! networks.
//!
//! Anytime mode spends a fixed per-sample budget and answers at the deepest
//! affordable exit. Budgeted mode fixes the mean per-sample cost over a
//! whole set: confidence thresholds are calibrated on held-out data so easy
//! samples leave early and the saved compute pays for deep exits on hard
//! ones.

use crate::autodiff::softmax;
use crate::data::Dataset;
use crate::error::{Result, SilaError};
use crate::models::{MultiExitSpec, ParameterSet};
use crate::training::{eval_logits_multi_exit, metrics_from_logits};

/// Per-exit cumulative compute cost, plus confidence thresholds once
/// calibrated. Thresholds have length `exits - 1`; the last exit always
/// accepts whatever reaches it.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetProfile {
    pub cumulative_cost: Vec<f64>,
    pub thresholds: Option<Vec<f64>>,
}

impl BudgetProfile {
    pub fn new(cumulative_cost: Vec<f64>) -> Result<Self> {
        if cumulative_cost.is_empty() {
            return Err(SilaError::InvalidSpec("budget profile needs at least one exit".into()));
        }
        if cumulative_cost.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(SilaError::InvalidSpec("exit costs must be positive".into()));
        }
        if !cumulative_cost.windows(2).all(|w| w[0] < w[1]) {
            return Err(SilaError::InvalidSpec(
                "cumulative exit costs must be strictly ascending".into(),
            ));
        }
        Ok(Self {
            cumulative_cost,
            thresholds: None,
        })
    }

    pub fn from_spec(spec: &MultiExitSpec) -> Result<Self> {
        Self::new(spec.exit_costs())
    }

    pub fn exits(&self) -> usize {
        self.cumulative_cost.len()
    }

    pub fn min_cost(&self) -> f64 {
        self.cumulative_cost[0]
    }

    pub fn max_cost(&self) -> f64 {
        *self.cumulative_cost.last().expect("non-empty")
    }

    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() + 1 != self.exits() {
            return Err(SilaError::InvalidSpec(format!(
                "{} exits need {} thresholds, got {}",
                self.exits(),
                self.exits() - 1,
                thresholds.len()
            )));
        }
        Ok(Self {
            cumulative_cost: self.cumulative_cost.clone(),
            thresholds: Some(thresholds),
        })
    }
}

/// One point on an accuracy-versus-budget curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub budget: f64,
    pub top1: f64,
    pub mean_cost: f64,
    /// How many test samples left at each exit.
    pub exit_counts: Vec<usize>,
}

/// Accuracy/cost curve over ascending budgets.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalCurve {
    pub points: Vec<CurvePoint>,
}

impl EvalCurve {
    /// `budget,top1,mean_cost,exit1..exitC` with a header row.
    pub fn to_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let exits = self.points.first().map_or(0, |p| p.exit_counts.len());
        let mut out = String::from("budget,top1,mean_cost");
        for c in 1..=exits {
            out.push_str(&format!(",exit{c}"));
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{},{}", p.budget, p.top1, p.mean_cost));
            for &n in &p.exit_counts {
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(path: &std::path::Path) -> Result<EvalCurve> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| SilaError::Parse {
            file: file.clone(),
            line: 1,
            message: "empty file".into(),
        })?;
        let cols = header.split(',').count();
        if cols < 3 || !header.starts_with("budget,top1,mean_cost") {
            return Err(SilaError::Parse {
                file,
                line: 1,
                message: "unexpected curve header".into(),
            });
        }
        let mut curve = EvalCurve::default();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(SilaError::Parse {
                    file,
                    line: idx + 1,
                    message: format!("expected {cols} fields, got {}", fields.len()),
                });
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse().map_err(|e: std::num::ParseFloatError| SilaError::Parse {
                    file: file.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            };
            let exit_counts = fields[3..]
                .iter()
                .map(|s| {
                    s.parse().map_err(|e: std::num::ParseIntError| SilaError::Parse {
                        file: file.clone(),
                        line: idx + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            curve.points.push(CurvePoint {
                budget: parse_f(fields[0])?,
                top1: parse_f(fields[1])?,
                mean_cost: parse_f(fields[2])?,
                exit_counts,
            });
        }
        Ok(curve)
    }
}

/// Deepest exit whose cumulative cost fits the budget (0-based). Below the
/// cheapest exit the first one answers anyway — a prediction is always
/// produced.
pub fn anytime_select(profile: &BudgetProfile, budget: f64) -> usize {
    profile
        .cumulative_cost
        .iter()
        .rposition(|&c| c <= budget)
        .unwrap_or(0)
}

/// Per-exit max-softmax confidences and top-1 correctness flags for a whole
/// dataset. Shared scaffolding for both evaluation protocols.
struct ExitTable {
    exits: usize,
    len: usize,
    /// `confidence[exit][sample]`
    confidence: Vec<Vec<f64>>,
    /// per-exit logits, kept for metric computation
    logits: Vec<Vec<f64>>,
    classes: usize,
}

impl ExitTable {
    fn build(params: &ParameterSet, data: &Dataset) -> Result<Self> {
        let per_exit = eval_logits_multi_exit(params, data)?;
        let classes = params.classes();
        let confidence = per_exit
            .iter()
            .map(|logits| {
                (0..data.len())
                    .map(|i| {
                        let row = &logits[i * classes..(i + 1) * classes];
                        softmax(row).into_iter().fold(f64::MIN, f64::max)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            exits: per_exit.len(),
            len: data.len(),
            confidence,
            logits: per_exit,
            classes,
        })
    }

    /// First exit whose confidence clears its threshold; the last exit is
    /// unconditional.
    fn assign(&self, thresholds: &[f64]) -> Vec<usize> {
        (0..self.len)
            .map(|i| {
                for (exit, &thr) in thresholds.iter().enumerate() {
                    if self.confidence[exit][i] >= thr {
                        return exit;
                    }
                }
                self.exits - 1
            })
            .collect()
    }

    fn replay(&self, profile: &BudgetProfile, thresholds: &[f64], labels: &[usize]) -> CurvePoint {
        let assignment = self.assign(thresholds);
        let mut exit_counts = vec![0usize; self.exits];
        let mut cost = 0.0;
        let mut hits = 0usize;
        for (i, &exit) in assignment.iter().enumerate() {
            exit_counts[exit] += 1;
            cost += profile.cumulative_cost[exit];
            let row = &self.logits[exit][i * self.classes..(i + 1) * self.classes];
            let pred = (0..self.classes)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("classes >= 1");
            if pred == labels[i] {
                hits += 1;
            }
        }
        CurvePoint {
            budget: 0.0,
            top1: hits as f64 / self.len as f64,
            mean_cost: cost / self.len as f64,
            exit_counts,
        }
    }
}

/// Anytime protocol: every budget picks one exit for all samples; the curve
/// reports that exit's full-set accuracy and cost.
pub fn evaluate_anytime(
    params: &ParameterSet,
    test: &Dataset,
    profile: &BudgetProfile,
    budgets: &[f64],
) -> Result<EvalCurve> {
    let per_exit = eval_logits_multi_exit(params, test)?;
    if per_exit.len() != profile.exits() {
        return Err(SilaError::InvalidSpec(format!(
            "profile has {} exits but the network has {}",
            profile.exits(),
            per_exit.len()
        )));
    }
    let classes = params.classes();
    let accuracies: Vec<f64> = per_exit
        .iter()
        .map(|logits| metrics_from_logits(logits, classes, test.labels(), 1).top1)
        .collect();
    let mut curve = EvalCurve::default();
    for &budget in budgets {
        let exit = anytime_select(profile, budget);
        let mut exit_counts = vec![0usize; profile.exits()];
        exit_counts[exit] = test.len();
        curve.points.push(CurvePoint {
            budget,
            top1: accuracies[exit],
            mean_cost: profile.cumulative_cost[exit],
            exit_counts,
        });
    }
    Ok(curve)
}

/// Fraction of samples expected to leave at each exit when every classifier
/// releases a geometric `q` share of what reaches it.
fn exit_fractions(q: f64, exits: usize) -> Vec<f64> {
    let mut fractions = Vec::with_capacity(exits);
    for k in 0..exits - 1 {
        fractions.push(q * (1.0 - q).powi(k as i32));
    }
    fractions.push((1.0 - q).powi((exits - 1) as i32));
    fractions
}

/// Thresholds realizing the geometric exit fractions on the given
/// confidence table: threshold `k` is the confidence of the `n_k`-th most
/// confident sample still alive at exit `k`.
fn thresholds_for_q(table: &ExitTable, q: f64) -> Vec<f64> {
    let fractions = exit_fractions(q, table.exits);
    let total = table.len;
    let mut alive: Vec<usize> = (0..total).collect();
    let mut thresholds = Vec::with_capacity(table.exits - 1);
    for (exit, fraction) in fractions.iter().take(table.exits - 1).enumerate() {
        let target = (fraction * total as f64).round() as usize;
        let thr = if target == 0 || alive.is_empty() {
            // nobody is supposed to leave here
            1.0
        } else if target >= alive.len() {
            // everyone still alive leaves here
            0.0
        } else {
            let mut confs: Vec<f64> = alive.iter().map(|&i| table.confidence[exit][i]).collect();
            confs.sort_by(|a, b| b.total_cmp(a));
            confs[target - 1]
        };
        alive.retain(|&i| table.confidence[exit][i] < thr);
        thresholds.push(thr);
    }
    thresholds
}

/// Calibrate confidence thresholds on validation data so the expected
/// per-sample cost stays within the budget.
///
/// Exit mass follows the geometric scheme (probability `q` of leaving at
/// each classifier); `q` is bisected against the replayed validation cost,
/// keeping the deepest feasible setting.
pub fn calibrate_thresholds(
    params: &ParameterSet,
    validation: &Dataset,
    profile: &BudgetProfile,
    budget: f64,
) -> Result<BudgetProfile> {
    if budget < profile.min_cost() {
        return Err(SilaError::BudgetTooSmall {
            budget,
            min_cost: profile.min_cost(),
        });
    }
    let table = ExitTable::build(params, validation)?;
    if table.exits != profile.exits() {
        return Err(SilaError::InvalidSpec(format!(
            "profile has {} exits but the network has {}",
            profile.exits(),
            table.exits
        )));
    }
    if profile.exits() == 1 {
        return profile.with_thresholds(vec![]);
    }
    let cost_of = |thresholds: &[f64]| {
        table
            .replay(profile, thresholds, validation.labels())
            .mean_cost
    };

    // realized cost is non-increasing in q; find the smallest feasible q
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    let mut best = thresholds_for_q(&table, hi);
    if cost_of(&thresholds_for_q(&table, lo)) <= budget {
        best = thresholds_for_q(&table, lo);
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let cand = thresholds_for_q(&table, mid);
            if cost_of(&cand) <= budget {
                best = cand;
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    debug_assert!(cost_of(&best) <= budget);
    profile.with_thresholds(best)
}

/// Replay the threshold policy on a dataset: every sample exits at the
/// first exit whose max-softmax confidence clears that exit's threshold.
pub fn evaluate_with_thresholds(
    params: &ParameterSet,
    data: &Dataset,
    profile: &BudgetProfile,
) -> Result<CurvePoint> {
    let thresholds = profile.thresholds.as_ref().ok_or_else(|| {
        SilaError::InvalidSpec("budget profile has no calibrated thresholds".into())
    })?;
    let table = ExitTable::build(params, data)?;
    if table.exits != profile.exits() {
        return Err(SilaError::InvalidSpec(format!(
            "profile has {} exits but the network has {}",
            profile.exits(),
            table.exits
        )));
    }
    Ok(table.replay(profile, thresholds, data.labels()))
}

/// Budgeted protocol: calibrate thresholds per budget on the validation
/// split, then replay the policy on the test set.
pub fn evaluate_budgeted(
    params: &ParameterSet,
    test: &Dataset,
    validation: &Dataset,
    profile: &BudgetProfile,
    budgets: &[f64],
) -> Result<EvalCurve> {
    let mut curve = EvalCurve::default();
    for &budget in budgets {
        let calibrated = calibrate_thresholds(params, validation, profile, budget)?;
        let mut point = evaluate_with_thresholds(params, test, &calibrated)?;
        point.budget = budget;
        curve.points.push(point);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, BlobSpec};
    use crate::models::build_multi_exit;
    use crate::training::{train_multi_exit, LossMode, TrainConfig};

    fn profile() -> BudgetProfile {
        BudgetProfile::new(vec![10.0, 20.0, 30.0]).unwrap()
    }

    #[test]
    fn anytime_selection_examples() {
        let p = profile();
        assert_eq!(anytime_select(&p, 25.0), 1);
        assert_eq!(anytime_select(&p, 30.0), 2);
        assert_eq!(anytime_select(&p, 5.0), 0);
    }

    #[test]
    fn anytime_selection_is_monotone() {
        let p = profile();
        let mut last = 0;
        for i in 0..500 {
            let budget = i as f64 * 0.1;
            let exit = anytime_select(&p, budget);
            assert!(exit >= last);
            last = exit;
        }
    }

    #[test]
    fn profile_rejects_non_ascending_costs() {
        assert!(BudgetProfile::new(vec![10.0, 10.0]).is_err());
        assert!(BudgetProfile::new(vec![]).is_err());
        assert!(BudgetProfile::new(vec![10.0, 5.0]).is_err());
    }

    fn trained_toy() -> (ParameterSet, Dataset, Dataset, BudgetProfile) {
        let (train, val, test) = generate_blobs(&BlobSpec {
            classes: 2,
            per_class: 60,
            center_spread: 4.0,
            noise_std: 0.8,
            dim: 2,
            seed: 5,
        })
        .unwrap();
        let spec = crate::models::MultiExitSpec::new(2, vec![vec![6], vec![6], vec![6]], 2);
        let config = TrainConfig {
            epochs: 10,
            batch_size: 16,
            milestones: vec![],
            beta: vec![],
            loss_mode: LossMode::Sila,
            seed: 2,
            ..TrainConfig::default()
        };
        let (params, _) = train_multi_exit(&spec, &train, &val, &config).unwrap();
        let profile = BudgetProfile::from_spec(&spec).unwrap();
        let _ = test;
        (params, val, test, profile)
    }

    #[test]
    fn anytime_curve_matches_per_exit_accuracies() {
        let (params, _, test, profile) = trained_toy();
        let budgets = vec![profile.min_cost(), profile.max_cost()];
        let curve = evaluate_anytime(&params, &test, &profile, &budgets).unwrap();
        let per_exit = crate::training::eval_logits_multi_exit(&params, &test).unwrap();
        let acc_first = metrics_from_logits(&per_exit[0], 2, test.labels(), 1).top1;
        let acc_last = metrics_from_logits(&per_exit[2], 2, test.labels(), 1).top1;
        assert_eq!(curve.points[0].top1, acc_first);
        assert_eq!(curve.points[1].top1, acc_last);
        assert_eq!(curve.points[1].mean_cost, profile.max_cost());
    }

    #[test]
    fn threshold_extremes_route_everyone() {
        let (params, _, test, profile) = trained_toy();
        let all_first = profile.with_thresholds(vec![0.0, 0.0]).unwrap();
        let p = evaluate_with_thresholds(&params, &test, &all_first).unwrap();
        assert_eq!(p.exit_counts, vec![test.len(), 0, 0]);
        assert_eq!(p.mean_cost, profile.min_cost());

        let all_last = profile.with_thresholds(vec![1.0 + 1e-9, 1.0 + 1e-9]).unwrap();
        let p = evaluate_with_thresholds(&params, &test, &all_last).unwrap();
        assert_eq!(p.exit_counts, vec![0, 0, test.len()]);
        assert_eq!(p.mean_cost, profile.max_cost());
        let per_exit = crate::training::eval_logits_multi_exit(&params, &test).unwrap();
        let acc_last = metrics_from_logits(&per_exit[2], 2, test.labels(), 1).top1;
        assert_eq!(p.top1, acc_last);
    }

    #[test]
    fn calibration_respects_budgets() {
        let (params, val, _, profile) = trained_toy();
        // unconstrained budget is feasible
        let c = calibrate_thresholds(&params, &val, &profile, profile.max_cost() * 2.0).unwrap();
        let replay = evaluate_with_thresholds(&params, &val, &c).unwrap();
        assert!(replay.mean_cost <= profile.max_cost() * 2.0);

        // binding budget forces everything out at the first exit
        let c = calibrate_thresholds(&params, &val, &profile, profile.min_cost()).unwrap();
        let replay = evaluate_with_thresholds(&params, &val, &c).unwrap();
        assert_eq!(replay.mean_cost, profile.min_cost());
        assert_eq!(replay.exit_counts[0], val.len());

        // mid budget: realized validation cost within the budget (5% slack
        // is allowed on fresh data; on the calibration split it must fit)
        let mid = 0.5 * (profile.min_cost() + profile.max_cost());
        let c = calibrate_thresholds(&params, &val, &profile, mid).unwrap();
        let replay = evaluate_with_thresholds(&params, &val, &c).unwrap();
        assert!(replay.mean_cost <= mid * 1.05, "{} > {}", replay.mean_cost, mid);
    }

    #[test]
    fn calibration_rejects_budget_below_cheapest_exit() {
        let (params, val, _, profile) = trained_toy();
        let err = calibrate_thresholds(&params, &val, &profile, profile.min_cost() * 0.5)
            .unwrap_err();
        assert!(matches!(err, SilaError::BudgetTooSmall { .. }));
    }

    #[test]
    fn budgeted_curve_matches_brute_force_replay() {
        let (params, val, test, profile) = trained_toy();
        let budgets = vec![
            profile.min_cost(),
            0.5 * (profile.min_cost() + profile.max_cost()),
            profile.max_cost(),
        ];
        let curve = evaluate_budgeted(&params, &test, &val, &profile, &budgets).unwrap();
        assert_eq!(curve.points.len(), 3);
        for (point, &budget) in curve.points.iter().zip(&budgets) {
            // brute-force: recalibrate and walk the policy by hand
            let calibrated = calibrate_thresholds(&params, &val, &profile, budget).unwrap();
            let thresholds = calibrated.thresholds.as_ref().unwrap();
            let per_exit = crate::training::eval_logits_multi_exit(&params, &test).unwrap();
            let mut hits = 0usize;
            let mut cost = 0.0;
            for i in 0..test.len() {
                let mut chosen = profile.exits() - 1;
                for (exit, &thr) in thresholds.iter().enumerate() {
                    let row = &per_exit[exit][i * 2..(i + 1) * 2];
                    let conf = softmax(row).into_iter().fold(f64::MIN, f64::max);
                    if conf >= thr {
                        chosen = exit;
                        break;
                    }
                }
                cost += profile.cumulative_cost[chosen];
                let row = &per_exit[chosen][i * 2..(i + 1) * 2];
                let pred = if row[0] >= row[1] { 0 } else { 1 };
                if pred == test.label(i) {
                    hits += 1;
                }
            }
            assert_eq!(point.top1, hits as f64 / test.len() as f64);
            assert_eq!(point.mean_cost, cost / test.len() as f64);
            assert_eq!(point.exit_counts.iter().sum::<usize>(), test.len());
        }
    }

    #[test]
    fn policy_is_deterministic() {
        let (params, val, test, profile) = trained_toy();
        let c = calibrate_thresholds(&params, &val, &profile, 60.0).unwrap();
        let a = evaluate_with_thresholds(&params, &test, &c).unwrap();
        let b = evaluate_with_thresholds(&params, &test, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn curve_csv_round_trips() {
        let curve = EvalCurve {
            points: vec![CurvePoint {
                budget: 20.0,
                top1: 0.75,
                mean_cost: 17.5,
                exit_counts: vec![30, 10, 20],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        curve.to_csv(&path).unwrap();
        let back = EvalCurve::from_csv(&path).unwrap();
        assert_eq!(curve, back);
    }

    #[test]
    fn untrained_single_exit_profile_calibrates_trivially() {
        let spec = crate::models::MultiExitSpec::new(2, vec![vec![3]], 2);
        let params = build_multi_exit(&spec, 0).unwrap();
        let (_, val, _, _) = trained_toy();
        let profile = BudgetProfile::from_spec(&spec).unwrap();
        let c = calibrate_thresholds(&params, &val, &profile, profile.min_cost()).unwrap();
        assert_eq!(c.thresholds, Some(vec![]));
    }
}
