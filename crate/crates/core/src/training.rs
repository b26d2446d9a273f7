//! SGD with a multi-step learning-rate schedule and the joint training
//! loops: a pair of networks coupled through one loss, and a multi-exit
//! chain trained through all its classifiers.
//!
//! Each step records both parameter sets on one tape, builds a single joint
//! loss, and runs one backward pass — gradients reach every network through
//! the shared loss, and both are updated simultaneously.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, NodeId, Tape};
use crate::data::{batches, Dataset};
use crate::error::{Result, SilaError};
use crate::losses::{
    combined_loss_with_terms, cross_entropy, dml_kl_loss, sila_loss_with_terms, LossWeights,
};
use crate::models::{build_multi_exit, build_network, MultiExitSpec, NetworkSpec, ParameterSet};
use crate::rng::derive_seed;

/// How the cooperating classifiers are coupled during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Plain per-network cross-entropy; no coupling.
    Independent,
    /// Siamese-label group losses over the concatenated logits.
    Sila,
    /// Per-network cross-entropy plus detached-peer KL terms.
    Dml,
    /// Siamese group losses plus the KL terms.
    SilaDml,
}

impl LossMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Independent => "independent",
            LossMode::Sila => "sila",
            LossMode::Dml => "dml",
            LossMode::SilaDml => "sila_dml",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = SilaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(LossMode::Independent),
            "sila" => Ok(LossMode::Sila),
            "dml" => Ok(LossMode::Dml),
            "sila_dml" => Ok(LossMode::SilaDml),
            other => Err(SilaError::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

/// Training hyperparameters.
///
/// The defaults follow the usual image-classification regimen: SGD, batch
/// size 128, initial learning rate 0.1 divided by 10 at each milestone.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    /// Per-group loss weights; empty means weight 1 for every group.
    pub beta: Vec<f64>,
    pub loss_mode: LossMode,
    pub lambda_dml: f64,
    /// Plain SGD by default; kept as a knob but left at 0.
    pub momentum: f64,
    pub seed: u64,
    /// Rank for the top-k metric; `None` means `min(5, classes - 1)`.
    pub top_k: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 260,
            batch_size: 128,
            initial_lr: 0.1,
            milestones: vec![30, 55, 80, 105, 135, 160, 180, 200, 220, 240],
            lr_decay: 0.1,
            beta: vec![1.0, 1.0],
            loss_mode: LossMode::Sila,
            lambda_dml: 1.0,
            momentum: 0.0,
            seed: 0,
            top_k: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SilaError::InvalidSpec(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if self.initial_lr <= 0.0 || self.initial_lr.is_nan() {
            return Err(SilaError::InvalidSpec("initial learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(SilaError::InvalidSpec(
                "learning-rate decay must lie in (0, 1)".into(),
            ));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(SilaError::InvalidSpec("milestones must be strictly ascending".into()));
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return Err(SilaError::InvalidSpec(
                "milestones must lie before the last epoch".into(),
            ));
        }
        if self.lambda_dml < 0.0 || !self.lambda_dml.is_finite() {
            return Err(SilaError::InvalidSpec("lambda_dml must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SilaError::InvalidSpec("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Loss weights for `groups` groups: the configured betas, or all ones
    /// when the config leaves them empty.
    pub fn weights_for(&self, groups: usize) -> Result<LossWeights> {
        if self.beta.is_empty() {
            Ok(LossWeights::ones(groups))
        } else {
            let w = LossWeights::new(self.beta.clone())?;
            if w.len() != groups {
                return Err(SilaError::WeightCountMismatch {
                    expected: groups,
                    got: w.len(),
                });
            }
            Ok(w)
        }
    }

    pub fn top_k_for(&self, classes: usize) -> usize {
        self.top_k.unwrap_or_else(|| 5.min(classes.saturating_sub(1)).max(1))
    }
}

/// Multi-step schedule: `initial_lr * lr_decay^(milestones at or before
/// epoch)`. With no milestones the rate is constant.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let hits = config.milestones.iter().filter(|&&m| m <= epoch).count();
    config.initial_lr * config.lr_decay.powi(hits as i32)
}

/// One plain gradient-descent step: `w <- w - lr * grad`, in place.
/// Gradients are left untouched; the caller zeroes them.
pub fn sgd_step(params: &mut ParameterSet, lr: f64) -> Result<()> {
    for (name, t) in params.tensors_mut() {
        if t.grad.iter().any(|g| !g.is_finite()) {
            return Err(SilaError::NonFinite {
                context: format!("gradient of {name}"),
            });
        }
        for (v, g) in t.values.iter_mut().zip(&t.grad) {
            *v -= lr * g;
        }
    }
    Ok(())
}

fn momentum_step(
    params: &mut ParameterSet,
    velocity: &mut std::collections::BTreeMap<String, Vec<f64>>,
    momentum: f64,
    lr: f64,
) -> Result<()> {
    for (name, t) in params.tensors_mut() {
        if t.grad.iter().any(|g| !g.is_finite()) {
            return Err(SilaError::NonFinite {
                context: format!("gradient of {name}"),
            });
        }
        let vel = velocity
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; t.grad.len()]);
        for ((v, g), m) in t.values.iter_mut().zip(&t.grad).zip(vel.iter_mut()) {
            *m = momentum * *m + g;
            *v -= lr * *m;
        }
    }
    Ok(())
}

/// Test-set metrics at one point in training. Accuracies are fractions in
/// `[0, 1]`; `nll` is the mean negative log-likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub top1: f64,
    pub topk: f64,
    pub nll: f64,
}

/// Top-1 / top-k / NLL of one logit matrix against labels.
pub fn metrics_from_logits(logits: &[f64], classes: usize, labels: &[usize], k: usize) -> Metrics {
    let batch = labels.len();
    let mut hits1 = 0usize;
    let mut hitsk = 0usize;
    let mut nll = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        if order[0] == y {
            hits1 += 1;
        }
        if order[..k.min(classes)].contains(&y) {
            hitsk += 1;
        }
        nll += log_sum_exp(row) - row[y];
    }
    Metrics {
        top1: hits1 as f64 / batch as f64,
        topk: hitsk as f64 / batch as f64,
        nll: nll / batch as f64,
    }
}

/// Forward a whole dataset through a frozen staged copy and return logits.
pub fn eval_logits(params: &ParameterSet, data: &Dataset) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(&[data.len(), data.dim()], data.features().to_vec())?;
    let staged = params.stage_frozen(&mut tape)?;
    let z = staged.forward(&mut tape, x)?;
    Ok(tape.values(z).to_vec())
}

/// As [`eval_logits`] for every exit of a multi-exit net.
pub fn eval_logits_multi_exit(params: &ParameterSet, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let x = tape.constant(&[data.len(), data.dim()], data.features().to_vec())?;
    let staged = params.stage_frozen(&mut tape)?;
    let exits = staged.forward_multi_exit(&mut tape, x)?;
    Ok(exits.iter().map(|&e| tape.values(e).to_vec()).collect())
}

/// Full-dataset metrics for a plain network.
pub fn evaluate(params: &ParameterSet, data: &Dataset, k: usize) -> Result<Metrics> {
    let logits = eval_logits(params, data)?;
    Ok(metrics_from_logits(&logits, params.classes(), data.labels(), k))
}

/// Mean training NLL of a parameter set on a dataset (plain or multi-exit;
/// multi-exit nets are scored at their deepest exit).
pub fn dataset_nll(params: &ParameterSet, data: &Dataset) -> Result<f64> {
    let logits = match params.arch() {
        crate::models::Arch::Mlp(_) => eval_logits(params, data)?,
        crate::models::Arch::MultiExit(_) => {
            eval_logits_multi_exit(params, data)?.pop().expect("at least one exit")
        }
    };
    let classes = params.classes();
    let mut nll = 0.0;
    for (i, &y) in data.labels().iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        nll += log_sum_exp(row) - row[y];
    }
    Ok(nll / data.len() as f64)
}

/// One epoch's record in a training report.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_terms: Vec<f64>,
    pub top1: f64,
    pub topk: f64,
    pub nll: f64,
}

/// Per-epoch training history for one network (or one exit).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    /// Names of the per-term loss columns, shared by every epoch row.
    pub term_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Best top-1 over the whole run.
    pub fn best_top1(&self) -> f64 {
        self.epochs.iter().map(|e| e.top1).fold(0.0, f64::max)
    }

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,lr,loss_total,<terms..>,top1,topk,nll` with a header row.
    pub fn to_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,lr,loss_total");
        for name in &self.term_names {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",top1,topk,nll\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{}", r.epoch, r.lr, r.loss_total));
            for t in &r.loss_terms {
                out.push_str(&format!(",{t}"));
            }
            out.push_str(&format!(",{},{},{}\n", r.top1, r.topk, r.nll));
        }
        out
    }

    pub fn from_csv(path: &std::path::Path) -> Result<TrainReport> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| SilaError::Parse {
            file: file.clone(),
            line: 1,
            message: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 6 || cols[..3] != ["epoch", "lr", "loss_total"] {
            return Err(SilaError::Parse {
                file,
                line: 1,
                message: "unexpected training-report header".into(),
            });
        }
        let term_names: Vec<String> =
            cols[3..cols.len() - 3].iter().map(|s| s.to_string()).collect();
        let mut report = TrainReport {
            term_names,
            epochs: Vec::new(),
        };
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(SilaError::Parse {
                    file,
                    line: idx + 1,
                    message: format!("expected {} fields, got {}", cols.len(), fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|e: std::num::ParseFloatError| SilaError::Parse {
                    file: file.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })
            };
            let terms = fields[3..fields.len() - 3]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<f64>>>()?;
            report.epochs.push(EpochRecord {
                epoch: fields[0].parse().map_err(|e: std::num::ParseIntError| {
                    SilaError::Parse {
                        file: file.clone(),
                        line: idx + 1,
                        message: e.to_string(),
                    }
                })?,
                lr: parse(fields[1])?,
                loss_total: parse(fields[2])?,
                loss_terms: terms,
                top1: parse(fields[fields.len() - 3])?,
                topk: parse(fields[fields.len() - 2])?,
                nll: parse(fields[fields.len() - 1])?,
            });
        }
        Ok(report)
    }
}

/// Joint loss node plus the per-term nodes and their column names.
fn pair_loss(
    tape: &mut Tape,
    z1: NodeId,
    z2: NodeId,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(NodeId, Vec<NodeId>, Vec<String>)> {
    match config.loss_mode {
        LossMode::Independent => {
            let ce1 = cross_entropy(tape, z1, labels)?;
            let ce2 = cross_entropy(tape, z2, labels)?;
            let total = tape.add(ce1, ce2)?;
            Ok((total, vec![ce1, ce2], vec!["ce_net1".into(), "ce_net2".into()]))
        }
        LossMode::Sila => {
            let weights = config.weights_for(2)?;
            let (total, terms) = sila_loss_with_terms(tape, &[z1, z2], labels, &weights)?;
            Ok((total, terms, vec!["sila_group1".into(), "sila_group2".into()]))
        }
        LossMode::Dml => {
            let ce1 = cross_entropy(tape, z1, labels)?;
            let ce2 = cross_entropy(tape, z2, labels)?;
            let kl1 = dml_kl_loss(tape, z1, z2)?;
            let kl2 = dml_kl_loss(tape, z2, z1)?;
            let ce = tape.add(ce1, ce2)?;
            let kl = tape.add(kl1, kl2)?;
            let scaled = tape.scale(kl, config.lambda_dml)?;
            let total = tape.add(ce, scaled)?;
            Ok((
                total,
                vec![ce1, ce2, kl1, kl2],
                vec!["ce_net1".into(), "ce_net2".into(), "kl_net1".into(), "kl_net2".into()],
            ))
        }
        LossMode::SilaDml => {
            let weights = config.weights_for(2)?;
            let (total, terms) =
                combined_loss_with_terms(tape, &[z1, z2], labels, &weights, config.lambda_dml)?;
            Ok((
                total,
                terms,
                vec![
                    "sila_group1".into(),
                    "sila_group2".into(),
                    "kl_net1".into(),
                    "kl_net2".into(),
                ],
            ))
        }
    }
}

struct LossAccumulator {
    total: f64,
    terms: Vec<f64>,
    samples: usize,
}

impl LossAccumulator {
    fn new(terms: usize) -> Self {
        Self {
            total: 0.0,
            terms: vec![0.0; terms],
            samples: 0,
        }
    }

    fn add(&mut self, tape: &Tape, total: NodeId, terms: &[NodeId], batch: usize) -> Result<()> {
        self.total += tape.scalar(total)? * batch as f64;
        for (acc, &t) in self.terms.iter_mut().zip(terms) {
            *acc += tape.scalar(t)? * batch as f64;
        }
        self.samples += batch;
        Ok(())
    }

    fn finish(&self) -> (f64, Vec<f64>) {
        let n = self.samples.max(1) as f64;
        (self.total / n, self.terms.iter().map(|t| t / n).collect())
    }
}

/// Train two networks jointly under the configured coupling.
///
/// Both nets see the same shuffled batches; every step records both on one
/// tape, computes the joint loss, runs a single backward pass and updates
/// both parameter sets with the scheduled learning rate. Initial conditions
/// differ per net (seeded); everything is deterministic given `(specs,
/// data, config)`.
pub fn train_pair(
    spec1: &NetworkSpec,
    spec2: &NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
) -> Result<(ParameterSet, ParameterSet, TrainReport, TrainReport)> {
    config.validate()?;
    if spec1.classes != spec2.classes {
        return Err(SilaError::InvalidSpec(format!(
            "networks disagree on class count: {} vs {}",
            spec1.classes, spec2.classes
        )));
    }
    if spec1.classes != train.classes() || train.classes() != test.classes() {
        return Err(SilaError::InvalidSpec(
            "network and dataset class counts disagree".into(),
        ));
    }

    let mut p1 = build_network(spec1, derive_seed(config.seed, 1))?;
    let mut p2 = build_network(spec2, derive_seed(config.seed, 2))?;
    let mut vel1 = std::collections::BTreeMap::new();
    let mut vel2 = std::collections::BTreeMap::new();
    let k = config.top_k_for(spec1.classes);

    let mut report1 = TrainReport::default();
    let mut report2 = TrainReport::default();

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut acc: Option<LossAccumulator> = None;
        for batch in batches(train, config.batch_size, derive_seed(config.seed, 3), epoch) {
            let (feats, labels) = train.gather(&batch);
            let mut tape = Tape::new();
            let x = tape.constant(&[batch.len(), train.dim()], feats)?;
            let s1 = p1.stage(&mut tape)?;
            let s2 = p2.stage(&mut tape)?;
            let z1 = s1.forward(&mut tape, x)?;
            let z2 = s2.forward(&mut tape, x)?;
            let (total, terms, names) = pair_loss(&mut tape, z1, z2, &labels, config)?;
            if report1.term_names.is_empty() {
                report1.term_names = names.clone();
                report2.term_names = names;
            }
            tape.backward(total)?;
            p1.absorb_grads(&s1, &tape)?;
            p2.absorb_grads(&s2, &tape)?;
            apply_update(&mut p1, &mut vel1, config, lr)?;
            apply_update(&mut p2, &mut vel2, config, lr)?;
            p1.zero_grads();
            p2.zero_grads();
            acc.get_or_insert_with(|| LossAccumulator::new(terms.len()))
                .add(&tape, total, &terms, batch.len())?;
        }
        let (loss_total, loss_terms) = acc.expect("at least one batch").finish();
        for (params, report) in [(&p1, &mut report1), (&p2, &mut report2)] {
            let m = evaluate(params, test, k)?;
            report.epochs.push(EpochRecord {
                epoch,
                lr,
                loss_total,
                loss_terms: loss_terms.clone(),
                top1: m.top1,
                topk: m.topk,
                nll: m.nll,
            });
        }
    }
    Ok((p1, p2, report1, report2))
}

fn apply_update(
    params: &mut ParameterSet,
    velocity: &mut std::collections::BTreeMap<String, Vec<f64>>,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if config.momentum == 0.0 {
        sgd_step(params, lr)
    } else {
        momentum_step(params, velocity, config.momentum, lr)
    }
}

/// Train a multi-exit chain with all classifiers participating.
///
/// `LossMode::Sila` couples the exits through the siamese block (weights
/// default to 1 per classifier); `LossMode::Independent` is the
/// conventional baseline, the plain sum of per-exit cross-entropies.
/// Returns the trained parameters and one report per exit.
pub fn train_multi_exit(
    spec: &MultiExitSpec,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
) -> Result<(ParameterSet, Vec<TrainReport>)> {
    config.validate()?;
    if spec.classes != train.classes() || train.classes() != test.classes() {
        return Err(SilaError::InvalidSpec(
            "network and dataset class counts disagree".into(),
        ));
    }
    let exits = spec.exits();
    let term_names: Vec<String> = match config.loss_mode {
        LossMode::Sila => (1..=exits).map(|c| format!("sila_group{c}")).collect(),
        LossMode::Independent => (1..=exits).map(|c| format!("ce_exit{c}")).collect(),
        other => {
            return Err(SilaError::InvalidSpec(format!(
                "multi-exit training supports sila or independent, not {}",
                other.as_str()
            )))
        }
    };

    let mut params = build_multi_exit(spec, derive_seed(config.seed, 1))?;
    let mut velocity = std::collections::BTreeMap::new();
    let k = config.top_k_for(spec.classes);
    let mut reports = vec![
        TrainReport {
            term_names: term_names.clone(),
            epochs: Vec::new(),
        };
        exits
    ];

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut acc: Option<LossAccumulator> = None;
        for batch in batches(train, config.batch_size, derive_seed(config.seed, 3), epoch) {
            let (feats, labels) = train.gather(&batch);
            let mut tape = Tape::new();
            let x = tape.constant(&[batch.len(), train.dim()], feats)?;
            let staged = params.stage(&mut tape)?;
            let zs = staged.forward_multi_exit(&mut tape, x)?;
            let (total, terms) = match config.loss_mode {
                LossMode::Sila => {
                    let weights = config.weights_for(exits)?;
                    sila_loss_with_terms(&mut tape, &zs, &labels, &weights)?
                }
                LossMode::Independent => {
                    let mut terms = Vec::with_capacity(exits);
                    let mut total: Option<NodeId> = None;
                    for &z in &zs {
                        let ce = cross_entropy(&mut tape, z, &labels)?;
                        terms.push(ce);
                        total = Some(match total {
                            None => ce,
                            Some(acc) => tape.add(acc, ce)?,
                        });
                    }
                    (total.expect("at least one exit"), terms)
                }
                _ => unreachable!("rejected above"),
            };
            tape.backward(total)?;
            params.absorb_grads(&staged, &tape)?;
            apply_update(&mut params, &mut velocity, config, lr)?;
            params.zero_grads();
            acc.get_or_insert_with(|| LossAccumulator::new(terms.len()))
                .add(&tape, total, &terms, batch.len())?;
        }
        let (loss_total, loss_terms) = acc.expect("at least one batch").finish();
        let per_exit = eval_logits_multi_exit(&params, test)?;
        for (report, logits) in reports.iter_mut().zip(&per_exit) {
            let m = metrics_from_logits(logits, spec.classes, test.labels(), k);
            report.epochs.push(EpochRecord {
                epoch,
                lr,
                loss_total,
                loss_terms: loss_terms.clone(),
                top1: m.top1,
                topk: m.topk,
                nll: m.nll,
            });
        }
    }
    Ok((params, reports))
}

/// Staged pair forward used by gradient-check tests: the joint loss value
/// for the current parameter values.
pub fn pair_loss_value(
    p1: &ParameterSet,
    p2: &ParameterSet,
    features: &[f64],
    dim: usize,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(&[labels.len(), dim], features.to_vec())?;
    let s1 = p1.stage_frozen(&mut tape)?;
    let s2 = p2.stage_frozen(&mut tape)?;
    let z1 = s1.forward(&mut tape, x)?;
    let z2 = s2.forward(&mut tape, x)?;
    let (total, _, _) = pair_loss(&mut tape, z1, z2, labels, config)?;
    tape.scalar(total)
}

/// Gradients of the joint pair loss for one batch, via a single backward
/// pass. Returns the staged nets' grads absorbed into fresh copies.
pub fn pair_loss_grads(
    p1: &ParameterSet,
    p2: &ParameterSet,
    features: &[f64],
    dim: usize,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(ParameterSet, ParameterSet)> {
    let mut tape = Tape::new();
    let x = tape.constant(&[labels.len(), dim], features.to_vec())?;
    let mut c1 = p1.clone();
    let mut c2 = p2.clone();
    c1.zero_grads();
    c2.zero_grads();
    let s1 = c1.stage(&mut tape)?;
    let s2 = c2.stage(&mut tape)?;
    let z1 = s1.forward(&mut tape, x)?;
    let z2 = s2.forward(&mut tape, x)?;
    let (total, _, _) = pair_loss(&mut tape, z1, z2, labels, config)?;
    tape.backward(total)?;
    c1.absorb_grads(&s1, &tape)?;
    c2.absorb_grads(&s2, &tape)?;
    Ok((c1, c2))
}
