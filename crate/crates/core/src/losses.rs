//! Loss functions: batch cross-entropy, its per-sample gradient
//! decomposition, siamese-label construction, group losses, the weighted
//! siamese auxiliary loss, mutual-learning KL, and the combined objective.
//!
//! The siamese construction concatenates the N-class logits of C networks
//! (or exits) into one `B x (C*N)` block and runs softmax cross-entropy over
//! all `C*N` columns with the label shifted into group `c`'s block. The joint
//! normalizer is what couples the groups: each group's loss carries every
//! other group's logits.

use crate::autodiff::{log_sum_exp, softmax, NodeId, Tape};
use crate::error::{Result, SilaError};

/// Concatenated per-group logits on a tape: group `c` occupies columns
/// `[c*classes, (c+1)*classes)`.
#[derive(Clone, Copy, Debug)]
pub struct SiameseLogits {
    pub id: NodeId,
    pub groups: usize,
    pub classes: usize,
}

/// Per-group loss weights; nonnegative and not all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(SilaError::InvalidSpec("no loss weights given".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SilaError::InvalidSpec(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(SilaError::InvalidSpec(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(Self(weights))
    }

    /// The weight-1 default: every classifier counts equally.
    pub fn ones(groups: usize) -> Self {
        Self(vec![1.0; groups])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-sample decomposition of the cross-entropy gradient into the target
/// logit and the log-sum-exp of all non-target logits.
#[derive(Clone, Copy, Debug)]
pub struct LossDiagnostics {
    /// Logit of the labelled class.
    pub target_logit: f64,
    /// Log-sum-exp of every other logit.
    pub non_target_lse: f64,
    /// d loss / d target logit = -1 / (e^(target - lse_rest) + 1).
    pub d_target_logit: f64,
    /// d loss / d lse_rest; always the exact negation of `d_target_logit`.
    pub d_non_target_lse: f64,
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    for &y in labels {
        if y >= classes {
            return Err(SilaError::InvalidLabel { label: y, classes });
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy of `[B, M]` logits against integer labels:
/// `(1/B) * sum_i [ -z_i[y_i] + logsumexp(z_i) ]`, differentiable through
/// the logits.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(SilaError::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    let (batch, classes) = (shape[0], shape[1]);
    if labels.len() != batch {
        return Err(SilaError::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    check_labels(labels, classes)?;

    // Target logits via a one-hot mask and a column-sum: z ⊙ onehot(y) @ 1.
    let mut mask = vec![0.0; batch * classes];
    for (i, &y) in labels.iter().enumerate() {
        mask[i * classes + y] = 1.0;
    }
    let mask = tape.constant(&[batch, classes], mask)?;
    let picked = tape.mul(logits, mask)?;
    let ones = tape.constant(&[classes, 1], vec![1.0; classes])?;
    let target_col = tape.matmul(picked, ones)?;
    let target = tape.reshape(target_col, &[batch])?;

    let lse = tape.log_sum_exp_rows(logits)?;
    let neg_target = tape.scale(target, -1.0)?;
    let per_sample = tape.add(lse, neg_target)?;
    tape.mean_batch(per_sample)
}

/// Exact closed-form gradient decomposition of single-sample cross-entropy.
///
/// Needs at least two classes: with no non-target logits the decomposition
/// is undefined.
pub fn loss_diagnostics(logits: &[f64], label: usize) -> Result<LossDiagnostics> {
    if logits.len() < 2 {
        return Err(SilaError::InvalidSpec(format!(
            "loss diagnostics need at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(SilaError::InvalidLabel {
            label,
            classes: logits.len(),
        });
    }
    let target_logit = logits[label];
    let rest: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label)
        .map(|(_, &v)| v)
        .collect();
    let non_target_lse = log_sum_exp(&rest);
    let d_non_target_lse = 1.0 / ((target_logit - non_target_lse).exp() + 1.0);
    Ok(LossDiagnostics {
        target_logit,
        non_target_lse,
        d_target_logit: -d_non_target_lse,
        d_non_target_lse,
    })
}

/// Concatenate C same-shaped logit groups along the class axis.
pub fn make_siamese(tape: &mut Tape, groups: &[NodeId]) -> Result<SiameseLogits> {
    if groups.is_empty() {
        return Err(SilaError::InvalidSpec("no logit groups given".into()));
    }
    let first = tape.shape(groups[0]).to_vec();
    if first.len() != 2 {
        return Err(SilaError::ShapeMismatch {
            op: "make_siamese",
            lhs: first,
            rhs: vec![],
        });
    }
    for &g in groups {
        if tape.shape(g) != first.as_slice() {
            return Err(SilaError::ShapeMismatch {
                op: "make_siamese",
                lhs: first,
                rhs: tape.shape(g).to_vec(),
            });
        }
    }
    let id = tape.concat_cols(groups)?;
    Ok(SiameseLogits {
        id,
        groups: groups.len(),
        classes: first[1],
    })
}

/// Cross-entropy over all `C*N` siamese columns with labels shifted into
/// group `group`'s block (0-based). The softmax normalizer runs over every
/// column, which is what couples the groups.
pub fn group_loss(
    tape: &mut Tape,
    siamese: &SiameseLogits,
    labels: &[usize],
    group: usize,
) -> Result<NodeId> {
    if group >= siamese.groups {
        return Err(SilaError::InvalidGroup {
            group,
            groups: siamese.groups,
        });
    }
    check_labels(labels, siamese.classes)?;
    let offset = group * siamese.classes;
    let shifted: Vec<usize> = labels.iter().map(|&y| y + offset).collect();
    cross_entropy(tape, siamese.id, &shifted)
}

/// Weighted sum of every group loss over the shared siamese block. With a
/// single group and weight 1 this reduces to plain cross-entropy over the
/// group's own columns.
pub fn sila_loss(
    tape: &mut Tape,
    groups: &[NodeId],
    labels: &[usize],
    weights: &LossWeights,
) -> Result<NodeId> {
    let (total, _) = sila_loss_with_terms(tape, groups, labels, weights)?;
    Ok(total)
}

/// As [`sila_loss`], also returning the unweighted per-group loss nodes.
pub fn sila_loss_with_terms(
    tape: &mut Tape,
    groups: &[NodeId],
    labels: &[usize],
    weights: &LossWeights,
) -> Result<(NodeId, Vec<NodeId>)> {
    if weights.len() != groups.len() {
        return Err(SilaError::WeightCountMismatch {
            expected: groups.len(),
            got: weights.len(),
        });
    }
    let siamese = make_siamese(tape, groups)?;
    let mut terms = Vec::with_capacity(groups.len());
    let mut total: Option<NodeId> = None;
    for (c, &beta) in weights.as_slice().iter().enumerate() {
        let lc = group_loss(tape, &siamese, labels, c)?;
        terms.push(lc);
        let weighted = tape.scale(lc, beta)?;
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    Ok((total.expect("at least one group"), terms))
}

/// Mean KL divergence from the peer's softmax distribution to the student's:
/// `(1/B) * sum_i KL(softmax(peer_i) || softmax(student_i))`.
///
/// The peer side is detached — its logits are copied off the tape as
/// constants, so no gradient flows into it.
pub fn dml_kl_loss(tape: &mut Tape, student: NodeId, peer: NodeId) -> Result<NodeId> {
    let shape = tape.shape(student).to_vec();
    if shape.len() != 2 || tape.shape(peer) != shape.as_slice() {
        return Err(SilaError::ShapeMismatch {
            op: "dml_kl_loss",
            lhs: shape,
            rhs: tape.shape(peer).to_vec(),
        });
    }
    let (batch, classes) = (shape[0], shape[1]);

    // Peer distribution and its negative entropy, both constants.
    let peer_values = tape.values(peer).to_vec();
    let mut probs = Vec::with_capacity(batch * classes);
    let mut neg_entropy = Vec::with_capacity(batch);
    for i in 0..batch {
        let p = softmax(&peer_values[i * classes..(i + 1) * classes]);
        let h: f64 = p
            .iter()
            .map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 })
            .sum();
        neg_entropy.push(h);
        probs.extend(p);
    }
    let probs = tape.constant(&[batch, classes], probs)?;
    let neg_entropy = tape.constant(&[batch], neg_entropy)?;

    // KL_i = sum_j p_ij log p_ij - sum_j p_ij z_ij + logsumexp(z_i),
    // using sum_j p_ij = 1.
    let weighted = tape.mul(student, probs)?;
    let ones = tape.constant(&[classes, 1], vec![1.0; classes])?;
    let dot_col = tape.matmul(weighted, ones)?;
    let dot = tape.reshape(dot_col, &[batch])?;
    let neg_dot = tape.scale(dot, -1.0)?;
    let lse = tape.log_sum_exp_rows(student)?;
    let partial = tape.add(neg_entropy, neg_dot)?;
    let per_sample = tape.add(partial, lse)?;
    tape.mean_batch(per_sample)
}

/// Siamese loss plus, for a two-group pair, the symmetric detached-peer KL
/// terms scaled by `lambda_dml`.
pub fn combined_loss(
    tape: &mut Tape,
    groups: &[NodeId],
    labels: &[usize],
    weights: &LossWeights,
    lambda_dml: f64,
) -> Result<NodeId> {
    let (total, _) = combined_loss_with_terms(tape, groups, labels, weights, lambda_dml)?;
    Ok(total)
}

/// As [`combined_loss`], also returning `[group losses.., kl terms..]`.
pub fn combined_loss_with_terms(
    tape: &mut Tape,
    groups: &[NodeId],
    labels: &[usize],
    weights: &LossWeights,
    lambda_dml: f64,
) -> Result<(NodeId, Vec<NodeId>)> {
    if lambda_dml < 0.0 || !lambda_dml.is_finite() {
        return Err(SilaError::InvalidSpec(format!(
            "lambda_dml must be nonnegative, got {lambda_dml}"
        )));
    }
    let (sila, mut terms) = sila_loss_with_terms(tape, groups, labels, weights)?;
    if lambda_dml == 0.0 {
        return Ok((sila, terms));
    }
    if groups.len() != 2 {
        return Err(SilaError::InvalidSpec(format!(
            "mutual-learning terms need exactly 2 groups, got {}",
            groups.len()
        )));
    }
    let kl_first = dml_kl_loss(tape, groups[0], groups[1])?;
    let kl_second = dml_kl_loss(tape, groups[1], groups[0])?;
    terms.push(kl_first);
    terms.push(kl_second);
    let kl_sum = tape.add(kl_first, kl_second)?;
    let scaled = tape.scale(kl_sum, lambda_dml)?;
    let total = tape.add(sila, scaled)?;
    Ok((total, terms))
}
