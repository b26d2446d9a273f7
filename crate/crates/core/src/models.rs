//! Feedforward classifier networks and the multi-exit chain.
//!
//! A [`ParameterSet`] is a named map of weight/bias tensors plus an
//! architecture echo; it owns the persistent gradient buffers that
//! [`crate::training::sgd_step`] consumes. To run a forward pass the set is
//! staged onto a [`Tape`] (differentiable leaves for training, constants for
//! evaluation) and the resulting [`StagedNet`] builds the graph.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Result, SilaError};
use crate::rng::seeded_rng;

/// Plain multilayer perceptron: `input_dim -> hidden.. -> classes`, ReLU
/// between layers, linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(SilaError::InvalidSpec(format!(
                "class count must be at least 2, got {}",
                self.classes
            )));
        }
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(SilaError::InvalidSpec("layer width of 0".into()));
        }
        Ok(())
    }

    /// Layer widths including input and output: `[D, hidden.., N]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.classes);
        dims
    }
}

/// Chain of hidden-layer blocks with a classifier head after each block.
///
/// Block 1 consumes the input; block `c` consumes block `c-1`'s features.
/// Exit `c`'s logits depend only on blocks `1..=c`. Per-exit compute cost is
/// the number of multiply-accumulates on the path to that exit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiExitSpec {
    pub input_dim: usize,
    /// Hidden widths per block; every block needs at least one layer so the
    /// cumulative cost is strictly increasing.
    pub blocks: Vec<Vec<usize>>,
    pub classes: usize,
}

impl MultiExitSpec {
    pub fn new(input_dim: usize, blocks: Vec<Vec<usize>>, classes: usize) -> Self {
        Self {
            input_dim,
            blocks,
            classes,
        }
    }

    pub fn exits(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(SilaError::InvalidSpec(format!(
                "class count must be at least 2, got {}",
                self.classes
            )));
        }
        if self.blocks.is_empty() {
            return Err(SilaError::InvalidSpec("multi-exit net needs at least one block".into()));
        }
        if self.input_dim == 0 {
            return Err(SilaError::InvalidSpec("layer width of 0".into()));
        }
        for block in &self.blocks {
            if block.is_empty() {
                return Err(SilaError::InvalidSpec(
                    "every block needs at least one hidden layer".into(),
                ));
            }
            if block.contains(&0) {
                return Err(SilaError::InvalidSpec("layer width of 0".into()));
            }
        }
        Ok(())
    }

    /// Cumulative multiply-accumulate count per exit (trunk up to the block,
    /// plus that exit's head). Strictly increasing in the exit index.
    pub fn exit_costs(&self) -> Vec<f64> {
        let mut costs = Vec::with_capacity(self.blocks.len());
        let mut trunk = 0.0;
        let mut width = self.input_dim;
        for block in &self.blocks {
            for &w in block {
                trunk += (width * w) as f64;
                width = w;
            }
            costs.push(trunk + (width * self.classes) as f64);
        }
        costs
    }
}

/// Which architecture a parameter set was built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    Mlp(NetworkSpec),
    MultiExit(MultiExitSpec),
}

impl Arch {
    pub fn classes(&self) -> usize {
        match self {
            Arch::Mlp(s) => s.classes,
            Arch::MultiExit(s) => s.classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Arch::Mlp(s) => s.input_dim,
            Arch::MultiExit(s) => s.input_dim,
        }
    }
}

/// One named parameter tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        let grad = vec![0.0; values.len()];
        Self {
            shape,
            values,
            grad,
        }
    }
}

/// Named map of weight/bias tensors for one network.
#[derive(Clone, Debug)]
pub struct ParameterSet {
    arch: Arch,
    tensors: BTreeMap<String, ParamTensor>,
}

fn kaiming_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect()
}

/// Build a plain MLP with Kaiming-style fan-in uniform weights and zero
/// biases. Different seeds give different initial conditions.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let dims = spec.layer_dims();
    let mut tensors = BTreeMap::new();
    for i in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[i], dims[i + 1]);
        tensors.insert(
            format!("layer{i}.weight"),
            ParamTensor::new(vec![fan_in, fan_out], kaiming_uniform(&mut rng, fan_in, fan_out)),
        );
        tensors.insert(
            format!("layer{i}.bias"),
            ParamTensor::new(vec![fan_out], vec![0.0; fan_out]),
        );
    }
    Ok(ParameterSet {
        arch: Arch::Mlp(spec.clone()),
        tensors,
    })
}

/// Build a multi-exit chain. Weight draws follow block order then head
/// order, so a single-block spec reproduces `build_network` bit for bit.
pub fn build_multi_exit(spec: &MultiExitSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let mut tensors = BTreeMap::new();
    let mut width = spec.input_dim;
    for (b, block) in spec.blocks.iter().enumerate() {
        for (l, &w) in block.iter().enumerate() {
            tensors.insert(
                format!("block{b}.layer{l}.weight"),
                ParamTensor::new(vec![width, w], kaiming_uniform(&mut rng, width, w)),
            );
            tensors.insert(
                format!("block{b}.layer{l}.bias"),
                ParamTensor::new(vec![w], vec![0.0; w]),
            );
            width = w;
        }
        tensors.insert(
            format!("head{b}.weight"),
            ParamTensor::new(
                vec![width, spec.classes],
                kaiming_uniform(&mut rng, width, spec.classes),
            ),
        );
        tensors.insert(
            format!("head{b}.bias"),
            ParamTensor::new(vec![spec.classes], vec![0.0; spec.classes]),
        );
    }
    Ok(ParameterSet {
        arch: Arch::MultiExit(spec.clone()),
        tensors,
    })
}

impl ParameterSet {
    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &ParamTensor)> {
        self.tensors.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor)> {
        self.tensors.iter_mut()
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.get(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(|t| t.values.len()).sum()
    }

    /// Zero every accumulated gradient.
    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad.fill(0.0);
        }
    }

    /// Stage parameters as differentiable leaves on a tape.
    pub fn stage(&self, tape: &mut Tape) -> Result<StagedNet> {
        self.stage_inner(tape, true)
    }

    /// Stage parameters as constants, for evaluation-only passes.
    pub fn stage_frozen(&self, tape: &mut Tape) -> Result<StagedNet> {
        self.stage_inner(tape, false)
    }

    fn stage_inner(&self, tape: &mut Tape, differentiable: bool) -> Result<StagedNet> {
        let mut ids = BTreeMap::new();
        for (name, t) in &self.tensors {
            let id = if differentiable {
                tape.leaf(&t.shape, t.values.clone())?
            } else {
                tape.constant(&t.shape, t.values.clone())?
            };
            ids.insert(name.clone(), id);
        }
        Ok(StagedNet {
            arch: self.arch.clone(),
            ids,
        })
    }

    /// Add the tape gradients of a staged copy into this set's grads.
    pub fn absorb_grads(&mut self, staged: &StagedNet, tape: &Tape) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            let id = staged.ids.get(name).ok_or_else(|| {
                SilaError::InvalidSpec(format!("staged copy is missing tensor {name}"))
            })?;
            let grad = tape.grad(*id).ok_or_else(|| {
                SilaError::InvalidSpec(format!("staged tensor {name} has no gradient"))
            })?;
            for (g, d) in t.grad.iter_mut().zip(grad) {
                *g += d;
            }
        }
        Ok(())
    }

    /// Copy of this set with i.i.d. N(0, sigma^2) noise added to every weight
    /// and bias. Gradients in the copy start at zero; the original is
    /// untouched.
    pub fn perturbed(&self, sigma: f64, seed: u64) -> Result<ParameterSet> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(SilaError::InvalidSpec(format!(
                "noise stddev must be nonnegative, got {sigma}"
            )));
        }
        let mut copy = self.clone();
        copy.zero_grads();
        if sigma == 0.0 {
            return Ok(copy);
        }
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| SilaError::InvalidSpec(format!("bad noise stddev: {e}")))?;
        let mut rng = seeded_rng(seed);
        for t in copy.tensors.values_mut() {
            for v in &mut t.values {
                *v += normal.sample(&mut rng);
            }
        }
        Ok(copy)
    }

    /// Write a versioned JSON checkpoint. Round-trips bitwise for finite
    /// values.
    pub fn save(&self, path: &Path) -> Result<()> {
        for (name, t) in &self.tensors {
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(SilaError::NonFinite {
                    context: format!("parameter {name}"),
                });
            }
        }
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            arch: self.arch.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), StoredTensor { shape: t.shape.clone(), values: t.values.clone() }))
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParameterSet> {
        let json = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&json)?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(SilaError::Config(format!(
                "unsupported checkpoint version {}",
                file.format_version
            )));
        }
        let mut tensors = BTreeMap::new();
        for (name, t) in file.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(SilaError::InvalidSpec(format!(
                    "checkpoint tensor {name} has inconsistent shape"
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(SilaError::NonFinite {
                    context: format!("checkpoint tensor {name}"),
                });
            }
            tensors.insert(name, ParamTensor::new(t.shape, t.values));
        }
        Ok(ParameterSet {
            arch: file.arch,
            tensors,
        })
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    arch: Arch,
    tensors: BTreeMap<String, StoredTensor>,
}

/// Parameter set staged onto a tape, ready to build forward graphs.
pub struct StagedNet {
    arch: Arch,
    ids: BTreeMap<String, NodeId>,
}

impl StagedNet {
    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    /// Node ids of every staged tensor, in name order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.ids.values().copied().collect()
    }

    fn id(&self, name: &str) -> NodeId {
        self.ids[name]
    }

    fn linear(&self, tape: &mut Tape, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
        let wx = tape.matmul(x, self.id(w))?;
        tape.add_bias(wx, self.id(b))
    }

    /// Logits of a plain MLP for a `[B, D]` batch.
    pub fn forward(&self, tape: &mut Tape, batch: NodeId) -> Result<NodeId> {
        let Arch::Mlp(spec) = &self.arch else {
            return Err(SilaError::ArchMismatch { expected: "plain" });
        };
        self.check_input(tape, batch, spec.input_dim)?;
        let layers = spec.hidden.len() + 1;
        let mut x = batch;
        for i in 0..layers {
            x = self.linear(tape, x, &format!("layer{i}.weight"), &format!("layer{i}.bias"))?;
            if i + 1 < layers {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Post-activation output of the last hidden layer.
    pub fn penultimate_features(&self, tape: &mut Tape, batch: NodeId) -> Result<NodeId> {
        let Arch::Mlp(spec) = &self.arch else {
            return Err(SilaError::ArchMismatch { expected: "plain" });
        };
        if spec.hidden.is_empty() {
            return Err(SilaError::InvalidSpec(
                "penultimate features need at least one hidden layer".into(),
            ));
        }
        self.check_input(tape, batch, spec.input_dim)?;
        let mut x = batch;
        for i in 0..spec.hidden.len() {
            x = self.linear(tape, x, &format!("layer{i}.weight"), &format!("layer{i}.bias"))?;
            x = tape.relu(x)?;
        }
        Ok(x)
    }

    /// Logits of every exit, shallow to deep. Exit `c` depends only on
    /// blocks `0..=c`.
    pub fn forward_multi_exit(&self, tape: &mut Tape, batch: NodeId) -> Result<Vec<NodeId>> {
        let Arch::MultiExit(spec) = &self.arch else {
            return Err(SilaError::ArchMismatch {
                expected: "multi-exit",
            });
        };
        self.check_input(tape, batch, spec.input_dim)?;
        let mut features = batch;
        let mut exits = Vec::with_capacity(spec.blocks.len());
        for (b, block) in spec.blocks.iter().enumerate() {
            for l in 0..block.len() {
                features = self.linear(
                    tape,
                    features,
                    &format!("block{b}.layer{l}.weight"),
                    &format!("block{b}.layer{l}.bias"),
                )?;
                features = tape.relu(features)?;
            }
            let logits =
                self.linear(tape, features, &format!("head{b}.weight"), &format!("head{b}.bias"))?;
            exits.push(logits);
        }
        Ok(exits)
    }

    fn check_input(&self, tape: &Tape, batch: NodeId, dim: usize) -> Result<()> {
        let shape = tape.shape(batch);
        if shape.len() != 2 || shape[1] != dim {
            return Err(SilaError::ShapeMismatch {
                op: "network input",
                lhs: shape.to_vec(),
                rhs: vec![0, dim],
            });
        }
        Ok(())
    }
}
