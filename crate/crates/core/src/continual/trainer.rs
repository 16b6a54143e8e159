use serde::{Deserialize, Serialize};

use crate::adapter::{inflora_design, BranchStrategy};
use crate::gating::{constrain_update, init_new_gating, GatingBank, GatingShape};
use crate::model::{argmax, BranchVars, Dataset, TaskData, TaskSequence, ToyBackbone};
use crate::numerics::{AdamW, Graph, Mat, Rng, Stream, Var};
use crate::subspace::{SubspaceBasis, SubspaceMemory};
use crate::{Error, Result};

use super::metrics::{compute_ap, compute_ft, AccuracyMatrix};
use super::strategy::StrategyConfig;

/// Everything a continual run carries from one task to the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinualState {
    pub backbone: ToyBackbone,
    pub gates: GatingBank,
    pub memory: SubspaceMemory,
    /// Per adapted layer: span of the inputs seen by earlier tasks.
    pub grad_spaces: Vec<SubspaceBasis>,
    pub tasks_learned: usize,
    pub matrix: AccuracyMatrix,
    pub logs: Vec<TaskLog>,
}

/// Training summary of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub task: usize,
    pub steps: u64,
    pub first_loss: f64,
    pub final_loss: f64,
    /// Train-set accuracy (percent) right after the task.
    pub train_accuracy: f64,
    /// Basis sizes of the gating memory after the task.
    pub memory_ranks: Vec<usize>,
}

impl ContinualState {
    pub fn new(backbone: ToyBackbone, cfg: &StrategyConfig, total_tasks: usize) -> Result<Self> {
        let memory = SubspaceMemory::new(&gate_shape(&backbone, cfg).input_dims(), cfg.eps_th)?;
        let grad_spaces = backbone
            .layers()
            .iter()
            .map(|l| SubspaceBasis::empty(l.d_in()))
            .collect();
        Ok(Self {
            backbone,
            gates: GatingBank::new(),
            memory,
            grad_spaces,
            tasks_learned: 0,
            matrix: AccuracyMatrix::new(total_tasks),
            logs: Vec::new(),
        })
    }

    /// n×t integration coefficients, or `None` when every coefficient is 1.
    pub fn coefficients(&self, cfg: &StrategyConfig, x: &Mat) -> Result<Option<Mat>> {
        if cfg.gating.is_gated() {
            Ok(Some(self.gates.coefficients(x)?))
        } else {
            Ok(None)
        }
    }

    /// Percent of `data` classified correctly with every gate active.
    pub fn accuracy(&self, cfg: &StrategyConfig, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let x = self.backbone.pooled_batch(&data.samples)?;
        let coeffs = self.coefficients(cfg, &x)?;
        let logits = self.backbone.logits_batch(&x, coeffs.as_ref())?;
        let correct = data
            .samples
            .iter()
            .enumerate()
            .filter(|(r, s)| argmax(logits.row(*r)) == s.label)
            .count();
        Ok(100.0 * correct as f64 / data.len() as f64)
    }

    /// Accuracy row after `tasks_learned` tasks: one entry per learned task.
    pub fn evaluate(&self, cfg: &StrategyConfig, seq: &TaskSequence) -> Result<Vec<f64>> {
        seq.tasks[..self.tasks_learned]
            .iter()
            .map(|t| self.accuracy(cfg, &t.test))
            .collect()
    }
}

pub fn gate_shape(backbone: &ToyBackbone, cfg: &StrategyConfig) -> GatingShape {
    GatingShape {
        embed_dim: backbone.shape.embed_dim,
        hidden: cfg.gate_hidden,
        layers: cfg.gate_layers,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    A(usize),
    B(usize),
    Gate(usize),
}

fn slot_value(state: &ContinualState, slot: Slot) -> &Mat {
    let layers = state.backbone.layers();
    match slot {
        Slot::A(l) => &layers[l].branches().last().expect("branch").a,
        Slot::B(l) => &layers[l].branches().last().expect("branch").b,
        Slot::Gate(l) => &state.gates.last().expect("gate").weights()[l],
    }
}

/// Training loop for one task. Create with [`TaskTrainer::begin`], call
/// [`TaskTrainer::step`] on minibatches, then [`TaskTrainer::finish`].
pub struct TaskTrainer<'a> {
    state: &'a mut ContinualState,
    cfg: &'a StrategyConfig,
    task: usize,
    x: Mat,
    labels: Vec<usize>,
    /// Coefficients of the frozen gates on the training inputs.
    frozen_coeffs: Option<Mat>,
    slots: Vec<Slot>,
    opt: AdamW,
    batch_rng: Rng,
    first_loss: Option<f64>,
    last_loss: f64,
}

impl<'a> TaskTrainer<'a> {
    /// Expands the branch, builds the new gate and the optimizer for task `task`.
    pub fn begin(state: &'a mut ContinualState, cfg: &'a StrategyConfig, task: usize, data: &TaskData) -> Result<Self> {
        cfg.validate()?;
        if task != state.tasks_learned {
            return Err(Error::OrderViolation {
                expected: state.tasks_learned,
                got: task,
            });
        }
        if data.train.is_empty() {
            return Err(Error::EmptyInput);
        }
        for s in &data.train.samples {
            state.backbone.check_tokens(&s.tokens)?;
        }
        let x = state.backbone.pooled_batch(&data.train.samples)?;
        let labels = data.train.labels();
        if let Some(&bad) = labels.iter().find(|&&l| l >= state.backbone.shape.classes) {
            return Err(Error::Schema(format!(
                "label {bad} outside {} classes",
                state.backbone.shape.classes
            )));
        }

        let gated = cfg.gating.is_gated();
        let frozen_coeffs = if gated {
            Some(state.gates.coefficients(&x)?)
        } else {
            None
        };

        // Branch expansion.
        match cfg.branch {
            BranchStrategy::Inflora => {
                let (inputs, _) = state.backbone.hidden_batch(&x, frozen_coeffs.as_ref())?;
                for (l, h) in inputs.iter().enumerate() {
                    let b = inflora_design(&h.transpose(), &state.grad_spaces[l], cfg.rank)?;
                    state.backbone.layers_mut()[l].expand_designed(b)?;
                }
            }
            BranchStrategy::Seq if state.backbone.branch_count() > 0 => {}
            _ => {
                let mut rng = Rng::stream(cfg.seed, Stream::Branch, task as u64);
                for layer in state.backbone.layers_mut() {
                    layer.expand_branch(cfg.rank, &mut rng, cfg.lora_init_std)?;
                }
            }
        }

        if let Some(flags) = cfg.gating.flags() {
            let shape = gate_shape(&state.backbone, cfg);
            let mut rng = Rng::stream(cfg.seed, Stream::Gate, task as u64);
            let gate = init_new_gating(
                state.gates.last(),
                shape,
                cfg.gating.effective_gate(cfg.gate_fn),
                &state.memory,
                &mut rng,
                cfg.gate_init_std,
                flags.init,
            )?;
            state.gates.push(gate);
        }

        let mut slots = Vec::new();
        let mut shapes = Vec::new();
        for (l, layer) in state.backbone.layers().iter().enumerate() {
            let br = layer.branches().last().expect("branch just ensured");
            slots.push(Slot::A(l));
            shapes.push(br.a.shape());
            if !br.is_b_frozen() {
                slots.push(Slot::B(l));
                shapes.push(br.b.shape());
            }
        }
        if gated {
            for (l, w) in state
                .gates
                .last()
                .expect("gate just pushed")
                .weights()
                .iter()
                .enumerate()
            {
                slots.push(Slot::Gate(l));
                shapes.push(w.shape());
            }
        }
        let opt = AdamW::new(cfg.optimizer, &shapes);
        let batch_rng = Rng::stream(cfg.seed, Stream::Batches, task as u64);
        Ok(Self {
            state,
            cfg,
            task,
            x,
            labels,
            frozen_coeffs,
            slots,
            opt,
            batch_rng,
            first_loss: None,
            last_loss: f64::NAN,
        })
    }

    pub fn state(&self) -> &ContinualState {
        self.state
    }

    pub fn train_inputs(&self) -> &Mat {
        &self.x
    }

    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    /// One epoch of shuffled minibatch indices.
    pub fn epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.x.rows()).collect();
        self.batch_rng.shuffle(&mut idx);
        idx.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Records loss on `idx`; returns the loss and the graph handles of the trainable slots.
    fn record(&self, g: &mut Graph, idx: &[usize]) -> Result<(Var, Vec<Var>)> {
        let x = g.constant(self.x.select_rows(idx));
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let mut vars: Vec<Option<Var>> = vec![None; self.slots.len()];
        let slot_of = |s: Slot| self.slots.iter().position(|&x| x == s);

        let backbone = &self.state.backbone;
        let mut branch_vars: Vec<BranchVars> = Vec::new();
        for (l, layer) in backbone.layers().iter().enumerate() {
            let n = layer.branches().len();
            let mut bv = Vec::with_capacity(n);
            for (i, br) in layer.branches().iter().enumerate() {
                let last = i + 1 == n;
                let a = match slot_of(Slot::A(l)).filter(|_| last) {
                    Some(k) => *vars[k].insert(g.param(br.a.clone())),
                    None => g.constant(br.a.clone()),
                };
                let b = match slot_of(Slot::B(l)).filter(|_| last) {
                    Some(k) => *vars[k].insert(g.param(br.b.clone())),
                    None => g.constant(br.b.clone()),
                };
                bv.push((a, b));
            }
            branch_vars.push(bv);
        }

        let coeffs: Vec<Option<Var>> = match &self.frozen_coeffs {
            None => vec![None; backbone.branch_count()],
            Some(frozen) => {
                let frozen = frozen.select_rows(idx);
                let mut cs: Vec<Option<Var>> = (0..frozen.cols())
                    .map(|j| Some(g.constant(Mat::col_vector(&frozen.col(j)))))
                    .collect();
                let gate = self.state.gates.last().expect("gate");
                let params: Vec<Var> = (0..gate.weights().len())
                    .map(|l| {
                        let k = slot_of(Slot::Gate(l)).expect("gate slot");
                        *vars[k].insert(g.param(gate.weights()[l].clone()))
                    })
                    .collect();
                cs.push(Some(gate.build(g, x, &params)));
                cs
            }
        };

        let logits = backbone.build(g, x, &branch_vars, &coeffs);
        let mut loss = g.softmax_ce(logits, &labels);
        if self.cfg.branch == BranchStrategy::Olora && self.cfg.lambda > 0.0 {
            for (l, layer) in backbone.layers().iter().enumerate() {
                let Some((_, old)) = layer.branches().split_last() else {
                    continue;
                };
                let bt = branch_vars[l].last().expect("branch").1;
                for br in old {
                    let bi = g.constant(br.b.clone());
                    let p = g.matmul_t(bi, bt);
                    let s = g.sum_sq(p);
                    let s = g.scale(s, self.cfg.lambda);
                    loss = g.add(loss, s);
                }
            }
        }
        let vars = vars.into_iter().map(|v| v.expect("every slot bound")).collect();
        Ok((loss, vars))
    }

    /// Loss on `idx` without updating anything.
    pub fn loss(&self, idx: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = self.record(&mut g, idx)?;
        Ok(g.value(loss)[(0, 0)])
    }

    /// One optimizer step on the samples `idx`; returns the pre-step loss.
    pub fn step(&mut self, idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut g = Graph::new();
        let (loss, vars) = self.record(&mut g, idx)?;
        let value = g.value(loss)[(0, 0)];
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        g.backward(loss)?;
        let grads: Vec<&Mat> = vars.iter().map(|&v| g.grad(v).expect("param has gradient")).collect();
        let state = &*self.state;
        let params: Vec<&Mat> = self.slots.iter().map(|&s| slot_value(state, s)).collect();
        let mut deltas = self.opt.deltas(&params, &grads);
        drop(g);

        let constrain = self.cfg.gating.flags().is_some_and(|f| f.update);
        for (slot, delta) in self.slots.iter().zip(&mut deltas) {
            if let (Slot::Gate(l), true) = (slot, constrain) {
                *delta = constrain_update(delta, self.state.memory.layer(*l))?;
            }
        }
        for (&slot, delta) in self.slots.iter().zip(&deltas) {
            let target = match slot {
                Slot::A(l) => {
                    &mut self.state.backbone.layers_mut()[l]
                        .trainable_branch_mut()
                        .expect("trainable")
                        .a
                }
                Slot::B(l) => {
                    &mut self.state.backbone.layers_mut()[l]
                        .trainable_branch_mut()
                        .expect("trainable")
                        .b
                }
                Slot::Gate(l) => &mut self
                    .state
                    .gates
                    .trainable_mut()
                    .expect("trainable")
                    .weights_mut()
                    .expect("unfrozen")[l],
            };
            target.add_assign(delta);
            if !target.is_finite() {
                return Err(Error::NonFinite("parameters"));
            }
        }
        self.first_loss.get_or_insert(value);
        self.last_loss = value;
        Ok(value)
    }

    /// Runs every configured epoch.
    pub fn train(&mut self) -> Result<()> {
        for _ in 0..self.cfg.epochs {
            for batch in self.epoch_batches() {
                self.step(&batch)?;
            }
        }
        Ok(())
    }

    /// Freezes the task's parameters and grows the stored subspaces.
    pub fn finish(self, data: &TaskData) -> Result<TaskLog> {
        let Self {
            state,
            cfg,
            task,
            x,
            first_loss,
            last_loss,
            opt,
            ..
        } = self;
        if cfg.branch.expands() {
            for layer in state.backbone.layers_mut() {
                layer.freeze_all();
            }
        }
        state.gates.freeze_all();

        let mut rng = Rng::stream(cfg.seed, Stream::Traces, task as u64);
        let sub = x.select_rows(&rng.subsample(x.rows(), cfg.trace_samples));
        if cfg.gating.is_gated() {
            let (_, traces) = state.gates.last().expect("gate").forward_batch(&sub)?;
            state.memory.extend_with_traces(&traces)?;
        }
        if cfg.branch == BranchStrategy::Inflora {
            let coeffs = state.coefficients(cfg, &sub)?;
            let (inputs, _) = state.backbone.hidden_batch(&sub, coeffs.as_ref())?;
            for (space, h) in state.grad_spaces.iter_mut().zip(&inputs) {
                *space = space.extend(&h.transpose(), cfg.eps_th)?;
            }
        }
        state.tasks_learned = task + 1;
        let log = TaskLog {
            task,
            steps: opt.steps(),
            first_loss: first_loss.unwrap_or(f64::NAN),
            final_loss: last_loss,
            train_accuracy: state.accuracy(cfg, &data.train)?,
            memory_ranks: state.memory.layers().iter().map(SubspaceBasis::rank).collect(),
        };
        state.logs.push(log.clone());
        Ok(log)
    }
}

/// Learns task `task` end to end.
pub fn learn_task(state: &mut ContinualState, cfg: &StrategyConfig, task: usize, data: &TaskData) -> Result<TaskLog> {
    let mut trainer = TaskTrainer::begin(state, cfg, task, data)?;
    trainer.train()?;
    trainer.finish(data)
}

/// Integration coefficients of one gate on one task's test inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSample {
    pub gate: usize,
    pub task: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub config: StrategyConfig,
    pub matrix: AccuracyMatrix,
    pub ap: f64,
    /// `None` for a single task.
    pub ft: Option<f64>,
    /// AP after each task.
    pub trajectory: Vec<f64>,
    /// Every gate on every task's test set, after the final task.
    pub gating: Vec<GateSample>,
    pub trainable_params: u64,
    pub logs: Vec<TaskLog>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunResult {
    /// Values of the final gate on old-task and on new-task test inputs.
    pub fn final_gate_split(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let last = self.gating.iter().map(|s| s.gate).max()?;
        let new_task = self.matrix.tasks - 1;
        let (mut old, mut new) = (Vec::new(), Vec::new());
        for s in self.gating.iter().filter(|s| s.gate == last) {
            if s.task == new_task { &mut new } else { &mut old }.extend(&s.values);
        }
        Some((old, new))
    }
}

/// Called after each finished task with the state and the task index.
pub type TaskHook<'h> = dyn FnMut(&ContinualState, usize) -> Result<()> + 'h;

/// Learns and evaluates every task in order.
pub fn run_sequence(cfg: &StrategyConfig, seq: &TaskSequence, backbone: ToyBackbone) -> Result<RunResult> {
    let state = ContinualState::new(backbone, cfg, seq.len())?;
    resume_sequence(cfg, seq, state, &mut |_, _| Ok(()))
}

/// Continues a run from `state` (possibly restored from a checkpoint).
pub fn resume_sequence(
    cfg: &StrategyConfig,
    seq: &TaskSequence,
    mut state: ContinualState,
    on_task: &mut TaskHook<'_>,
) -> Result<RunResult> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    if state.matrix.tasks != seq.len() || state.matrix.rows.len() != state.tasks_learned {
        return Err(Error::Checkpoint("state does not match the task sequence".into()));
    }
    let started = std::time::Instant::now();
    for t in state.tasks_learned..seq.len() {
        let log = learn_task(&mut state, cfg, t, &seq.tasks[t])?;
        log::info!(
            "seed {} task {}: loss {:.4} -> {:.4}, train acc {:.1}%",
            cfg.seed,
            t,
            log.first_loss,
            log.final_loss,
            log.train_accuracy
        );
        let row = state.evaluate(cfg, seq)?;
        state.matrix.push_row(row)?;
        on_task(&state, t)?;
    }
    finalize(cfg, seq, &state, started.elapsed().as_secs_f64())
}

/// Builds the result from a state that has learned every task.
pub fn finalize(
    cfg: &StrategyConfig,
    seq: &TaskSequence,
    state: &ContinualState,
    wall_clock_secs: f64,
) -> Result<RunResult> {
    let matrix = state.matrix.clone();
    let ap = compute_ap(&matrix)?;
    let ft = match compute_ft(&matrix) {
        Ok(ft) => Some(ft),
        Err(Error::SingleTask) => None,
        Err(e) => return Err(e),
    };
    let mut gating = Vec::new();
    for (i, task) in seq.tasks.iter().enumerate() {
        let x = state.backbone.pooled_batch(&task.test.samples)?;
        for (j, gate) in state.gates.modules().iter().enumerate() {
            let (values, _) = gate.forward_batch(&x)?;
            gating.push(GateSample {
                gate: j,
                task: i,
                values,
            });
        }
    }
    gating.sort_by_key(|s| (s.gate, s.task));
    let arch = super::params::ArchSpec::toy(
        state.backbone.shape.embed_dim,
        state.backbone.shape.hidden,
        cfg.gate_hidden,
        cfg.gate_layers,
    );
    let strategy = super::params::ParamStrategy {
        branch: cfg.branch,
        gain: cfg.gating.is_gated(),
    };
    Ok(RunResult {
        seed: cfg.seed,
        config: cfg.clone(),
        trajectory: matrix.trajectory(),
        matrix,
        ap,
        ft,
        gating,
        trainable_params: super::params::count_trainable_params(&arch, strategy, cfg.rank),
        logs: state.logs.clone(),
        wall_clock_secs,
    })
}
