//! Training loops: PGD-AT, TRADES, and their mean-teacher variants, with
//! momentum SGD, a step learning-rate schedule, EMA teacher maintenance,
//! and per-epoch metric emission.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_attack, pgd_mt_attack, AttackConfig, LossSelector};
use crate::data::Dataset;
use crate::diagnostics::{
    grad_norms, natural_accuracy, robust_accuracy, EvalAttack, MetricsRecord,
};
use crate::error::{Error, Result};
use crate::models::{param_linear_comb, ModelParams, TapedModel};
use crate::objectives::{
    mt_loss, rampup_weight, trades_loss, trades_mt_loss, ConsistencyKind, RampupConfig,
};
use crate::seeds::{self, Purpose};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PgdAt,
    Trades,
    PgdAtMt,
    TradesMt,
}

impl Method {
    pub fn uses_teacher(self) -> bool {
        matches!(self, Method::PgdAtMt | Method::TradesMt)
    }

    pub fn uses_trades(self) -> bool {
        matches!(self, Method::Trades | Method::TradesMt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::PgdAt => "pgd_at",
            Method::Trades => "trades",
            Method::PgdAtMt => "pgd_at_mt",
            Method::TradesMt => "trades_mt",
        }
    }
}

/// Step schedule: the initial rate divided by `decay_factor` once per
/// passed decay epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 0.3,
            decay_epochs: vec![29],
            decay_factor: 10.0,
        }
    }
}

pub fn lr_at(epoch: usize, schedule: &LrSchedule) -> f64 {
    let passed = schedule.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    schedule.initial / schedule.decay_factor.powi(passed as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// TRADES trade-off weight.
    pub beta: f64,
    pub attack: AttackConfig,
    pub consistency: ConsistencyKind,
    pub rampup: RampupConfig,
    pub ema_decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::PgdAt,
            epochs: 60,
            batch_size: 128,
            lr: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 5e-4,
            beta: 6.0,
            attack: AttackConfig::default(),
            consistency: ConsistencyKind::Mse,
            rampup: RampupConfig {
                lambda_max: 30.0,
                start_epoch: 30,
                ramp_len: 20,
            },
            ema_decay: 0.999,
            hidden: vec![256, 256],
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidConfig(format!(
                "ema_decay must be in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if self.method.uses_teacher() && self.rampup.start_epoch > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warm-up epoch {} exceeds total epochs {}",
                self.rampup.start_epoch, self.epochs
            )));
        }
        if !self.lr.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "decay epochs must be strictly increasing".into(),
            ));
        }
        if self.lr.initial <= 0.0 || self.lr.decay_factor <= 0.0 {
            return Err(Error::InvalidConfig("lr values must be > 0".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        self.attack.validate()?;
        self.rampup.validate()?;
        Ok(())
    }

    fn arch(&self, dataset: &Dataset) -> Vec<usize> {
        let mut arch = vec![dataset.dim()];
        arch.extend_from_slice(&self.hidden);
        arch.push(dataset.classes);
        arch
    }
}

/// `θ_t ← η·θ_t + (1−η)·θ_s` elementwise.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, eta: f64) -> Result<ModelParams> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!(
            "ema decay must be in [0, 1), got {eta}"
        )));
    }
    param_linear_comb(teacher, student, eta, 1.0 - eta)
}

/// Momentum buffers for SGD, one pair per layer.
pub struct SgdState {
    velocity: Vec<(Tensor, Tensor)>,
}

impl SgdState {
    pub fn new(params: &ModelParams) -> SgdState {
        SgdState {
            velocity: params
                .layers()
                .iter()
                .map(|l| {
                    (
                        Tensor::zeros(l.w.shape().to_vec()),
                        Tensor::zeros(l.b.shape().to_vec()),
                    )
                })
                .collect(),
        }
    }
}

/// Pulls the parameter gradients of `taped` out of `tape`, erroring with
/// the parameter's name if a gradient is missing.
pub fn collect_param_grads(tape: &Tape, taped: &TapedModel) -> Result<Vec<(Tensor, Tensor)>> {
    let grab = |var: Var, name: String| -> Result<Tensor> {
        tape.grad(var)
            .cloned()
            .ok_or(Error::MissingGradient { name })
    };
    taped
        .layers
        .iter()
        .enumerate()
        .map(|(i, (w, b))| {
            Ok((
                grab(*w, format!("layer {i} weight"))?,
                grab(*b, format!("layer {i} bias"))?,
            ))
        })
        .collect()
}

/// One momentum-SGD step:
/// `v ← momentum·v + (grad + weight_decay·param); param ← param − lr·v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &[(Tensor, Tensor)],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::InvalidConfig(format!("lr must be > 0, got {lr}")));
    }
    for ((layer, (gw, gb)), (vw, vb)) in params
        .layers_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.velocity)
    {
        for ((p, &g), v) in layer
            .w
            .data_mut()
            .iter_mut()
            .zip(gw.data())
            .zip(vw.data_mut())
        {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        }
        for ((p, &g), v) in layer
            .b
            .data_mut()
            .iter_mut()
            .zip(gb.data())
            .zip(vb.data_mut())
        {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Per-batch training diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStat {
    pub epoch: usize,
    pub batch: usize,
    /// Value of the method objective at this step (before the update).
    pub loss: f64,
    /// Cross-entropy on the clean batch at the same parameters.
    pub clean_ce: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub student: ModelParams,
    /// Equals `student` for methods without a teacher.
    pub teacher: ModelParams,
    pub history: Vec<MetricsRecord>,
    /// Epoch with the highest test robust accuracy, and its evaluated
    /// parameters.
    pub best_epoch: usize,
    pub best_params: ModelParams,
    pub batch_stats: Vec<BatchStat>,
}

fn clean_ce_value(params: &ModelParams, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let (_, logits) = params.forward_recorded(&mut tape, xv)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    tape.value(loss).scalar_value()
}

pub fn train(cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InvalidConfig("datasets must be non-empty".into()));
    }
    let arch = cfg.arch(train_set);
    let warm_up = cfg.rampup.start_epoch;
    let is_mt = cfg.method.uses_teacher();

    let mut student = ModelParams::init(&arch, cfg.seed)?;
    let mut teacher = student.clone();
    let mut sgd = SgdState::new(&student);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_stats = Vec::new();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_params = student.clone();

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, &cfg.lr);
        let lambda = if is_mt {
            rampup_weight(epoch, &cfg.rampup)
        } else {
            0.0
        };

        let mut shuffle_rng = seeds::stream(cfg.seed, Purpose::Shuffle, epoch as u64, 0);
        indices.shuffle(&mut shuffle_rng);

        let mut last_batch: Option<(Tensor, Tensor, Vec<usize>)> = None;
        for (b, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_set.batch(chunk);
            let mut attack_rng = seeds::stream(cfg.seed, Purpose::Attack, epoch as u64, b as u64);

            let x_adv = if is_mt && epoch >= warm_up {
                pgd_mt_attack(
                    &student,
                    &teacher,
                    &x,
                    &y,
                    &cfg.attack,
                    lambda,
                    cfg.consistency,
                    &mut attack_rng,
                )?
            } else if cfg.method.uses_trades() {
                let clean_probs = student.forward_eval(&x)?.softmax_rows()?;
                pgd_attack(
                    &student,
                    &x,
                    &y,
                    &cfg.attack,
                    &LossSelector::TradesKl { clean_probs },
                    &mut attack_rng,
                )?
            } else {
                pgd_attack(
                    &student,
                    &x,
                    &y,
                    &cfg.attack,
                    &LossSelector::CrossEntropy,
                    &mut attack_rng,
                )?
            };

            let mut tape = Tape::new();
            let (taped, loss) = match cfg.method {
                Method::PgdAt => {
                    let taped = student.insert(&mut tape);
                    let xav = tape.leaf(x_adv.clone());
                    let logits = student.forward(&mut tape, &taped, xav)?;
                    let loss = tape.softmax_cross_entropy(logits, &y)?;
                    (taped, loss)
                }
                Method::Trades => trades_loss(&mut tape, &student, &x, &x_adv, &y, cfg.beta)?,
                Method::PgdAtMt => mt_loss(
                    &mut tape,
                    &student,
                    &teacher,
                    &x,
                    &x_adv,
                    &y,
                    lambda,
                    cfg.consistency,
                )?,
                Method::TradesMt => trades_mt_loss(
                    &mut tape,
                    &student,
                    &teacher,
                    &x,
                    &x_adv,
                    &y,
                    cfg.beta,
                    lambda,
                    cfg.consistency,
                )?,
            };
            let loss_value = tape.value(loss).scalar_value()?;
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            batch_stats.push(BatchStat {
                epoch,
                batch: b,
                loss: loss_value,
                clean_ce: clean_ce_value(&student, &x, &y)?,
            });

            tape.backward(loss)?;
            let grads = collect_param_grads(&tape, &taped)?;
            sgd_step(
                &mut student,
                &grads,
                &mut sgd,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;

            if is_mt {
                if epoch < warm_up {
                    teacher = student.clone();
                } else {
                    teacher = ema_update(&teacher, &student, cfg.ema_decay)?;
                }
            }
            last_batch = Some((x, x_adv, y));
        }

        let eval_params: &ModelParams = if is_mt { &teacher } else { &student };
        let nat_train = natural_accuracy(eval_params, train_set)?;
        let nat_test = natural_accuracy(eval_params, test_set)?;
        let rob_train = robust_accuracy(
            eval_params,
            train_set,
            &cfg.attack,
            EvalAttack::Pgd,
            seeds::combine(cfg.seed, epoch as u64, 1),
        )?;
        let rob_test = robust_accuracy(
            eval_params,
            test_set,
            &cfg.attack,
            EvalAttack::Pgd,
            seeds::combine(cfg.seed, epoch as u64, 2),
        )?;

        let (x, x_adv, y) = last_batch.expect("at least one batch per epoch");
        let grad_teacher: &ModelParams = if is_mt { &teacher } else { &student };
        let (grad_norm_ce, grad_norm_cons) =
            grad_norms(&student, grad_teacher, &x, &x_adv, &y, cfg.consistency)?;

        history.push(MetricsRecord {
            epoch,
            nat_train,
            nat_test,
            rob_train,
            rob_test,
            robust_gap: rob_train - rob_test,
            lambda,
            lr,
            grad_norm_ce,
            grad_norm_cons,
        });

        if rob_test > best_acc {
            best_acc = rob_test;
            best_epoch = epoch;
            best_params = eval_params.clone();
        }
    }

    if !is_mt {
        teacher = student.clone();
    }
    Ok(TrainedModel {
        student,
        teacher,
        history,
        best_epoch,
        best_params,
        batch_stats,
    })
}
