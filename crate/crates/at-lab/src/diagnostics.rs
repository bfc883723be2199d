//! Measurement instruments: natural/robust accuracy, per-term gradient
//! norms, and the filter-normalized adversarial weight loss landscape.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attacks::{cw_inf_attack, pgd_attack, AttackConfig, LossSelector};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{param_linear_comb, Layer, ModelParams};
use crate::objectives::{consistency_loss, ConsistencyKind};
use crate::seeds::{self, Purpose};
use crate::tensor::{Tape, Tensor};

/// Batch size used when sweeping a dataset during evaluation.
pub const EVAL_BATCH: usize = 250;

/// One per-epoch row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub nat_train: f64,
    pub nat_test: f64,
    pub rob_train: f64,
    pub rob_test: f64,
    pub robust_gap: f64,
    pub lambda: f64,
    pub lr: f64,
    pub grad_norm_ce: f64,
    pub grad_norm_cons: f64,
}

/// Attack used by accuracy evaluation.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum EvalAttack {
    None,
    /// PGD on cross-entropy.
    Pgd,
    /// PGD on the C&W margin loss.
    Cw,
}

/// Worker count for evaluation sweeps: the `AT_LAB_THREADS` env var,
/// default 1. Results are assembled by batch index, so they do not
/// depend on this value.
pub fn eval_threads() -> usize {
    std::env::var("AT_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn batch_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(EVAL_BATCH))
        .map(|b| (b * EVAL_BATCH, ((b + 1) * EVAL_BATCH).min(n)))
        .collect()
}

/// Counts correct predictions over `dataset`, attacking each batch first
/// when an attack is selected. A row whose argmax is tied counts as
/// incorrect. Deterministic in (params, dataset, cfg, seed) regardless of
/// the worker count.
fn correct_count(
    params: &ModelParams,
    dataset: &Dataset,
    attack: EvalAttack,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<usize> {
    let ranges = batch_ranges(dataset.len());
    let threads = eval_threads().min(ranges.len().max(1));

    let eval_batch = |(b, &(lo, hi)): (usize, &(usize, usize))| -> Result<usize> {
        let indices: Vec<usize> = (lo..hi).collect();
        let (x, y) = dataset.batch(&indices);
        let mut rng = seeds::stream(seed, Purpose::Eval, b as u64, 0);
        let x_eval = match attack {
            EvalAttack::None => x,
            EvalAttack::Pgd => {
                pgd_attack(params, &x, &y, cfg, &LossSelector::CrossEntropy, &mut rng)?
            }
            EvalAttack::Cw => cw_inf_attack(params, &x, &y, cfg, &mut rng)?,
        };
        let preds = params.forward_eval(&x_eval)?.argmax_rows()?;
        Ok(preds
            .iter()
            .zip(&y)
            .filter(|(p, &label)| **p == Some(label))
            .count())
    };

    if threads <= 1 {
        let mut total = 0;
        for item in ranges.iter().enumerate() {
            total += eval_batch(item)?;
        }
        return Ok(total);
    }

    // Batches are assigned round-robin and re-assembled by index, so the
    // count is the same for any worker count.
    let mut per_batch: Vec<Result<usize>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|worker| {
                let ranges = &ranges;
                let eval_batch = &eval_batch;
                scope.spawn(move || {
                    ranges
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| b % threads == worker)
                        .map(|item| (item.0, eval_batch(item)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut out: Vec<Result<usize>> = (0..ranges.len()).map(|_| Ok(0)).collect();
        for handle in handles {
            for (b, r) in handle.join().expect("eval worker panicked") {
                out[b] = r;
            }
        }
        out
    });
    let mut total = 0;
    for r in per_batch.drain(..) {
        total += r?;
    }
    Ok(total)
}

pub fn natural_accuracy(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let correct = correct_count(params, dataset, EvalAttack::None, &AttackConfig::default(), 0)?;
    Ok(correct as f64 / dataset.len() as f64)
}

/// Fraction of samples still classified correctly after the attack.
pub fn robust_accuracy(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &AttackConfig,
    attack: EvalAttack,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let correct = correct_count(params, dataset, attack, cfg, seed)?;
    Ok(correct as f64 / dataset.len() as f64)
}

fn concat_grad_norm(tape: &Tape, taped: &crate::models::TapedModel) -> f64 {
    let mut sq = 0.0;
    for (w, b) in &taped.layers {
        for var in [w, b] {
            if let Some(g) = tape.grad(*var) {
                sq += g.data().iter().map(|&v| v * v).sum::<f64>();
            }
        }
    }
    sq.sqrt()
}

/// Euclidean norms of the parameter gradients of the cross-entropy term
/// and the raw consistency term (the weight λ excluded), each from its
/// own backward pass on the same adversarial batch.
pub fn grad_norms(
    student: &ModelParams,
    teacher: &ModelParams,
    x: &Tensor,
    x_adv: &Tensor,
    labels: &[usize],
    kind: ConsistencyKind,
) -> Result<(f64, f64)> {
    student.check_same_arch(teacher)?;

    let mut tape = Tape::new();
    let taped = student.insert(&mut tape);
    let xav = tape.leaf(x_adv.clone());
    let logits = student.forward(&mut tape, &taped, xav)?;
    let ce = tape.softmax_cross_entropy(logits, labels)?;
    tape.backward(ce)?;
    let norm_ce = concat_grad_norm(&tape, &taped);

    let mut tape = Tape::new();
    let taped = student.insert(&mut tape);
    let xav = tape.leaf(x_adv.clone());
    let logits = student.forward(&mut tape, &taped, xav)?;
    let probs = tape.softmax(logits)?;
    let teacher_probs = teacher.forward_eval(x)?.softmax_rows()?;
    let cons = consistency_loss(&mut tape, kind, probs, &teacher_probs)?;
    tape.backward(cons)?;
    let norm_cons = concat_grad_norm(&tape, &taped);

    Ok((norm_ce, norm_cons))
}

/// Adversarial loss landscape along one weight-space direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSeries {
    pub alpha_grid: Vec<f64>,
    pub losses: Vec<f64>,
    pub direction_seed: u64,
}

impl LandscapeSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,loss\n");
        for (a, l) in self.alpha_grid.iter().zip(&self.losses) {
            out.push_str(&format!(
                "{},{}\n",
                crate::data::fmt_sig10(*a),
                crate::data::fmt_sig10(*l)
            ));
        }
        out
    }
}

/// 21 evenly spaced magnitudes in `[−1, 1]`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..21).map(|i| -1.0 + i as f64 * 0.1).collect()
}

/// Random Gaussian weight-space direction with the same architecture as
/// `theta`.
pub fn random_direction(theta: &ModelParams, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut dir = theta.clone();
    for layer in dir.layers_mut() {
        for v in layer.w.data_mut() {
            *v = StandardNormal.sample(rng);
        }
        for v in layer.b.data_mut() {
            *v = StandardNormal.sample(rng);
        }
    }
    dir
}

/// Rescales each output-neuron weight group of `d` to the Frobenius norm
/// of the corresponding group of `theta` (per-filter normalization, with
/// a dense layer's filter being one output neuron's incoming weights).
/// Bias directions are zeroed. A zero-norm direction group is resampled.
pub fn filter_normalize(
    d: &ModelParams,
    theta: &ModelParams,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams> {
    d.check_same_arch(theta)?;
    let mut out = d.clone();
    for (layer, theta_layer) in out.layers_mut().iter_mut().zip(theta.layers()) {
        let (d_in, d_out) = layer.w.as_2d("filter_normalize")?;
        for j in 0..d_out {
            let col_norm = |t: &Layer| -> f64 {
                (0..d_in)
                    .map(|i| t.w.data()[i * d_out + j].powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let target = col_norm(theta_layer);
            if target == 0.0 {
                for i in 0..d_in {
                    layer.w.data_mut()[i * d_out + j] = 0.0;
                }
                continue;
            }
            let mut norm = col_norm(layer);
            while norm == 0.0 {
                for i in 0..d_in {
                    layer.w.data_mut()[i * d_out + j] = StandardNormal.sample(rng);
                }
                norm = col_norm(layer);
            }
            let scale = target / norm;
            for i in 0..d_in {
                layer.w.data_mut()[i * d_out + j] *= scale;
            }
        }
        for v in layer.b.data_mut() {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the dataset on PGD-attacked inputs, with
/// per-batch attack streams derived from `seed`.
pub fn adversarial_loss(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (b, (lo, hi)) in batch_ranges(dataset.len()).into_iter().enumerate() {
        let indices: Vec<usize> = (lo..hi).collect();
        let (x, y) = dataset.batch(&indices);
        let mut rng = seeds::stream(seed, Purpose::Attack, b as u64, 0);
        let x_adv = pgd_attack(params, &x, &y, cfg, &LossSelector::CrossEntropy, &mut rng)?;
        let mut tape = Tape::new();
        let xv = tape.leaf(x_adv);
        let (_, logits) = params.forward_recorded(&mut tape, xv)?;
        let loss = tape.softmax_cross_entropy(logits, &y)?;
        total += tape.value(loss).scalar_value()? * indices.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

/// Probes `L(θ + α·d)` over `alpha_grid` with a filter-normalized random
/// direction; adversarial examples are regenerated against each perturbed
/// model. The grid must contain 0.
pub fn landscape_probe(
    params: &ModelParams,
    dataset: &Dataset,
    alpha_grid: &[f64],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<LandscapeSeries> {
    if !alpha_grid.contains(&0.0) {
        return Err(Error::InvalidConfig(
            "alpha grid must contain 0".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let mut dir_rng = seeds::stream(seed, Purpose::Direction, 0, 0);
    let raw = random_direction(params, &mut dir_rng);
    let dir = filter_normalize(&raw, params, &mut dir_rng)?;

    let mut losses = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let perturbed = param_linear_comb(params, &dir, 1.0, alpha)?;
        losses.push(adversarial_loss(&perturbed, dataset, cfg, seed)?);
    }
    Ok(LandscapeSeries {
        alpha_grid: alpha_grid.to_vec(),
        losses,
        direction_seed: seed,
    })
}
