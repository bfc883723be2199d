//! Outer-minimization losses: adversarial cross-entropy, TRADES, the
//! MSE/KL consistency losses, the mean-teacher objective, and the
//! consistency-weight ramp-up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelParams, TapedModel};
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to probabilities before any log, so `0·ln 0` evaluates
/// to 0 and `ln` never sees an exact zero.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyKind {
    Mse,
    Kl,
}

/// Gaussian ramp-up of the consistency weight: 0 before `start_epoch`,
/// then `lambda_max · exp(−5(1−p)²)` with `p` rising linearly to 1 over
/// `ramp_len` epochs.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RampupConfig {
    pub lambda_max: f64,
    pub start_epoch: usize,
    pub ramp_len: usize,
}

impl Default for RampupConfig {
    fn default() -> Self {
        RampupConfig {
            lambda_max: 30.0,
            start_epoch: 30,
            ramp_len: 20,
        }
    }
}

impl RampupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_max < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_max must be >= 0, got {}",
                self.lambda_max
            )));
        }
        if self.ramp_len < 1 {
            return Err(Error::InvalidConfig("ramp_len must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn rampup_weight(epoch: usize, cfg: &RampupConfig) -> f64 {
    if epoch < cfg.start_epoch {
        return 0.0;
    }
    let p = ((epoch - cfg.start_epoch + 1) as f64 / cfg.ramp_len as f64).min(1.0);
    cfg.lambda_max * (-5.0 * (1.0 - p) * (1.0 - p)).exp()
}

/// Mean over the batch of `‖p − q‖²` for two `m×C` probability matrices.
pub fn mse_between(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let (m, _) = tape.value(p).as_2d("consistency_mse")?;
    let d = tape.sub(p, q)?;
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scalar_mul(s, 1.0 / m as f64))
}

/// Mean over the batch of `KL(p ‖ q)`, with both sides clamped at
/// [`PROB_FLOOR`] before the log. Differentiable through both arguments.
pub fn kl_between(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let (m, _) = tape.value(p).as_2d("consistency_kl")?;
    tape.value(q).as_2d("consistency_kl")?;
    let pc = tape.clamp_min(p, PROB_FLOOR);
    let qc = tape.clamp_min(q, PROB_FLOOR);
    let lp = tape.log(pc);
    let lq = tape.log(qc);
    let diff = tape.sub(lp, lq)?;
    let terms = tape.mul(p, diff)?;
    let s = tape.sum(terms);
    Ok(tape.scalar_mul(s, 1.0 / m as f64))
}

/// The consistency term of the mean-teacher objective. The teacher
/// distribution enters as a constant, so no gradient reaches it.
///
/// MSE is symmetric in its arguments; for KL the argument order follows
/// the training algorithm, `KL(teacher ‖ student)`.
pub fn consistency_loss(
    tape: &mut Tape,
    kind: ConsistencyKind,
    student_probs: Var,
    teacher_probs: &Tensor,
) -> Result<Var> {
    if tape.value(student_probs).shape() != teacher_probs.shape() {
        return Err(Error::ShapeMismatch {
            op: "consistency_loss",
            left: tape.value(student_probs).shape().to_vec(),
            right: teacher_probs.shape().to_vec(),
        });
    }
    let teacher = tape.leaf(teacher_probs.clone());
    match kind {
        ConsistencyKind::Mse => mse_between(tape, student_probs, teacher),
        ConsistencyKind::Kl => kl_between(tape, teacher, student_probs),
    }
}

/// TRADES: `CE(f(x), y) + β·KL(f(x) ‖ f(x_adv))`, clean distribution
/// first. Returns the taped parameter handles alongside the loss so the
/// caller can read parameter gradients after backward.
pub fn trades_loss(
    tape: &mut Tape,
    params: &ModelParams,
    x: &Tensor,
    x_adv: &Tensor,
    labels: &[usize],
    beta: f64,
) -> Result<(TapedModel, Var)> {
    let taped = params.insert(tape);
    let xv = tape.leaf(x.clone());
    let clean_logits = params.forward(tape, &taped, xv)?;
    let ce = tape.softmax_cross_entropy(clean_logits, labels)?;
    if beta == 0.0 {
        return Ok((taped, ce));
    }
    let xav = tape.leaf(x_adv.clone());
    let adv_logits = params.forward(tape, &taped, xav)?;
    let p_clean = tape.softmax(clean_logits)?;
    let p_adv = tape.softmax(adv_logits)?;
    let kl = kl_between(tape, p_clean, p_adv)?;
    let scaled = tape.scalar_mul(kl, beta);
    let loss = tape.add(ce, scaled)?;
    Ok((taped, loss))
}

/// Mean-teacher objective:
/// `CE(f(x_adv; θ_s), y) + λ·L_cons(f(x_adv; θ_s), f(x; θ_t))`.
/// The teacher forward runs off-tape, so its parameters receive no
/// gradient at all.
pub fn mt_loss(
    tape: &mut Tape,
    student: &ModelParams,
    teacher: &ModelParams,
    x: &Tensor,
    x_adv: &Tensor,
    labels: &[usize],
    lambda: f64,
    kind: ConsistencyKind,
) -> Result<(TapedModel, Var)> {
    student.check_same_arch(teacher)?;
    let taped = student.insert(tape);
    let xav = tape.leaf(x_adv.clone());
    let adv_logits = student.forward(tape, &taped, xav)?;
    let ce = tape.softmax_cross_entropy(adv_logits, labels)?;
    if lambda == 0.0 {
        return Ok((taped, ce));
    }
    let student_probs = tape.softmax(adv_logits)?;
    let teacher_probs = teacher.forward_eval(x)?.softmax_rows()?;
    let cons = consistency_loss(tape, kind, student_probs, &teacher_probs)?;
    let scaled = tape.scalar_mul(cons, lambda);
    let loss = tape.add(ce, scaled)?;
    Ok((taped, loss))
}

/// TRADES plus the mean-teacher consistency term:
/// `CE(f(x), y) + β·KL(f(x) ‖ f(x_adv)) + λ·L_cons(f(x_adv; θ_s), f(x; θ_t))`.
pub fn trades_mt_loss(
    tape: &mut Tape,
    student: &ModelParams,
    teacher: &ModelParams,
    x: &Tensor,
    x_adv: &Tensor,
    labels: &[usize],
    beta: f64,
    lambda: f64,
    kind: ConsistencyKind,
) -> Result<(TapedModel, Var)> {
    student.check_same_arch(teacher)?;
    let taped = student.insert(tape);
    let xv = tape.leaf(x.clone());
    let clean_logits = student.forward(tape, &taped, xv)?;
    let ce = tape.softmax_cross_entropy(clean_logits, labels)?;
    if beta == 0.0 && lambda == 0.0 {
        return Ok((taped, ce));
    }
    let xav = tape.leaf(x_adv.clone());
    let adv_logits = student.forward(tape, &taped, xav)?;
    let mut loss = ce;
    if beta != 0.0 {
        let p_clean = tape.softmax(clean_logits)?;
        let p_adv = tape.softmax(adv_logits)?;
        let kl = kl_between(tape, p_clean, p_adv)?;
        let scaled = tape.scalar_mul(kl, beta);
        loss = tape.add(loss, scaled)?;
    }
    if lambda != 0.0 {
        let student_probs = tape.softmax(adv_logits)?;
        let teacher_probs = teacher.forward_eval(x)?.softmax_rows()?;
        let cons = consistency_loss(tape, kind, student_probs, &teacher_probs)?;
        let scaled = tape.scalar_mul(cons, lambda);
        loss = tape.add(loss, scaled)?;
    }
    Ok((taped, loss))
}

/// Scalar value of a consistency loss between two probability matrices.
pub fn consistency_value(kind: ConsistencyKind, p: &Tensor, q: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.leaf(p.clone());
    let qv = tape.leaf(q.clone());
    let out = match kind {
        ConsistencyKind::Mse => mse_between(&mut tape, pv, qv)?,
        ConsistencyKind::Kl => kl_between(&mut tape, pv, qv)?,
    };
    tape.value(out).scalar_value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::Rng;

    fn row(p: Vec<f64>) -> Tensor {
        let n = p.len();
        Tensor::matrix(1, n, p).unwrap()
    }

    #[test]
    fn mse_of_equal_distributions_is_zero() {
        let p = row(vec![0.3, 0.7]);
        assert_eq!(consistency_value(ConsistencyKind::Mse, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn mse_hand_value() {
        let p = row(vec![1.0, 0.0]);
        let q = row(vec![0.5, 0.5]);
        let v = consistency_value(ConsistencyKind::Mse, &p, &q).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_of_equal_distributions_is_zero() {
        let p = row(vec![0.2, 0.5, 0.3]);
        assert_eq!(consistency_value(ConsistencyKind::Kl, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value_ln2() {
        let p = row(vec![1.0, 0.0]);
        let q = row(vec![0.5, 0.5]);
        let v = consistency_value(ConsistencyKind::Kl, &p, &q).unwrap();
        assert!((v - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = crate::seeds::stream(13, crate::seeds::Purpose::Eval, 0, 0);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let p = row(raw.iter().map(|v| v / s).collect());
            let raw: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let q = row(raw.iter().map(|v| v / s).collect());
            let v = consistency_value(ConsistencyKind::Kl, &p, &q).unwrap();
            assert!(v >= -1e-15, "KL = {v}");
        }
    }

    #[test]
    fn consistency_shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let p = tape.leaf(row(vec![0.5, 0.5]));
        let q = row(vec![0.2, 0.3, 0.5]);
        assert!(consistency_loss(&mut tape, ConsistencyKind::Mse, p, &q).is_err());
    }

    #[test]
    fn consistency_gradient_matches_finite_differences() {
        // Differentiate through softmax(student logits) for both kinds.
        let teacher = row(vec![0.6, 0.3, 0.1]);
        for kind in [ConsistencyKind::Mse, ConsistencyKind::Kl] {
            let teacher = teacher.clone();
            let err = grad_check(
                move |tape, logits| {
                    let probs = tape.softmax(logits)?;
                    consistency_loss(tape, kind, probs, &teacher)
                },
                &row(vec![0.4, -1.2, 0.7]),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{kind:?}: err = {err}");
        }
    }

    #[test]
    fn rampup_schedule_shape() {
        let cfg = RampupConfig {
            lambda_max: 30.0,
            start_epoch: 10,
            ramp_len: 20,
        };
        assert_eq!(rampup_weight(0, &cfg), 0.0);
        assert_eq!(rampup_weight(9, &cfg), 0.0);
        // First active epoch: p = 1/20.
        let expect = 30.0 * (-5.0_f64 * (1.0 - 0.05) * (1.0 - 0.05)).exp();
        assert!((rampup_weight(10, &cfg) - expect).abs() < 1e-12);
        // Saturated.
        assert_eq!(rampup_weight(29, &cfg), 30.0);
        assert_eq!(rampup_weight(100, &cfg), 30.0);
        // p → 0 limit of the curve is λ_max·e⁻⁵.
        assert!((30.0 * (-5.0f64).exp() - 30.0 * 0.006737946999085467).abs() < 1e-12);
    }

    #[test]
    fn rampup_is_monotone() {
        let cfg = RampupConfig {
            lambda_max: 30.0,
            start_epoch: 5,
            ramp_len: 13,
        };
        let mut prev = 0.0;
        for epoch in 0..40 {
            let w = rampup_weight(epoch, &cfg);
            assert!(w >= prev, "epoch {epoch}");
            prev = w;
        }
    }

    #[test]
    fn trades_beta_zero_is_clean_ce() {
        let m = ModelParams::init(&[3, 5, 2], 4).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.7]).unwrap();
        let x_adv = Tensor::matrix(2, 3, vec![0.15, 0.25, 0.35, 0.85, 0.75, 0.65]).unwrap();
        let labels = [0, 1];

        let mut tape = Tape::new();
        let (_, loss) = trades_loss(&mut tape, &m, &x, &x_adv, &labels, 0.0).unwrap();
        let trades = tape.value(loss).scalar_value().unwrap();

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (_, logits) = m.forward_recorded(&mut tape, xv).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &labels).unwrap();
        assert_eq!(trades, tape.value(ce).scalar_value().unwrap());
    }

    #[test]
    fn trades_with_identical_inputs_is_clean_ce() {
        let m = ModelParams::init(&[3, 5, 2], 4).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.7]).unwrap();
        let labels = [0, 1];

        let mut tape = Tape::new();
        let (_, loss) = trades_loss(&mut tape, &m, &x, &x, &labels, 6.0).unwrap();
        let trades = tape.value(loss).scalar_value().unwrap();

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (_, logits) = m.forward_recorded(&mut tape, xv).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &labels).unwrap();
        let ce = tape.value(ce).scalar_value().unwrap();
        assert!((trades - ce).abs() < 1e-12);
    }

    #[test]
    fn trades_value_matches_raw_logit_recomputation() {
        let m = ModelParams::init(&[4, 6, 3], 21).unwrap();
        let mut rng = crate::seeds::stream(3, crate::seeds::Purpose::Eval, 1, 0);
        for _ in 0..20 {
            let x = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let x_adv = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let labels = [0, 2, 1];
            let beta = 3.0;

            let mut tape = Tape::new();
            let (_, loss) = trades_loss(&mut tape, &m, &x, &x_adv, &labels, beta).unwrap();
            let got = tape.value(loss).scalar_value().unwrap();

            // Independent recomputation from raw logits.
            let p = m.forward_eval(&x).unwrap().softmax_rows().unwrap();
            let q = m.forward_eval(&x_adv).unwrap().softmax_rows().unwrap();
            let logits = m.forward_eval(&x).unwrap();
            let mut ce = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = &logits.data()[i * 3..(i + 1) * 3];
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = hi + row.iter().map(|&v| (v - hi).exp()).sum::<f64>().ln();
                ce += lse - row[y];
            }
            ce /= 3.0;
            let mut kl = 0.0;
            for i in 0..p.numel() {
                let (pi, qi) = (p.data()[i].max(PROB_FLOOR), q.data()[i].max(PROB_FLOOR));
                kl += p.data()[i] * (pi.ln() - qi.ln());
            }
            kl /= 3.0;
            assert!((got - (ce + beta * kl)).abs() < 1e-10);
        }
    }

    #[test]
    fn mt_loss_lambda_zero_is_adversarial_ce() {
        let s = ModelParams::init(&[3, 4, 2], 1).unwrap();
        let t = ModelParams::init(&[3, 4, 2], 2).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        let x_adv = Tensor::matrix(1, 3, vec![0.12, 0.48, 0.88]).unwrap();

        let mut tape = Tape::new();
        let (_, loss) = mt_loss(&mut tape, &s, &t, &x, &x_adv, &[1], 0.0, ConsistencyKind::Mse)
            .unwrap();
        let got = tape.value(loss).scalar_value().unwrap();

        let mut tape = Tape::new();
        let xav = tape.leaf(x_adv);
        let (_, logits) = s.forward_recorded(&mut tape, xav).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &[1]).unwrap();
        assert_eq!(got, tape.value(ce).scalar_value().unwrap());
    }

    #[test]
    fn mt_loss_teacher_equals_student_on_clean_input() {
        let s = ModelParams::init(&[3, 4, 2], 1).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.1, 0.5, 0.9]).unwrap();

        for kind in [ConsistencyKind::Mse, ConsistencyKind::Kl] {
            let mut tape = Tape::new();
            let (_, loss) = mt_loss(&mut tape, &s, &s, &x, &x, &[1], 17.0, kind).unwrap();
            let got = tape.value(loss).scalar_value().unwrap();

            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let (_, logits) = s.forward_recorded(&mut tape, xv).unwrap();
            let ce = tape.softmax_cross_entropy(logits, &[1]).unwrap();
            let ce = tape.value(ce).scalar_value().unwrap();
            assert!((got - ce).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn mt_loss_rejects_arch_mismatch() {
        let s = ModelParams::init(&[3, 4, 2], 1).unwrap();
        let t = ModelParams::init(&[3, 5, 2], 1).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            mt_loss(&mut tape, &s, &t, &x, &x, &[0], 1.0, ConsistencyKind::Mse),
            Err(Error::ArchMismatch { .. })
        ));
    }
}
