//! Inner-maximization procedures: L∞ PGD, the mean-teacher-aware PGD
//! variant, and the C&W∞ margin attack.
//!
//! Every attack is pure given (parameters, batch, rng): model parameters
//! are only read, and the gradient recordings built here never leak into
//! training gradients because each step uses its own tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::objectives::{consistency_loss, kl_between, ConsistencyKind};
use crate::tensor::{Tape, Tensor};

/// Parameters of the adversarial region `S(x)` and the PGD loop.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// L∞ radius, in input units.
    pub epsilon: f64,
    /// Per-iteration step, in input units.
    pub step_size: f64,
    /// Number of PGD iterations.
    pub steps: usize,
    pub random_init: bool,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl Default for AttackConfig {
    /// Training attack from the usual L∞ recipe: ε=8/255, α=2/255, K=10.
    fn default() -> Self {
        AttackConfig {
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            steps: 10,
            random_init: true,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
        }
    }
}

impl AttackConfig {
    /// Evaluation attack with `steps` iterations at step size ε/4.
    pub fn eval(steps: usize) -> Self {
        let epsilon = 8.0 / 255.0;
        AttackConfig {
            epsilon,
            step_size: epsilon / 4.0,
            steps,
            random_init: true,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.steps > 0 && self.step_size <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "step_size must be > 0 when steps > 0, got {}",
                self.step_size
            )));
        }
        if self.clamp_lo >= self.clamp_hi {
            return Err(Error::InvalidConfig(format!(
                "clamp_lo {} must be < clamp_hi {}",
                self.clamp_lo, self.clamp_hi
            )));
        }
        Ok(())
    }
}

/// Objective the PGD loop ascends.
#[derive(Clone, Debug)]
pub enum LossSelector {
    CrossEntropy,
    /// C&W margin `max_{j≠y} Z_j − Z_y` on the logits (κ = 0).
    CwMargin,
    /// TRADES inner objective `KL(p_clean ‖ f(x′))` with the clean
    /// distribution held fixed.
    TradesKl { clean_probs: Tensor },
}

/// `sign` with `sign(0) = 0`, so a zero gradient moves nothing.
fn step_sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Uniform start `clamp(x + ε·u)` with `u ~ U(−1, 1)` per coordinate.
pub fn random_init_point(
    x: &Tensor,
    epsilon: f64,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let u = 2.0 * rng.gen::<f64>() - 1.0;
            (v + epsilon * u).clamp(lo, hi)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Projection onto the ε-ball around `x` intersected with the input box.
pub fn project_linf(x_adv: &Tensor, x: &Tensor, epsilon: f64, lo: f64, hi: f64) -> Result<Tensor> {
    if x_adv.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "project_linf",
            left: x_adv.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let data = x_adv
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &c)| a.clamp(c - epsilon, c + epsilon).clamp(lo, hi))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Gradient of the selected loss w.r.t. the input batch.
fn input_grad(
    params: &ModelParams,
    x_adv: &Tensor,
    labels: &[usize],
    selector: &LossSelector,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x_adv.clone());
    let (_, logits) = params.forward_recorded(&mut tape, xv)?;
    let loss = match selector {
        LossSelector::CrossEntropy => tape.softmax_cross_entropy(logits, labels)?,
        LossSelector::CwMargin => {
            let other = tape.max_other(logits, labels)?;
            let own = tape.index_select(logits, labels)?;
            let margin = tape.sub(other, own)?;
            tape.mean(margin)
        }
        LossSelector::TradesKl { clean_probs } => {
            let p = tape.leaf(clean_probs.clone());
            let q = tape.softmax(logits)?;
            kl_between(&mut tape, p, q)?
        }
    };
    tape.backward(loss)?;
    Ok(tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x_adv.shape().to_vec())))
}

fn ascend(x_adv: &Tensor, grad: &Tensor, step: f64) -> Tensor {
    let data = x_adv
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| v + step * step_sign(g))
        .collect();
    Tensor::new(x_adv.shape().to_vec(), data).expect("shape preserved")
}

/// K iterations of `x′ ← Π(x′ + α·sign(∇_x loss))`.
pub fn pgd_attack(
    params: &ModelParams,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    selector: &LossSelector,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut x_adv = if cfg.random_init {
        random_init_point(x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi, rng)
    } else {
        project_linf(x, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi)?
    };
    for _ in 0..cfg.steps {
        let grad = input_grad(params, &x_adv, labels, selector)?;
        x_adv = ascend(&x_adv, &grad, cfg.step_size);
        x_adv = project_linf(&x_adv, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi)?;
    }
    Ok(x_adv)
}

/// Mean-teacher-aware PGD: each step ascends
/// `L_ce(f(x′; θ_s), y) + λ·L_cons(f(x′; θ_s), f(x; θ_t))`,
/// with the teacher output on the clean batch computed once up front and
/// held constant across steps.
pub fn pgd_mt_attack(
    student: &ModelParams,
    teacher: &ModelParams,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    lambda: f64,
    kind: ConsistencyKind,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    student.check_same_arch(teacher)?;
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return pgd_attack(student, x, labels, cfg, &LossSelector::CrossEntropy, rng);
    }
    cfg.validate()?;
    let teacher_probs = teacher.forward_eval(x)?.softmax_rows()?;
    let mut x_adv = if cfg.random_init {
        random_init_point(x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi, rng)
    } else {
        project_linf(x, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi)?
    };
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let xv = tape.leaf(x_adv.clone());
        let (_, logits) = student.forward_recorded(&mut tape, xv)?;
        let ce = tape.softmax_cross_entropy(logits, labels)?;
        let probs = tape.softmax(logits)?;
        let cons = consistency_loss(&mut tape, kind, probs, &teacher_probs)?;
        let scaled = tape.scalar_mul(cons, lambda);
        let loss = tape.add(ce, scaled)?;
        tape.backward(loss)?;
        let grad = tape
            .grad(xv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
        x_adv = ascend(&x_adv, &grad, cfg.step_size);
        x_adv = project_linf(&x_adv, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi)?;
    }
    Ok(x_adv)
}

/// C&W∞: PGD loop on the margin loss `max_{j≠y} Z_j − Z_y`.
pub fn cw_inf_attack(
    params: &ModelParams,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if params.num_classes() < 2 {
        return Err(Error::InvalidConfig(
            "cw_inf_attack needs at least 2 classes".into(),
        ));
    }
    pgd_attack(params, x, labels, cfg, &LossSelector::CwMargin, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{self, Purpose};
    use crate::tensor::Tensor;

    fn rng(n: u64) -> ChaCha8Rng {
        seeds::stream(n, Purpose::Attack, 0, 0)
    }

    fn linf(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn random_init_zero_epsilon_is_identity() {
        let x = Tensor::matrix(1, 3, vec![0.2, 0.5, 0.8]).unwrap();
        let out = random_init_point(&x, 0.0, 0.0, 1.0, &mut rng(1));
        assert_eq!(out, x);
    }

    #[test]
    fn random_init_stays_in_ball() {
        let mut r = rng(2);
        let x = Tensor::matrix(1, 4, vec![0.1, 0.4, 0.6, 0.95]).unwrap();
        for _ in 0..1000 {
            let out = random_init_point(&x, 0.05, 0.0, 1.0, &mut r);
            assert!(linf(&out, &x) <= 0.05 + 1e-15);
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn random_init_is_deterministic() {
        let x = Tensor::matrix(1, 4, vec![0.1, 0.4, 0.6, 0.95]).unwrap();
        let a = random_init_point(&x, 0.03, 0.0, 1.0, &mut rng(3));
        let b = random_init_point(&x, 0.03, 0.0, 1.0, &mut rng(3));
        assert_eq!(a, b);
    }

    #[test]
    fn project_noop_inside_ball() {
        let x = Tensor::from_vec(vec![0.5, 0.5]);
        let xa = Tensor::from_vec(vec![0.52, 0.48]);
        assert_eq!(project_linf(&xa, &x, 0.1, 0.0, 1.0).unwrap(), xa);
    }

    #[test]
    fn project_hand_value() {
        let x = Tensor::from_vec(vec![0.5]);
        let xa = Tensor::from_vec(vec![0.9]);
        let out = project_linf(&xa, &x, 0.1, 0.0, 1.0).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn project_is_idempotent() {
        let mut r = rng(4);
        use rand::Rng;
        for _ in 0..200 {
            let x = Tensor::from_vec((0..6).map(|_| r.gen::<f64>()).collect());
            let z = Tensor::from_vec((0..6).map(|_| 3.0 * r.gen::<f64>() - 1.0).collect());
            let once = project_linf(&z, &x, 0.07, 0.0, 1.0).unwrap();
            let twice = project_linf(&once, &x, 0.07, 0.0, 1.0).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn project_shape_mismatch() {
        let x = Tensor::from_vec(vec![0.5]);
        let xa = Tensor::from_vec(vec![0.9, 0.1]);
        assert!(project_linf(&xa, &x, 0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn pgd_zero_epsilon_is_identity() {
        let m = ModelParams::init(&[3, 4, 2], 0).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.5, 0.9, 0.3, 0.3, 0.3]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.0,
            ..AttackConfig::default()
        };
        let out = pgd_attack(&m, &x, &[0, 1], &cfg, &LossSelector::CrossEntropy, &mut rng(5))
            .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn pgd_single_step_descends_logistic_input() {
        // 2-class linear model whose margin logit is w·x with w = 1:
        // logits [x, 0], true class 0. The CE gradient w.r.t. x is
        // −(1−σ(x)) < 0, so one signed ascent step moves x down by α.
        let mut m = ModelParams::init(&[1, 2], 0).unwrap();
        m.layers_mut()[0].w = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        m.layers_mut()[0].b = Tensor::zeros(vec![2]);
        let x = Tensor::matrix(1, 1, vec![0.5]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.1,
            step_size: 0.1,
            steps: 1,
            random_init: false,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
        };
        let out = pgd_attack(&m, &x, &[0], &cfg, &LossSelector::CrossEntropy, &mut rng(6))
            .unwrap();
        assert!((out.data()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn pgd_increases_loss_on_most_instances() {
        use rand::Rng;
        let mut hits = 0;
        let total = 40;
        for trial in 0..total {
            let m = ModelParams::init(&[4, 8, 3], trial).unwrap();
            let mut r = seeds::stream(trial, Purpose::Data, 0, 0);
            let x = Tensor::matrix(4, 4, (0..16).map(|_| r.gen::<f64>()).collect()).unwrap();
            let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..3)).collect();
            let cfg = AttackConfig::default();
            let x_adv = pgd_attack(
                &m,
                &x,
                &labels,
                &cfg,
                &LossSelector::CrossEntropy,
                &mut rng(trial),
            )
            .unwrap();
            let ce = |inp: &Tensor| {
                let mut tape = Tape::new();
                let v = tape.leaf(inp.clone());
                let (_, logits) = m.forward_recorded(&mut tape, v).unwrap();
                let l = tape.softmax_cross_entropy(logits, &labels).unwrap();
                tape.value(l).scalar_value().unwrap()
            };
            if ce(&x_adv) >= ce(&x) {
                hits += 1;
            }
        }
        assert!(hits * 100 >= total * 95, "only {hits}/{total} increased");
    }

    #[test]
    fn pgd_reaches_corner_with_linear_model() {
        // Constant gradient sign: with K·α ≥ ε every coordinate ends at
        // distance exactly ε from x.
        let mut m = ModelParams::init(&[2, 2], 0).unwrap();
        m.layers_mut()[0].w = Tensor::matrix(2, 2, vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.05,
            step_size: 0.02,
            steps: 5,
            random_init: false,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
        };
        let out = pgd_attack(&m, &x, &[0], &cfg, &LossSelector::CrossEntropy, &mut rng(7))
            .unwrap();
        for (o, c) in out.data().iter().zip(x.data()) {
            assert!(((o - c).abs() - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn mt_attack_lambda_zero_matches_pgd() {
        let s = ModelParams::init(&[3, 6, 2], 1).unwrap();
        let t = ModelParams::init(&[3, 6, 2], 2).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.6]).unwrap();
        let cfg = AttackConfig::default();
        let a = pgd_mt_attack(&s, &t, &x, &[0, 1], &cfg, 0.0, ConsistencyKind::Mse, &mut rng(8))
            .unwrap();
        let b = pgd_attack(&s, &x, &[0, 1], &cfg, &LossSelector::CrossEntropy, &mut rng(8))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mt_attack_stays_in_region() {
        use rand::Rng;
        for trial in 0..20 {
            let s = ModelParams::init(&[4, 6, 3], trial).unwrap();
            let t = ModelParams::init(&[4, 6, 3], trial + 100).unwrap();
            let mut r = seeds::stream(trial, Purpose::Data, 1, 0);
            let x = Tensor::matrix(3, 4, (0..12).map(|_| r.gen::<f64>()).collect()).unwrap();
            let cfg = AttackConfig::default();
            let out = pgd_mt_attack(
                &s,
                &t,
                &x,
                &[0, 1, 2],
                &cfg,
                12.0,
                ConsistencyKind::Mse,
                &mut rng(trial),
            )
            .unwrap();
            assert!(linf(&out, &x) <= cfg.epsilon + 1e-12);
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn mt_attack_rejects_arch_mismatch() {
        let s = ModelParams::init(&[3, 6, 2], 1).unwrap();
        let t = ModelParams::init(&[3, 5, 2], 2).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.5; 3]).unwrap();
        assert!(matches!(
            pgd_mt_attack(
                &s,
                &t,
                &x,
                &[0],
                &AttackConfig::default(),
                1.0,
                ConsistencyKind::Mse,
                &mut rng(9)
            ),
            Err(Error::ArchMismatch { .. })
        ));
    }

    #[test]
    fn cw_zero_epsilon_is_identity() {
        let m = ModelParams::init(&[3, 4, 2], 0).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.0,
            ..AttackConfig::eval(100)
        };
        let out = cw_inf_attack(&m, &x, &[0], &cfg, &mut rng(10)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn cw_first_step_follows_margin_gradient() {
        // Two-class linear model: margin = (w_1 − w_0)·x + (b_1 − b_0) for
        // true class 0, so the signed step moves along sign(w_1 − w_0).
        let mut m = ModelParams::init(&[2, 2], 0).unwrap();
        m.layers_mut()[0].w = Tensor::matrix(2, 2, vec![0.2, 0.9, 0.8, 0.1]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let cfg = AttackConfig {
            epsilon: 0.1,
            step_size: 0.02,
            steps: 1,
            random_init: false,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
        };
        let out = cw_inf_attack(&m, &x, &[0], &cfg, &mut rng(11)).unwrap();
        // w_1 − w_0 per input coordinate: [0.9−0.2, 0.1−0.8] = [+0.7, −0.7].
        assert!((out.data()[0] - 0.52).abs() < 1e-12);
        assert!((out.data()[1] - 0.48).abs() < 1e-12);
    }

    #[test]
    fn cw_margin_non_decreasing_over_steps() {
        use rand::Rng;
        let margin = |m: &ModelParams, inp: &Tensor, labels: &[usize]| {
            let z = m.forward_eval(inp).unwrap();
            let c = m.num_classes();
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = &z.data()[i * c..(i + 1) * c];
                let other = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != y)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                total += other - row[y];
            }
            total
        };
        let mut hits = 0;
        let total = 30;
        for trial in 0..total {
            let m = ModelParams::init(&[3, 6, 3], trial).unwrap();
            let mut r = seeds::stream(trial, Purpose::Data, 2, 0);
            let x = Tensor::matrix(2, 3, (0..6).map(|_| r.gen::<f64>()).collect()).unwrap();
            let labels = vec![r.gen_range(0..3), r.gen_range(0..3)];
            let mut cfg = AttackConfig {
                epsilon: 8.0 / 255.0,
                step_size: 2.0 / 255.0,
                steps: 0,
                random_init: false,
                clamp_lo: 0.0,
                clamp_hi: 1.0,
            };
            let mut ok = true;
            let mut prev = margin(&m, &x, &labels);
            for k in 1..=6 {
                cfg.steps = k;
                let out = cw_inf_attack(&m, &x, &labels, &cfg, &mut rng(trial)).unwrap();
                let cur = margin(&m, &out, &labels);
                if cur + 1e-12 < prev {
                    ok = false;
                }
                prev = cur;
            }
            if ok {
                hits += 1;
            }
        }
        assert!(hits * 100 >= total * 90, "only {hits}/{total} monotone");
    }

    #[test]
    fn attacks_do_not_touch_parameters() {
        let m = ModelParams::init(&[3, 5, 2], 3).unwrap();
        let before = m.clone();
        let x = Tensor::matrix(2, 3, vec![0.3; 6]).unwrap();
        pgd_attack(
            &m,
            &x,
            &[0, 1],
            &AttackConfig::default(),
            &LossSelector::CrossEntropy,
            &mut rng(12),
        )
        .unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = AttackConfig {
            epsilon: -0.1,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            step_size: 0.0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            clamp_lo: 1.0,
            clamp_hi: 0.0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
