//! Multilayer-perceptron classifier and parameter containers.
//!
//! `ModelParams` holds the ordered weight/bias pairs of an MLP. Two
//! parameter sets with the same architecture are combinable elementwise,
//! which is the substrate both for the EMA teacher update and for weight
//! loss landscape probing.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, Purpose};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `d_in × d_out`.
    pub w: Tensor,
    /// `d_out`.
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Vec<usize>,
    seed: u64,
    layers: Vec<Layer>,
}

/// Tape handles for one model's parameters within a recording.
pub struct TapedModel {
    pub layers: Vec<(Var, Var)>,
}

impl ModelParams {
    /// Glorot-style uniform init: weights from `U(−s, s)` with
    /// `s = sqrt(6/(d_in+d_out))`, biases zero.
    pub fn init(arch: &[usize], seed: u64) -> Result<ModelParams> {
        if arch.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "arch must have at least 2 layer sizes, got {arch:?}"
            )));
        }
        if arch.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "arch sizes must be >= 1, got {arch:?}"
            )));
        }
        let mut rng = seeds::stream(seed, Purpose::Init, 0, 0);
        let mut layers = Vec::with_capacity(arch.len() - 1);
        for win in arch.windows(2) {
            let (d_in, d_out) = (win[0], win[1]);
            let s = (6.0 / (d_in + d_out) as f64).sqrt();
            let data = (0..d_in * d_out)
                .map(|_| -s + 2.0 * s * rng.gen::<f64>())
                .collect();
            layers.push(Layer {
                w: Tensor::matrix(d_in, d_out, data)?,
                b: Tensor::zeros(vec![d_out]),
            });
        }
        Ok(ModelParams {
            arch: arch.to_vec(),
            seed,
            layers,
        })
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.arch.last().unwrap()
    }

    pub fn check_same_arch(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ArchMismatch {
                left: self.arch.clone(),
                right: other.arch.clone(),
            });
        }
        Ok(())
    }

    /// Inserts every parameter tensor as a leaf of `tape`.
    pub fn insert(&self, tape: &mut Tape) -> TapedModel {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.w.clone()), tape.leaf(l.b.clone())))
            .collect();
        TapedModel { layers }
    }

    /// Differentiable forward pass: alternating affine/relu with a final
    /// affine layer, recorded on `tape`. `x` must be `m × arch[0]`.
    pub fn forward(&self, tape: &mut Tape, model: &TapedModel, x: Var) -> Result<Var> {
        let (_, d) = tape.value(x).as_2d("forward")?;
        if d != self.arch[0] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: tape.value(x).shape().to_vec(),
                right: vec![self.arch[0]],
            });
        }
        let mut h = x;
        let last = model.layers.len() - 1;
        for (i, (w, b)) in model.layers.iter().enumerate() {
            h = tape.affine(h, *w, *b)?;
            if i != last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without any recording; used for teacher outputs,
    /// evaluation, and anywhere gradients must not flow.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (_, d) = x.as_2d("forward")?;
        if d != self.arch[0] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: x.shape().to_vec(),
                right: vec![self.arch[0]],
            });
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.w)?.add_row(&layer.b)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Convenience: record parameters and forward in one call.
    pub fn forward_recorded(&self, tape: &mut Tape, x: Var) -> Result<(TapedModel, Var)> {
        let taped = self.insert(tape);
        let logits = self.forward(tape, &taped, x)?;
        Ok((taped, logits))
    }
}

/// `c_a·a + c_b·b` elementwise over every weight and bias.
pub fn param_linear_comb(
    a: &ModelParams,
    b: &ModelParams,
    c_a: f64,
    c_b: f64,
) -> Result<ModelParams> {
    a.check_same_arch(b)?;
    let layers = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(la, lb)| {
            let w = Tensor::new(
                la.w.shape().to_vec(),
                la.w.data()
                    .iter()
                    .zip(lb.w.data())
                    .map(|(&x, &y)| c_a * x + c_b * y)
                    .collect(),
            )?;
            let bias = Tensor::new(
                la.b.shape().to_vec(),
                la.b.data()
                    .iter()
                    .zip(lb.b.data())
                    .map(|(&x, &y)| c_a * x + c_b * y)
                    .collect(),
            )?;
            Ok(Layer { w, b: bias })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelParams {
        arch: a.arch.clone(),
        seed: a.seed,
        layers,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    arch: Vec<usize>,
    seed: u64,
    layers: Vec<CheckpointLayer>,
}

impl ModelParams {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            arch: self.arch.clone(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    w: l.w.data().to_vec(),
                    b: l.b.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<ModelParams> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.arch.len() < 2 || file.layers.len() != file.arch.len() - 1 {
            return Err(Error::InvalidConfig(
                "checkpoint arch and layer count disagree".into(),
            ));
        }
        let layers = file
            .layers
            .iter()
            .zip(file.arch.windows(2))
            .map(|(l, win)| {
                Ok(Layer {
                    w: Tensor::matrix(win[0], win[1], l.w.clone())?,
                    b: Tensor::new(vec![win[1]], l.b.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams {
            arch: file.arch,
            seed: file.seed,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<ModelParams> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        ModelParams::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(&[2, 3, 2], 7).unwrap();
        let b = ModelParams::init(&[2, 3, 2], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let m = ModelParams::init(&[4, 5, 3], 11).unwrap();
        for (layer, win) in m.layers().iter().zip([[4usize, 5], [5, 3]]) {
            let s = (6.0 / (win[0] + win[1]) as f64).sqrt();
            assert!(layer.b.data().iter().all(|&v| v == 0.0));
            assert!(layer.w.data().iter().all(|&v| v.abs() <= s));
        }
    }

    #[test]
    fn init_rejects_short_arch() {
        assert!(ModelParams::init(&[3], 0).is_err());
    }

    #[test]
    fn forward_identity_layer() {
        let mut m = ModelParams::init(&[2, 2], 0).unwrap();
        m.layers_mut()[0].w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.layers_mut()[0].b = Tensor::zeros(vec![2]);
        let x = Tensor::matrix(2, 2, vec![0.3, -0.2, 1.5, 0.0]).unwrap();
        let out = m.forward_eval(&x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let m = ModelParams::init(&[3, 2], 0).unwrap();
        let x = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
        assert!(m.forward_eval(&x).is_err());
    }

    #[test]
    fn forward_identical_rows_give_identical_logits() {
        let m = ModelParams::init(&[3, 8, 4], 5).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.7, 0.4, 0.1, 0.7, 0.4]).unwrap();
        let out = m.forward_eval(&x).unwrap();
        assert_eq!(out.data()[0..4], out.data()[4..8]);
    }

    #[test]
    fn forward_tape_matches_eval() {
        let m = ModelParams::init(&[3, 6, 2], 9).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (_, logits) = m.forward_recorded(&mut tape, xv).unwrap();
        assert_eq!(tape.value(logits), &m.forward_eval(&x).unwrap());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = ModelParams::init(&[3, 6, 3], 1).unwrap();
        let point = Tensor::matrix(2, 3, vec![0.2, 0.5, 0.8, 0.1, 0.9, 0.4]).unwrap();
        let err = grad_check(
            |tape, x| {
                let (_, logits) = m.forward_recorded(tape, x)?;
                tape.softmax_cross_entropy(logits, &[0, 2])
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn linear_comb_identities() {
        let a = ModelParams::init(&[2, 4, 2], 3).unwrap();
        let b = ModelParams::init(&[2, 4, 2], 4).unwrap();
        assert_eq!(param_linear_comb(&a, &b, 1.0, 0.0).unwrap(), a);
        assert_eq!(param_linear_comb(&a, &a, 0.5, 0.5).unwrap(), a);
    }

    #[test]
    fn linear_comb_entrywise() {
        let theta = ModelParams::init(&[2, 3], 3).unwrap();
        let dir = ModelParams::init(&[2, 3], 8).unwrap();
        let out = param_linear_comb(&theta, &dir, 1.0, 0.3).unwrap();
        for (o, (t, d)) in out.layers()[0]
            .w
            .data()
            .iter()
            .zip(theta.layers()[0].w.data().iter().zip(dir.layers()[0].w.data()))
        {
            assert!((o - (t + 0.3 * d)).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_comb_rejects_arch_mismatch() {
        let a = ModelParams::init(&[2, 3], 0).unwrap();
        let b = ModelParams::init(&[2, 4], 0).unwrap();
        assert!(matches!(
            param_linear_comb(&a, &b, 1.0, 1.0),
            Err(Error::ArchMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = ModelParams::init(&[5, 7, 3], 42).unwrap();
        let back = ModelParams::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
