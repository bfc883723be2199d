//! Verifies the reverse-mode tape against central finite differences on
//! a random network: input gradients of cross-entropy, of both
//! consistency losses, and of the combined mean-teacher objective.

use at_lab::models::ModelParams;
use at_lab::objectives::{consistency_loss, ConsistencyKind};
use at_lab::tensor::{grad_check, Tensor};

fn main() -> at_lab::Result<()> {
    let student = ModelParams::init(&[6, 12, 4], 1)?;
    let teacher = ModelParams::init(&[6, 12, 4], 2)?;
    let x = Tensor::matrix(3, 6, (0..18).map(|i| (i as f64 * 0.37).sin().abs()).collect())?;
    let labels = vec![0usize, 2, 3];
    let teacher_probs = teacher.forward_eval(&x)?.softmax_rows()?;
    let h = 1e-5;

    let s = student.clone();
    let y = labels.clone();
    let ce = grad_check(
        |tape, v| {
            let (_, logits) = s.forward_recorded(tape, v)?;
            tape.softmax_cross_entropy(logits, &y)
        },
        &x,
        h,
    )?;
    println!("cross-entropy          max relative error {ce:.3e}");

    for kind in [ConsistencyKind::Mse, ConsistencyKind::Kl] {
        let s = student.clone();
        let tp = teacher_probs.clone();
        let err = grad_check(
            |tape, v| {
                let (_, logits) = s.forward_recorded(tape, v)?;
                let probs = tape.softmax(logits)?;
                consistency_loss(tape, kind, probs, &tp)
            },
            &x,
            h,
        )?;
        println!("consistency {kind:?}        max relative error {err:.3e}");
    }

    let s = student.clone();
    let tp = teacher_probs.clone();
    let y = labels.clone();
    let mt = grad_check(
        |tape, v| {
            let (_, logits) = s.forward_recorded(tape, v)?;
            let ce = tape.softmax_cross_entropy(logits, &y)?;
            let probs = tape.softmax(logits)?;
            let cons = consistency_loss(tape, ConsistencyKind::Mse, probs, &tp)?;
            let scaled = tape.scalar_mul(cons, 30.0);
            tape.add(ce, scaled)
        },
        &x,
        h,
    )?;
    println!("mean-teacher objective max relative error {mt:.3e}");
    Ok(())
}
