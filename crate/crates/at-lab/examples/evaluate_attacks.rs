//! Trains a small robust model, then evaluates it under the attack menu:
//! no attack, PGD-10, PGD-100, and 100-step C&W margin. More attack steps
//! give a stronger adversary, so reported robustness decreases down the
//! list while natural accuracy stays fixed.

use at_lab::attacks::AttackConfig;
use at_lab::data::gen_blobs;
use at_lab::diagnostics::{natural_accuracy, robust_accuracy, EvalAttack};
use at_lab::trainer::{train, Method, TrainConfig};

fn main() -> at_lab::Result<()> {
    let train_set = gen_blobs(200, 20, 5, 0.3, 0, "train")?;
    let test_set = gen_blobs(200, 20, 5, 0.3, 0, "test")?;

    let cfg = TrainConfig {
        method: Method::PgdAt,
        epochs: 10,
        ..TrainConfig::default()
    };
    let model = train(&cfg, &train_set, &test_set)?;

    let natural = natural_accuracy(&model.student, &test_set)?;
    println!("natural accuracy: {natural:.4}");

    let menu: [(&str, EvalAttack, AttackConfig); 3] = [
        ("pgd10 ", EvalAttack::Pgd, AttackConfig::eval(10)),
        ("pgd100", EvalAttack::Pgd, AttackConfig::eval(100)),
        ("cw100 ", EvalAttack::Cw, AttackConfig::eval(100)),
    ];
    for (name, kind, attack_cfg) in menu {
        let robust = robust_accuracy(&model.student, &test_set, &attack_cfg, kind, 0)?;
        println!("{name} robust accuracy: {robust:.4}");
    }
    Ok(())
}
