//! Desk-scale PGD adversarial training on synthetic blobs, printing the
//! per-epoch metrics table. Robust overfitting shows up as a growing gap
//! between train and test robust accuracy in the later epochs.
//!
//! Usage: `cargo run --example train_pgd_at [epochs]`

use at_lab::data::gen_blobs;
use at_lab::trainer::{train, Method, TrainConfig};

fn main() -> at_lab::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("epochs must be an integer"))
        .unwrap_or(20);

    let train_set = gen_blobs(200, 20, 5, 0.3, 0, "train")?;
    let test_set = gen_blobs(200, 20, 5, 0.3, 0, "test")?;

    let cfg = TrainConfig {
        method: Method::PgdAt,
        epochs,
        ..TrainConfig::default()
    };

    println!("epoch nat_train nat_test rob_train rob_test gap");
    let start = std::time::Instant::now();
    let model = train(&cfg, &train_set, &test_set)?;
    for r in &model.history {
        println!(
            "{:>5} {:>9.4} {:>8.4} {:>9.4} {:>8.4} {:>7.4}",
            r.epoch, r.nat_train, r.nat_test, r.rob_train, r.rob_test, r.robust_gap
        );
    }
    println!(
        "best epoch {} ({:.1}s total)",
        model.best_epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
