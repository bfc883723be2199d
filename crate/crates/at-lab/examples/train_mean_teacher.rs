//! Mean-teacher consistency training on the same desk-scale blobs task
//! as `train_pgd_at`. After the warm-up epoch the teacher becomes an EMA
//! of the student and a ramped consistency term pulls adversarial
//! student outputs toward clean teacher outputs, which flattens the
//! late-training robust generalization gap.
//!
//! Usage: `cargo run --example train_mean_teacher [epochs]`

use at_lab::data::gen_blobs;
use at_lab::trainer::{train, Method, TrainConfig};

fn main() -> at_lab::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("epochs must be an integer"))
        .unwrap_or(60);

    let train_set = gen_blobs(200, 20, 5, 0.3, 0, "train")?;
    let test_set = gen_blobs(200, 20, 5, 0.3, 0, "test")?;

    let cfg = TrainConfig {
        method: Method::PgdAtMt,
        epochs,
        ..TrainConfig::default()
    };

    println!("epoch nat_train nat_test rob_train rob_test gap lambda");
    let start = std::time::Instant::now();
    let model = train(&cfg, &train_set, &test_set)?;
    for r in &model.history {
        println!(
            "{:>5} {:>9.4} {:>8.4} {:>9.4} {:>8.4} {:>7.4} {:>6.2}",
            r.epoch, r.nat_train, r.nat_test, r.rob_train, r.rob_test, r.robust_gap, r.lambda
        );
    }
    println!(
        "best epoch {} ({:.1}s total)",
        model.best_epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
