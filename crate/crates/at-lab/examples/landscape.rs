//! Probes the adversarial weight loss landscape of a briefly trained
//! model: L(theta + alpha * d) over alpha in [-1, 1] for a random
//! filter-normalized direction d, regenerating adversarial examples at
//! every point. Prints the CSV emitted by the `landscape` subcommand
//! plus a crude sparkline. Flat valleys around alpha=0 correlate with
//! small robust generalization gaps.

use at_lab::attacks::AttackConfig;
use at_lab::data::gen_blobs;
use at_lab::diagnostics::{default_alpha_grid, landscape_probe};
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

    let probe_set = test_set.take(250);
    let series = landscape_probe(
        &model.student,
        &probe_set,
        &default_alpha_grid(),
        &AttackConfig::default(),
        0,
    )?;
    print!("{}", series.to_csv());

    let lo = series.losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = series
        .losses
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let bars = ["_", ".", ":", "-", "=", "+", "*", "#"];
    let sketch: String = series
        .losses
        .iter()
        .map(|&l| bars[(((l - lo) / (hi - lo).max(1e-12)) * 7.0).round() as usize])
        .collect();
    println!("profile: [{sketch}]  (max-min = {:.4})", hi - lo);
    Ok(())
}
