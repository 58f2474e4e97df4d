//! Trains the MNIST toy model and prints held-out metrics.
//!
//! ```text
//! cargo run --release -p vmfml --example mnist_toy -- \
//!     [mnist dir] [p] [kappa] [epochs] [hidden,...] [lr] [interval|epoch] [seed]
//! ```
//!
//! The learning rate drops tenfold after two thirds of the iterations. With the defaults
//! this is the p = 2 run of the acceptance suite.

use std::path::PathBuf;
use std::time::Instant;

use vmfml::data::load_idx;
use vmfml::eval::{accuracy_from_embeddings, diagnostics_from_embeddings, mean_cosine_to_prototype, predict_rows};
use vmfml::network::{init_network, Activation, NetworkConfig};
use vmfml::trainer::{train, LrSchedule, TrainConfig, UpdateInterval};

fn main() -> vmfml::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let dir = PathBuf::from(arg(1, "data/mnist"));
    let p: usize = arg(2, "2").parse().expect("p");
    let kappa: f64 = arg(3, "15").parse().expect("kappa");
    let epochs: usize = arg(4, "20").parse().expect("epochs");
    let hidden: Vec<usize> = arg(5, "512,256")
        .split(',')
        .map(|w| w.parse().expect("width"))
        .collect();
    let lr: f64 = arg(6, "0.003").parse().expect("learning rate");
    let update_interval = match arg(7, "200").as_str() {
        "epoch" => UpdateInterval::Epoch,
        l => UpdateInterval::Iterations(l.parse().expect("interval")),
    };
    let seed: u64 = arg(8, "1").parse().expect("seed");

    let train_set = load_idx(
        dir.join("train-images-idx3-ubyte.gz"),
        dir.join("train-labels-idx1-ubyte.gz"),
    )?;
    let test_set = load_idx(
        dir.join("t10k-images-idx3-ubyte.gz"),
        dir.join("t10k-labels-idx1-ubyte.gz"),
    )?;

    let mut widths = vec![train_set.feature_dim()];
    widths.extend(hidden);
    widths.push(p);
    let net = init_network(NetworkConfig::new(widths, Activation::Relu, seed))?;
    let batch_size = 64;
    let iterations = epochs * train_set.len().div_ceil(batch_size);
    let config = TrainConfig {
        kappa,
        epochs,
        batch_size,
        update_interval,
        lr_schedule: LrSchedule::new(vec![(0, lr), (iterations * 2 / 3, lr / 10.0)])?,
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let outcome = train(net, &train_set, &config)?;
    let protos = &outcome.prototypes;
    let test_emb = outcome.network.embed(test_set.features().view())?;
    let train_emb = outcome.network.embed(train_set.features().view())?;
    let min_cos = mean_cosine_to_prototype(test_emb.view(), test_set.labels(), protos)
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    let diag = diagnostics_from_embeddings(train_emb.view(), train_set.labels(), protos)?;
    println!(
        "p={p} kappa={kappa} epochs={epochs} train_acc={:.4} test_acc={:.4} min_class_cos={min_cos:.4} avg_kappa_hat={:.2} avg_cos={:.4} secs={:.1}",
        accuracy_from_embeddings(train_emb.view(), train_set.labels(), protos)?,
        accuracy_from_embeddings(test_emb.view(), test_set.labels(), protos)?,
        diag.average_kappa_hat,
        diag.average_cosine,
        start.elapsed().as_secs_f64()
    );

    let predicted = predict_rows(test_emb.view(), protos)?;
    let per_class: Vec<String> = (0..test_set.num_classes())
        .map(|c| {
            let members: Vec<usize> = (0..test_set.len()).filter(|&i| test_set.labels()[i] == c).collect();
            let hits = members.iter().filter(|&&i| predicted[i] == c).count();
            format!("{:.3}", hits as f64 / members.len() as f64)
        })
        .collect();
    println!("per-class test accuracy: {}", per_class.join(" "));
    Ok(())
}
