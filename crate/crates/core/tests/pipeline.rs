use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vmfml::checkpoint::Checkpoint;
use vmfml::cluster::{movmf_em, spherical_kmeans, EmMode};
use vmfml::data::{LabeledDataset, Split};
use vmfml::eval::{accuracy, diagnostics, nmi, recall_at_k, rows_to_unit_vectors};
use vmfml::network::{init_network, Activation, NetworkConfig};
use vmfml::trainer::{train, LrSchedule, TrainConfig, UpdateInterval};
use vmfml::SampleCloud;

/// Four Gaussian blobs in 10 dimensions, centres on the coordinate axes.
fn blobs(per_class: usize, seed: u64, split: Split) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (classes, dim) = (4, 10);
    let mut x = Array2::zeros((classes * per_class, dim));
    let mut labels = Vec::new();
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let c = i % classes;
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.4 * rng.sample::<f64, _>(StandardNormal) + if j == c { 3.0 } else { 0.0 };
        }
        labels.push(c);
    }
    LabeledDataset::new(x, labels, split).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        kappa: 15.0,
        epochs: 12,
        batch_size: 32,
        update_interval: UpdateInterval::Iterations(7),
        lr_schedule: LrSchedule::new(vec![(0, 0.05), (60, 0.01)]).unwrap(),
        shuffle_seed: 5,
        prototype_seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn train_checkpoint_evaluate_retrieve_cluster() {
    let train_set = blobs(50, 1, Split::Train);
    let test_set = blobs(25, 2, Split::Test);
    let net = init_network(NetworkConfig::new(vec![10, 16, 3], Activation::Relu, 4)).unwrap();
    let outcome = train(net, &train_set, &config()).unwrap();

    let losses = outcome.log.epoch_mean_losses();
    assert_eq!(losses.len(), 12);
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint {
        network: outcome.network.clone(),
        prototypes: Some(outcome.prototypes.clone()),
    }
    .save(&path)
    .unwrap();
    let restored = Checkpoint::load(&path).unwrap();
    assert_eq!(restored.network, outcome.network);
    let protos = restored.prototypes.unwrap();
    assert_eq!(protos, outcome.prototypes);

    let acc = accuracy(&restored.network, &protos, &test_set).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");

    let emb = restored.network.embed(test_set.features().view()).unwrap();
    let units = rows_to_unit_vectors(emb.view()).unwrap();
    let recall = recall_at_k(&units, test_set.labels(), &[1, 4]).unwrap();
    assert!(recall.recall(1).unwrap() >= 0.9);
    assert!(recall.recall(4).unwrap() >= recall.recall(1).unwrap());
    assert!(recall.excluded_queries.is_empty());

    let diag = diagnostics(&restored.network, &protos, &test_set).unwrap();
    assert!(diag.average_kappa_hat > 1.0);
    assert!(
        diag.average_cosine < 0.0,
        "four spread prototypes in 3-d have negative mean cosine"
    );

    let cloud = SampleCloud::new(units).unwrap();
    for result in [
        spherical_kmeans(&cloud, 4, 0, 100, 1e-10).unwrap(),
        movmf_em(&cloud, 4, EmMode::Soft, 0, 200, 1e-10).unwrap(),
        movmf_em(&cloud, 4, EmMode::Hard, 0, 200, 1e-10).unwrap(),
    ] {
        assert!(nmi(test_set.labels(), &result.assignments).unwrap() >= 0.9);
    }
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let data = blobs(30, 3, Split::Train);
    let run = |shuffle_seed| {
        let net = init_network(NetworkConfig::new(vec![10, 8, 2], Activation::Tanh, 1)).unwrap();
        train(
            net,
            &data,
            &TrainConfig {
                shuffle_seed,
                epochs: 3,
                ..config()
            },
        )
        .unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.log.to_text(), b.log.to_text());
    assert_eq!(a.network, b.network);
    assert_ne!(a.log.to_text(), c.log.to_text());
}
