mod common;

use btgp::gp::{train_ensemble, EnsembleConfig, EnsembleModel, FitConfig, TrainOptions, TrainedModel, TrainingData};
use common::*;
use ndarray::Array2;
use rand::Rng;

fn toy_data(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, 2), |_| r.gen_range(0.0..1.0));
    let y = x.rows().into_iter().map(|row| (6.0f64 * row[0]).sin() + row[1] + 0.1 * r.gen_range(-1.0..1.0)).collect();
    (x, y)
}

fn small_config(members: usize) -> EnsembleConfig {
    EnsembleConfig {
        bit_orders: 4,
        members,
        train: TrainOptions {
            max_iters: 30,
            ..TrainOptions::default()
        },
        seed: 5,
        ..EnsembleConfig::default()
    }
}

#[test]
fn single_member_ensemble_predicts_like_its_member() {
    let (x, y) = toy_data(1, 60);
    let data = TrainingData::new(x.view(), &y, Some(4), false).unwrap();
    let ens = train_ensemble(data.clone(), &small_config(1)).unwrap();
    assert_eq!(ens.mixture_weights, vec![1.0]);
    let (xt, _) = toy_data(2, 15);
    let mixed = ens.predict(xt.view()).unwrap();
    let single = TrainedModel::from_params(data, ens.members[0].posterior.params.clone())
        .unwrap()
        .predict(xt.view())
        .unwrap();
    assert_eq!(mixed.output.mean, single.mean);
    assert_eq!(mixed.output.variance, single.variance);
}

#[test]
fn identical_members_get_uniform_weights() {
    let (x, y) = toy_data(3, 40);
    let model = TrainedModel::fit(x.view(), &y, &FitConfig::default()).unwrap();
    let params = vec![model.params().clone(); 4];
    let ens = EnsembleModel::from_params(model.data.clone(), params, 0.01).unwrap();
    assert!(ens.mixture_weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    let (xt, _) = toy_data(4, 10);
    let mixed = ens.predict(xt.view()).unwrap();
    let single = model.predict(xt.view()).unwrap();
    assert!(max_abs_diff(&mixed.output.mean, &single.mean) <= 1e-12);
    assert!(max_abs_diff(&mixed.output.variance, &single.variance) <= 1e-12);
}

#[test]
fn mixture_nll_is_bounded_by_each_member() {
    let (x, y) = toy_data(5, 80);
    let data = TrainingData::new(x.view(), &y, Some(4), false).unwrap();
    let cfg = EnsembleConfig {
        temperature: 1.0,
        ..small_config(4)
    };
    let ens = train_ensemble(data, &cfg).unwrap();
    assert!((ens.mixture_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let (xt, yt) = toy_data(6, 30);
    let mixed = ens.predict(xt.view()).unwrap();
    let total = mixed.pointwise_nll(&yt).unwrap();
    for (k, &pi) in mixed.weights.iter().enumerate() {
        let member = ens.predict_member(k, xt.view()).unwrap().pointwise_nll(&yt).unwrap();
        for (t, m) in total.iter().zip(&member) {
            assert!(*t <= m - pi.ln() + 1e-12);
        }
    }
}

#[test]
fn ensembles_are_reproducible() {
    let (x, y) = toy_data(7, 50);
    let data = TrainingData::new(x.view(), &y, Some(3), false).unwrap();
    let a = train_ensemble(data.clone(), &small_config(3)).unwrap();
    let b = train_ensemble(data, &small_config(3)).unwrap();
    assert_eq!(a, b);
}
