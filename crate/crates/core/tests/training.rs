use ndarray::{array, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stdemand::graphs::{build_shift, MaskPlan};
use stdemand::ingest::{build_covariates, DemandTensor};
use stdemand::model::{backward, forward, ForwardConfig, Scene};
use stdemand::synth::{gpvar_series_from, make_city_with, CityOptions, GpvarParams, Nonlinearity};
use stdemand::training::gradcheck::{micro_config, random_instance};
use stdemand::training::{
    joint_loss, load_trainer, save_trainer, train, validate, write_metric_log, EpochRecord, StopReason, TrainConfig,
    TrainSet, TrainerState,
};

struct Fixture {
    demand: DemandTensor,
    covariates: Array2<f64>,
    encodings: Array2<f64>,
    adjacency: Array2<f64>,
}

impl Fixture {
    fn city(n: usize, steps: usize, seed: u64) -> Self {
        let opts = CityOptions { n_nodes: n, n_steps: steps, llm_dim: 8, ..CityOptions::default() };
        let c = make_city_with(&opts, seed).unwrap();
        Self::from_parts(c.demand, c.encodings.values, c.graph.adjacency)
    }

    fn from_parts(demand: DemandTensor, encodings: Array2<f64>, adjacency: Array2<f64>) -> Self {
        let covariates = build_covariates(demand.t0, demand.n_steps(), demand.interval_seconds).unwrap().values;
        Self { demand, covariates, encodings, adjacency }
    }

    fn set(&self, train: std::ops::Range<usize>, val: std::ops::Range<usize>) -> TrainSet<'_> {
        TrainSet {
            demand: &self.demand,
            covariates: &self.covariates,
            encodings: &self.encodings,
            adjacency: &self.adjacency,
            train,
            val,
        }
    }
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        model: ForwardConfig { window: 4, horizon: 2, hidden: 8, node_dim: 4, graph_dim: 4, ffn_layers: 1, ..Default::default() },
        epochs: 3,
        seed: 11,
        ..Default::default()
    };
    cfg.mask = stdemand::graphs::MaskMode::Count(2);
    cfg
}

fn without_seconds(log: &[EpochRecord]) -> Vec<(usize, f64, f64, f64)> {
    log.iter().map(|r| (r.epoch, r.train_loss, r.val_mae, r.val_rmse)).collect()
}

#[test]
fn one_epoch_over_three_windows_takes_three_steps() {
    let f = Fixture::city(6, 60, 1);
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    let span = cfg.model.window + cfg.model.horizon;
    let out = train(&f.set(0..span + 2, 20..40), &cfg, None, |_| Ok(())).unwrap();
    assert_eq!(out.state.opt.step, 3);
    assert_eq!(out.log().len(), 1);
}

#[test]
fn same_seed_same_log() {
    let f = Fixture::city(6, 120, 2);
    let cfg = tiny_config();
    let a = train(&f.set(0..80, 80..120), &cfg, None, |_| Ok(())).unwrap();
    let b = train(&f.set(0..80, 80..120), &cfg, None, |_| Ok(())).unwrap();
    assert_eq!(without_seconds(a.log()), without_seconds(b.log()));
    assert_eq!(a.model, b.model);
    let c = train(&f.set(0..80, 80..120), &TrainConfig { seed: 12, ..cfg }, None, |_| Ok(())).unwrap();
    assert_ne!(without_seconds(a.log()), without_seconds(c.log()));
}

#[test]
fn parallel_workers_are_reproducible() {
    let f = Fixture::city(6, 120, 3);
    let cfg = TrainConfig { workers: 3, ..tiny_config() };
    let a = train(&f.set(0..80, 80..120), &cfg, None, |_| Ok(())).unwrap();
    let b = train(&f.set(0..80, 80..120), &cfg, None, |_| Ok(())).unwrap();
    assert_eq!(without_seconds(a.log()), without_seconds(b.log()));
    assert_eq!(a.model, b.model);
}

#[test]
fn resume_from_disk_is_bit_identical() {
    let f = Fixture::city(6, 120, 4);
    let cfg = TrainConfig { epochs: 4, ..tiny_config() };
    let full = train(&f.set(0..80, 80..120), &cfg, None, |_| Ok(())).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("trainer.ickp");
    let half = TrainConfig { epochs: 2, ..cfg.clone() };
    train(&f.set(0..80, 80..120), &half, None, |s| save_trainer(&path, s, &half)).unwrap();
    let (state, model_cfg) = load_trainer(&path).unwrap();
    assert_eq!(model_cfg, cfg.model);
    assert_eq!(state.epoch, 2);
    let resumed = train(&f.set(0..80, 80..120), &cfg, Some(state), |_| Ok(())).unwrap();

    assert_eq!(without_seconds(full.log()), without_seconds(resumed.log()));
    assert_eq!(full.state.params, resumed.state.params);
    assert_eq!(full.state.opt, resumed.state.opt);
    assert_eq!(full.model, resumed.model);
}

#[test]
fn linear_toy_loss_halves_within_200_steps() {
    let n = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut a = Array2::zeros((n, n));
    for i in 0..n - 1 {
        a[[i, i + 1]] = 0.8;
        a[[i + 1, i]] = 0.8;
    }
    let s = build_shift(&a);
    let gain = Array1::from_shape_fn(n, |_| rng.random_range(1.0..1.05));
    let params = GpvarParams::new(array![[0.7, 0.25]], gain, 0.0, Nonlinearity::Identity).unwrap();
    let init = Array2::from_shape_fn((1, n), |_| rng.random_range(-3.0..3.0));
    let series = gpvar_series_from(&params, &s, &init, 120, 0).unwrap();
    let demand = DemandTensor::observed(series.insert_axis(Axis(1)), 3600, 1_704_067_200).unwrap();
    let encodings = Array2::from_shape_fn((n, 8), |_| rng.random_range(-1.0..1.0));
    let f = Fixture::from_parts(demand, encodings, a);

    let mut cfg = tiny_config();
    cfg.mask = stdemand::graphs::MaskMode::Count(1);
    // 50 windows per epoch, 4 epochs
    let span = cfg.model.window + cfg.model.horizon;
    let train_range = 0..50 + span - 1;
    cfg.epochs = 4;
    cfg.patience = 10;
    cfg.lr = 3e-3;
    let probe = f.set(train_range.clone(), train_range.clone());
    let scene = Scene::<f32>::new(&f.encodings, &f.adjacency, cfg.model.neighbor_order).unwrap();
    let initial = TrainerState::new(&cfg, 8).unwrap();
    let (before, _) = validate(&initial.params, &cfg, &probe, &scene).unwrap();
    let out = train(&probe, &cfg, None, |_| Ok(())).unwrap();
    assert_eq!(out.state.opt.step, 200);
    let (after, _) = validate(&out.state.params, &cfg, &probe, &scene).unwrap();
    assert!(after < 0.5 * before, "loss {before} -> {after}");
}

#[test]
fn zero_masked_nodes_give_zero_reconstruction_gradient() {
    let mut inst = random_instance(&micro_config(), 3, 5, 21).unwrap();
    inst.plan = MaskPlan::empty((0, inst.cfg.window));
    let out = forward(&inst.state, &inst.cfg, &inst.scene, &inst.window).unwrap();
    let (report, drecon, dpred) =
        joint_loss(inst.kind, &out.recon, &out.pred, &inst.targets.view(), &inst.plan).unwrap();
    assert_eq!(report.recon_loss, 0.0);
    assert_eq!(report.n_masked_entries, 0);
    assert_eq!(report.total, report.pred_loss);
    assert!(drecon.iter().all(|&g| g == 0.0));

    // the reconstruction gradient alone moves nothing
    let zero_pred = Array2::zeros(dpred.dim());
    let g = backward(&inst.state, &inst.cfg, &inst.scene, &out.tape, &zero_pred, &drecon).unwrap();
    for t in g.tensors() {
        assert!(t.data.iter().all(|&x| x == 0.0), "{} has a nonzero gradient", t.name);
    }
    let full = backward(&inst.state, &inst.cfg, &inst.scene, &out.tape, &dpred, &drecon).unwrap();
    assert!(full.recon_w.iter().chain(full.recon_b.iter()).all(|&x| x == 0.0));
}

#[test]
fn non_finite_data_reports_divergence_with_last_good_parameters() {
    let mut f = Fixture::city(6, 120, 6);
    f.demand.values[[2, 0, 10]] = f64::INFINITY;
    let cfg = tiny_config();
    let initial = TrainerState::new(&cfg, 8).unwrap();
    let out = train(&f.set(0..80, 80..120), &cfg, None, |_| Ok(())).unwrap();
    assert!(matches!(out.stop, StopReason::Diverged { epoch: 0, .. }), "{:?}", out.stop);
    assert_eq!(out.state.params, initial.params);
    assert!(out.log().is_empty());
}

#[test]
fn metric_log_format() {
    let log = [
        EpochRecord { epoch: 1, train_loss: 0.5, val_mae: 0.25, val_rmse: 0.3, seconds: 1.23456 },
        EpochRecord { epoch: 2, train_loss: 0.4, val_mae: 0.2, val_rmse: 0.28, seconds: 0.5 },
    ];
    let mut buf = Vec::new();
    write_metric_log(&mut buf, &log).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epoch,train_loss,val_mae,val_rmse,seconds\n1,0.5,0.25,0.3,1.235\n2,0.4,0.2,0.28,0.500\n"
    );
}
