use std::sync::OnceLock;

use mufno::burgers::{build_dataset, BurgersConfig, Splits};
use mufno::experiments::{
    mu_transfer, records_cost, step_cost, sweep, sweep_with, train, train_model, write_landscape_csv,
    SelectBy, SweepAxis, SweepSpec, TrainRecord,
};
use mufno::model::{init_params, FnoConfig};
use mufno::numerics::SeededRng;
use mufno::parametrization::{HyperParams, Parametrization, ParametrizationKind};
use mufno::Error;

fn tiny() -> &'static Splits {
    static DATA: OnceLock<Splits> = OnceLock::new();
    DATA.get_or_init(|| {
        build_dataset(&BurgersConfig {
            grid_n_solver: 256,
            grid_n_train: 64,
            steps: 200,
            n_train: 24,
            n_eval: 8,
            seed: 4,
            ..BurgersConfig::default()
        })
        .unwrap()
    })
}

fn tiny_spec(values: Vec<f64>, modes: Vec<usize>) -> SweepSpec {
    SweepSpec {
        axis: SweepAxis::Lr,
        values,
        modes,
        fixed: HyperParams::new(1e-3, 8, 2),
        model: FnoConfig::new(1, 4, 4),
        parametrization: Parametrization::mup(4, 0.1),
        seeds: vec![0, 1],
        select_by: SelectBy::TrainLoss,
    }
}

fn stub(loss: f64, diverged: bool, xi: &HyperParams, modes: usize) -> TrainRecord {
    TrainRecord {
        hyperparams: xi.clone(),
        parametrization: ParametrizationKind::Mup,
        modes,
        loss_history: vec![],
        eval_history: vec![],
        initial_train_loss: 1.0,
        initial_eval_error: 1.0,
        final_train_loss: if diverged { f64::INFINITY } else { loss },
        final_eval_error: if diverged { f64::INFINITY } else { loss },
        wall_time: 0.0,
        step_count: 10,
        diverged,
    }
}

#[test]
fn zero_epochs_keep_initial_state() {
    let d = tiny();
    let config = FnoConfig::new(2, 4, 4);
    let p = Parametrization::standard(0.1);
    let mut xi = HyperParams::new(1e-3, 8, 0);
    xi.seed = 9;
    let (record, params) = train_model(&d.train, &d.eval, &config, &p, &xi).unwrap();
    assert_eq!(record.final_train_loss, record.initial_train_loss);
    assert_eq!(record.final_eval_error, record.initial_eval_error);
    assert_eq!(record.step_count, 0);
    assert!(record.loss_history.is_empty());
    let fresh = init_params(&config, &p, &SeededRng::new(9).derive(1)).unwrap();
    assert_eq!(params, fresh);
}

#[test]
fn training_is_deterministic() {
    let d = tiny();
    let config = FnoConfig::new(2, 4, 4);
    let mut xi = HyperParams::new(3e-3, 5, 3);
    xi.eval_every = 1;
    xi.seed = 2;
    let p = Parametrization::mup(2, 0.2);
    let a = train(&d.train, &d.eval, &config, &p, &xi).unwrap();
    let b = train(&d.train, &d.eval, &config, &p, &xi).unwrap();
    assert!(a.same_outcome(&b));
    assert_eq!(a.loss_history.len(), 3);
    assert_eq!(a.eval_history.len(), 3);
    assert_eq!(a.step_count, 3 * 5);
    let mut other = xi.clone();
    other.seed = 3;
    let c = train(&d.train, &d.eval, &config, &p, &other).unwrap();
    assert_ne!(a.final_train_loss, c.final_train_loss);
}

#[test]
fn huge_learning_rate_is_flagged_not_fatal() {
    let d = tiny();
    let xi = HyperParams::new(50.0, 4, 5);
    let r = train(&d.train, &d.eval, &FnoConfig::new(2, 4, 4), &Parametrization::standard(0.1), &xi).unwrap();
    assert!(r.diverged);
    assert_eq!(r.final_train_loss, f64::INFINITY);
    assert_eq!(r.final_eval_error, f64::INFINITY);
}

#[test]
fn data_errors_surface_before_training() {
    let d = tiny();
    let xi = HyperParams::new(1e-3, 4, 1);
    let too_many_modes = FnoConfig::new(1, 4, 40);
    assert!(matches!(
        train(&d.train, &d.eval, &too_many_modes, &Parametrization::standard(0.1), &xi),
        Err(Error::Truncation { .. })
    ));
}

#[test]
fn desk_training_makes_progress() {
    let splits = build_dataset(&BurgersConfig {
        n_train: 100,
        n_eval: 25,
        seed: 8,
        ..BurgersConfig::desk()
    })
    .unwrap();
    let config = FnoConfig::new(2, 16, 8);
    let mut xi = HyperParams::new(2e-3, 20, 50);
    xi.seed = 1;
    let r = train(
        &splits.train,
        &splits.eval,
        &config,
        &Parametrization::mup(4, 1.0 / 256.0),
        &xi,
    )
    .unwrap();
    assert!(!r.diverged);
    assert!(
        r.final_eval_error < 0.1 * r.initial_eval_error,
        "{} vs initial {}",
        r.final_eval_error,
        r.initial_eval_error
    );
}

#[test]
fn stub_argmin_contract() {
    let losses = [1.0, 0.5, 0.8];
    let spec = tiny_spec(vec![1e-4, 1e-3, 1e-2], vec![4]);
    let pick = |xi: &HyperParams| spec.values.iter().position(|v| *v == xi.master_lr).unwrap();
    let result = sweep_with(&spec, |c, _, xi| Ok(stub(losses[pick(xi)], false, xi, c.modes))).unwrap();
    assert_eq!(result.argmin, vec![1]);
    assert_eq!(result.optimal_values, vec![1e-3]);

    // ties go to the smaller value
    let tied = sweep_with(&spec, |c, _, xi| Ok(stub(0.5, false, xi, c.modes))).unwrap();
    assert_eq!(tied.argmin, vec![0]);

    // a cell with any diverged seed is excluded
    let partial = sweep_with(&spec, |c, _, xi| {
        Ok(stub(losses[pick(xi)], pick(xi) == 1 && xi.seed == 1, xi, c.modes))
    })
    .unwrap();
    assert_eq!(partial.argmin, vec![2]);

    let single = tiny_spec(vec![1e-3], vec![4, 8]);
    let r = sweep_with(&single, |c, _, xi| Ok(stub(0.3, false, xi, c.modes))).unwrap();
    assert_eq!(r.argmin, vec![0, 0]);
}

#[test]
fn all_diverged_names_k() {
    let spec = tiny_spec(vec![1e-3, 1e-2], vec![4, 8]);
    let err = sweep_with(&spec, |c, _, xi| Ok(stub(0.1, c.modes == 8, xi, c.modes))).unwrap_err();
    assert!(matches!(err, Error::SweepFailed { modes: 8 }));
}

#[test]
fn sweep_is_independent_of_scheduling() {
    let d = tiny();
    let spec = tiny_spec(vec![1e-3, 4e-3], vec![2, 4]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sweep(&spec, &d.train, &d.eval).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.argmin, b.argmin);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!(x.same_outcome(y));
    }
    assert_eq!(a.records.len(), 8);
    assert_eq!(a.record(1, 0, 1).hyperparams.master_lr, 4e-3);
    assert_eq!(a.record(1, 0, 1).modes, 2);
    assert_eq!(a.record(1, 0, 1).hyperparams.seed, 1);
}

#[test]
fn landscape_csv_layout() {
    let spec = tiny_spec(vec![1e-4, 1e-3, 1e-2], vec![4, 8]);
    let result = sweep_with(&spec, |c, _, xi| {
        Ok(stub(xi.master_lr, xi.master_lr == 1e-2 && c.modes == 8, xi, c.modes))
    })
    .unwrap();
    let mut buf = Vec::new();
    write_landscape_csv(&result, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "parametrization,K,axis,value,seed,final_train_loss,final_eval_error,diverged"
    );
    let aggregate = lines.iter().filter(|l| l.split(',').nth(4) == Some("-1")).count();
    assert_eq!(aggregate, 3 * 2);
    assert_eq!(lines.len() - 1, 3 * 2 * 3);
    assert!(lines.contains(&"mup,8,lr,0.01,0,inf,inf,true"));
    assert!(lines.contains(&"mup,4,lr,0.001,-1,0.001,0.001,false"));
}

#[test]
fn transfer_rescales_spectral_rate() {
    let d = tiny();
    let mut spec = tiny_spec(vec![1e-3], vec![4]);
    spec.parametrization = Parametrization::standard(0.1);
    spec.fixed.epochs = 1;
    let out = mu_transfer(&spec, 16, &d.train, &d.eval).unwrap();
    let lr = out.target_hyperparams.spectral_lr.unwrap();
    assert!((lr - 7.0711e-4).abs() < 1e-8, "{lr}");
    assert_eq!(out.target_hyperparams.master_lr, 1e-3);
    assert!((out.target_init_std - 0.1 * (4f64.ln() / 16f64.ln()).sqrt()).abs() < 1e-15);
    assert!(out.cost.transfer_cost > out.cost.proxy_sweep_cost);
    assert_eq!(out.cost.proxy_sweep_steps, 2 * 3);
}

#[test]
fn transfer_at_same_k_reproduces_best_run() {
    let d = tiny();
    let spec = tiny_spec(vec![1e-3, 3e-3, 1e-2], vec![4]);
    let out = mu_transfer(&spec, 4, &d.train, &d.eval).unwrap();
    let best = out.sweep.record(out.sweep.argmin[0], 0, 0);
    assert_eq!(out.target_record.final_train_loss, best.final_train_loss);
    assert_eq!(out.target_record.loss_history, best.loss_history);
    assert_eq!(out.target_hyperparams.master_lr, spec.values[out.sweep.argmin[0]]);

    let too_many = tiny_spec(vec![1e-3], vec![4, 8]);
    assert!(matches!(mu_transfer(&too_many, 8, &d.train, &d.eval), Err(Error::Config { .. })));
}

#[test]
fn cost_accounting_is_step_based() {
    let config = FnoConfig::new(2, 16, 8);
    let cost = step_cost(20, 256, &config);
    let expected = 20.0 * 256.0 * (2.0 * (8.0 * 256.0 + 256.0 * 8.0 * 16.0) + 256.0 * 256.0);
    assert_eq!(cost, expected);
    let xi = HyperParams::new(1e-3, 20, 1);
    let one = vec![stub(0.1, false, &xi, 8)];
    let two = vec![stub(0.1, false, &xi, 8), stub(0.2, false, &xi, 8)];
    assert!(records_cost(&two, 256, &config) > records_cost(&one, 256, &config));
    assert_eq!(records_cost(&one, 256, &config), 10.0 * cost);
}
