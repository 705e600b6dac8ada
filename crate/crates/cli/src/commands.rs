use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use mufno::autodiff::{gradcheck, GradcheckOptions};
use mufno::burgers::{build_dataset, load_dataset, sample_grf, save_dataset, GrfConfig, Splits};
use mufno::diagnostics::{coord_check, norm_scaling, write_coordcheck_csv, write_normscaling_csv, CoordCheckSpec};
use mufno::experiments::{
    mu_transfer, sweep, train_model, write_landscape_csv, write_optimum_csv, SweepSpec, TrainRecord,
};
use mufno::model::{init_params, save_checkpoint, FnoConfig};
use mufno::numerics::{Grid1D, SeededRng};
use mufno::parametrization::{Parametrization, ParametrizationKind};
use mufno::tensor::Tensor3;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::{CliError, Command, Common, ParamChoice, EXIT_FAILED_CHECK};

pub const PARALLELISM_ENV: &str = "MUFNO_PARALLELISM";

/// Everything a command needs: the resolved config, where to write, and the
/// files written so far.
struct Run {
    name: &'static str,
    config: ExperimentConfig,
    output: PathBuf,
    choice: Option<ParamChoice>,
    threads: usize,
    outputs: Vec<PathBuf>,
    started: Instant,
}

pub fn dispatch(command: &Command) -> Result<i32, CliError> {
    let (name, common, body): (_, _, fn(&mut Run) -> Result<(i32, Value), CliError>) = match command {
        Command::GenData(c) => ("gen-data", c, gen_data),
        Command::Train(c) => ("train", c, train_cmd),
        Command::Sweep(c) => ("sweep", c, sweep_cmd),
        Command::Transfer(c) => ("transfer", c, transfer_cmd),
        Command::Coordcheck(c) => ("coordcheck", c, coordcheck_cmd),
        Command::Normscaling(c) => ("normscaling", c, normscaling_cmd),
        Command::Gradcheck(c) => ("gradcheck", c, gradcheck_cmd),
    };
    let mut run = Run::prepare(name, common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let (code, result) = pool.install(|| body(&mut run))?;
    run.write_manifest(result)?;
    Ok(code)
}

fn resolve_threads(flag: Option<usize>, config: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag.or(config) {
        if n == 0 {
            return Err(CliError::Config("parallelism: must be >= 1".into()));
        }
        return Ok(n);
    }
    if let Ok(raw) = std::env::var(PARALLELISM_ENV) {
        return match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{PARALLELISM_ENV}: expected a positive integer, got `{raw}`"))),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Run {
    fn prepare(name: &'static str, common: &Common) -> Result<Self, CliError> {
        let mut overrides = Vec::new();
        if let Some(seed) = common.seed {
            overrides.push(format!("train.seed={seed}"));
            overrides.push(format!("data.generate.seed={seed}"));
        }
        overrides.extend(common.overrides.iter().cloned());
        let (config, _) = ExperimentConfig::load(&common.config, &overrides)?;
        let threads = resolve_threads(common.parallelism, config.parallelism)?;
        let output = common.output.clone().unwrap_or_else(|| config.output_dir.clone());
        fs::create_dir_all(&output).map_err(|e| io_err(&output, e))?;
        Ok(Run {
            name,
            config,
            output,
            choice: common.parametrization,
            threads,
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn path(&mut self, file: &str) -> PathBuf {
        let p = self.output.join(file);
        self.outputs.push(p.clone());
        p
    }

    fn create(&mut self, file: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(file);
        let f = File::create(&p).map_err(|e| io_err(&p, e))?;
        Ok(BufWriter::new(f))
    }

    fn write_json(&mut self, file: &str, value: &impl Serialize) -> Result<(), CliError> {
        let p = self.path(file);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    }

    /// Parametrizations selected by `--parametrization`, defaulting to the config's.
    fn parametrizations(&self) -> Vec<Parametrization> {
        let p = self.config.parametrization;
        match self.choice {
            None => vec![p],
            Some(ParamChoice::Standard) => vec![p.with_kind(ParametrizationKind::Standard)],
            Some(ParamChoice::Mup) => vec![p.with_kind(ParametrizationKind::Mup)],
            Some(ParamChoice::Both) => vec![
                p.with_kind(ParametrizationKind::Standard),
                p.with_kind(ParametrizationKind::Mup),
            ],
        }
    }

    fn single_parametrization(&self) -> Result<Parametrization, CliError> {
        match self.parametrizations().as_slice() {
            [p] => Ok(*p),
            _ => Err(CliError::Config(format!(
                "--parametrization=both is not supported by {}",
                self.name
            ))),
        }
    }

    fn load_data(&self) -> Result<Splits, CliError> {
        let data = &self.config.data;
        match (&data.train_path, &data.eval_path) {
            (Some(t), Some(e)) => {
                let load = |p: &Path| {
                    if !p.exists() {
                        return Err(CliError::Data(format!("{}: dataset file not found", p.display())));
                    }
                    Ok(load_dataset(p)?)
                };
                Ok(Splits {
                    train: load(t)?,
                    eval: load(e)?,
                })
            }
            _ => Ok(build_dataset(&data.generate)?),
        }
    }

    fn write_manifest(&mut self, result: Value) -> Result<(), CliError> {
        let mut outputs = Vec::new();
        for p in &self.outputs {
            outputs.push(json!({
                "file": p.file_name().map(|f| f.to_string_lossy().into_owned()),
                "sha256": sha256_file(p)?,
            }));
        }
        let manifest = json!({
            "command": self.name,
            "schema_version": SCHEMA_VERSION,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.config.hash(),
            "config": self.config,
            "seed": self.config.train.seed,
            "data_seed": self.config.data.generate.seed,
            "parallelism": self.threads,
            "wall_time": self.started.elapsed().as_secs_f64(),
            "outputs": outputs,
            "result": result,
        });
        let p = self.output.join(format!("{}.manifest.json", self.name));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(&p, text + "\n").map_err(|e| io_err(&p, e))
    }
}

fn gen_data(run: &mut Run) -> Result<(i32, Value), CliError> {
    let splits = build_dataset(&run.config.data.generate)?;
    for (file, ds) in [("train.fnod", &splits.train), ("eval.fnod", &splits.eval)] {
        let p = run.path(file);
        save_dataset(ds, &p)?;
    }
    println!(
        "wrote {} train and {} eval samples on n={} to {}",
        splits.train.len(),
        splits.eval.len(),
        splits.train.grid.n(),
        run.output.display()
    );
    Ok((
        0,
        json!({"n_train": splits.train.len(), "n_eval": splits.eval.len(), "grid_n": splits.train.grid.n()}),
    ))
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    eval_error: Option<f64>,
}

fn write_history(run: &mut Run, file: &str, record: &TrainRecord) -> Result<(), CliError> {
    let out = run.create(file)?;
    let mut w = csv::Writer::from_writer(out);
    let every = record.hyperparams.eval_every;
    for (e, &loss) in record.loss_history.iter().enumerate() {
        let eval = (every > 0 && (e + 1) % every == 0)
            .then(|| record.eval_history.get((e + 1) / every - 1).copied())
            .flatten();
        w.serialize(HistoryRow {
            epoch: e + 1,
            train_loss: loss,
            eval_error: eval,
        })
        .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Internal(e.to_string()))
}

fn summary(record: &TrainRecord) -> Value {
    json!({
        "parametrization": record.parametrization.name(),
        "K": record.modes,
        "initial_train_loss": record.initial_train_loss,
        "initial_eval_error": record.initial_eval_error,
        "final_train_loss": record.final_train_loss,
        "final_eval_error": record.final_eval_error,
        "step_count": record.step_count,
        "diverged": record.diverged,
    })
}

fn train_cmd(run: &mut Run) -> Result<(i32, Value), CliError> {
    let splits = run.load_data()?;
    let mut results = Vec::new();
    for p in run.parametrizations() {
        let name = p.kind.name();
        let (record, params) = train_model(&splits.train, &splits.eval, &run.config.model, &p, &run.config.train)?;
        write_history(run, &format!("history_{name}.csv"), &record)?;
        let ckpt = run.path(&format!("model_{name}.mufn"));
        save_checkpoint(&ckpt, &run.config.model, &params)?;
        println!(
            "{name} K={}: train loss {:.6e}, eval error {:.6e}{}",
            record.modes,
            record.final_train_loss,
            record.final_eval_error,
            if record.diverged { " (diverged)" } else { "" }
        );
        results.push(summary(&record));
    }
    Ok((0, Value::Array(results)))
}

fn sweep_spec(run: &Run, p: Parametrization) -> Result<SweepSpec, CliError> {
    let s = run
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("sweep: section required by {}", run.name)))?;
    Ok(SweepSpec {
        axis: s.axis,
        values: s.values.clone(),
        modes: s.modes.clone(),
        fixed: run.config.train.clone(),
        model: run.config.model.clone(),
        parametrization: p,
        seeds: s.seeds.clone(),
        select_by: s.select_by,
    })
}

fn sweep_cmd(run: &mut Run) -> Result<(i32, Value), CliError> {
    let splits = run.load_data()?;
    let mut results = Vec::new();
    for p in run.parametrizations() {
        let spec = sweep_spec(run, p)?;
        spec.validate()?;
        let result = sweep(&spec, &splits.train, &splits.eval)?;
        let name = p.kind.name();
        write_landscape_csv(&result, run.create(&format!("landscape_{name}.csv"))?)?;
        write_optimum_csv(&result, run.create(&format!("optimum_{name}.csv"))?)?;
        for (k, v) in spec.modes.iter().zip(&result.optimal_values) {
            println!("{name} K={k}: optimal {} = {v}", spec.axis.name());
        }
        results.push(json!({
            "parametrization": name,
            "modes": spec.modes,
            "argmin": result.argmin,
            "optimal_values": result.optimal_values,
        }));
    }
    Ok((0, Value::Array(results)))
}

fn transfer_cmd(run: &mut Run) -> Result<(i32, Value), CliError> {
    let t = run
        .config
        .transfer
        .clone()
        .ok_or_else(|| CliError::Config("transfer: section required".into()))?;
    let p = run.single_parametrization()?;
    let mut spec = sweep_spec(run, p)?;
    spec.modes = vec![t.k_proxy];
    spec.validate()?;
    let splits = run.load_data()?;
    let out = mu_transfer(&spec, t.k_target, &splits.train, &splits.eval)?;
    write_landscape_csv(&out.sweep, run.create("landscape_proxy.csv")?)?;
    write_history(run, "history_target.csv", &out.target_record)?;
    let lr_factor = ((t.k_proxy as f64).ln() / (t.k_target as f64).ln()).sqrt();
    let xi = json!({
        "k_proxy": out.k_proxy,
        "k_target": out.k_target,
        "parametrization": p.kind.name(),
        "xi_star": out.xi_star,
        "proxy_init_std": out.proxy_init_std,
        "rescale_factor": lr_factor,
        "target_hyperparams": out.target_hyperparams,
        "target_init_std": out.target_init_std,
        "target": summary(&out.target_record),
        "cost_report": out.cost,
    });
    run.write_json("xi_star.json", &xi)?;
    println!(
        "K={} -> K={}: spectral lr {:.6e}, target eval error {:.6e}, cost ratio {:.4}",
        t.k_proxy,
        t.k_target,
        out.target_hyperparams.spectral_lr.unwrap_or(out.target_hyperparams.master_lr),
        out.target_record.final_eval_error,
        out.cost.ratio
    );
    Ok((0, xi))
}

fn coordcheck_cmd(run: &mut Run) -> Result<(i32, Value), CliError> {
    let section = run
        .config
        .coordcheck
        .clone()
        .ok_or_else(|| CliError::Config("coordcheck: section required".into()))?;
    let splits = run.load_data()?;
    let mut traces = Vec::new();
    for p in run.parametrizations() {
        let spec = CoordCheckSpec {
            model: run.config.model.clone(),
            parametrization: p,
            modes: section.modes.clone(),
            steps: section.steps,
            hyperparams: run.config.train.clone(),
            seeds: section.seeds.clone(),
        };
        traces.extend(coord_check(&spec, &splits.train)?);
    }
    // one file holds both parametrizations, each followed by its seed means
    let mut buf = Vec::new();
    for kind in [ParametrizationKind::Standard, ParametrizationKind::Mup] {
        let group: Vec<_> = traces.iter().filter(|t| t.parametrization == kind).cloned().collect();
        if group.is_empty() {
            continue;
        }
        let mut part = Vec::new();
        write_coordcheck_csv(&group, &mut part)?;
        let text = String::from_utf8(part).map_err(|e| CliError::Internal(e.to_string()))?;
        let body = if buf.is_empty() {
            text.as_str()
        } else {
            text.split_once('\n').map_or("", |(_, rest)| rest)
        };
        buf.extend_from_slice(body.as_bytes());
    }
    let p = run.path("coordcheck.csv");
    fs::write(&p, &buf).map_err(|e| io_err(&p, e))?;
    println!("wrote {} traces to {}", traces.len(), p.display());
    Ok((0, json!({"traces": traces.len()})))
}

fn normscaling_cmd(run: &mut Run) -> Result<(i32, Value), CliError> {
    let s = run
        .config
        .normscaling
        .clone()
        .ok_or_else(|| CliError::Config("normscaling: section required".into()))?;
    let report = norm_scaling(&s.modes, &s.dims, &s.scales, s.trials, run.config.train.seed)?;
    write_normscaling_csv(&report.rows, run.create("normscaling.csv")?)?;
    println!(
        "slope {:.4}, intercept {:.4}, R^2 {:.5}",
        report.fit.slope, report.fit.intercept, report.fit.r_squared
    );
    Ok((0, json!({"fit": report.fit})))
}

fn gradcheck_cmd(run: &mut Run) -> Result<(i32, Value), CliError> {
    let g = run.config.gradcheck.clone();
    let p = run.single_parametrization()?;
    let config = FnoConfig {
        layers: g.layers,
        width: g.width,
        modes: g.modes,
        ..run.config.model.clone()
    };
    config.validate()?;
    config.check_grid(g.n)?;
    let root = SeededRng::new(run.config.train.seed);
    let params = init_params(&config, &p, &root.derive(1))?;
    let grid = Grid1D::unit(g.n)?;
    let grf = GrfConfig::default();
    let field = |stream: u64, channels: usize| -> Result<Tensor3, CliError> {
        let mut rng = root.derive(stream);
        let mut data = Vec::with_capacity(g.batch * g.n * channels);
        for _ in 0..g.batch * channels {
            data.extend(sample_grf(&grf, &grid, &mut rng));
        }
        // sample_grf draws one channel at a time; interleave into point-major order
        let mut out = vec![0.0; data.len()];
        for b in 0..g.batch {
            for c in 0..channels {
                for j in 0..g.n {
                    out[(b * g.n + j) * channels + c] = data[(b * channels + c) * g.n + j];
                }
            }
        }
        Ok(Tensor3::from_vec(g.batch, g.n, channels, out)?)
    };
    let inputs = field(2, config.in_channels)?;
    let targets = field(3, config.out_channels)?;
    let options = GradcheckOptions {
        seed: run.config.train.seed,
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&params, &config, &inputs, &targets, g.tolerance, &options)?;
    println!(
        "max_rel_err {:.3e} over {} entries (worst {}[{}]): {}",
        report.max_rel_err,
        report.checked,
        report.worst_tensor,
        report.worst_index,
        if report.pass { "pass" } else { "fail" }
    );
    let code = if report.pass { 0 } else { EXIT_FAILED_CHECK };
    Ok((code, serde_json::to_value(&report).map_err(|e| CliError::Internal(e.to_string()))?))
}
