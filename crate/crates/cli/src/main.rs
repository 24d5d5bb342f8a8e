use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stdemand::config::RunConfig;
use stdemand::dataset::{Dataset, DEFAULT_RADIUS_KM};
use stdemand::encodings::{EncodingTable, DEFAULT_NODE_DIM};
use stdemand::eval::{
    format_table, forecast_rows, pick_new_regions, processed_embeddings, run_joint, run_transfer, write_embedding_tsv,
    write_forecast_csv, write_results_csv, Bypass, EmbeddingSource, Evaluation, ExperimentSpec, NewRegions, Scenario,
};
use stdemand::graphs::{GraphSpec, DEFAULT_EPSILON, DEFAULT_SIGMA_KM};
use stdemand::ingest::{aggregate_orders, chronological_split, parse_iso, read_orders_csv, read_regions_csv};
use stdemand::model::checkpoint;
use stdemand::synth::{make_city_with, CityOptions};
use stdemand::training::gradcheck::{gradient_check, micro_config, random_instance};
use stdemand::training::{load_trainer, save_trainer, write_metric_log};
use stdemand::{Error, Result};

#[derive(Parser)]
#[command(name = "stdemand", version, about = "Regional demand kriging and forecasting on city graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate an orders CSV into a dataset directory.
    Ingest(IngestArgs),
    /// Write a seeded synthetic city as a dataset directory.
    Synth(SynthArgs),
    /// Train with some regions held out, then evaluate on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Write test-split forecasts for regions whose history is hidden.
    Krige(KrigeArgs),
    /// Zero-shot evaluation of a checkpoint in another city.
    Transfer(TransferArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck(GradcheckArgs),
    /// Write processed region embeddings as a tab-separated matrix.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    orders: PathBuf,
    #[arg(long)]
    regions: PathBuf,
    /// Encoding file (IEMB) covering every region.
    #[arg(long)]
    encodings: PathBuf,
    #[arg(long, default_value_t = 3600)]
    interval: u32,
    /// First interval start, epoch seconds or ISO-8601; defaults to the
    /// earliest order rounded down to the interval.
    #[arg(long)]
    start: Option<String>,
    /// Number of intervals; defaults to covering the latest order.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_RADIUS_KM)]
    radius_km: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_KM)]
    sigma_km: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    nodes: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Encoding width.
    #[arg(long, default_value_t = 64)]
    llm_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    node_dim: Option<usize>,
    #[arg(long)]
    ffn_layers: Option<usize>,
    #[arg(long)]
    mp_layers: Option<usize>,
    #[arg(long)]
    mask_count: Option<usize>,
    /// `count:k` or `bernoulli:p`.
    #[arg(long)]
    mask_mode: Option<String>,
    /// `l1` or `mse`.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Train,validation,test ratios, e.g. `0.6,0.2,0.2`.
    #[arg(long)]
    split: Option<String>,
    /// Hold out this many regions drawn with the run seed.
    #[arg(long)]
    n_new: Option<usize>,
    /// Held-out region ids, comma separated; overrides `n_new`.
    #[arg(long, value_delimiter = ',')]
    new_regions: Option<Vec<String>>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::parse(&std::fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("{}: {e}", p.display()))
            })?)?,
            None => RunConfig::default(),
        };
        let mut pairs = BTreeMap::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.insert(k.to_string(), v);
            }
        };
        let s = |x: Option<usize>| x.map(|v| v.to_string());
        put("window", s(self.window));
        put("horizon", s(self.horizon));
        put("hidden", s(self.hidden));
        put("node_dim", s(self.node_dim));
        put("ffn_layers", s(self.ffn_layers));
        put("mp_layers", s(self.mp_layers));
        put("mask_count", s(self.mask_count));
        put("mask", self.mask_mode.clone());
        put("loss", self.loss.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("epochs", s(self.epochs));
        put("patience", s(self.patience));
        put("lr", self.lr.map(|v| v.to_string()));
        put("workers", s(self.workers));
        put("split", self.split.clone());
        put("n_new", s(self.n_new));
        cfg.apply_pairs(&pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn new_regions(&self, cfg: &RunConfig) -> NewRegions {
        match &self.new_regions {
            Some(ids) => NewRegions::Ids(ids.clone()),
            None => NewRegions::Random(cfg.n_new),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Zero the encodings and drop the functional graph.
    #[arg(long)]
    no_encoding: bool,
    /// Train without the spatial layers.
    #[arg(long)]
    no_mp: bool,
    /// Train without the adjacency pathway.
    #[arg(long)]
    no_adj_mp: bool,
    /// Checkpoint of the best-validation model. Trainer state goes next to
    /// it as `<out>.trainer` and the metric log as `<out>.log.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Continue from `<out>.trainer`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    no_mp: bool,
    #[arg(long)]
    no_adj_mp: bool,
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct KrigeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    no_mp: bool,
    #[arg(long)]
    no_adj_mp: bool,
    /// Forecast CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransferMode {
    Full,
    Partial,
}

#[derive(Args)]
struct TransferArgs {
    /// Target city dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Source city checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = TransferMode::Full)]
    scenario: TransferMode,
    #[command(flatten)]
    run: RunArgs,
    /// Skip the spatial layers (both graphs).
    #[arg(long)]
    no_mp: bool,
    /// Skip only the adjacency pathway.
    #[arg(long)]
    no_adj_mp: bool,
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    nodes: usize,
    /// Coordinates checked per tensor.
    #[arg(long, default_value_t = 64)]
    per_tensor: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ExportArgs {
    /// Dataset directory; its encodings are exported.
    #[arg(long, conflicts_with = "encodings", required_unless_present = "encodings")]
    data: Option<PathBuf>,
    /// Encoding file (IEMB).
    #[arg(long)]
    encodings: Option<PathBuf>,
    /// Use this model's probe; without it the leading encoding columns are used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Width of the untrained export.
    #[arg(long, default_value_t = DEFAULT_NODE_DIM)]
    node_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

fn bypass(no_mp: bool, no_adj_mp: bool) -> Bypass {
    match (no_mp, no_adj_mp) {
        (true, _) => Bypass::NoMp,
        (false, true) => Bypass::NoAdjMp,
        _ => Bypass::None,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn report(scenario: Scenario, e: &Evaluation, new_ids: &[String], results: Option<&Path>) -> Result<()> {
    if !new_ids.is_empty() {
        println!("new regions: {}", new_ids.join(","));
    }
    print!("{}", format_table(e));
    if let Some(p) = results {
        let mut w = create(p)?;
        write_results_csv(&mut w, scenario, e, new_ids)?;
        w.flush()?;
    }
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let orders = read_orders_csv(open(&a.orders)?)?;
    let regions = read_regions_csv(open(&a.regions)?, a.radius_km)?;
    let encodings = EncodingTable::read_from(open(&a.encodings)?)?;
    if a.interval == 0 {
        return Err(Error::Config("interval must be positive".into()));
    }
    let step = a.interval as i64;
    let t0 = match &a.start {
        Some(s) => s
            .parse::<i64>()
            .ok()
            .or_else(|| parse_iso(s))
            .ok_or_else(|| Error::Config(format!("unparseable --start {s:?}")))?,
        None => {
            let first = orders.iter().map(|o| o.pickup_time).min().ok_or_else(|| Error::Data("no orders".into()))?;
            first.div_euclid(step) * step
        }
    };
    let steps = match a.steps {
        Some(t) => t,
        None => {
            let last = orders.iter().map(|o| o.pickup_time).max().ok_or_else(|| Error::Data("no orders".into()))?;
            if last < t0 {
                return Err(Error::Data("every order precedes --start".into()));
            }
            ((last - t0) / step + 1) as usize
        }
    };
    let (demand, drops) = aggregate_orders(&orders, &regions, a.interval, t0, steps)?;
    let graph = GraphSpec::from_centers(&regions.centers, a.sigma_km, a.epsilon)?;
    let data = Dataset::new(regions, demand, graph, encodings)?;
    data.save(&a.out)?;
    println!(
        "{} orders into {} regions x {} intervals; dropped {} outside the time range, {} outside the radius",
        orders.len(),
        data.n_nodes(),
        steps,
        drops.outside_time_range,
        drops.outside_radius
    );
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let opts = CityOptions { n_nodes: a.nodes, n_steps: a.steps, llm_dim: a.llm_dim, ..CityOptions::default() };
    let city = make_city_with(&opts, a.seed)?;
    Dataset::from_city(&city).save(&a.out)?;
    println!("city with {} regions and {} steps written to {}", a.nodes, a.steps, a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut run = a.run.resolve()?;
    if a.no_encoding {
        run.set("use_encoding", false)?;
        run.set("use_llm_graph", false)?;
    }
    if a.no_mp {
        run.set("spatial", false)?;
    }
    if a.no_adj_mp {
        run.set("use_adjacency_graph", false)?;
    }
    let data = Dataset::load(&a.data)?;
    let trainer_path = suffixed(&a.out, ".trainer");
    let resume = if a.resume {
        let (state, model) = load_trainer(&trainer_path)?;
        if model != run.train.model {
            return Err(Error::Config("saved trainer state was made with a different model configuration".into()));
        }
        Some(state)
    } else {
        None
    };
    let spec = ExperimentSpec::joint(run.clone(), a.run.new_regions(&run));
    if let Some(parent) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let r = run_joint(&data, &spec, resume, |state| {
        if let Some(rec) = state.log.last() {
            eprintln!(
                "epoch {:>3}  train {:.4}  val MAE {:.4}  RMSE {:.4}  {:.1}s",
                rec.epoch, rec.train_loss, rec.val_mae, rec.val_rmse, rec.seconds
            );
        }
        save_trainer(&trainer_path, state, &run.train)
    })?;
    eprintln!("stopped: {:?}", r.outcome.stop);
    checkpoint::save(&a.out, &r.outcome.model, &run.train.model)?;
    let mut log = create(&suffixed(&a.out, ".log.csv"))?;
    write_metric_log(&mut log, r.outcome.log())?;
    log.flush()?;
    report(Scenario::Joint, &r.evaluation, &r.new_ids, a.results.as_deref())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let run = a.run.resolve()?;
    let data = Dataset::load(&a.data)?;
    let mut spec =
        ExperimentSpec::transfer(Scenario::TransferPartial, run.clone(), a.checkpoint.clone(), a.run.new_regions(&run));
    spec.bypass = bypass(a.no_mp, a.no_adj_mp);
    let r = run_transfer(&data, &spec)?;
    report(Scenario::Joint, &r.evaluation, &r.new_ids, a.results.as_deref())
}

fn krige(a: &KrigeArgs) -> Result<()> {
    let run = a.run.resolve()?;
    let data = Dataset::load(&a.data)?;
    let new = pick_new_regions(&data, &a.run.new_regions(&run), run.train.seed)?;
    if new.is_empty() {
        return Err(Error::Config("krige needs --new-regions or a positive --n-new".into()));
    }
    let (state, mut cfg) = checkpoint::load::<f32>(&a.checkpoint)?;
    bypass(a.no_mp, a.no_adj_mp).apply(&mut cfg);
    let splits = chronological_split(data.demand.n_steps(), run.split)?;
    let hidden = new.iter().copied().collect();
    let rows = forecast_rows(&state, &cfg, &data, splits.test, &hidden, &new)?;
    let mut w = create(&a.out)?;
    write_forecast_csv(&mut w, &data, &rows)?;
    w.flush()?;
    println!("{} forecasts for {} regions written to {}", rows.len(), new.len(), a.out.display());
    Ok(())
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let run = a.run.resolve()?;
    let data = Dataset::load(&a.data)?;
    let (scenario, new) = match a.scenario {
        TransferMode::Full => (Scenario::TransferFull, NewRegions::Random(0)),
        TransferMode::Partial => (Scenario::TransferPartial, a.run.new_regions(&run)),
    };
    if matches!(a.scenario, TransferMode::Full) && (a.run.new_regions.is_some() || run.n_new > 0) {
        return Err(Error::Config("full transfer observes every region; use --scenario partial".into()));
    }
    let mut spec = ExperimentSpec::transfer(scenario, run, a.checkpoint.clone(), new);
    spec.bypass = bypass(a.no_mp, a.no_adj_mp);
    let r = run_transfer(&data, &spec)?;
    println!("checkpoint sha256 {} (unchanged)", r.hash_after);
    report(scenario, &r.evaluation, &r.new_ids, a.results.as_deref())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let inst = random_instance(&micro_config(), a.nodes, 5, a.seed)?;
    let checks = gradient_check(&inst, a.step, a.per_tensor, a.seed)?;
    let mut worst = 0.0f64;
    for c in &checks {
        println!("{:<24} checked {:>3} skipped {:>3} max rel err {:.3e}", c.name, c.checked, c.skipped, c.max_rel_err);
        worst = worst.max(c.max_rel_err);
    }
    if worst >= a.tolerance {
        return Err(Error::Numerical(format!("gradient error {worst:.3e} exceeds {:.1e}", a.tolerance)));
    }
    println!("max relative error {worst:.3e} < {:.1e}", a.tolerance);
    Ok(())
}

fn export_embeddings(a: &ExportArgs) -> Result<()> {
    let table = match (&a.data, &a.encodings) {
        (Some(dir), _) => Dataset::load(dir)?.encodings,
        (None, Some(p)) => EncodingTable::read_from(open(p)?)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let values = match &a.checkpoint {
        Some(p) => {
            let (state, _) = checkpoint::load::<f32>(p)?;
            processed_embeddings(&table, EmbeddingSource::Model(&state))?
        }
        None => processed_embeddings(&table, EmbeddingSource::Identity { node_dim: a.node_dim })?,
    };
    let mut w = create(&a.out)?;
    write_embedding_tsv(&mut w, &table.region_ids, &values)?;
    w.flush()?;
    println!("{} x {} embeddings written to {}", values.nrows(), values.ncols(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Krige(a) => krige(a),
        Command::Transfer(a) => transfer(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ExportEmbeddings(a) => export_embeddings(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
