//! Metrics, baselines and the experiment drivers behind the CLI.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::encodings::{probe, process_embedding, EncodingTable};
use crate::ingest::{chronological_split, Splits};
use crate::model::checkpoint;
use crate::model::{forward, ForwardConfig, ModelState, Scene};
use crate::synth::HaBaseline;
use crate::training::{build_window, train, window_starts, TrainOutcome, TrainSet, TrainerState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    /// Entries evaluated.
    pub count: usize,
}

/// Running sums for MAE and RMSE.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorSum {
    abs: f64,
    sq: f64,
    count: usize,
}

impl ErrorSum {
    pub fn add(&mut self, err: f64) {
        self.abs += err.abs();
        self.sq += err * err;
        self.count += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn finish(&self) -> Result<MetricSet> {
        if self.count == 0 {
            return Err(Error::Data("no observed entries to evaluate".into()));
        }
        let n = self.count as f64;
        let (mae, rmse) = (self.abs / n, (self.sq / n).sqrt());
        if !mae.is_finite() || !rmse.is_finite() {
            return Err(Error::Numerical("non-finite evaluation error".into()));
        }
        Ok(MetricSet { mae, rmse, count: self.count })
    }

    fn finish_opt(&self) -> Result<Option<MetricSet>> {
        if self.is_empty() {
            Ok(None)
        } else {
            self.finish().map(Some)
        }
    }
}

/// MAE and RMSE over the observed entries of the rows in `nodes`.
pub fn compute_metrics(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    observed: ArrayView2<'_, bool>,
    nodes: &[usize],
) -> Result<MetricSet> {
    if pred.dim() != target.dim() || pred.dim() != observed.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?}, target {:?}, mask {:?}",
            pred.dim(),
            target.dim(),
            observed.dim()
        )));
    }
    let mut sum = ErrorSum::default();
    for &i in nodes {
        if i >= pred.nrows() {
            return Err(Error::Shape(format!("node {i} out of range")));
        }
        for c in 0..pred.ncols() {
            if observed[[i, c]] {
                sum.add(pred[[i, c]] - target[[i, c]]);
            }
        }
    }
    sum.finish()
}

/// Metrics split by whether a region was held out of training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetMetrics {
    pub new: Option<MetricSet>,
    pub existing: Option<MetricSet>,
    pub all: MetricSet,
}

#[derive(Debug, Default, Clone, Copy)]
struct SubsetSums {
    new: ErrorSum,
    existing: ErrorSum,
    all: ErrorSum,
}

impl SubsetSums {
    fn add(&mut self, is_new: bool, err: f64) {
        if is_new {
            self.new.add(err);
        } else {
            self.existing.add(err);
        }
        self.all.add(err);
    }

    fn finish(&self) -> Result<SubsetMetrics> {
        Ok(SubsetMetrics { new: self.new.finish_opt()?, existing: self.existing.finish_opt()?, all: self.all.finish()? })
    }
}

/// Test-window results of the model next to the baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model: SubsetMetrics,
    pub historical_average: SubsetMetrics,
    /// Neighbor-mean kriging over new regions; `None` without new regions.
    pub neighbor_mean: Option<MetricSet>,
    pub n_windows: usize,
}

/// Kriging baseline: each new region at step `t` gets the mean of its
/// adjacency neighbors' observed values at `t`, over regions that are not
/// new. Without such a neighbor it gets the mean over every observed
/// non-new region at `t`; `None` when there is none.
pub fn neighbor_mean(data: &Dataset, new: &BTreeSet<usize>, node: usize, feature: usize, t: usize) -> Option<f64> {
    let d = &data.demand;
    let usable = |j: usize| j != node && !new.contains(&j) && d.mask[[j, t]];
    let mean = |it: &mut dyn Iterator<Item = usize>| {
        let (mut s, mut c) = (0.0, 0usize);
        for j in it {
            s += d.values[[j, feature, t]];
            c += 1;
        }
        (c > 0).then(|| s / c as f64)
    };
    let adj = &data.graph.adjacency;
    mean(&mut (0..data.n_nodes()).filter(|&j| adj[[node, j]] > 0.0 && usable(j)))
        .or_else(|| mean(&mut (0..data.n_nodes()).filter(|&j| usable(j))))
}

/// Evaluates every complete window inside `test`. Regions in `new` get
/// zero input histories but are scored against their true futures. The HA
/// baseline is fitted on `fit` without the new regions' data.
pub fn evaluate(
    state: &ModelState<f32>,
    cfg: &ForwardConfig,
    data: &Dataset,
    fit: Range<usize>,
    test: Range<usize>,
    new: &BTreeSet<usize>,
) -> Result<Evaluation> {
    cfg.validate()?;
    check_compatible(state, cfg, data)?;
    let n = data.n_nodes();
    if let Some(&i) = new.iter().find(|&&i| i >= n) {
        return Err(Error::Data(format!("new region index {i} out of range for {n} regions")));
    }
    let mut fit_demand = data.demand.clone();
    for &i in new {
        fit_demand.mask.row_mut(i).fill(false);
    }
    let ha = HaBaseline::fit(&fit_demand, fit)?;
    let covariates = data.covariates()?;
    let scene = Scene::<f32>::new(&data.encodings.values, &data.graph.adjacency, cfg.neighbor_order)?;
    let (w, h, dx) = (cfg.window, cfg.horizon, cfg.d_x);
    let starts = window_starts(test.clone(), w, h);
    if starts.is_empty() {
        return Err(Error::Data(format!("test split {test:?} holds no window of {} steps", w + h)));
    }
    let (mut model, mut base, mut nm) = (SubsetSums::default(), SubsetSums::default(), ErrorSum::default());
    for &start in &starts {
        let sample = build_window::<f32>(&data.demand, &covariates, start, w, h, |i| new.contains(&i))?;
        let out = forward(state, cfg, &scene, &sample.input)?;
        let t = &sample.targets;
        for i in 0..n {
            let is_new = new.contains(&i);
            for c in 0..h * dx {
                if !t.future_observed[[i, c / dx]] {
                    continue;
                }
                let step = start + w + c / dx;
                let truth = t.future[[i, c]] as f64;
                model.add(is_new, out.pred[[i, c]] as f64 - truth);
                base.add(is_new, ha.predict(i, c % dx, step) - truth);
                if is_new {
                    if let Some(p) = neighbor_mean(data, new, i, c % dx, step) {
                        nm.add(p - truth);
                    }
                }
            }
        }
    }
    Ok(Evaluation {
        model: model.finish()?,
        historical_average: base.finish()?,
        neighbor_mean: nm.finish_opt()?,
        n_windows: starts.len(),
    })
}

/// One forecast value; `lead` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRow {
    pub node: usize,
    pub step: usize,
    pub lead: usize,
    pub feature: usize,
    pub prediction: f64,
    /// `None` where the region was unobserved.
    pub target: Option<f64>,
}

/// Forecasts of `nodes` from every complete window inside `range`, with the
/// regions in `hidden` given zero histories.
pub fn forecast_rows(
    state: &ModelState<f32>,
    cfg: &ForwardConfig,
    data: &Dataset,
    range: Range<usize>,
    hidden: &BTreeSet<usize>,
    nodes: &[usize],
) -> Result<Vec<ForecastRow>> {
    cfg.validate()?;
    check_compatible(state, cfg, data)?;
    if let Some(&i) = nodes.iter().chain(hidden).find(|&&i| i >= data.n_nodes()) {
        return Err(Error::Data(format!("region index {i} out of range")));
    }
    let covariates = data.covariates()?;
    let scene = Scene::<f32>::new(&data.encodings.values, &data.graph.adjacency, cfg.neighbor_order)?;
    let (w, h, dx) = (cfg.window, cfg.horizon, cfg.d_x);
    let mut rows = Vec::new();
    for start in window_starts(range, w, h) {
        let sample = build_window::<f32>(&data.demand, &covariates, start, w, h, |i| hidden.contains(&i))?;
        let out = forward(state, cfg, &scene, &sample.input)?;
        let t = &sample.targets;
        for &i in nodes {
            for c in 0..h * dx {
                rows.push(ForecastRow {
                    node: i,
                    step: start + w + c / dx,
                    lead: c / dx + 1,
                    feature: c % dx,
                    prediction: out.pred[[i, c]] as f64,
                    target: t.future_observed[[i, c / dx]].then(|| t.future[[i, c]] as f64),
                });
            }
        }
    }
    Ok(rows)
}

/// CSV `region_id,time,lead,feature,prediction,target`, times in Unix seconds.
pub fn write_forecast_csv<W: Write>(mut w: W, data: &Dataset, rows: &[ForecastRow]) -> Result<()> {
    writeln!(w, "region_id,time,lead,feature,prediction,target")?;
    for r in rows {
        let target = r.target.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{target}",
            data.regions.region_ids[r.node],
            data.demand.time_of(r.step),
            r.lead,
            r.feature,
            r.prediction
        )?;
    }
    Ok(())
}

fn check_compatible(state: &ModelState<f32>, cfg: &ForwardConfig, data: &Dataset) -> Result<()> {
    if state.llm_dim() != data.encodings.dim() {
        return Err(Error::Shape(format!(
            "model expects {}-dimensional encodings, dataset has {}",
            state.llm_dim(),
            data.encodings.dim()
        )));
    }
    if state.probe.ncols() != cfg.node_dim {
        return Err(Error::Shape(format!(
            "model embedding width {} disagrees with node_dim {}",
            state.probe.ncols(),
            cfg.node_dim
        )));
    }
    if data.demand.n_features() != cfg.d_x {
        return Err(Error::Shape(format!("model forecasts {} features, dataset has {}", cfg.d_x, data.demand.n_features())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Joint,
    TransferFull,
    TransferPartial,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Joint => "joint",
            Scenario::TransferFull => "transfer-full",
            Scenario::TransferPartial => "transfer-partial",
        })
    }
}

/// Which regions are held out as new.
#[derive(Debug, Clone, PartialEq)]
pub enum NewRegions {
    Ids(Vec<String>),
    /// A seeded uniform draw of this many regions.
    Random(usize),
}

/// Spatial pathways removed at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bypass {
    #[default]
    None,
    /// Both graphs: the spatial layers are skipped.
    NoMp,
    /// Only the adjacency pathway.
    NoAdjMp,
}

impl Bypass {
    pub fn apply(self, cfg: &mut ForwardConfig) {
        match self {
            Bypass::None => {}
            Bypass::NoMp => cfg.spatial = false,
            Bypass::NoAdjMp => cfg.use_adjacency_graph = false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub run: RunConfig,
    pub new_regions: NewRegions,
    /// Regions allowed in training; the complement of the new ones when `None`.
    pub observed: Option<Vec<String>>,
    /// Source model for the transfer scenarios.
    pub checkpoint: Option<PathBuf>,
    pub bypass: Bypass,
}

impl ExperimentSpec {
    pub fn joint(run: RunConfig, new_regions: NewRegions) -> Self {
        Self { scenario: Scenario::Joint, run, new_regions, observed: None, checkpoint: None, bypass: Bypass::None }
    }

    pub fn transfer(scenario: Scenario, run: RunConfig, checkpoint: PathBuf, new_regions: NewRegions) -> Self {
        Self { scenario, run, new_regions, observed: None, checkpoint: Some(checkpoint), bypass: Bypass::None }
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        match self.scenario {
            Scenario::Joint if self.checkpoint.is_some() => {
                Err(Error::Config("the joint scenario trains its own model; drop the checkpoint".into()))
            }
            Scenario::TransferFull | Scenario::TransferPartial if self.checkpoint.is_none() => {
                Err(Error::Config(format!("{} needs a source checkpoint", self.scenario)))
            }
            Scenario::TransferFull if self.new_regions != NewRegions::Random(0) && self.new_regions != NewRegions::Ids(vec![]) => {
                Err(Error::Config("transfer-full evaluates with every region observed; use transfer-partial".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Resolves the held-out regions to sorted indices.
pub fn pick_new_regions(data: &Dataset, new: &NewRegions, seed: u64) -> Result<Vec<usize>> {
    let n = data.n_nodes();
    let mut idx = match new {
        NewRegions::Ids(ids) => data.node_indices(ids)?,
        NewRegions::Random(k) => {
            if *k >= n {
                return Err(Error::Config(format!("cannot hold out {k} of {n} regions")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, n, *k).into_vec()
        }
    };
    idx.sort_unstable();
    if idx.windows(2).any(|p| p[0] == p[1]) {
        return Err(Error::Data("new region list repeats an id".into()));
    }
    if idx.len() >= n {
        return Err(Error::Data("at least one region must stay observed".into()));
    }
    Ok(idx)
}

#[derive(Debug, Clone)]
pub struct JointResult {
    pub new_ids: Vec<String>,
    pub new_nodes: Vec<usize>,
    pub splits: Splits,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

/// Trains on the observed regions only, then evaluates the test windows on
/// every region with the new ones' histories hidden.
pub fn run_joint(
    data: &Dataset,
    spec: &ExperimentSpec,
    resume: Option<TrainerState>,
    on_epoch: impl FnMut(&TrainerState) -> Result<()>,
) -> Result<JointResult> {
    spec.validate()?;
    if spec.scenario != Scenario::Joint {
        return Err(Error::Config(format!("run_joint called for {}", spec.scenario)));
    }
    let new_nodes = pick_new_regions(data, &spec.new_regions, spec.run.train.seed)?;
    let new: BTreeSet<usize> = new_nodes.iter().copied().collect();
    let observed: Vec<usize> = match &spec.observed {
        Some(ids) => {
            let idx = data.node_indices(ids)?;
            if let Some(&i) = idx.iter().find(|i| new.contains(i)) {
                return Err(Error::Data(format!(
                    "region {} is both new and in the training set",
                    data.regions.region_ids[i]
                )));
            }
            idx
        }
        None => (0..data.n_nodes()).filter(|i| !new.contains(i)).collect(),
    };
    let splits = chronological_split(data.demand.n_steps(), spec.run.split)?;
    let sub = data.select(&observed)?;
    let covariates = sub.covariates()?;
    let set = TrainSet {
        demand: &sub.demand,
        covariates: &covariates,
        encodings: &sub.encodings.values,
        adjacency: &sub.graph.adjacency,
        train: splits.train.clone(),
        val: splits.val.clone(),
    };
    let outcome = train(&set, &spec.run.train, resume, on_epoch)?;
    let mut cfg = spec.run.train.model.clone();
    spec.bypass.apply(&mut cfg);
    let evaluation = evaluate(&outcome.model, &cfg, data, splits.train.clone(), splits.test.clone(), &new)?;
    let new_ids = new_nodes.iter().map(|&i| data.regions.region_ids[i].clone()).collect();
    Ok(JointResult { new_ids, new_nodes, splits, outcome, evaluation })
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub new_ids: Vec<String>,
    pub splits: Splits,
    pub evaluation: Evaluation,
    pub hash_before: String,
    pub hash_after: String,
}

/// Inference-only evaluation of a saved model on another dataset. The
/// checkpoint file is hashed before and after; a change is an error.
pub fn run_transfer(data: &Dataset, spec: &ExperimentSpec) -> Result<TransferResult> {
    spec.validate()?;
    let path = match (spec.scenario, &spec.checkpoint) {
        (Scenario::Joint, _) => return Err(Error::Config("run_transfer called for the joint scenario".into())),
        (_, Some(p)) => p,
        (_, None) => unreachable!("validated above"),
    };
    let hash_before = checkpoint::fingerprint(path)?;
    let (state, mut cfg) = checkpoint::load::<f32>(path)?;
    spec.bypass.apply(&mut cfg);
    let new_nodes = match spec.scenario {
        Scenario::TransferPartial => pick_new_regions(data, &spec.new_regions, spec.run.train.seed)?,
        _ => Vec::new(),
    };
    let new: BTreeSet<usize> = new_nodes.iter().copied().collect();
    let splits = chronological_split(data.demand.n_steps(), spec.run.split)?;
    let evaluation = evaluate(&state, &cfg, data, splits.train.clone(), splits.test.clone(), &new)?;
    let hash_after = checkpoint::fingerprint(path)?;
    if hash_after != hash_before {
        return Err(Error::Numerical("checkpoint changed during inference-only evaluation".into()));
    }
    let new_ids = new_nodes.iter().map(|&i| data.regions.region_ids[i].clone()).collect();
    Ok(TransferResult { new_ids, splits, evaluation, hash_before, hash_after })
}

fn metric_rows(e: &Evaluation) -> Vec<(&'static str, &'static str, MetricSet)> {
    let mut rows = Vec::new();
    for (method, m) in [("model", &e.model), ("ha", &e.historical_average)] {
        if let Some(x) = m.new {
            rows.push((method, "new", x));
        }
        if let Some(x) = m.existing {
            rows.push((method, "existing", x));
        }
        rows.push((method, "all", m.all));
    }
    if let Some(x) = e.neighbor_mean {
        rows.push(("neighbor_mean", "new", x));
    }
    rows
}

/// CSV `scenario,method,subset,mae,rmse,count` preceded by a comment line
/// recording the new regions.
pub fn write_results_csv<W: Write>(mut w: W, scenario: Scenario, e: &Evaluation, new_ids: &[String]) -> Result<()> {
    writeln!(w, "# new_regions={}", new_ids.join("|"))?;
    writeln!(w, "scenario,method,subset,mae,rmse,count")?;
    for (method, subset, m) in metric_rows(e) {
        writeln!(w, "{scenario},{method},{subset},{},{},{}", m.mae, m.rmse, m.count)?;
    }
    Ok(())
}

pub fn format_table(e: &Evaluation) -> String {
    let mut s = format!("{:<14} {:<9} {:>10} {:>10} {:>8}\n", "method", "subset", "MAE", "RMSE", "entries");
    for (method, subset, m) in metric_rows(e) {
        let _ = writeln!(s, "{method:<14} {subset:<9} {:>10.4} {:>10.4} {:>8}", m.mae, m.rmse, m.count);
    }
    s
}

/// Where exported embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingSource<'a> {
    /// The model's probe, normalization scale and shift.
    Model(&'a ModelState<f32>),
    /// Untrained stand-in: the first `node_dim` encoding columns (zero padded)
    /// with unit scale and zero shift.
    Identity { node_dim: usize },
}

/// Processed embeddings `Norm(LeakyReLU(H W))`, `N × D_node`.
pub fn processed_embeddings(table: &EncodingTable, source: EmbeddingSource<'_>) -> Result<Array2<f64>> {
    let h = &table.values;
    let (w, gamma, shift) = match source {
        EmbeddingSource::Model(state) => {
            let s = state.cast::<f64>();
            (s.probe, s.norm_gamma, s.norm_shift)
        }
        EmbeddingSource::Identity { node_dim } => {
            if node_dim == 0 {
                return Err(Error::Config("node_dim must be at least 1".into()));
            }
            let w = Array2::from_shape_fn((h.ncols(), node_dim), |(r, c)| if r == c { 1.0 } else { 0.0 });
            (w, Array1::ones(node_dim), Array1::zeros(node_dim))
        }
    };
    let v = probe(h, &w)?;
    Ok(process_embedding(&v, &gamma, &shift)?.0)
}

/// Tab-separated matrix with a header row and one `region_id` column.
/// Values are written at `f32` precision.
pub fn write_embedding_tsv<W: Write>(mut w: W, ids: &[String], values: &Array2<f64>) -> Result<()> {
    if ids.len() != values.nrows() {
        return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), values.nrows())));
    }
    write!(w, "region_id")?;
    for c in 0..values.ncols() {
        write!(w, "\tdim{c}")?;
    }
    writeln!(w)?;
    for (id, row) in ids.iter().zip(values.rows()) {
        write!(w, "{id}")?;
        for &x in row {
            write!(w, "\t{}", x as f32)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embedding_tsv<R: BufRead>(r: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty embedding file".into()))??;
    let width = header.split('\t').count() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let mut fields = line.split('\t');
        ids.push(fields.next().unwrap_or_default().to_string());
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("row {}: {e}", k + 1)))?;
        if row.len() != width {
            return Err(Error::Format(format!("row {} has {} values, header {width}", k + 1, row.len())));
        }
        data.extend(row);
    }
    let values = Array2::from_shape_vec((ids.len(), width), data).map_err(|e| Error::Format(e.to_string()))?;
    Ok((ids, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_city;
    use ndarray::array;

    #[test]
    fn metric_examples() {
        let t = array![[1.0, 2.0]];
        let all = array![[true, true]];
        let m = compute_metrics(t.view(), t.view(), all.view(), &[0]).unwrap();
        assert_eq!((m.mae, m.rmse), (0.0, 0.0));
        let m = compute_metrics(array![[2.0, 1.0]].view(), t.view(), all.view(), &[0]).unwrap();
        assert_eq!((m.mae, m.rmse), (1.0, 1.0));
        let m = compute_metrics(array![[1.0, 4.0]].view(), t.view(), all.view(), &[0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_evaluation_set_is_an_error() {
        let t = array![[1.0, 2.0]];
        let none = array![[false, false]];
        assert!(compute_metrics(t.view(), t.view(), none.view(), &[0]).is_err());
        let all = array![[true, true]];
        assert!(compute_metrics(t.view(), t.view(), all.view(), &[]).is_err());
    }

    #[test]
    fn neighbor_mean_uses_observed_neighbors() {
        let city = make_city(6, 3).unwrap();
        let data = Dataset::from_city(&city);
        let adj = &data.graph.adjacency;
        let new = BTreeSet::from([0usize]);
        let t = 5;
        let nbrs: Vec<usize> = (1..6).filter(|&j| adj[[0, j]] > 0.0).collect();
        let pool: Vec<usize> = if nbrs.is_empty() { (1..6).collect() } else { nbrs };
        let expected = pool.iter().map(|&j| data.demand.values[[j, 0, t]]).sum::<f64>() / pool.len() as f64;
        let got = neighbor_mean(&data, &new, 0, 0, t).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn new_region_draw_is_seeded_and_checked() {
        let data = Dataset::from_city(&make_city(8, 1).unwrap());
        let a = pick_new_regions(&data, &NewRegions::Random(3), 4).unwrap();
        assert_eq!(a, pick_new_regions(&data, &NewRegions::Random(3), 4).unwrap());
        assert_eq!(a.len(), 3);
        assert!(pick_new_regions(&data, &NewRegions::Random(8), 4).is_err());
        let dup = NewRegions::Ids(vec!["r001".into(), "r001".into()]);
        assert!(pick_new_regions(&data, &dup, 0).is_err());
        assert!(pick_new_regions(&data, &NewRegions::Ids(vec!["nope".into()]), 0).is_err());
    }

    #[test]
    fn transfer_requires_a_checkpoint() {
        let mut spec = ExperimentSpec::joint(RunConfig::default(), NewRegions::Random(0));
        spec.validate().unwrap();
        spec.scenario = Scenario::TransferPartial;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn embedding_tsv_round_trip() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let v = array![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 4.0, -5.5]];
        let mut buf = Vec::new();
        write_embedding_tsv(&mut buf, &ids, &v).unwrap();
        let (ids2, v2) = read_embedding_tsv(&buf[..]).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(v2, v.mapv(|x| x as f32 as f64));
    }
}
