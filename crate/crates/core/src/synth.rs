//! Synthetic cities driven by a graph polynomial vector autoregression, and
//! the historical-average baseline.
//!
//! The generator is
//!
//! ```text
//! H_t = Σ_{p=1..P} Σ_{l=0..L} Ψ[p, l] · S^l · X_{t−p}
//! X_t = e ⊙ ξ(H_t) + η_t,   η_t ~ N(0, σ² I)
//! ```
//!
//! with `S` the symmetric shift operator of the proximity graph.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encodings::EncodingTable;
use crate::geo::offset_km;
use crate::graphs::{build_adjacency, GraphSpec, DEFAULT_EPSILON, DEFAULT_SIGMA_KM};
use crate::ingest::{day_of_week, seconds_of_day, DemandTensor, RegionSet, SECONDS_PER_DAY};
use crate::{Error, Result};

/// Upper bound on `Σ|Ψ|`; coefficients above it are rescaled onto it.
pub const STABILITY_BOUND: f64 = 0.95;
/// Monday 2024-01-01 00:00 UTC.
pub const SYNTH_T0: i64 = 1_704_067_200;
pub const SYNTH_INTERVAL: u32 = 3600;
pub const SYNTH_ORIGIN: (f64, f64) = (31.2, 121.4);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Tanh,
    Identity,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        })
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" => Ok(Nonlinearity::Identity),
            _ => Err(Error::Config(format!("nonlinearity {s:?}: expected tanh or identity"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpvarParams {
    /// `P × (L + 1)`: row `p − 1` holds the lag-`p` coefficients of shift powers `0..=L`.
    pub psi: Array2<f64>,
    pub gain: Array1<f64>,
    pub noise_sigma: f64,
    pub xi: Nonlinearity,
}

impl GpvarParams {
    /// Rescales `psi` onto the stability bound when its absolute sum exceeds it.
    pub fn new(psi: Array2<f64>, gain: Array1<f64>, noise_sigma: f64, xi: Nonlinearity) -> Result<Self> {
        if psi.nrows() == 0 || psi.ncols() == 0 {
            return Err(Error::Config("GPVAR needs at least one lag and one shift order".into()));
        }
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma must be a finite non-negative number, got {noise_sigma}")));
        }
        if gain.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("node gains must be finite".into()));
        }
        let mut psi = psi;
        let total: f64 = psi.iter().map(|v| v.abs()).sum();
        if total > STABILITY_BOUND {
            psi *= STABILITY_BOUND / total;
        }
        let after: f64 = psi.iter().map(|v| v.abs()).sum();
        if !(after <= STABILITY_BOUND * (1.0 + 1e-12)) {
            return Err(Error::Numerical(format!("GPVAR coefficients are unstable (Σ|Ψ| = {after})")));
        }
        Ok(Self { psi, gain, noise_sigma, xi })
    }

    pub fn lags(&self) -> usize {
        self.psi.nrows()
    }

    pub fn shift_orders(&self) -> usize {
        self.psi.ncols() - 1
    }

    pub fn burn_in(&self) -> usize {
        10 * self.lags()
    }
}

/// Simulates `n_steps` steps (after burn-in) as an `N × T` matrix.
pub fn gpvar_series(params: &GpvarParams, shift: &Array2<f64>, n_steps: usize, seed: u64) -> Result<Array2<f64>> {
    let init = Array2::zeros((params.lags(), params.gain.len()));
    gpvar_series_from(params, shift, &init, n_steps, seed)
}

/// [`gpvar_series`] started from `init` (`P × N`, oldest lag first) instead
/// of zeros. The burn-in steps follow `init` and are discarded.
pub fn gpvar_series_from(
    params: &GpvarParams,
    shift: &Array2<f64>,
    init: &Array2<f64>,
    n_steps: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let n = params.gain.len();
    if shift.dim() != (n, n) {
        return Err(Error::Shape(format!("shift is {:?} but there are {n} node gains", shift.dim())));
    }
    let p_max = params.lags();
    if init.dim() != (p_max, n) {
        return Err(Error::Shape(format!("initial state is {:?}, expected ({p_max}, {n})", init.dim())));
    }
    if n_steps <= p_max {
        return Err(Error::Config(format!("T = {n_steps} must exceed the lag count {p_max}")));
    }
    let burn = params.burn_in();
    let total = n_steps + burn;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut x = Array2::<f64>::zeros((total, n));
    x.slice_mut(ndarray::s![..p_max, ..]).assign(init);
    for t in p_max..total {
        let mut h = Array1::<f64>::zeros(n);
        for p in 1..=p_max {
            let mut y = x.row(t - p).to_owned();
            for l in 0..=params.shift_orders() {
                if l > 0 {
                    y = shift.dot(&y);
                }
                h.scaled_add(params.psi[[p - 1, l]], &y);
            }
        }
        for i in 0..n {
            let eta = if params.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            x[[t, i]] = params.gain[i] * params.xi.apply(h[i]) + eta;
        }
    }
    Ok(x.slice(ndarray::s![burn.., ..]).t().to_owned())
}

/// [`gpvar_series`] wrapped as a fully observed hourly tensor starting at [`SYNTH_T0`].
pub fn gpvar_generate(params: &GpvarParams, graph: &GraphSpec, n_steps: usize, seed: u64) -> Result<DemandTensor> {
    let series = gpvar_series(params, &graph.shift, n_steps, seed)?;
    let values = series.insert_axis(Axis(1));
    DemandTensor::observed(values, SYNTH_INTERVAL, SYNTH_T0)
}

/// Settings of [`make_city_with`]; the defaults are what [`make_city`] uses.
#[derive(Debug, Clone, PartialEq)]
pub struct CityOptions {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub box_km: f64,
    pub psi: Array2<f64>,
    pub gain_range: (f64, f64),
    pub noise_sigma: f64,
    pub xi: Nonlinearity,
    /// Width of the synthetic encoding rows.
    pub llm_dim: usize,
    pub encoding_noise: f64,
}

impl Default for CityOptions {
    fn default() -> Self {
        Self {
            n_nodes: 30,
            n_steps: 2000,
            box_km: 20.0,
            psi: ndarray::array![[0.3, 0.6]],
            gain_range: (0.3, 2.0),
            noise_sigma: 0.4,
            xi: Nonlinearity::Tanh,
            llm_dim: 64,
            encoding_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub regions: RegionSet,
    pub graph: GraphSpec,
    pub encodings: EncodingTable,
    pub demand: DemandTensor,
    pub params: GpvarParams,
}

impl SyntheticCity {
    /// Induced sub-city on `nodes`, in that order.
    pub fn select(&self, nodes: &[usize]) -> Result<SyntheticCity> {
        Ok(SyntheticCity {
            regions: self.regions.select(nodes),
            graph: self.graph.select(nodes)?,
            encodings: self.encodings.select(nodes),
            demand: self.demand.select_nodes(nodes),
            params: GpvarParams { gain: self.params.gain.select(Axis(0), nodes), ..self.params.clone() },
        })
    }
}

pub fn make_city(n_nodes: usize, seed: u64) -> Result<SyntheticCity> {
    make_city_with(&CityOptions { n_nodes, ..Default::default() }, seed)
}

/// Random centers in a square box, a proximity graph over them, GPVAR demand,
/// and encoding rows `[gain, one-hot quadrant, Gaussian padding]`.
///
/// Gains, encodings, edge weights and demand values are rounded to `f32`, so
/// a city read back from its binary files feeds the model identical inputs.
pub fn make_city_with(opts: &CityOptions, seed: u64) -> Result<SyntheticCity> {
    let n = opts.n_nodes;
    if n < 4 {
        return Err(Error::Config(format!("a synthetic city needs at least 4 nodes, got {n}")));
    }
    if opts.llm_dim < 5 {
        return Err(Error::Config("synthetic encodings need at least 5 columns".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = opts.box_km / 2.0;
    let mut quadrant = Vec::with_capacity(n);
    let centers: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let north = rng.random_range(-half..half);
            let east = rng.random_range(-half..half);
            quadrant.push(usize::from(north >= 0.0) * 2 + usize::from(east >= 0.0));
            offset_km(SYNTH_ORIGIN, north, east)
        })
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("r{i:03}")).collect();
    let regions = RegionSet::new(ids.clone(), centers.clone(), 1.0)?;
    let adjacency = build_adjacency(&centers, DEFAULT_SIGMA_KM, DEFAULT_EPSILON)?;
    let graph = GraphSpec::new(adjacency.mapv(|v| v as f32 as f64))?;

    let (lo, hi) = opts.gain_range;
    // one gain per equal-width stratum of the range, assigned in random order
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(&mut rng);
    let gain = Array1::from_shape_fn(n, |i| {
        let u: f64 = rng.random();
        (lo + (hi - lo) * (strata[i] as f64 + u) / n as f64) as f32 as f64
    });
    let pad = Normal::new(0.0, opts.encoding_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut enc = Array2::<f64>::zeros((n, opts.llm_dim));
    for i in 0..n {
        enc[[i, 0]] = gain[i];
        enc[[i, 1 + quadrant[i]]] = 1.0;
        for c in 5..opts.llm_dim {
            enc[[i, c]] = pad.sample(&mut rng) as f32 as f64;
        }
    }
    let encodings = EncodingTable::new(ids, enc)?;
    let params = GpvarParams::new(opts.psi.clone(), gain, opts.noise_sigma, opts.xi)?;
    let mut demand = gpvar_generate(&params, &graph, opts.n_steps, rng.random())?;
    demand.values.mapv_inplace(|v| v as f32 as f64);
    Ok(SyntheticCity { regions, graph, encodings, demand, params })
}

/// Historical average keyed by time-of-day, and by day-of-week as well when
/// the fitted span covers at least two weeks.
#[derive(Debug, Clone)]
pub struct HaBaseline {
    weekly: bool,
    t0: i64,
    interval: i64,
    /// Per node and feature: slot → mean.
    slots: Vec<Vec<HashMap<i64, f64>>>,
    /// Per node and feature mean; `None` when the node has no observed data.
    node_mean: Vec<Vec<Option<f64>>>,
    /// Mean over nodes with data, per feature and slot.
    population_slots: Vec<HashMap<i64, f64>>,
    population_mean: Vec<f64>,
}

impl HaBaseline {
    /// Fits on the observed entries of `range`.
    pub fn fit(demand: &DemandTensor, range: Range<usize>) -> Result<Self> {
        let (n, dx, t) = demand.values.dim();
        if range.is_empty() || range.end > t {
            return Err(Error::Data(format!("HA fit range {range:?} is empty or outside 0..{t}")));
        }
        let interval = demand.interval_seconds as i64;
        let span = range.len() as i64 * interval;
        if span < SECONDS_PER_DAY {
            return Err(Error::Data("HA baseline needs at least one full day of history".into()));
        }
        let weekly = span >= 14 * SECONDS_PER_DAY;
        let key = |ts: i64| if weekly { day_of_week(ts) * SECONDS_PER_DAY + seconds_of_day(ts) } else { seconds_of_day(ts) };

        let mut slots = vec![vec![HashMap::new(); dx]; n];
        let mut node_mean = vec![vec![None; dx]; n];
        let mut pop_acc: Vec<HashMap<i64, (f64, usize)>> = vec![HashMap::new(); dx];
        let mut pop_total = vec![(0.0, 0usize); dx];
        let mut any = false;
        for i in 0..n {
            for d in 0..dx {
                let mut acc: HashMap<i64, (f64, usize)> = HashMap::new();
                let (mut sum, mut count) = (0.0, 0usize);
                for s in range.clone().filter(|&s| demand.mask[[i, s]]) {
                    let v = demand.values[[i, d, s]];
                    let e = acc.entry(key(demand.time_of(s))).or_default();
                    e.0 += v;
                    e.1 += 1;
                    sum += v;
                    count += 1;
                }
                if count == 0 {
                    continue;
                }
                any = true;
                node_mean[i][d] = Some(sum / count as f64);
                pop_total[d].0 += sum / count as f64;
                pop_total[d].1 += 1;
                for (k, (s, c)) in acc {
                    let m = s / c as f64;
                    slots[i][d].insert(k, m);
                    let e = pop_acc[d].entry(k).or_default();
                    e.0 += m;
                    e.1 += 1;
                }
            }
        }
        if !any {
            return Err(Error::Data("HA baseline: no observed training values".into()));
        }
        let population_slots =
            pop_acc.into_iter().map(|m| m.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()).collect();
        let population_mean = pop_total.iter().map(|&(s, c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
        Ok(Self { weekly, t0: demand.t0, interval, slots, node_mean, population_slots, population_mean })
    }

    pub fn is_weekly(&self) -> bool {
        self.weekly
    }

    fn key(&self, step: usize) -> i64 {
        let ts = self.t0 + step as i64 * self.interval;
        if self.weekly {
            day_of_week(ts) * SECONDS_PER_DAY + seconds_of_day(ts)
        } else {
            seconds_of_day(ts)
        }
    }

    /// Prediction for node `i`, feature `d` at absolute step `step`. Unseen
    /// slots fall back to the node mean; nodes without history use the
    /// population average over nodes that have it.
    pub fn predict(&self, i: usize, d: usize, step: usize) -> f64 {
        let k = self.key(step);
        match self.node_mean[i][d] {
            Some(mean) => self.slots[i][d].get(&k).copied().unwrap_or(mean),
            None => self.population_slots[d].get(&k).copied().unwrap_or(self.population_mean[d]),
        }
    }

    /// `N × H·d_x` forecast of the steps `start..start + horizon`, time-major per row.
    pub fn forecast(&self, start: usize, horizon: usize) -> Array2<f64> {
        let n = self.slots.len();
        let dx = self.population_mean.len();
        Array2::from_shape_fn((n, horizon * dx), |(i, c)| self.predict(i, c % dx, start + c / dx))
    }
}

/// Convenience for tests and the CLI: `N × d_x × T` of HA predictions.
pub fn ha_tensor(ha: &HaBaseline, n_steps: usize) -> Array3<f64> {
    let n = ha.slots.len();
    let dx = ha.population_mean.len();
    Array3::from_shape_fn((n, dx, n_steps), |(i, d, t)| ha.predict(i, d, t))
}
