//! Graph construction: thresholded Gaussian-kernel proximity adjacency, the
//! symmetric shift operator `D^{-1/2}(I + A)D^{-1/2}`, encoding-derived
//! functional edges and the training mask sampler.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::haversine_km;
use crate::ingest::{read_u32, u32_of};
use crate::{Error, Real, Result};

pub const DEFAULT_SIGMA_KM: f64 = 5.0;
pub const DEFAULT_EPSILON: f64 = 0.1;

const GRAPH_MAGIC: &[u8; 4] = b"IGR1";

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub adjacency: Array2<f64>,
    pub shift: Array2<f64>,
    /// Dense similarity graph, when one has been computed.
    pub functional_edges: Option<Array2<f64>>,
    pub neighbor_order: usize,
}

impl GraphSpec {
    /// Validates the adjacency and derives the shift operator.
    pub fn new(adjacency: Array2<f64>) -> Result<Self> {
        validate_adjacency(&adjacency)?;
        let shift = build_shift(&adjacency);
        Ok(Self { adjacency, shift, functional_edges: None, neighbor_order: 1 })
    }

    pub fn from_centers(centers: &[(f64, f64)], sigma_km: f64, epsilon: f64) -> Result<Self> {
        Self::new(build_adjacency(centers, sigma_km, epsilon)?)
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    /// Induced subgraph on `nodes`, in that order.
    pub fn select(&self, nodes: &[usize]) -> Result<Self> {
        let a = self.adjacency.select(ndarray::Axis(0), nodes).select(ndarray::Axis(1), nodes);
        let mut g = Self::new(a)?;
        g.neighbor_order = self.neighbor_order;
        Ok(g)
    }

    /// Writes the `IGR1` format: adjacency then shift, f32 row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n_nodes();
        w.write_all(GRAPH_MAGIC)?;
        w.write_all(&u32_of(n)?.to_le_bytes())?;
        let mut buf = Vec::with_capacity(2 * n * n * 4);
        for v in self.adjacency.iter().chain(self.shift.iter()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads `IGR1`; the stored shift is kept as written.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRAPH_MAGIC {
            return Err(Error::Format("not an IGR1 graph file".into()));
        }
        let n = read_u32(&mut r)? as usize;
        let read_matrix = |r: &mut R| -> Result<Array2<f64>> {
            let mut bytes = vec![0u8; n * n * 4];
            r.read_exact(&mut bytes)?;
            let v = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            Ok(Array2::from_shape_vec((n, n), v).expect("sized"))
        };
        let adjacency = read_matrix(&mut r)?;
        let shift = read_matrix(&mut r)?;
        validate_adjacency(&adjacency)?;
        Ok(Self { adjacency, shift, functional_edges: None, neighbor_order: 1 })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn validate_adjacency(a: &Array2<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("adjacency must be square, got {:?}", a.dim())));
    }
    for i in 0..n {
        if a[[i, i]] != 0.0 {
            return Err(Error::Data(format!("adjacency diagonal entry {i} is nonzero")));
        }
        for j in 0..n {
            let v = a[[i, j]];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!("adjacency entry ({i}, {j}) = {v} outside [0, 1]")));
            }
            if (v - a[[j, i]]).abs() > 1e-12 {
                return Err(Error::Data(format!("adjacency not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `a_ij = exp(-d_ij² / σ²)` for `i ≠ j` when at least `epsilon`, else 0.
pub fn build_adjacency(centers: &[(f64, f64)], sigma_km: f64, epsilon: f64) -> Result<Array2<f64>> {
    if centers.is_empty() {
        return Err(Error::Config("cannot build a graph over zero nodes".into()));
    }
    if !(sigma_km > 0.0) || !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("need sigma > 0 and epsilon in [0, 1), got {sigma_km}, {epsilon}")));
    }
    let n = centers.len();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine_km(centers[i], centers[j]);
            let w = (-(d * d) / (sigma_km * sigma_km)).exp();
            if w >= epsilon {
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    Ok(a)
}

/// `S = D^{-1/2}(I + A)D^{-1/2}` with `D` the row sums of `I + A`.
pub fn build_shift(adjacency: &Array2<f64>) -> Array2<f64> {
    let n = adjacency.nrows();
    let mut s = adjacency.clone();
    for i in 0..n {
        s[[i, i]] += 1.0;
    }
    let inv_sqrt: Vec<f64> = s.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    for ((i, j), v) in s.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    s
}

/// Row-normalized adjacency; all-zero rows stay zero.
pub fn row_normalize<F: Real>(a: &Array2<F>) -> Array2<F> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let s: F = row.iter().copied().sum();
        if s > F::zero() {
            row.mapv_inplace(|v| v / s);
        }
    }
    out
}

/// Nodes within `order` hops of each node (excluding the node itself), ascending.
pub fn k_hop_neighbors<F: Real>(a: &Array2<F>, order: usize) -> Vec<Vec<usize>> {
    let n = a.nrows();
    (0..n)
        .map(|src| {
            let mut dist = vec![usize::MAX; n];
            dist[src] = 0;
            let mut frontier = vec![src];
            for hop in 1..=order {
                let mut next = Vec::new();
                for &u in &frontier {
                    for v in 0..n {
                        if a[[u, v]] > F::zero() && dist[v] == usize::MAX {
                            dist[v] = hop;
                            next.push(v);
                        }
                    }
                }
                frontier = next;
            }
            (0..n).filter(|&v| v != src && dist[v] != usize::MAX).collect()
        })
        .collect()
}

/// `e_ij = ⟨v_g[i], v_g[j]⟩` for all pairs including the diagonal. Each pair
/// is computed once and mirrored, so the result is exactly symmetric.
pub fn functional_edges<F: Real>(vg: &Array2<F>) -> Array2<F> {
    let n = vg.nrows();
    let mut e = Array2::zeros((n, n));
    for i in 0..n {
        let ri = vg.row(i);
        for j in i..n {
            let v = ri.dot(&vg.row(j));
            e[[i, j]] = v;
            e[[j, i]] = v;
        }
    }
    e
}

/// Support of the top-k sparsified functional graph: per row the `k` largest
/// off-diagonal weights, then symmetrized by union (`max(e_ij, e_ji)` keeps an
/// entry when either direction selected it).
pub fn top_k_support<F: Real>(e: &Array2<F>, k: usize) -> Array2<bool> {
    let n = e.nrows();
    let mut keep = Array2::from_elem((n, n), false);
    for i in 0..n {
        let mut cols: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        // ties broken by index for determinism
        cols.sort_by(|&a, &b| e[[i, b]].partial_cmp(&e[[i, a]]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        for &j in cols.iter().take(k) {
            keep[[i, j]] = true;
            keep[[j, i]] = true;
        }
    }
    keep
}

/// Top-k sparsified functional edge weights (dropped entries are zero).
pub fn sparsify_top_k<F: Real>(e: &Array2<F>, k: usize) -> Array2<F> {
    let keep = top_k_support(e, k);
    let n = e.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = e[[i, i]];
        for j in 0..n {
            if keep[[i, j]] {
                out[[i, j]] = if e[[i, j]] >= e[[j, i]] { e[[i, j]] } else { e[[j, i]] };
            }
        }
    }
    out
}

/// Nodes hidden from the model input for one training window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked_node_ids: BTreeSet<usize>,
    pub window: (usize, usize),
}

impl MaskPlan {
    pub fn empty(window: (usize, usize)) -> Self {
        Self { masked_node_ids: BTreeSet::new(), window }
    }

    pub fn is_masked(&self, node: usize) -> bool {
        self.masked_node_ids.contains(&node)
    }
}

/// How training masks are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    /// Exactly this many observed nodes per window.
    Count(usize),
    /// Each observed node independently with this probability.
    Bernoulli(f64),
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskMode::Count(n) => write!(f, "count:{n}"),
            MaskMode::Bernoulli(p) => write!(f, "bernoulli:{p}"),
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("mask mode {s:?}: expected count:N or bernoulli:P"));
        match s.split_once(':') {
            Some(("count", n)) => n.parse().map(MaskMode::Count).map_err(|_| bad()),
            Some(("bernoulli", p)) => {
                let p: f64 = p.parse().map_err(|_| bad())?;
                if !(0.0..1.0).contains(&p) {
                    return Err(bad());
                }
                Ok(MaskMode::Bernoulli(p))
            }
            _ => s.parse().map(MaskMode::Count).map_err(|_| bad()),
        }
    }
}

/// Fixed-count mask from a seed.
pub fn sample_mask(n_observed: usize, n_mask: usize, window: (usize, usize), seed: u64) -> Result<MaskPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_mask_with(n_observed, MaskMode::Count(n_mask), window, &mut rng)
}

pub fn sample_mask_with<R: Rng + ?Sized>(
    n_observed: usize,
    mode: MaskMode,
    window: (usize, usize),
    rng: &mut R,
) -> Result<MaskPlan> {
    if window.0 >= window.1 {
        return Err(Error::Config(format!("mask window {window:?} is empty")));
    }
    let masked_node_ids = match mode {
        MaskMode::Count(n_mask) => {
            if n_mask >= n_observed && n_mask > 0 {
                return Err(Error::Config(format!(
                    "cannot mask {n_mask} of {n_observed} observed nodes; at least one must stay visible"
                )));
            }
            index::sample(rng, n_observed, n_mask).into_iter().collect()
        }
        MaskMode::Bernoulli(p) => (0..n_observed).filter(|_| rng.random::<f64>() < p).collect(),
    };
    Ok(MaskPlan { masked_node_ids, window })
}
