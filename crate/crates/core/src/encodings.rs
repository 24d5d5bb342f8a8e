//! Location encodings and the layers that turn them into node embeddings.
//!
//! A table of precomputed encodings `H` (one row per region) is projected by
//! a learnable probe, passed through LeakyReLU and a node-axis normalization,
//! and separately mapped by per-layer adapters into the space in which the
//! functional graph is measured.
//!
//! The normalization always uses the statistics of the current forward call
//! (no running averages), so it stays well defined when the node set changes.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::ingest::{read_u32, u32_of};
use crate::nn::{leaky_relu, leaky_relu_grad};
use crate::{Error, Real, Result};

pub const DEFAULT_LLM_DIM: usize = 4096;
pub const DEFAULT_NODE_DIM: usize = 32;
/// Variance floor of the node-axis normalization.
pub const NORM_EPS: f64 = 1e-5;

const EMB_MAGIC: &[u8; 4] = b"IEMB";
const EMB_VERSION: u32 = 1;

/// Precomputed encodings, one row per region.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingTable {
    pub region_ids: Vec<String>,
    /// `N × D_llm`.
    pub values: Array2<f64>,
}

impl EncodingTable {
    pub fn new(region_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if region_ids.len() != values.nrows() {
            return Err(Error::Shape(format!("{} ids for {} encoding rows", region_ids.len(), values.nrows())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("encoding table contains non-finite entries".into()));
        }
        Ok(Self { region_ids, values })
    }

    pub fn len(&self) -> usize {
        self.region_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn select(&self, nodes: &[usize]) -> EncodingTable {
        EncodingTable {
            region_ids: nodes.iter().map(|&i| self.region_ids[i].clone()).collect(),
            values: self.values.select(Axis(0), nodes),
        }
    }

    /// Rows reordered to follow `ids`.
    pub fn aligned_to(&self, ids: &[String]) -> Result<EncodingTable> {
        let idx = ids
            .iter()
            .map(|id| {
                self.region_ids
                    .iter()
                    .position(|r| r == id)
                    .ok_or_else(|| Error::Data(format!("no encoding for region {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&idx))
    }

    /// Writes the `IEMB` format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(EMB_MAGIC)?;
        w.write_all(&EMB_VERSION.to_le_bytes())?;
        w.write_all(&u32_of(self.len())?.to_le_bytes())?;
        w.write_all(&u32_of(self.dim())?.to_le_bytes())?;
        for id in &self.region_ids {
            let len = u16::try_from(id.len()).map_err(|_| Error::Format(format!("region id too long: {id}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in self.values.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EMB_MAGIC {
            return Err(Error::Format("not an IEMB encoding file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != EMB_VERSION {
            return Err(Error::Format(format!("unsupported IEMB version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut s = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut s)?;
            ids.push(String::from_utf8(s).map_err(|_| Error::Format("region id is not UTF-8".into()))?);
        }
        let mut bytes = vec![0u8; n * d * 4];
        r.read_exact(&mut bytes)?;
        let v = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        EncodingTable::new(ids, Array2::from_shape_vec((n, d), v).expect("sized"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// `v_φ = H · W_prob`.
pub fn probe<F: Real>(h: &Array2<F>, w_prob: &Array2<F>) -> Result<Array2<F>> {
    if h.ncols() != w_prob.nrows() {
        return Err(Error::Shape(format!(
            "encodings have {} columns but the probe expects {}",
            h.ncols(),
            w_prob.nrows()
        )));
    }
    Ok(h.dot(w_prob))
}

/// Closed-form ridge probe `(HᵀH + λI)⁻¹HᵀE`.
///
/// When there are fewer rows than encoding dimensions the equivalent dual form
/// `Hᵀ(HHᵀ + λI)⁻¹E` is solved instead, which needs only an `N × N` factorization.
pub fn ridge_init(h: &Array2<f64>, target: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("ridge lambda must be positive, got {lambda}")));
    }
    if h.nrows() != target.nrows() {
        return Err(Error::Shape(format!("{} encoding rows but {} target rows", h.nrows(), target.nrows())));
    }
    let (n, d) = h.dim();
    if n < d {
        let mut gram = h.dot(&h.t());
        for i in 0..n {
            gram[[i, i]] += lambda;
        }
        let alpha = cholesky_solve(&gram, target)?;
        Ok(h.t().dot(&alpha))
    } else {
        let mut gram = h.t().dot(h);
        for i in 0..d {
            gram[[i, i]] += lambda;
        }
        cholesky_solve(&gram, &h.t().dot(target))
    }
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) {
            return Err(Error::Numerical("matrix is not positive definite".into()));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    Ok(x)
}

/// Values kept from [`process_embedding`] for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<F> {
    pub input: Array2<F>,
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// LeakyReLU, then per-column `(x − mean) / sqrt(var + eps)` over the node
/// axis, then `γ ⊙ · + b`. Returns the output and the normalized values
/// before the affine step.
pub fn process_embedding<F: Real>(
    v: &Array2<F>,
    gamma: &Array1<F>,
    shift: &Array1<F>,
) -> Result<(Array2<F>, NormCache<F>)> {
    let n = v.nrows();
    if n < 2 {
        return Err(Error::Data("embedding normalization needs at least two nodes".into()));
    }
    if gamma.len() != v.ncols() || shift.len() != v.ncols() {
        return Err(Error::Shape("normalization scale/shift width mismatch".into()));
    }
    let a = v.mapv(leaky_relu);
    let nf = F::of(n as f64);
    let mean = a.sum_axis(Axis(0)) / nf;
    let centered = &a - &mean;
    let var = centered.mapv(|x| x * x).sum_axis(Axis(0)) / nf;
    let inv_std = var.mapv(|s| F::one() / (s + F::of(NORM_EPS)).sqrt());
    let xhat = &centered * &inv_std;
    let out = &xhat * gamma + shift;
    Ok((out, NormCache { input: v.clone(), xhat, inv_std }))
}

/// Backward of [`process_embedding`]: accumulates `dγ`, `db` and returns `dv`.
pub fn process_embedding_backward<F: Real>(
    cache: &NormCache<F>,
    gamma: &Array1<F>,
    dout: &Array2<F>,
    dgamma: &mut Array1<F>,
    dshift: &mut Array1<F>,
) -> Array2<F> {
    let n = F::of(dout.nrows() as f64);
    *dgamma += &(dout * &cache.xhat).sum_axis(Axis(0));
    *dshift += &dout.sum_axis(Axis(0));
    let dxhat = dout * gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let mut da = &dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
    da = da * &(&cache.inv_std / n);
    da * &cache.input.mapv(leaky_relu_grad)
}

/// Row-wise `LeakyReLU(D · v_φ[i])`; `adapter` is `D_graph × D_node`.
/// Returns the activation and its pre-activation.
pub fn adapt<F: Real>(v: &Array2<F>, adapter: &Array2<F>) -> Result<(Array2<F>, Array2<F>)> {
    if v.ncols() != adapter.ncols() {
        return Err(Error::Shape(format!(
            "adapter expects {} embedding columns, got {}",
            adapter.ncols(),
            v.ncols()
        )));
    }
    let pre = v.dot(&adapter.t());
    Ok((pre.mapv(leaky_relu), pre))
}

/// Backward of [`adapt`]: accumulates `dD` and returns `dv`.
pub fn adapt_backward<F: Real>(
    v: &Array2<F>,
    adapter: &Array2<F>,
    pre: &Array2<F>,
    dout: &Array2<F>,
    dadapter: &mut Array2<F>,
) -> Array2<F> {
    let dpre = dout * &pre.mapv(leaky_relu_grad);
    *dadapter += &dpre.t().dot(v);
    dpre.dot(adapter)
}
