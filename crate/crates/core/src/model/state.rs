use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};

use super::ForwardConfig;
use crate::nn::glorot_bound;
use crate::{Error, Real, Result};

/// Parameters of one spatial message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MpParams<F> {
    /// Functional-graph adapter `D_graph × D_node`.
    pub adapter: Array2<F>,
    /// Message weights over `[h_i ‖ ṽ_i ‖ h_j ‖ a_ij ‖ e_ij]`.
    pub msg_w: Array2<F>,
    pub msg_b: Array1<F>,
    /// Edge gate `1 × D_hidden`.
    pub gate_w: Array2<F>,
    pub gate_b: Array1<F>,
    pub node_w: Array2<F>,
    /// Diffusion weights for hops `1..=K`, each `D_hidden × D_hidden`.
    pub diff_hops: Vec<Array2<F>>,
    pub diff_self: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResParams<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

/// Every learnable tensor of the network. The same struct holds gradients
/// and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F> {
    /// Probe `D_llm × D_node`.
    pub probe: Array2<F>,
    pub norm_gamma: Array1<F>,
    pub norm_shift: Array1<F>,
    /// Temporal encoder over `[x window ‖ ṽ ‖ u window]`.
    pub temp_w: Array2<F>,
    pub temp_b: Array1<F>,
    pub mp: Vec<MpParams<F>>,
    pub ffn: Vec<ResParams<F>>,
    /// Readout hidden layer over `[h ‖ u future ‖ v]`.
    pub read_w1: Array2<F>,
    pub read_b1: Array1<F>,
    pub read_w2: Array2<F>,
    pub read_b2: Array1<F>,
    /// Reconstruction head onto the input window.
    pub recon_w: Array2<F>,
    pub recon_b: Array1<F>,
}

/// Shape and flat data of one named tensor.
pub struct TensorRef<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

pub struct TensorMut<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [F],
}

fn glorot<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    let a = glorot_bound(cols, rows);
    Array2::from_shape_fn((rows, cols), |_| F::of(rng.random_range(-a..a)))
}

impl<F: Real> ModelState<F> {
    /// Glorot-uniform weights, zero biases, unit normalization scale.
    pub fn init<R: Rng + ?Sized>(cfg: &ForwardConfig, llm_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if llm_dim == 0 {
            return Err(Error::Config("encoding dimension must be positive".into()));
        }
        let (dh, dn) = (cfg.hidden, cfg.node_dim);
        let mp = (0..cfg.mp_layers)
            .map(|_| MpParams {
                adapter: glorot(cfg.graph_dim, dn, rng),
                msg_w: glorot(dh, cfg.message_input_dim(), rng),
                msg_b: Array1::zeros(dh),
                gate_w: glorot(1, dh, rng),
                gate_b: Array1::zeros(1),
                node_w: glorot(dh, dh, rng),
                diff_hops: (0..cfg.diffusion_k).map(|_| glorot(dh, dh, rng)).collect(),
                diff_self: glorot(dh, dh, rng),
            })
            .collect();
        let ffn = (0..cfg.ffn_layers).map(|_| ResParams { w: glorot(dh, dh, rng), b: Array1::zeros(dh) }).collect();
        Ok(Self {
            probe: glorot(llm_dim, dn, rng),
            norm_gamma: Array1::ones(dn),
            norm_shift: Array1::zeros(dn),
            temp_w: glorot(dh, cfg.temporal_input_dim(), rng),
            temp_b: Array1::zeros(dh),
            mp,
            ffn,
            read_w1: glorot(dh, cfg.readout_input_dim(), rng),
            read_b1: Array1::zeros(dh),
            read_w2: glorot(cfg.horizon * cfg.d_x, dh, rng),
            read_b2: Array1::zeros(cfg.horizon * cfg.d_x),
            recon_w: glorot(cfg.window * cfg.d_x, dh, rng),
            recon_b: Array1::zeros(cfg.window * cfg.d_x),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(F::zero());
        }
        z
    }

    pub fn llm_dim(&self) -> usize {
        self.probe.nrows()
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr) => {
                out.push(TensorRef {
                    name: $name.to_string(),
                    shape: $t.shape().to_vec(),
                    data: $t.as_slice().expect("standard layout"),
                })
            };
        }
        push!("probe", self.probe);
        push!("norm.gamma", self.norm_gamma);
        push!("norm.shift", self.norm_shift);
        push!("temporal.w", self.temp_w);
        push!("temporal.b", self.temp_b);
        for (l, p) in self.mp.iter().enumerate() {
            push!(format!("mp.{l}.adapter"), p.adapter);
            push!(format!("mp.{l}.message.w"), p.msg_w);
            push!(format!("mp.{l}.message.b"), p.msg_b);
            push!(format!("mp.{l}.gate.w"), p.gate_w);
            push!(format!("mp.{l}.gate.b"), p.gate_b);
            push!(format!("mp.{l}.node.w"), p.node_w);
            for (k, t) in p.diff_hops.iter().enumerate() {
                push!(format!("mp.{l}.diffusion.hop{}", k + 1), t);
            }
            push!(format!("mp.{l}.diffusion.self"), p.diff_self);
        }
        for (l, p) in self.ffn.iter().enumerate() {
            push!(format!("ffn.{l}.w"), p.w);
            push!(format!("ffn.{l}.b"), p.b);
        }
        push!("readout.w1", self.read_w1);
        push!("readout.b1", self.read_b1);
        push!("readout.w2", self.read_w2);
        push!("readout.b2", self.read_b2);
        push!("recon.w", self.recon_w);
        push!("recon.b", self.recon_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr) => {{
                let shape = $t.shape().to_vec();
                out.push(TensorMut {
                    name: $name.to_string(),
                    shape,
                    data: $t.as_slice_mut().expect("standard layout"),
                })
            }};
        }
        push!("probe", self.probe);
        push!("norm.gamma", self.norm_gamma);
        push!("norm.shift", self.norm_shift);
        push!("temporal.w", self.temp_w);
        push!("temporal.b", self.temp_b);
        for (l, p) in self.mp.iter_mut().enumerate() {
            push!(format!("mp.{l}.adapter"), p.adapter);
            push!(format!("mp.{l}.message.w"), p.msg_w);
            push!(format!("mp.{l}.message.b"), p.msg_b);
            push!(format!("mp.{l}.gate.w"), p.gate_w);
            push!(format!("mp.{l}.gate.b"), p.gate_b);
            push!(format!("mp.{l}.node.w"), p.node_w);
            for (k, t) in p.diff_hops.iter_mut().enumerate() {
                push!(format!("mp.{l}.diffusion.hop{}", k + 1), t);
            }
            push!(format!("mp.{l}.diffusion.self"), p.diff_self);
        }
        for (l, p) in self.ffn.iter_mut().enumerate() {
            push!(format!("ffn.{l}.w"), p.w);
            push!(format!("ffn.{l}.b"), p.b);
        }
        push!("readout.w1", self.read_w1);
        push!("readout.b1", self.read_b1);
        push!("readout.w2", self.read_w2);
        push!("readout.b2", self.read_b2);
        push!("recon.w", self.recon_w);
        push!("recon.b", self.recon_b);
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += alpha * other` over every tensor.
    pub fn add_scaled(&mut self, other: &Self, alpha: F) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d = *d + alpha * *s;
            }
        }
    }

    /// Converts element type (used to compare `f32` and `f64` runs).
    pub fn cast<G: Real>(&self) -> ModelState<G> {
        let c2 = |a: &Array2<F>| a.mapv(|x| G::of(x.as_f64()));
        let c1 = |a: &Array1<F>| a.mapv(|x| G::of(x.as_f64()));
        ModelState {
            probe: c2(&self.probe),
            norm_gamma: c1(&self.norm_gamma),
            norm_shift: c1(&self.norm_shift),
            temp_w: c2(&self.temp_w),
            temp_b: c1(&self.temp_b),
            mp: self
                .mp
                .iter()
                .map(|p| MpParams {
                    adapter: c2(&p.adapter),
                    msg_w: c2(&p.msg_w),
                    msg_b: c1(&p.msg_b),
                    gate_w: c2(&p.gate_w),
                    gate_b: c1(&p.gate_b),
                    node_w: c2(&p.node_w),
                    diff_hops: p.diff_hops.iter().map(c2).collect(),
                    diff_self: c2(&p.diff_self),
                })
                .collect(),
            ffn: self.ffn.iter().map(|p| ResParams { w: c2(&p.w), b: c1(&p.b) }).collect(),
            read_w1: c2(&self.read_w1),
            read_b1: c1(&self.read_b1),
            read_w2: c2(&self.read_w2),
            read_b2: c1(&self.read_b2),
            recon_w: c2(&self.recon_w),
            recon_b: c1(&self.recon_b),
        }
    }

    /// Errors naming the first tensor holding a NaN or infinity.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for t in self.tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite {what} in tensor {}", t.name)));
            }
        }
        Ok(())
    }

    /// Checks that every tensor has the shape `cfg` and `llm_dim` imply.
    pub fn check_shapes(&self, cfg: &ForwardConfig, llm_dim: usize) -> Result<()> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let reference = ModelState::<F>::init(cfg, llm_dim, &mut rng)?;
        let ours = self.tensors();
        let theirs = reference.tensors();
        if ours.len() != theirs.len() {
            return Err(Error::Shape(format!(
                "model has {} tensors, configuration implies {}",
                ours.len(),
                theirs.len()
            )));
        }
        for (a, b) in ours.iter().zip(&theirs) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?}, configuration implies {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }
}
