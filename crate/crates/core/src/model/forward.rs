use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::{ForwardConfig, LayerOrder, ModelState, MpParams, ResParams};
use crate::encodings::{adapt, process_embedding, probe, NormCache};
use crate::graphs::{functional_edges, k_hop_neighbors, row_normalize, top_k_support};
use crate::nn::{linear, relu, repeat_row, sigmoid};
use crate::{Error, Real, Result};

/// Proximity graph prepared for one node set.
#[derive(Debug, Clone)]
pub struct GraphContext<F> {
    pub adjacency: Array2<F>,
    /// Row-normalized adjacency used by the diffusion convolution.
    pub transition: Array2<F>,
    /// k-hop adjacency neighborhoods, ascending, self excluded.
    pub neighbors: Vec<Vec<usize>>,
}

impl<F: Real> GraphContext<F> {
    pub fn new(adjacency: &Array2<f64>, neighbor_order: usize) -> Self {
        let adjacency = adjacency.mapv(F::of);
        let transition = row_normalize(&adjacency);
        let neighbors = k_hop_neighbors(&adjacency, neighbor_order);
        Self { adjacency, transition, neighbors }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }
}

/// Static inputs for one node set: encodings and proximity graph.
#[derive(Debug, Clone)]
pub struct Scene<F> {
    /// `N × D_llm` location encodings.
    pub encodings: Array2<F>,
    pub graph: GraphContext<F>,
}

impl<F: Real> Scene<F> {
    pub fn new(encodings: &Array2<f64>, adjacency: &Array2<f64>, neighbor_order: usize) -> Result<Self> {
        if encodings.nrows() != adjacency.nrows() {
            return Err(Error::Shape(format!(
                "{} encoding rows but {} graph nodes",
                encodings.nrows(),
                adjacency.nrows()
            )));
        }
        Ok(Self { encodings: encodings.mapv(F::of), graph: GraphContext::new(adjacency, neighbor_order) })
    }

    pub fn n_nodes(&self) -> usize {
        self.encodings.nrows()
    }
}

/// Per-window inputs.
#[derive(Debug, Clone)]
pub struct Window<F> {
    /// `N × (W·d_x)`, time-major per row; hidden nodes and missing entries are zero.
    pub history: Array2<F>,
    /// `W·d_u` covariates of the input window.
    pub cov_history: Array1<F>,
    /// `H·d_u` covariates of the forecast horizon.
    pub cov_future: Array1<F>,
}

/// Directed edges `j → i` grouped by receiver `i`.
#[derive(Debug, Clone, Default)]
pub struct EdgeList<F> {
    /// Edges of receiver `i` are `offsets[i]..offsets[i + 1]`.
    pub offsets: Vec<usize>,
    pub sender: Vec<usize>,
    pub adjacency_weight: Vec<F>,
    pub functional_weight: Vec<F>,
}

impl<F: Real> EdgeList<F> {
    pub fn len(&self) -> usize {
        self.sender.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sender.is_empty()
    }

    pub fn receivers(&self) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> + '_ {
        self.offsets.windows(2).enumerate().map(|(i, w)| (i, w[0]..w[1]))
    }
}

#[derive(Debug, Clone)]
pub(super) struct EncodingTape<F> {
    pub norm: NormCache<F>,
}

#[derive(Debug, Clone)]
pub(super) struct FunctionalTape<F> {
    pub pre: Array2<F>,
    pub act: Array2<F>,
    /// Kept pairs when sparsified; `None` = fully connected.
    pub support: Option<Array2<bool>>,
}

#[derive(Debug, Clone)]
pub(super) struct DiffusionTape<F> {
    pub input: Array2<F>,
    /// `Ã^k h` for `k = 1..=K`.
    pub powers: Vec<Array2<F>>,
    pub out: Array2<F>,
}

#[derive(Debug, Clone)]
pub(super) struct MpTape<F> {
    pub layer: usize,
    pub input: Array2<F>,
    pub functional: Option<FunctionalTape<F>>,
    pub edges: EdgeList<F>,
    /// Post-ReLU messages, one row per edge.
    pub messages: Array2<F>,
    pub gates: Vec<F>,
    pub node_out: Array2<F>,
    pub diffusion: Option<DiffusionTape<F>>,
}

#[derive(Debug, Clone)]
pub(super) enum StageTape<F> {
    Mp(MpTape<F>),
    Ffn { block: usize, input: Array2<F>, act: Array2<F> },
}

/// Intermediate values recorded by [`forward`] for [`super::backward`].
#[derive(Debug, Clone)]
pub struct Tape<F> {
    pub(super) encoding: Option<EncodingTape<F>>,
    pub(super) embedding: Array2<F>,
    pub(super) processed: Array2<F>,
    pub(super) temporal_input: Array2<F>,
    pub(super) temporal_out: Array2<F>,
    pub(super) stages: Vec<StageTape<F>>,
    pub(super) final_hidden: Array2<F>,
    pub(super) readout_input: Array2<F>,
    pub(super) readout_hidden: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    /// `N × (W·d_x)` reconstruction of the input window.
    pub recon: Array2<F>,
    /// `N × (H·d_x)` forecast.
    pub pred: Array2<F>,
    pub tape: Tape<F>,
}

impl<F: Real> ForwardOutput<F> {
    /// Hidden node states after the last stage.
    pub fn hidden(&self) -> &Array2<F> {
        &self.tape.final_hidden
    }

    /// Processed embeddings `ṽ` (zeros when encodings are disabled).
    pub fn processed_embeddings(&self) -> &Array2<F> {
        &self.tape.processed
    }
}

/// Embedding path shared by every window of a scene: `(v, ṽ, tape)`.
fn embed<F: Real>(
    state: &ModelState<F>,
    cfg: &ForwardConfig,
    scene: &Scene<F>,
) -> Result<(Array2<F>, Array2<F>, Option<EncodingTape<F>>)> {
    let n = scene.n_nodes();
    if !cfg.use_encoding {
        let z = Array2::zeros((n, cfg.node_dim));
        return Ok((z.clone(), z, None));
    }
    let v = probe(&scene.encodings, &state.probe)?;
    let (vt, norm) = process_embedding(&v, &state.norm_gamma, &state.norm_shift)?;
    Ok((v, vt, Some(EncodingTape { norm })))
}

fn build_edges<F: Real>(
    cfg: &ForwardConfig,
    graph: &GraphContext<F>,
    functional: Option<(&Array2<F>, Option<&Array2<bool>>)>,
) -> EdgeList<F> {
    let n = graph.n_nodes();
    let mut edges = EdgeList { offsets: Vec::with_capacity(n + 1), ..Default::default() };
    edges.offsets.push(0);
    let mut member = vec![false; n];
    for i in 0..n {
        member.iter_mut().for_each(|m| *m = false);
        if cfg.use_adjacency_graph {
            for &j in &graph.neighbors[i] {
                member[j] = true;
            }
        }
        if let Some((_, support)) = functional {
            for j in 0..n {
                if j != i && support.is_none_or(|s| s[[i, j]]) {
                    member[j] = true;
                }
            }
        }
        for j in (0..n).filter(|&j| member[j]) {
            edges.sender.push(j);
            let a = if cfg.use_adjacency_graph { graph.adjacency[[i, j]] } else { F::zero() };
            edges.adjacency_weight.push(a);
            let e = match functional {
                Some((e, support)) if support.is_none_or(|s| s[[i, j]]) => e[[i, j]],
                _ => F::zero(),
            };
            edges.functional_weight.push(e);
        }
        edges.offsets.push(edges.sender.len());
    }
    edges
}

/// One message-passing layer with its tape; diffusion is not applied here.
fn message_layer<F: Real>(
    p: &MpParams<F>,
    cfg: &ForwardConfig,
    graph: &GraphContext<F>,
    layer: usize,
    h: &Array2<F>,
    v: &Array2<F>,
    vt: &Array2<F>,
) -> Result<MpTape<F>> {
    let (n, dh, dn) = (h.nrows(), cfg.hidden, cfg.node_dim);
    if graph.n_nodes() != n || v.nrows() != n || vt.nrows() != n {
        return Err(Error::Shape("message passing inputs disagree on node count".into()));
    }
    if p.msg_w.dim() != (dh, cfg.message_input_dim()) || h.ncols() != dh || vt.ncols() != dn {
        return Err(Error::Shape("message passing weights do not match the configuration".into()));
    }

    let functional = if cfg.use_llm_graph {
        let (act, pre) = adapt(v, &p.adapter)?;
        let support = (n > cfg.functional_dense_max).then(|| top_k_support(&functional_edges(&act), cfg.functional_top_k));
        Some(FunctionalTape { pre, act, support })
    } else {
        None
    };
    let e_matrix = functional.as_ref().map(|f| functional_edges(&f.act));
    let edges = build_edges(
        cfg,
        graph,
        e_matrix.as_ref().map(|e| (e, functional.as_ref().and_then(|f| f.support.as_ref()))),
    );

    let w = &p.msg_w;
    let w_recv = w.slice(s![.., 0..dh]);
    let w_emb = w.slice(s![.., dh..dh + dn]);
    let w_send = w.slice(s![.., dh + dn..2 * dh + dn]);
    let w_adj = w.column(2 * dh + dn);
    let w_fun = w.column(2 * dh + dn + 1);
    let mut recv = h.dot(&w_recv.t()) + vt.dot(&w_emb.t());
    recv += &p.msg_b;
    let send = h.dot(&w_send.t());
    let gate_w = p.gate_w.row(0);
    let gate_b = p.gate_b[0];

    let mut messages = Array2::zeros((edges.len(), dh));
    let mut gates = Vec::with_capacity(edges.len());
    let mut agg = Array2::<F>::zeros((n, dh));
    for (i, range) in edges.receivers() {
        if range.is_empty() {
            continue;
        }
        let inv_deg = F::one() / F::of(range.len() as f64);
        for k in range {
            let j = edges.sender[k];
            let (a, e) = (edges.adjacency_weight[k], edges.functional_weight[k]);
            let mut m = messages.row_mut(k);
            for c in 0..dh {
                m[c] = relu(recv[[i, c]] + send[[j, c]] + a * w_adj[c] + e * w_fun[c]);
            }
            let alpha = sigmoid(gate_w.dot(&m) + gate_b);
            gates.push(alpha);
            let scale = alpha * inv_deg;
            let mut out = agg.row_mut(i);
            for c in 0..dh {
                out[c] = out[c] + scale * m[c];
            }
        }
    }
    let node_out = (h.dot(&p.node_w.t()) + agg).mapv(relu);

    Ok(MpTape { layer, input: h.clone(), functional, edges, messages, gates, node_out, diffusion: None })
}

fn diffusion_layer<F: Real>(p: &MpParams<F>, transition: &Array2<F>, h: &Array2<F>) -> DiffusionTape<F> {
    let mut powers = Vec::with_capacity(p.diff_hops.len());
    let mut pre = h.dot(&p.diff_self);
    let mut cur = h.clone();
    for theta in &p.diff_hops {
        cur = transition.dot(&cur);
        pre += &cur.dot(theta);
        powers.push(cur.clone());
    }
    DiffusionTape { input: h.clone(), powers, out: pre.mapv(relu) }
}

/// `ReLU(W_t [x window ‖ ṽ ‖ u window] + b_t)` for every node.
pub fn temporal_encode<F: Real>(
    state: &ModelState<F>,
    history: &Array2<F>,
    processed: &Array2<F>,
    cov_history: &Array1<F>,
) -> Array2<F> {
    let input = concatenate![Axis(1), *history, *processed, repeat_row(cov_history.view(), history.nrows())];
    linear(input.view(), state.temp_w.view(), state.temp_b.view()).mapv(relu)
}

/// One gated message-passing step over the configured graphs, without the
/// diffusion convolution. `v` is the raw embedding and `processed` its
/// normalized form.
pub fn message_pass<F: Real>(
    params: &MpParams<F>,
    cfg: &ForwardConfig,
    graph: &GraphContext<F>,
    h: &Array2<F>,
    v: &Array2<F>,
    processed: &Array2<F>,
) -> Result<Array2<F>> {
    if !cfg.use_llm_graph && !cfg.use_adjacency_graph {
        return Err(Error::Config("message passing needs at least one graph".into()));
    }
    Ok(message_layer(params, cfg, graph, 0, h, v, processed)?.node_out)
}

/// `ReLU(Σ_k Ã^k h Θ_k + h Θ_self)` with `Ã` the row-normalized adjacency.
pub fn diffusion_conv<F: Real>(params: &MpParams<F>, transition: &Array2<F>, h: &Array2<F>) -> Array2<F> {
    diffusion_layer(params, transition, h).out
}

/// `ReLU(W_r h + b_r) + h`.
pub fn residual_block<F: Real>(params: &ResParams<F>, h: &Array2<F>) -> Array2<F> {
    linear(h.view(), params.w.view(), params.b.view()).mapv(relu) + h
}

/// Shared two-layer readout over `[h ‖ u future ‖ v]`.
pub fn readout<F: Real>(state: &ModelState<F>, h: &Array2<F>, cov_future: &Array1<F>, v: &Array2<F>) -> Array2<F> {
    let input = concatenate![Axis(1), *h, repeat_row(cov_future.view(), h.nrows()), *v];
    let hidden = linear(input.view(), state.read_w1.view(), state.read_b1.view()).mapv(relu);
    linear(hidden.view(), state.read_w2.view(), state.read_b2.view())
}

/// Runs the network on one window.
pub fn forward<F: Real>(
    state: &ModelState<F>,
    cfg: &ForwardConfig,
    scene: &Scene<F>,
    window: &Window<F>,
) -> Result<ForwardOutput<F>> {
    cfg.validate()?;
    let n = scene.n_nodes();
    if scene.graph.n_nodes() != n {
        return Err(Error::Shape("scene graph and encodings disagree on node count".into()));
    }
    if window.history.dim() != (n, cfg.window * cfg.d_x) {
        return Err(Error::Shape(format!(
            "history is {:?}, expected ({n}, {})",
            window.history.dim(),
            cfg.window * cfg.d_x
        )));
    }
    if window.cov_history.len() != cfg.window * cfg.d_u || window.cov_future.len() != cfg.horizon * cfg.d_u {
        return Err(Error::Shape("covariate window length does not match window/horizon".into()));
    }
    if cfg.use_encoding && scene.encodings.ncols() != state.llm_dim() {
        return Err(Error::Shape(format!(
            "encodings have {} columns, model expects {}",
            scene.encodings.ncols(),
            state.llm_dim()
        )));
    }
    if cfg.mp_layers != state.mp.len() || cfg.ffn_layers != state.ffn.len() {
        return Err(Error::Shape("layer counts of configuration and model disagree".into()));
    }

    let (v, vt, encoding) = embed(state, cfg, scene)?;

    let temporal_input = concatenate![
        Axis(1),
        window.history,
        vt,
        repeat_row(window.cov_history.view(), n)
    ];
    let temporal_out = linear(temporal_input.view(), state.temp_w.view(), state.temp_b.view()).mapv(relu);

    let mut stages = Vec::new();
    let mut h = temporal_out.clone();
    let run_mp = |h: &mut Array2<F>, stages: &mut Vec<StageTape<F>>| -> Result<()> {
        if !cfg.spatial {
            return Ok(());
        }
        for layer in 0..cfg.mp_layers {
            let p = &state.mp[layer];
            let mut t = message_layer(p, cfg, &scene.graph, layer, h, &v, &vt)?;
            if cfg.use_adjacency_graph {
                t.diffusion = Some(diffusion_layer(p, &scene.graph.transition, &t.node_out));
            }
            *h = t.diffusion.as_ref().map_or_else(|| t.node_out.clone(), |d| d.out.clone());
            stages.push(StageTape::Mp(t));
        }
        Ok(())
    };
    let run_ffn = |h: &mut Array2<F>, stages: &mut Vec<StageTape<F>>| {
        for (block, p) in state.ffn.iter().enumerate() {
            let act = linear(h.view(), p.w.view(), p.b.view()).mapv(relu);
            let out = &act + &*h;
            stages.push(StageTape::Ffn { block, input: std::mem::replace(h, out), act });
        }
    };
    match cfg.layer_order {
        LayerOrder::MpThenFfn => {
            run_mp(&mut h, &mut stages)?;
            run_ffn(&mut h, &mut stages);
        }
        LayerOrder::FfnThenMp => {
            run_ffn(&mut h, &mut stages);
            run_mp(&mut h, &mut stages)?;
        }
    }

    let readout_input = concatenate![Axis(1), h, repeat_row(window.cov_future.view(), n), v];
    let readout_hidden = linear(readout_input.view(), state.read_w1.view(), state.read_b1.view()).mapv(relu);
    let pred = linear(readout_hidden.view(), state.read_w2.view(), state.read_b2.view());
    let recon = linear(h.view(), state.recon_w.view(), state.recon_b.view());

    Ok(ForwardOutput {
        recon,
        pred,
        tape: Tape {
            encoding,
            embedding: v,
            processed: vt,
            temporal_input, temporal_out, stages, final_hidden: h, readout_input, readout_hidden },
    })
}
