//! Finite-difference check of the hand-written backward pass.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{joint_loss, LossKind};
use super::windows::WindowTargets;
use crate::graphs::MaskPlan;
use crate::model::{backward, forward, ForwardConfig, ModelState, Scene, Window};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates skipped because a loss or activation kink lies within the step.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// A complete forward/loss instance in 64-bit.
#[derive(Debug, Clone)]
pub struct Instance {
    pub cfg: ForwardConfig,
    pub state: ModelState<f64>,
    pub scene: Scene<f64>,
    pub window: Window<f64>,
    pub targets: WindowTargets<f64>,
    pub plan: MaskPlan,
    pub kind: LossKind,
}

impl Instance {
    pub fn loss(&self, state: &ModelState<f64>) -> Result<f64> {
        let out = forward(state, &self.cfg, &self.scene, &self.window)?;
        let (report, _, _) = joint_loss(self.kind, &out.recon, &out.pred, &self.targets.view(), &self.plan)?;
        Ok(report.total)
    }

    pub fn gradients(&self) -> Result<ModelState<f64>> {
        let out = forward(&self.state, &self.cfg, &self.scene, &self.window)?;
        let (_, drecon, dpred) = joint_loss(self.kind, &out.recon, &out.pred, &self.targets.view(), &self.plan)?;
        backward(&self.state, &self.cfg, &self.scene, &out.tape, &dpred, &drecon)
    }
}

/// Random instance: `n` nodes on a ring, one node masked, random weights,
/// inputs and targets.
pub fn random_instance(cfg: &ForwardConfig, n: usize, llm_dim: usize, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = ModelState::<f64>::init(cfg, llm_dim, &mut rng)?;
    // Glorot weights with zero biases leave many ReLUs near 0; nudge biases
    // so activations sit away from the kink
    let mut state = state;
    for t in state.tensors_mut() {
        if t.shape.len() == 1 {
            for b in t.data.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }
    let mut adjacency = Array2::zeros((n, n));
    for i in 0..n {
        let j = (i + 1) % n;
        if i != j {
            let w = rng.random_range(0.2..1.0);
            adjacency[[i, j]] = w;
            adjacency[[j, i]] = w;
        }
    }
    let encodings = Array2::from_shape_fn((n, llm_dim), |_| rng.random_range(-1.0..1.0));
    let scene = Scene::new(&encodings, &adjacency, cfg.neighbor_order)?;
    let mut uniform = |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
    let wdx = cfg.window * cfg.d_x;
    let hdx = cfg.horizon * cfg.d_x;
    let history = uniform(n, wdx);
    let future = uniform(n, hdx);
    let cov = uniform(1, (cfg.window + cfg.horizon) * cfg.d_u);
    let masked = rng.random_range(0..n);
    let mut input = history.clone();
    input.row_mut(masked).fill(0.0);
    let window = Window {
        history: input,
        cov_history: Array1::from_iter(cov.iter().take(cfg.window * cfg.d_u).copied()),
        cov_future: Array1::from_iter(cov.iter().skip(cfg.window * cfg.d_u).copied()),
    };
    let targets = WindowTargets {
        history,
        history_observed: Array2::from_elem((n, cfg.window), true),
        future,
        future_observed: Array2::from_elem((n, cfg.horizon), true),
    };
    let plan = MaskPlan { masked_node_ids: BTreeSet::from([masked]), window: (0, cfg.window) };
    Ok(Instance { cfg: cfg.clone(), state, scene, window, targets, plan, kind: LossKind::L1 })
}

/// The small configuration used for gradient checks: 3 nodes, window and
/// horizon 2, hidden width 4, every pathway on.
pub fn micro_config() -> ForwardConfig {
    ForwardConfig {
        window: 2,
        horizon: 2,
        d_x: 1,
        d_u: 4,
        node_dim: 3,
        graph_dim: 3,
        hidden: 4,
        mp_layers: 1,
        ffn_layers: 1,
        diffusion_k: 2,
        ..Default::default()
    }
}

/// Compares analytic gradients with central differences of step `h`,
/// checking at most `per_tensor` coordinates of each tensor.
pub fn gradient_check(inst: &Instance, h: f64, per_tensor: usize, seed: u64) -> Result<Vec<TensorCheck>> {
    let analytic = inst.gradients()?;
    let base = inst.loss(&inst.state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = inst.state.clone();
    let mut out = Vec::new();
    let grads = analytic.tensors();
    for (ti, g) in grads.iter().enumerate() {
        let len = g.data.len();
        let coords: Vec<usize> =
            if len <= per_tensor { (0..len).collect() } else { index::sample(&mut rng, len, per_tensor).into_vec() };
        let mut check = TensorCheck { name: g.name.clone(), checked: 0, skipped: 0, max_rel_err: 0.0 };
        for c in coords {
            let orig = probe.tensors()[ti].data[c];
            let eval = |x: f64, probe: &mut ModelState<f64>| -> Result<f64> {
                probe.tensors_mut()[ti].data[c] = x;
                inst.loss(probe)
            };
            let up = eval(orig + h, &mut probe)?;
            let down = eval(orig - h, &mut probe)?;
            probe.tensors_mut()[ti].data[c] = orig;
            let forward_diff = (up - base) / h;
            let backward_diff = (base - down) / h;
            // one-sided slopes disagreeing by more than curvature allows means a kink
            let spread = (forward_diff - backward_diff).abs();
            if spread > 1e-3 * (1.0 + forward_diff.abs().max(backward_diff.abs())) {
                check.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = g.data[c];
            let denom = a.abs().max(numeric.abs()).max(1e-7);
            check.max_rel_err = check.max_rel_err.max((a - numeric).abs() / denom);
            check.checked += 1;
        }
        out.push(check);
    }
    Ok(out)
}
