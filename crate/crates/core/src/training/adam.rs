use crate::model::ModelState;
use crate::{Error, Real, Result};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: ModelState<F>,
    pub v: ModelState<F>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &ModelState<F>, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            clip_norm: DEFAULT_CLIP,
        }
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm<F: Real>(grads: &ModelState<F>) -> f64 {
    grads.tensors().iter().flat_map(|t| t.data.iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
}

/// Clips the gradients to the global norm limit, then applies one Adam update
/// with bias correction. Returns the pre-clipping norm.
pub fn adam_step<F: Real>(opt: &mut OptimizerState<F>, params: &mut ModelState<F>, grads: &ModelState<F>) -> Result<f64> {
    if !(opt.clip_norm > 0.0) {
        return Err(Error::Config(format!("clip norm must be positive, got {}", opt.clip_norm)));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite gradient norm".into()));
    }
    let scale = if norm > opt.clip_norm { opt.clip_norm / norm } else { 1.0 };
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (opt.beta1, opt.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let g_all = grads.tensors();
    let mut m_all = opt.m.tensors_mut();
    let mut v_all = opt.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&g_all).zip(&mut m_all).zip(&mut v_all) {
        for i in 0..p.data.len() {
            let gi = g.data[i].as_f64() * scale;
            let mi = b1 * m.data[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v.data[i].as_f64() + (1.0 - b2) * gi * gi;
            m.data[i] = F::of(mi);
            v.data[i] = F::of(vi);
            let update = opt.lr * (mi / c1) / ((vi / c2).sqrt() + opt.eps);
            p.data[i] = F::of(p.data[i].as_f64() - update);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ForwardConfig;
    use rand::SeedableRng;

    fn small() -> ModelState<f64> {
        let cfg = ForwardConfig { window: 2, horizon: 2, node_dim: 2, graph_dim: 2, hidden: 3, ffn_layers: 1, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        ModelState::init(&cfg, 3, &mut rng).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = small();
        let before = p.clone();
        let mut opt = OptimizerState::new(&p, DEFAULT_LR);
        adam_step(&mut opt, &mut p, &before.zeros_like()).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn single_step_by_hand() {
        let mut p = small();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.temp_b[0] = 0.5;
        let mut opt = OptimizerState::new(&p, 0.01);
        // pretend one earlier step left these moments
        opt.step = 1;
        opt.m.temp_b[0] = 0.2;
        opt.v.temp_b[0] = 0.04;
        adam_step(&mut opt, &mut p, &g).unwrap();
        let m = 0.9 * 0.2 + 0.1 * 0.5;
        let v = 0.999 * 0.04 + 0.001 * 0.25;
        let mhat = m / (1.0 - 0.9f64.powi(2));
        let vhat = v / (1.0 - 0.999f64.powi(2));
        let expected = before.temp_b[0] - 0.01 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p.temp_b[0] - expected).abs() < 1e-15);
        assert!((opt.m.temp_b[0] - m).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut p = small();
        let mut g = p.zeros_like();
        g.temp_b.fill(0.3);
        g.temp_b[1] = -2.0;
        let mut opt = OptimizerState::new(&p, 1e-3);
        for _ in 0..200 {
            let before = p.temp_b.clone();
            adam_step(&mut opt, &mut p, &g).unwrap();
            let step = &before - &p.temp_b;
            assert!((step[0] - 1e-3).abs() < 1e-6);
            assert!((step[1] + 1e-3).abs() < 1e-6);
        }
    }

    #[test]
    fn clipping_scales_to_limit() {
        let mut p = small();
        let mut g = p.zeros_like();
        g.temp_b[0] = 30.0;
        g.temp_b[1] = 40.0;
        let mut opt = OptimizerState::new(&p, 1e-3);
        let norm = adam_step(&mut opt, &mut p, &g).unwrap();
        assert!((norm - 50.0).abs() < 1e-12);
        assert!((opt.m.temp_b[0] - 0.1 * 3.0).abs() < 1e-12);
        assert!((opt.m.temp_b[1] - 0.1 * 4.0).abs() < 1e-12);
    }
}
