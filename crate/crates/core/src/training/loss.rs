use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::graphs::MaskPlan;
use crate::{Error, Real, Result};

/// Elementwise penalty of both loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    L1,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Config(format!("loss {s:?}: expected l1 or mse"))),
        }
    }
}

impl LossKind {
    fn value(self, r: f64) -> f64 {
        match self {
            LossKind::L1 => r.abs(),
            LossKind::Mse => r * r,
        }
    }

    /// Derivative in the residual; the L1 subgradient at 0 is 0.
    fn slope(self, r: f64) -> f64 {
        match self {
            LossKind::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Mse => 2.0 * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub recon_loss: f64,
    pub pred_loss: f64,
    pub total: f64,
    pub n_masked_entries: usize,
}

/// Ground truth for one window. Rows are nodes; columns are time-major
/// (`τ·d_x + feature`). Observation masks are per node and step.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a, F> {
    pub history: ArrayView2<'a, F>,
    pub history_observed: ArrayView2<'a, bool>,
    pub future: ArrayView2<'a, F>,
    pub future_observed: ArrayView2<'a, bool>,
}

/// Reconstruction plus forecast loss with gradients `(d recon, d pred)`.
///
/// The reconstruction term averages over the masked nodes' observed history
/// entries, normalized per step by that step's count and then averaged over
/// steps that have any such entry. The forecast term averages over every
/// observed future entry.
pub fn joint_loss<F: Real>(
    kind: LossKind,
    recon: &Array2<F>,
    pred: &Array2<F>,
    targets: &Targets<'_, F>,
    plan: &MaskPlan,
) -> Result<(LossReport, Array2<F>, Array2<F>)> {
    let (n, wdx) = recon.dim();
    let w = targets.history_observed.ncols();
    let h = targets.future_observed.ncols();
    if w == 0 || h == 0 || wdx % w != 0 || targets.history.dim() != (n, wdx) || targets.history_observed.nrows() != n {
        return Err(Error::Shape("reconstruction and history targets disagree".into()));
    }
    let dx = wdx / w;
    if pred.dim() != (n, h * dx) || targets.future.dim() != pred.dim() || targets.future_observed.nrows() != n {
        return Err(Error::Shape("forecast and future targets disagree".into()));
    }

    let masked: Vec<usize> = plan.masked_node_ids.iter().copied().filter(|&i| i < n).collect();
    let mut drecon = Array2::<F>::zeros((n, wdx));
    let mut step_terms = Vec::new();
    let mut n_masked_entries = 0;
    for tau in 0..w {
        let nodes: Vec<usize> = masked.iter().copied().filter(|&i| targets.history_observed[[i, tau]]).collect();
        if nodes.is_empty() {
            continue;
        }
        let count = (nodes.len() * dx) as f64;
        n_masked_entries += nodes.len() * dx;
        let mut sum = 0.0;
        for &i in &nodes {
            for d in 0..dx {
                let c = tau * dx + d;
                let r = recon[[i, c]].as_f64() - targets.history[[i, c]].as_f64();
                sum += kind.value(r);
            }
        }
        step_terms.push((tau, nodes, count, sum / count));
    }
    let recon_loss = if step_terms.is_empty() {
        0.0
    } else {
        let n_steps = step_terms.len() as f64;
        for (tau, nodes, count, _) in &step_terms {
            for &i in nodes {
                for d in 0..dx {
                    let c = tau * dx + d;
                    let r = recon[[i, c]].as_f64() - targets.history[[i, c]].as_f64();
                    drecon[[i, c]] = F::of(kind.slope(r) / (count * n_steps));
                }
            }
        }
        step_terms.iter().map(|t| t.3).sum::<f64>() / n_steps
    };

    let mut dpred = Array2::<F>::zeros(pred.dim());
    let n_obs = targets.future_observed.iter().filter(|&&o| o).count() * dx;
    let mut pred_loss = 0.0;
    if n_obs > 0 {
        let inv = 1.0 / n_obs as f64;
        for i in 0..n {
            for tau in 0..h {
                if !targets.future_observed[[i, tau]] {
                    continue;
                }
                for d in 0..dx {
                    let c = tau * dx + d;
                    let r = pred[[i, c]].as_f64() - targets.future[[i, c]].as_f64();
                    pred_loss += kind.value(r);
                    dpred[[i, c]] = F::of(kind.slope(r) * inv);
                }
            }
        }
        pred_loss *= inv;
    }

    let report = LossReport { recon_loss, pred_loss, total: recon_loss + pred_loss, n_masked_entries };
    Ok((report, drecon, dpred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::BTreeSet;

    fn plan(nodes: &[usize]) -> MaskPlan {
        MaskPlan { masked_node_ids: nodes.iter().copied().collect::<BTreeSet<_>>(), window: (0, 2) }
    }

    #[test]
    fn exact_prediction_is_zero() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let obs = Array2::from_elem((2, 2), true);
        let t = Targets { history: x.view(), history_observed: obs.view(), future: x.view(), future_observed: obs.view() };
        let (r, dr, dp) = joint_loss(LossKind::L1, &x, &x, &t, &plan(&[0])).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(dr.iter().chain(dp.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_two_nodes_two_steps() {
        // node 0 masked; its step-1 history entry is unobserved
        let hist = array![[1.0, 2.0], [0.0, 0.0]];
        let recon = array![[1.5, 9.0], [7.0, 7.0]];
        let hobs = array![[true, false], [true, true]];
        let fut = array![[0.0, 1.0], [2.0, 3.0]];
        let pred = array![[1.0, 1.0], [2.0, 0.0]];
        let fobs = array![[true, true], [true, false]];
        let t = Targets { history: hist.view(), history_observed: hobs.view(), future: fut.view(), future_observed: fobs.view() };
        let (r, dr, dp) = joint_loss(LossKind::L1, &recon, &pred, &t, &plan(&[0])).unwrap();
        assert_eq!(r.n_masked_entries, 1);
        assert!((r.recon_loss - 0.5).abs() < 1e-15);
        // |1-0| + |1-1| + |2-2| over three observed entries
        assert!((r.pred_loss - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dr, array![[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(dp, array![[1.0 / 3.0, 0.0], [0.0, 0.0]]);

        // both nodes masked: step 0 averages two entries, step 1 has one
        let (r, dr, _) = joint_loss(LossKind::L1, &recon, &pred, &t, &plan(&[0, 1])).unwrap();
        let expected = ((0.5 + 7.0) / 2.0 + 7.0) / 2.0;
        assert!((r.recon_loss - expected).abs() < 1e-15);
        assert_eq!(dr, array![[0.25, 0.0], [0.25, 0.5]]);
    }

    #[test]
    fn no_masked_nodes_means_pred_only() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y = array![[0.0, 0.0], [0.0, 0.0]];
        let obs = Array2::from_elem((2, 2), true);
        let t = Targets { history: x.view(), history_observed: obs.view(), future: x.view(), future_observed: obs.view() };
        let (r, dr, _) = joint_loss(LossKind::Mse, &y, &y, &t, &plan(&[])).unwrap();
        assert_eq!(r.recon_loss, 0.0);
        assert_eq!(r.total, r.pred_loss);
        assert!((r.pred_loss - 7.5).abs() < 1e-12);
        assert!(dr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("mse".parse::<LossKind>().unwrap(), LossKind::Mse);
        assert!("huber".parse::<LossKind>().is_err());
    }
}
