use std::ops::Range;

use ndarray::{Array1, Array2};

use super::loss::Targets;
use crate::ingest::DemandTensor;
use crate::model::Window;
use crate::{Error, Real, Result};

/// Owned ground truth for one window; see [`Targets`].
#[derive(Debug, Clone)]
pub struct WindowTargets<F> {
    pub history: Array2<F>,
    pub history_observed: Array2<bool>,
    pub future: Array2<F>,
    pub future_observed: Array2<bool>,
}

impl<F: Real> WindowTargets<F> {
    pub fn view(&self) -> Targets<'_, F> {
        Targets {
            history: self.history.view(),
            history_observed: self.history_observed.view(),
            future: self.future.view(),
            future_observed: self.future_observed.view(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WindowSample<F> {
    pub input: Window<F>,
    pub targets: WindowTargets<F>,
}

/// Start indices of every window of `window + horizon` steps lying inside `range`.
pub fn window_starts(range: Range<usize>, window: usize, horizon: usize) -> Vec<usize> {
    let span = window + horizon;
    if range.end < range.start + span {
        return Vec::new();
    }
    (range.start..=range.end - span).collect()
}

/// Cuts the window starting at `start`. Nodes for which `hidden` is true get
/// all-zero input histories; unobserved entries are zero as well.
pub fn build_window<F: Real>(
    demand: &DemandTensor,
    covariates: &Array2<f64>,
    start: usize,
    window: usize,
    horizon: usize,
    hidden: impl Fn(usize) -> bool,
) -> Result<WindowSample<F>> {
    let (n, dx, t) = demand.values.dim();
    if start + window + horizon > t {
        return Err(Error::Shape(format!("window at {start} runs past the series end {t}")));
    }
    if covariates.nrows() != t {
        return Err(Error::Shape(format!("{} covariate rows for {t} steps", covariates.nrows())));
    }
    let du = covariates.ncols();
    let cut = |from: usize, len: usize| {
        let mut values = Array2::<F>::zeros((n, len * dx));
        let mut observed = Array2::from_elem((n, len), false);
        for i in 0..n {
            for tau in 0..len {
                let ts = from + tau;
                if demand.mask[[i, ts]] {
                    observed[[i, tau]] = true;
                    for d in 0..dx {
                        values[[i, tau * dx + d]] = F::of(demand.values[[i, d, ts]]);
                    }
                }
            }
        }
        (values, observed)
    };
    let (history, history_observed) = cut(start, window);
    let (future, future_observed) = cut(start + window, horizon);
    let mut input_history = history.clone();
    for i in (0..n).filter(|&i| hidden(i)) {
        input_history.row_mut(i).fill(F::zero());
    }
    let flat = |from: usize, len: usize| {
        Array1::from_shape_fn(len * du, |k| F::of(covariates[[from + k / du, k % du]]))
    };
    Ok(WindowSample {
        input: Window { history: input_history, cov_history: flat(start, window), cov_future: flat(start + window, horizon) },
        targets: WindowTargets { history, history_observed, future, future_observed },
    })
}
