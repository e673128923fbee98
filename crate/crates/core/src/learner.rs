//! Online logistic regression on the accumulated observations and the
//! posterior-weighted parameter average of the candidate set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::SurveyGrid;
use crate::hypothesis::{Hypothesis, HypothesisSet, ObservationLog, PosteriorState};
use crate::scalar::{dot, sigmoid, Scalar};

/// Label given to the online member when it is appended to a hypothesis set.
pub const ONLINE_LABEL: &str = "h_online";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub l2_strength: f64,
    pub max_iters: usize,
    /// Initial trial step of the backtracking line search.
    pub step_size: f64,
    pub grad_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_strength: 1.0,
            max_iters: 500,
            step_size: 1.0,
            grad_tol: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::Config("l2_strength must be a finite nonnegative real".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(Error::Config("grad_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelSource {
    Averaged,
    Online,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub source: ModelSource,
}

impl<T: Scalar> FittedModel<T> {
    pub fn logit(&self, x: &[T]) -> T {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[T]) -> T {
        sigmoid(self.logit(x))
    }

    pub fn to_hypothesis(&self, label: &str) -> Result<Hypothesis<T>> {
        Hypothesis::new(label, self.weights.clone(), self.bias)
    }

    fn check_finite(self) -> Result<Self> {
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(Error::Domain("fitted model has non-finite parameters".into()));
        }
        Ok(self)
    }
}

/// Parameter average `Σ_k w_k·θ_k`, `Σ_k w_k·b_k`.
pub fn weighted_average_model<T: Scalar>(
    set: &HypothesisSet<T>,
    posterior: &PosteriorState<T>,
) -> Result<FittedModel<T>> {
    if posterior.len() != set.len() {
        return Err(Error::Domain(format!(
            "posterior has {} weights for {} hypotheses",
            posterior.len(),
            set.len()
        )));
    }
    let mut weights = vec![T::zero(); set.feature_dim()];
    let mut bias = T::zero();
    for (h, &w) in set.members().iter().zip(&posterior.weights) {
        if w == T::zero() {
            continue;
        }
        for (acc, &theta) in weights.iter_mut().zip(&h.weights) {
            *acc = *acc + w * theta;
        }
        bias = bias + w * h.bias;
    }
    FittedModel {
        weights,
        bias,
        source: ModelSource::Averaged,
    }
    .check_finite()
}

/// Appends the online model to a copy of `set`.
pub fn fuse_online<T: Scalar>(set: &HypothesisSet<T>, online: &FittedModel<T>) -> Result<HypothesisSet<T>> {
    if online.source != ModelSource::Online {
        return Err(Error::Domain("only an online fit can be fused into the set".into()));
    }
    let mut fused = set.clone();
    fused.push(online.to_hypothesis(ONLINE_LABEL)?)?;
    Ok(fused)
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Regularized cross-entropy over a labeled design:
/// `Σ_i CE(y_i, σ(w·x_i + b)) + (λ/2)‖w‖²`, bias unregularized.
///
/// Parameters are packed as `[w_1, ..., w_D, b]`.
#[derive(Clone, Debug)]
pub struct LogisticObjective<'a, T> {
    rows: Vec<&'a [T]>,
    labels: Vec<bool>,
    l2: T,
    dim: usize,
}

impl<'a, T: Scalar> LogisticObjective<'a, T> {
    pub fn new(rows: Vec<&'a [T]>, labels: Vec<bool>, l2: T) -> Result<Self> {
        let dim = rows
            .first()
            .ok_or_else(|| Error::IllPosed("no observations".into()))?
            .len();
        if rows.len() != labels.len() || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("inconsistent design rows".into()));
        }
        Ok(Self { rows, labels, l2, dim })
    }

    pub fn from_log(log: &ObservationLog, grid: &'a SurveyGrid<T>, l2: T) -> Result<Self> {
        log.check_cells(grid.len())?;
        let rows = log.entries().iter().map(|o| grid.features(o.cell_id)).collect();
        let labels = log.entries().iter().map(|o| o.present).collect();
        Self::new(rows, labels, l2)
    }

    pub fn n_params(&self) -> usize {
        self.dim + 1
    }

    fn logit(&self, params: &[T], row: &[T]) -> T {
        dot(&params[..self.dim], row) + params[self.dim]
    }

    pub fn value(&self, params: &[T]) -> T {
        let ce = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(row, &y)| {
                let z = self.logit(params, row);
                if y {
                    softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum::<T>();
        let norm2 = params[..self.dim].iter().map(|&w| w * w).sum::<T>();
        ce + self.l2 * norm2 / T::of(2.0)
    }

    pub fn gradient(&self, params: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.n_params()];
        for (row, &y) in self.rows.iter().zip(&self.labels) {
            let r = sigmoid(self.logit(params, row)) - if y { T::one() } else { T::zero() };
            for (gj, &xj) in g.iter_mut().zip(row.iter()) {
                *gj = *gj + r * xj;
            }
            g[self.dim] = g[self.dim] + r;
        }
        for (gj, &w) in g.iter_mut().zip(&params[..self.dim]) {
            *gj = *gj + self.l2 * w;
        }
        g
    }
}

/// Diagnostics from one logistic fit.
#[derive(Clone, Debug)]
pub struct FitReport<T> {
    pub model: FittedModel<T>,
    pub iterations: usize,
    pub grad_inf_norm: T,
    /// Objective at the start point and after every accepted step.
    pub objective_trace: Vec<T>,
}

/// Fits `h_online` by full-batch gradient descent with Armijo backtracking.
pub fn fit_logistic<T: Scalar>(
    log: &ObservationLog,
    grid: &SurveyGrid<T>,
    cfg: &TrainConfig,
) -> Result<FittedModel<T>> {
    fit_logistic_report(log, grid, cfg).map(|r| r.model)
}

pub fn fit_logistic_report<T: Scalar>(
    log: &ObservationLog,
    grid: &SurveyGrid<T>,
    cfg: &TrainConfig,
) -> Result<FitReport<T>> {
    cfg.validate()?;
    if !log.has_both_classes() {
        return Err(Error::IllPosed(format!(
            "observations need both classes, got {} present / {} absent",
            log.n_present(),
            log.n_absent()
        )));
    }
    let objective = LogisticObjective::from_log(log, grid, T::of(cfg.l2_strength))?;
    minimize(&objective, cfg)
}

pub(crate) fn minimize<T: Scalar>(objective: &LogisticObjective<'_, T>, cfg: &TrainConfig) -> Result<FitReport<T>> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 60;

    let mut params = vec![T::zero(); objective.n_params()];
    let mut f = objective.value(&params);
    let mut trace = vec![f];
    let mut step = T::of(cfg.step_size);
    let mut g = objective.gradient(&params);
    let mut gnorm = inf_norm(&g);
    let mut iterations = 0;
    let tol = T::of(cfg.grad_tol);
    let mut trial = vec![T::zero(); params.len()];

    while iterations < cfg.max_iters && gnorm > tol {
        let g2 = g.iter().map(|&v| v * v).sum::<T>();
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for ((t, &p), &gj) in trial.iter_mut().zip(&params).zip(&g) {
                *t = p - step * gj;
            }
            let ft = objective.value(&trial);
            if ft <= f - T::of(ARMIJO) * step * g2 {
                std::mem::swap(&mut params, &mut trial);
                f = ft;
                accepted = true;
                break;
            }
            step = step / T::of(2.0);
        }
        if !accepted {
            // no decrease representable at this precision
            break;
        }
        iterations += 1;
        trace.push(f);
        step = step * T::of(2.0);
        g = objective.gradient(&params);
        gnorm = inf_norm(&g);
    }

    let dim = params.len() - 1;
    let bias = params[dim];
    params.truncate(dim);
    let model = FittedModel {
        weights: params,
        bias,
        source: ModelSource::Online,
    }
    .check_finite()?;
    Ok(FitReport {
        model,
        iterations,
        grad_inf_norm: gnorm,
        objective_trace: trace,
    })
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}
