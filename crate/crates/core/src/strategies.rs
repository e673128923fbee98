//! Query-selection rules: given the current observations, pick the next cell.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::SurveyGrid;
use crate::hypothesis::{
    committee_prediction, model_logits, Committee, HypothesisSet, ObservationLog, PosteriorState, PredictionTable,
    VoteMode,
};
use crate::learner::{fit_logistic, FittedModel, ModelSource, TrainConfig};
use crate::scalar::{sigmoid, Scalar};

/// RNG owned by a single run.
pub type RunRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Posterior-weighted average of the candidate set.
    WA,
    /// Logistic regression fit on the observations only.
    LR,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Selector {
    Hss,
    Uncertain,
    Random,
    Positive,
    Emc,
    Qbc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StrategySpec {
    pub family: Family,
    pub selector: Selector,
    pub plus_online: bool,
    pub vote_mode: VoteMode,
}

impl StrategySpec {
    pub fn new(family: Family, selector: Selector, plus_online: bool) -> Result<Self> {
        let spec = Self {
            family,
            selector,
            plus_online,
            vote_mode: VoteMode::Soft,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_vote_mode(self, vote_mode: VoteMode) -> Self {
        Self { vote_mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.family, self.selector, self.plus_online) {
            (Family::WA, Selector::Emc | Selector::Qbc, _) => Err(Error::Config(format!(
                "{}: {:?} selection is only defined for the LR family",
                self.name(),
                self.selector
            ))),
            (Family::LR, _, true) => Err(Error::Config(format!(
                "{}: the online extension applies to WA strategies only",
                self.name()
            ))),
            _ => Ok(()),
        }
    }

    /// Canonical name, e.g. `WA_HSS+` or `LR_QBC`.
    pub fn name(&self) -> String {
        let fam = match self.family {
            Family::WA => "WA",
            Family::LR => "LR",
        };
        let sel = match self.selector {
            Selector::Hss => "HSS",
            Selector::Uncertain => "uncertain",
            Selector::Random => "random",
            Selector::Positive => "positive",
            Selector::Emc => "EMC",
            Selector::Qbc => "QBC",
        };
        format!("{fam}_{sel}{}", if self.plus_online { "+" } else { "" })
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (body, plus) = match s.strip_suffix('+') {
            Some(b) => (b, true),
            None => (s, false),
        };
        let (fam, sel) = body
            .split_once('_')
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))?;
        let family = match fam {
            "WA" => Family::WA,
            "LR" => Family::LR,
            _ => return Err(Error::Config(format!("unknown strategy family in `{s}`"))),
        };
        let selector = match sel {
            "HSS" => Selector::Hss,
            "uncertain" => Selector::Uncertain,
            "random" => Selector::Random,
            "positive" => Selector::Positive,
            "EMC" => Selector::Emc,
            "QBC" => Selector::Qbc,
            _ => return Err(Error::Config(format!("unknown selector in `{s}`"))),
        };
        Self::new(family, selector, plus)
    }
}

/// How committee members are weighted in the averaged model and in HSS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Posterior,
    /// Ablation: uniform weights regardless of the observations.
    Uniform,
}

/// Which model a `+` strategy reports for evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineReport {
    /// Weighted average over the candidate set plus `h_online`.
    #[default]
    Average,
    /// `h_online` alone.
    Online,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StrategyOptions {
    pub weighting: Weighting,
    pub online_report: OnlineReport,
}

/// Everything a selector may look at for one query.
pub struct QueryContext<'a, T> {
    pub grid: &'a SurveyGrid<T>,
    pub set: &'a HypothesisSet<T>,
    /// Member predictions of `set` over `grid`.
    pub table: &'a PredictionTable<T>,
    pub log: &'a ObservationLog,
    /// Cells outside the valid region are never queried.
    pub valid: Option<&'a [bool]>,
    pub train: &'a TrainConfig,
    pub options: StrategyOptions,
    pub rng: &'a mut RunRng,
}

impl<T: Scalar> QueryContext<'_, T> {
    pub fn is_candidate(&self, cell: usize) -> bool {
        self.valid.is_none_or(|v| v[cell]) && !self.log.contains(cell)
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.grid.len()).filter(|&c| self.is_candidate(c))
    }
}

/// Lowest-scoring candidate; ties go to the lowest cell id.
fn argmin_candidates<T: Scalar>(ctx: &QueryContext<'_, T>, mut score: impl FnMut(usize) -> T) -> Result<usize> {
    let mut best: Option<(usize, T)> = None;
    for c in ctx.candidates() {
        let s = score(c);
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::Exhausted)
}

fn argmax_candidates<T: Scalar>(ctx: &QueryContext<'_, T>, mut score: impl FnMut(usize) -> T) -> Result<usize> {
    argmin_candidates(ctx, |c| -score(c))
}

/// Cell whose predicted presence is closest to 0.5.
///
/// Ordered by `|logit|`, which ranks cells exactly as `|0.5 − σ(logit)|` does
/// without the rounding that saturated sigmoids introduce.
pub fn select_uncertain<T: Scalar>(model: &FittedModel<T>, ctx: &QueryContext<'_, T>) -> Result<usize> {
    argmin_candidates(ctx, |c| model.logit(ctx.grid.features(c)).abs())
}

/// Uncertainty sampling on precomputed per-cell logits.
pub fn select_uncertain_logits<T: Scalar>(logits: &[T], ctx: &QueryContext<'_, T>) -> Result<usize> {
    argmin_candidates(ctx, |c| logits[c].abs())
}

/// Cell where the posterior-weighted committee mean is closest to 0.5.
pub fn select_hss<T: Scalar>(
    set: &HypothesisSet<T>,
    posterior: &PosteriorState<T>,
    ctx: &QueryContext<'_, T>,
    vote_mode: VoteMode,
) -> Result<usize> {
    if posterior.len() != set.len() {
        return Err(Error::Domain("posterior does not match hypothesis set".into()));
    }
    let half = T::of(0.5);
    let mut err = None;
    let pick = argmin_candidates(ctx, |c| {
        match committee_prediction(set, posterior, ctx.grid.features(c), vote_mode) {
            Ok(v) => (half - v).abs(),
            Err(e) => {
                err.get_or_insert(e);
                T::nan()
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => pick,
    }
}

/// HSS over a committee with cached per-cell predictions.
pub fn select_hss_committee<T: Scalar>(
    committee: &Committee<'_, T>,
    posterior: &PosteriorState<T>,
    ctx: &QueryContext<'_, T>,
    vote_mode: VoteMode,
) -> Result<usize> {
    let scores = committee.scores(posterior, vote_mode)?;
    let half = T::of(0.5);
    argmin_candidates(ctx, |c| (half - scores[c]).abs())
}

/// Uniform draw over the unsampled valid cells.
pub fn select_random<T: Scalar>(ctx: &mut QueryContext<'_, T>) -> Result<usize> {
    let cands: Vec<usize> = ctx.candidates().collect();
    if cands.is_empty() {
        return Err(Error::Exhausted);
    }
    let i = ctx.rng.random_range(0..cands.len());
    Ok(cands[i])
}

/// Cell with the highest predicted presence (ordered by logit).
pub fn select_positive<T: Scalar>(model: &FittedModel<T>, ctx: &QueryContext<'_, T>) -> Result<usize> {
    argmax_candidates(ctx, |c| model.logit(ctx.grid.features(c)))
}

pub fn select_positive_logits<T: Scalar>(logits: &[T], ctx: &QueryContext<'_, T>) -> Result<usize> {
    argmax_candidates(ctx, |c| logits[c])
}

/// Expected L2 length of the cross-entropy gradient at `x` with labels drawn
/// from the model itself: `2·p·(1−p)·‖[x, 1]‖₂`.
pub fn expected_gradient_length<T: Scalar>(p: T, x: &[T]) -> T {
    let norm = (x.iter().map(|&v| v * v).sum::<T>() + T::one()).sqrt();
    T::of(2.0) * p * (T::one() - p) * norm
}

/// Expected-model-change sampling.
pub fn select_emc<T: Scalar>(model: &FittedModel<T>, ctx: &QueryContext<'_, T>) -> Result<usize> {
    argmax_candidates(ctx, |c| {
        let x = ctx.grid.features(c);
        expected_gradient_length(model.predict(x), x)
    })
}

/// Leave-one-out committee: one refit per dropped observation, skipping
/// subsets that lose a class.
pub fn qbc_committee<T: Scalar>(
    log: &ObservationLog,
    grid: &SurveyGrid<T>,
    cfg: &TrainConfig,
) -> Result<Vec<FittedModel<T>>> {
    let entries = log.entries();
    let mut committee = Vec::new();
    for skip in 0..entries.len() {
        let subset =
            ObservationLog::from_entries(entries.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &o)| o))?;
        if !subset.has_both_classes() {
            continue;
        }
        committee.push(fit_logistic(&subset, grid, cfg)?);
    }
    Ok(committee)
}

/// Query by committee over leave-one-out refits, aggregated by the soft mean.
/// With no valid subset, falls back to uncertainty sampling on the full fit.
pub fn select_qbc<T: Scalar>(
    log: &ObservationLog,
    grid: &SurveyGrid<T>,
    cfg: &TrainConfig,
    ctx: &QueryContext<'_, T>,
) -> Result<usize> {
    let committee = qbc_committee(log, grid, cfg)?;
    if committee.is_empty() {
        let full = fit_logistic(log, grid, cfg)?;
        return select_uncertain(&full, ctx);
    }
    let half = T::of(0.5);
    let n = T::of(committee.len() as f64);
    argmin_candidates(ctx, |c| {
        let x = grid.features(c);
        let mean = committee.iter().map(|m| m.predict(x)).sum::<T>() / n;
        (half - mean).abs()
    })
}

/// Models and committee state for one timestep of one strategy.
#[derive(Clone, Debug)]
pub struct StepModel<T> {
    /// Model whose predictions are evaluated at this step.
    pub model: FittedModel<T>,
    /// `model` logits at every cell.
    pub logits: Vec<T>,
    /// `h_online` and its per-cell probabilities, for `+` strategies.
    pub online: Option<(FittedModel<T>, Vec<T>)>,
    /// Weights over the committee (candidate set, then `h_online` if present).
    /// Absent for LR strategies that never consult the candidate set.
    pub posterior: Option<PosteriorState<T>>,
}

impl<T: Scalar> StepModel<T> {
    pub fn build(spec: &StrategySpec, ctx: &QueryContext<'_, T>) -> Result<Self> {
        spec.validate()?;
        match spec.family {
            Family::WA => {
                let online = if spec.plus_online {
                    let m = fit_logistic(ctx.log, ctx.grid, ctx.train)?;
                    let probs: Vec<T> = model_logits(&m.weights, m.bias, ctx.grid)
                        .into_iter()
                        .map(sigmoid)
                        .collect();
                    Some((m, probs))
                } else {
                    None
                };
                let posterior = committee_posterior(ctx, online.as_ref().map(|o| o.1.as_slice()))?;
                let model = match (&online, ctx.options.online_report) {
                    (Some((m, _)), OnlineReport::Online) => m.clone(),
                    _ => average_with_online(ctx.set, online.as_ref().map(|o| &o.0), &posterior)?,
                };
                let logits = model_logits(&model.weights, model.bias, ctx.grid);
                Ok(Self {
                    model,
                    logits,
                    online,
                    posterior: Some(posterior),
                })
            }
            Family::LR => {
                let model = fit_logistic(ctx.log, ctx.grid, ctx.train)?;
                let logits = model_logits(&model.weights, model.bias, ctx.grid);
                let posterior = match spec.selector {
                    Selector::Hss => Some(committee_posterior(ctx, None)?),
                    _ => None,
                };
                Ok(Self {
                    model,
                    logits,
                    online: None,
                    posterior,
                })
            }
        }
    }

    pub fn committee<'a>(&'a self, table: &'a PredictionTable<T>) -> Result<Committee<'a, T>> {
        let c = Committee::from_table(table)?;
        match &self.online {
            Some((_, probs)) => c.with_member(probs),
            None => Ok(c),
        }
    }

    /// Applies the strategy's selector to this step's state.
    pub fn select(&self, spec: &StrategySpec, ctx: &mut QueryContext<'_, T>) -> Result<usize> {
        match spec.selector {
            Selector::Hss => {
                let posterior = self
                    .posterior
                    .as_ref()
                    .ok_or_else(|| Error::Config("HSS needs a committee posterior".into()))?;
                let committee = self.committee(ctx.table)?;
                select_hss_committee(&committee, posterior, ctx, spec.vote_mode)
            }
            Selector::Uncertain => select_uncertain_logits(&self.logits, ctx),
            Selector::Random => select_random(ctx),
            Selector::Positive => select_positive_logits(&self.logits, ctx),
            Selector::Emc => select_emc(&self.model, ctx),
            Selector::Qbc => select_qbc(ctx.log, ctx.grid, ctx.train, ctx),
        }
    }
}

fn committee_posterior<T: Scalar>(ctx: &QueryContext<'_, T>, online_probs: Option<&[T]>) -> Result<PosteriorState<T>> {
    let mut committee = Committee::from_table(ctx.table)?;
    if let Some(row) = online_probs {
        committee = committee.with_member(row)?;
    }
    let post = committee.posterior(ctx.log)?;
    Ok(match ctx.options.weighting {
        Weighting::Posterior => post,
        Weighting::Uniform => post.flattened(),
    })
}

/// Weighted parameter average over `set` followed by an optional extra
/// member, equal to averaging the fused set without materializing it.
pub(crate) fn average_with_online<T: Scalar>(
    set: &HypothesisSet<T>,
    online: Option<&FittedModel<T>>,
    posterior: &PosteriorState<T>,
) -> Result<FittedModel<T>> {
    let k = set.len();
    let expected = k + usize::from(online.is_some());
    if posterior.len() != expected {
        return Err(Error::Domain(format!(
            "posterior has {} weights, expected {expected}",
            posterior.len()
        )));
    }
    let mut weights = vec![T::zero(); set.feature_dim()];
    let mut bias = T::zero();
    let extra = online.map(|m| (m.weights.as_slice(), m.bias));
    let members = set
        .members()
        .iter()
        .map(|h| (h.weights.as_slice(), h.bias))
        .chain(extra);
    for ((theta, b), &w) in members.zip(&posterior.weights) {
        if w == T::zero() {
            continue;
        }
        for (acc, &v) in weights.iter_mut().zip(theta) {
            *acc = *acc + w * v;
        }
        bias = bias + w * b;
    }
    Ok(FittedModel {
        weights,
        bias,
        source: ModelSource::Averaged,
    })
}

/// Builds this step's model and returns the next cell to query.
pub fn next_query<T: Scalar>(spec: &StrategySpec, ctx: &mut QueryContext<'_, T>) -> Result<usize> {
    let step = StepModel::build(spec, ctx)?;
    step.select(spec, ctx)
}
