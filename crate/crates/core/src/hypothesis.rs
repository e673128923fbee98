//! Candidate range models and the posterior over them.
//!
//! Each candidate is a linear classifier `h(x) = σ(w·x + b)` over the shared
//! feature space. Under a uniform prior the posterior weight of member `k` is
//! its normalized likelihood on the observations gathered so far, computed in
//! log space.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{write_row, SurveyGrid};
use crate::scalar::{dot, log_sum_exp, sigmoid, Scalar};
use crate::textio::{parse_real, read_lines};

/// Lower/upper clamp applied to each matched probability before taking logs.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub label: String,
}

impl<T: Scalar> Hypothesis<T> {
    pub fn new(label: impl Into<String>, weights: Vec<T>, bias: T) -> Result<Self> {
        let label = label.into();
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::Domain(format!("hypothesis `{label}` has non-finite parameters")));
        }
        Ok(Self { weights, bias, label })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[T]) -> Result<T> {
        if x.len() != self.weights.len() {
            return Err(Error::Domain(format!(
                "feature vector has {} entries, hypothesis `{}` expects {}",
                x.len(),
                self.label,
                self.weights.len()
            )));
        }
        Ok(dot(&self.weights, x) + self.bias)
    }
}

/// `σ(w·x + b)`.
pub fn predict<T: Scalar>(h: &Hypothesis<T>, x: &[T]) -> Result<T> {
    h.logit(x).map(sigmoid)
}

#[derive(Clone, Debug)]
pub struct HypothesisSet<T> {
    members: Vec<Hypothesis<T>>,
    feature_dim: usize,
}

impl<T: Scalar> HypothesisSet<T> {
    pub fn new(members: Vec<Hypothesis<T>>) -> Result<Self> {
        let feature_dim = members
            .first()
            .ok_or_else(|| Error::Domain("hypothesis set must be non-empty".into()))?
            .dim();
        if let Some(h) = members.iter().find(|h| h.dim() != feature_dim) {
            return Err(Error::Domain(format!(
                "hypothesis `{}` has dimension {}, expected {feature_dim}",
                h.label,
                h.dim()
            )));
        }
        Ok(Self { members, feature_dim })
    }

    pub fn members(&self) -> &[Hypothesis<T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// New set holding the members at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let members = indices
            .iter()
            .map(|&i| {
                self.members
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Domain(format!("hypothesis index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub(crate) fn push(&mut self, h: Hypothesis<T>) -> Result<()> {
        if h.dim() != self.feature_dim {
            return Err(Error::Domain(format!(
                "hypothesis `{}` has dimension {}, set expects {}",
                h.label,
                h.dim(),
                self.feature_dim
            )));
        }
        self.members.push(h);
        Ok(())
    }

    /// Member probabilities over every grid cell, one row per member.
    pub fn prediction_table(&self, grid: &SurveyGrid<T>) -> Result<PredictionTable<T>> {
        if grid.feature_dim() != self.feature_dim {
            return Err(Error::Domain(format!(
                "grid feature dimension {} does not match hypothesis dimension {}",
                grid.feature_dim(),
                self.feature_dim
            )));
        }
        let rows = self
            .members
            .par_iter()
            .map(|h| model_predictions(&h.weights, h.bias, grid))
            .collect();
        Ok(PredictionTable { rows })
    }

    /// Reads `label,w_1,...,w_D,b` rows. With `zero_bias` the trailing bias
    /// column is read but replaced by 0.
    pub fn load(path: &Path, zero_bias: bool) -> Result<Self> {
        let mut members = Vec::new();
        let mut width = None;
        for (lineno, line) in read_lines(path)? {
            let mut fields = line.split(',');
            let label = fields.next().unwrap_or_default().trim().to_string();
            if label.is_empty() {
                return Err(Error::parse(path, lineno, "missing hypothesis label"));
            }
            let vals = fields
                .map(|t| parse_real(path, lineno, t))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() < 2 {
                return Err(Error::parse(path, lineno, "expected weights followed by a bias"));
            }
            if *width.get_or_insert(vals.len()) != vals.len() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {} reals, found {}", width.unwrap(), vals.len()),
                ));
            }
            let (w, b) = vals.split_at(vals.len() - 1);
            let bias = if zero_bias { T::zero() } else { T::of(b[0]) };
            members.push(Hypothesis::new(label, w.iter().map(|&v| T::of(v)).collect(), bias)?);
        }
        Self::new(members)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for h in &self.members {
            write!(w, "{},", h.label)?;
            let mut row = h.weights.clone();
            row.push(h.bias);
            write_row(&mut w, &row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `σ(w·x_c + b)` for every cell `c`.
pub fn model_predictions<T: Scalar>(weights: &[T], bias: T, grid: &SurveyGrid<T>) -> Vec<T> {
    model_logits(weights, bias, grid).into_iter().map(sigmoid).collect()
}

pub fn model_logits<T: Scalar>(weights: &[T], bias: T, grid: &SurveyGrid<T>) -> Vec<T> {
    grid.cells().iter().map(|c| dot(weights, &c.features) + bias).collect()
}

/// Precomputed member probabilities, `rows[k][cell]`.
#[derive(Clone, Debug)]
pub struct PredictionTable<T> {
    pub rows: Vec<Vec<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    pub cell_id: usize,
    pub present: bool,
}

impl Observation {
    pub fn new(cell_id: usize, present: bool) -> Self {
        Self { cell_id, present }
    }

    pub fn label(&self) -> u8 {
        u8::from(self.present)
    }
}

/// Accumulated labeled set; each cell appears at most once.
#[derive(Clone, Debug, Default)]
pub struct ObservationLog {
    entries: Vec<Observation>,
    sampled: HashSet<usize>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = Observation>) -> Result<Self> {
        let mut log = Self::new();
        for o in entries {
            log.push(o)?;
        }
        Ok(log)
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if !self.sampled.insert(obs.cell_id) {
            return Err(Error::Domain(format!("cell {} already sampled", obs.cell_id)));
        }
        self.entries.push(obs);
        Ok(())
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, cell_id: usize) -> bool {
        self.sampled.contains(&cell_id)
    }

    pub fn n_present(&self) -> usize {
        self.entries.iter().filter(|o| o.present).count()
    }

    pub fn n_absent(&self) -> usize {
        self.len() - self.n_present()
    }

    pub fn has_both_classes(&self) -> bool {
        self.n_present() > 0 && self.n_absent() > 0
    }

    pub(crate) fn check_cells(&self, n_cells: usize) -> Result<()> {
        match self.entries.iter().find(|o| o.cell_id >= n_cells) {
            Some(o) => Err(Error::Domain(format!(
                "observation cell {} outside grid of {n_cells} cells",
                o.cell_id
            ))),
            None => Ok(()),
        }
    }
}

/// Clamped log-probability that a model predicting `p` assigns to `present`.
#[inline]
pub fn log_match<T: Scalar>(p: T, present: bool) -> T {
    let eps = T::of(PROB_CLAMP);
    let m = if present { p } else { T::one() - p };
    m.max(eps).min(T::one() - eps).ln()
}

/// `Σ log clamp(y·h(x) + (1−y)(1−h(x)))` over the log; 0 when empty.
pub fn log_likelihood<T: Scalar>(h: &Hypothesis<T>, log: &ObservationLog, grid: &SurveyGrid<T>) -> Result<T> {
    log.check_cells(grid.len())?;
    log.entries().iter().try_fold(T::zero(), |acc, o| {
        Ok(acc + log_match(predict(h, grid.features(o.cell_id))?, o.present))
    })
}

/// Per-member log-likelihoods and their normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorState<T> {
    pub log_likelihoods: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> PosteriorState<T> {
    /// `w_k = exp(LL_k − logsumexp(LL))`.
    pub fn from_log_likelihoods(log_likelihoods: Vec<T>) -> Self {
        let lse = log_sum_exp(&log_likelihoods);
        let weights = log_likelihoods.iter().map(|&ll| (ll - lse).exp()).collect();
        Self {
            log_likelihoods,
            weights,
        }
    }

    pub fn uniform(k: usize) -> Self {
        Self::from_log_likelihoods(vec![T::zero(); k])
    }

    /// Uniform weights regardless of evidence; log-likelihoods are kept for
    /// diagnostics.
    pub fn flattened(&self) -> Self {
        let k = T::of(self.weights.len() as f64);
        Self {
            log_likelihoods: self.log_likelihoods.clone(),
            weights: vec![T::one() / k; self.weights.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn argmax(&self) -> Option<usize> {
        self.weights
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, T)>, (i, &w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((i, w)),
            })
            .map(|(i, _)| i)
    }
}

/// Posterior over `set` given `log`, recomputed from scratch.
pub fn update_posterior<T: Scalar>(
    set: &HypothesisSet<T>,
    log: &ObservationLog,
    grid: &SurveyGrid<T>,
) -> Result<PosteriorState<T>> {
    let lls = set
        .members()
        .iter()
        .map(|h| log_likelihood(h, log, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorState::from_log_likelihoods(lls))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    #[default]
    Soft,
    Hard,
}

#[inline]
pub(crate) fn vote<T: Scalar>(p: T, mode: VoteMode) -> T {
    match mode {
        VoteMode::Soft => p,
        VoteMode::Hard if p > T::of(0.5) => T::one(),
        VoteMode::Hard => T::zero(),
    }
}

/// Posterior-weighted committee mean: `Σ_k w_k·h_k(x)` (soft) or
/// `Σ_k w_k·[h_k(x) > 0.5]` (hard).
pub fn committee_prediction<T: Scalar>(
    set: &HypothesisSet<T>,
    posterior: &PosteriorState<T>,
    x: &[T],
    mode: VoteMode,
) -> Result<T> {
    if posterior.len() != set.len() {
        return Err(Error::Domain(format!(
            "posterior has {} weights for {} hypotheses",
            posterior.len(),
            set.len()
        )));
    }
    set.members()
        .iter()
        .zip(&posterior.weights)
        .try_fold(T::zero(), |acc, (h, &w)| Ok(acc + w * vote(predict(h, x)?, mode)))
}

/// Committee of members whose per-cell probabilities are already known,
/// e.g. a cached [`PredictionTable`] plus the online model's row.
#[derive(Clone, Debug)]
pub struct Committee<'a, T> {
    rows: Vec<&'a [T]>,
}

impl<'a, T: Scalar> Committee<'a, T> {
    pub fn new(rows: Vec<&'a [T]>) -> Result<Self> {
        let n = rows
            .first()
            .ok_or_else(|| Error::Domain("committee must be non-empty".into()))?
            .len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("committee rows differ in length".into()));
        }
        Ok(Self { rows })
    }

    pub fn from_table(table: &'a PredictionTable<T>) -> Result<Self> {
        Self::new(table.rows.iter().map(Vec::as_slice).collect())
    }

    pub fn with_member(mut self, row: &'a [T]) -> Result<Self> {
        if row.len() != self.n_cells() {
            return Err(Error::Domain("committee rows differ in length".into()));
        }
        self.rows.push(row);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_cells(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, k: usize) -> &[T] {
        self.rows[k]
    }

    pub fn posterior(&self, log: &ObservationLog) -> Result<PosteriorState<T>> {
        log.check_cells(self.n_cells())?;
        let lls = self
            .rows
            .iter()
            .map(|row| {
                log.entries()
                    .iter()
                    .fold(T::zero(), |acc, o| acc + log_match(row[o.cell_id], o.present))
            })
            .collect();
        Ok(PosteriorState::from_log_likelihoods(lls))
    }

    /// Committee mean at every cell.
    pub fn scores(&self, posterior: &PosteriorState<T>, mode: VoteMode) -> Result<Vec<T>> {
        if posterior.len() != self.len() {
            return Err(Error::Domain(format!(
                "posterior has {} weights for {} committee members",
                posterior.len(),
                self.len()
            )));
        }
        let mut out = vec![T::zero(); self.n_cells()];
        for (row, &w) in self.rows.iter().zip(&posterior.weights) {
            if w == T::zero() {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(row.iter()) {
                *o = *o + w * vote(p, mode);
            }
        }
        Ok(out)
    }
}
