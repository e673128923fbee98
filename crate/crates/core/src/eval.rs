//! Average precision per species, MAP per timestep, and the normalized
//! area under the MAP curve.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textio::{parse_real, read_lines};

/// AP of `scores` against binary `labels`: the mean, over positives taken in
/// descending-score order, of precision at that positive's rank. Equal scores
/// are ranked in ascending index order.
pub fn average_precision<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::Undefined("average precision needs at least one positive".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps ascending index among equal scores
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Normalized area under a MAP curve: mean of `curve[0..=t]`.
pub fn map_auc(curve: &[f64], t: usize) -> Result<f64> {
    if t >= curve.len() {
        return Err(Error::Domain(format!(
            "timestep {t} beyond curve of length {}",
            curve.len()
        )));
    }
    Ok(curve[..=t].iter().sum::<f64>() / (t + 1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub queried_cell: usize,
    pub label: bool,
    /// AP of the model fit to the observations gathered before this query.
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub strategy: String,
    pub species: String,
    pub species_index: usize,
    pub seed: usize,
    pub records: Vec<StepRecord>,
}

impl RunTrace {
    pub fn ap_at(&self, t: usize) -> Option<f64> {
        self.records.get(t).filter(|r| r.t == t).map(|r| r.ap)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.t != i {
                return Err(Error::Domain(format!(
                    "trace timesteps must run 0, 1, 2, …; found {} at {i}",
                    r.t
                )));
            }
            if !(0.0..=1.0).contains(&r.ap) {
                return Err(Error::Domain(format!("AP {} outside [0, 1]", r.ap)));
            }
        }
        Ok(())
    }
}

/// MAP at one timestep, per seed and summarized across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct MapAt {
    /// `(seed, MAP over species)` in ascending seed order.
    pub per_seed: Vec<(usize, f64)>,
    pub mean: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std: f64,
}

/// MAP at timestep `t`: mean AP over species within each seed, then the mean
/// and standard deviation of those per-seed values.
pub fn map_at(traces: &[RunTrace], t: usize) -> Result<MapAt> {
    let mut by_seed: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for tr in traces {
        if let Some(ap) = tr.ap_at(t) {
            let e = by_seed.entry(tr.seed).or_default();
            e.0 += ap;
            e.1 += 1;
        }
    }
    if by_seed.is_empty() {
        return Err(Error::Undefined(format!("no traces reach timestep {t}")));
    }
    let per_seed: Vec<(usize, f64)> = by_seed.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect();
    let (mean, std) = mean_std(per_seed.iter().map(|p| p.1));
    Ok(MapAt { per_seed, mean, std })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateCurve {
    pub strategy: String,
    pub map_mean: Vec<f64>,
    pub map_std: Vec<f64>,
    pub mapauc_mean: Vec<f64>,
    pub n_species: usize,
    pub n_seeds: usize,
}

impl AggregateCurve {
    /// Summarizes one strategy's traces over every timestep any trace reaches.
    pub fn from_traces(strategy: &str, traces: &[RunTrace]) -> Result<Self> {
        let horizon = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
        let mut map_mean = Vec::with_capacity(horizon);
        let mut map_std = Vec::with_capacity(horizon);
        let mut per_seed_curves: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for t in 0..horizon {
            let m = map_at(traces, t)?;
            map_mean.push(m.mean);
            map_std.push(m.std);
            for (seed, v) in m.per_seed {
                per_seed_curves.entry(seed).or_default().push(v);
            }
        }
        let mut mapauc_mean = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let aucs = per_seed_curves
                .values()
                .filter(|c| c.len() > t)
                .map(|c| map_auc(c, t))
                .collect::<Result<Vec<_>>>()?;
            mapauc_mean.push(aucs.iter().sum::<f64>() / aucs.len() as f64);
        }
        let mut species: Vec<&str> = traces.iter().map(|t| t.species.as_str()).collect();
        species.sort_unstable();
        species.dedup();
        Ok(Self {
            strategy: strategy.to_string(),
            map_mean,
            map_std,
            mapauc_mean,
            n_species: species.len(),
            n_seeds: per_seed_curves.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.map_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map_mean.is_empty()
    }
}

pub const RESULTS_HEADER: &str = "strategy,seed,species,t,queried_cell,label,ap";
pub const AGGREGATE_HEADER: &str = "strategy,t,map_mean,map_std,mapauc_mean";

pub fn write_results_csv<W: Write>(w: &mut W, traces: &[RunTrace]) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for tr in traces {
        for r in &tr.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                tr.strategy,
                tr.seed,
                tr.species,
                r.t,
                r.queried_cell,
                u8::from(r.label),
                r.ap
            )?;
        }
    }
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(w: &mut W, curves: &[AggregateCurve]) -> Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for c in curves {
        for t in 0..c.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.strategy, t, c.map_mean[t], c.map_std[t], c.mapauc_mean[t]
            )?;
        }
    }
    Ok(())
}

pub fn save_aggregate_csv(path: &Path, curves: &[AggregateCurve]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_aggregate_csv(&mut w, curves)?;
    w.flush()?;
    Ok(())
}

/// Reads an aggregate CSV back. Species and seed counts are not stored in
/// the file and come back as 0.
pub fn load_aggregate_csv(path: &Path) -> Result<Vec<AggregateCurve>> {
    let mut curves: Vec<AggregateCurve> = Vec::new();
    for (k, (lineno, line)) in read_lines(path)?.into_iter().enumerate() {
        if k == 0 {
            if line != AGGREGATE_HEADER {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected header `{AGGREGATE_HEADER}`"),
                ));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(path, lineno, "expected 5 fields"));
        }
        let t: usize = f[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad timestep `{}`", f[1])))?;
        if curves.last().is_none_or(|c| c.strategy != f[0]) {
            curves.push(AggregateCurve {
                strategy: f[0].to_string(),
                map_mean: vec![],
                map_std: vec![],
                mapauc_mean: vec![],
                n_species: 0,
                n_seeds: 0,
            });
        }
        let c = curves.last_mut().expect("pushed above");
        if t != c.len() {
            return Err(Error::parse(path, lineno, format!("timestep {t} out of order")));
        }
        c.map_mean.push(parse_real(path, lineno, f[2])?);
        c.map_std.push(parse_real(path, lineno, f[3])?);
        c.mapauc_mean.push(parse_real(path, lineno, f[4])?);
    }
    Ok(curves)
}
