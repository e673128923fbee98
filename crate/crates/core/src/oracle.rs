//! Ground-truth labeler standing in for a field observer.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::geo::SurveyGrid;
use crate::hypothesis::{Observation, ObservationLog};
use crate::strategies::RunRng;
use crate::textio::read_lines;

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    labels: Vec<bool>,
    /// Cells outside the valid region are neither sampled nor evaluated.
    valid: Option<Vec<bool>>,
    pub species_label: String,
    /// Candidate-set members the species was synthesized from, if any.
    pub generators: Vec<usize>,
}

impl GroundTruth {
    pub fn new(labels: Vec<bool>, valid: Option<Vec<bool>>, species_label: impl Into<String>) -> Result<Self> {
        let species_label = species_label.into();
        if let Some(v) = &valid {
            if v.len() != labels.len() {
                return Err(Error::Setup(format!(
                    "validity mask has {} entries for {} labels",
                    v.len(),
                    labels.len()
                )));
            }
        }
        let gt = Self {
            labels,
            valid,
            species_label,
            generators: Vec::new(),
        };
        let (pos, neg) = gt.class_counts();
        if pos == 0 || neg == 0 {
            return Err(Error::Setup(format!(
                "species `{}` needs both classes among valid cells, has {pos} present / {neg} absent",
                gt.species_label
            )));
        }
        Ok(gt)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, cell: usize) -> bool {
        self.labels[cell]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn valid(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn is_valid(&self, cell: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[cell])
    }

    /// Present / absent counts over valid cells.
    pub fn class_counts(&self) -> (usize, usize) {
        let mut counts = (0, 0);
        for (c, &y) in self.labels.iter().enumerate() {
            if !self.is_valid(c) {
                continue;
            }
            if y {
                counts.0 += 1;
            } else {
                counts.1 += 1;
            }
        }
        counts
    }

    pub fn check_grid<T: crate::scalar::Scalar>(&self, grid: &SurveyGrid<T>) -> Result<()> {
        if self.labels.len() != grid.len() {
            return Err(Error::Setup(format!(
                "ground truth `{}` has {} labels for a grid of {} cells",
                self.species_label,
                self.labels.len(),
                grid.len()
            )));
        }
        Ok(())
    }

    /// Reads `cell_id,label[,valid]` rows (optional header). Ids must run
    /// 0, 1, 2, … in order.
    pub fn load(path: &Path, species_label: impl Into<String>) -> Result<Self> {
        let mut labels = Vec::new();
        let mut valid = Vec::new();
        let mut any_invalid = false;
        for (k, (lineno, line)) in read_lines(path)?.into_iter().enumerate() {
            if k == 0 && line.starts_with("cell_id") {
                continue;
            }
            let fields: Vec<_> = line.split(',').map(str::trim).collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(Error::parse(path, lineno, "expected `cell_id,label[,valid]`"));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad cell id `{}`", fields[0])))?;
            if id != labels.len() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("cell id {id} out of order, expected {}", labels.len()),
                ));
            }
            let bit = |s: &str, what: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::parse(path, lineno, format!("{what} must be 0 or 1, got `{s}`"))),
            };
            labels.push(bit(fields[1], "label")?);
            let v = match fields.get(2) {
                Some(s) => bit(s, "valid")?,
                None => true,
            };
            any_invalid |= !v;
            valid.push(v);
        }
        Self::new(labels, any_invalid.then_some(valid), species_label)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "cell_id,label,valid")?;
        for (c, &y) in self.labels.iter().enumerate() {
            writeln!(w, "{c},{},{}", u8::from(y), u8::from(self.is_valid(c)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Observer that misses true presences with a fixed probability and never
/// reports false presences.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    false_negative_rate: f64,
    rng: RunRng,
}

impl NoiseModel {
    pub fn new(false_negative_rate: f64, seed: u64) -> Result<Self> {
        Self::with_rng(false_negative_rate, RunRng::seed_from_u64(seed))
    }

    pub fn with_rng(false_negative_rate: f64, rng: RunRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&false_negative_rate) {
            return Err(Error::Config(format!(
                "false negative rate must lie in [0, 1], got {false_negative_rate}"
            )));
        }
        Ok(Self {
            false_negative_rate,
            rng,
        })
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0).expect("0 is a valid rate")
    }

    pub fn rate(&self) -> f64 {
        self.false_negative_rate
    }
}

/// Observed label at `cell`. One uniform draw is consumed per query,
/// whatever the true label.
pub fn query_label(gt: &GroundTruth, noise: &mut NoiseModel, cell: usize) -> Result<bool> {
    if cell >= gt.len() {
        return Err(Error::Domain(format!(
            "cell {cell} outside ground truth of {} cells",
            gt.len()
        )));
    }
    let u: f64 = noise.rng.random();
    Ok(gt.label(cell) && u >= noise.false_negative_rate)
}

/// One uniformly chosen true presence and one true absence, both correct.
pub fn init_observations<T: crate::scalar::Scalar>(
    gt: &GroundTruth,
    grid: &SurveyGrid<T>,
    rng: &mut RunRng,
) -> Result<ObservationLog> {
    gt.check_grid(grid)?;
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..gt.len()).filter(|&c| gt.is_valid(c)).partition(|&c| gt.label(c));
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Setup(format!(
            "species `{}` lacks a class to initialize from",
            gt.species_label
        )));
    }
    let p = pos[rng.random_range(0..pos.len())];
    let a = neg[rng.random_range(0..neg.len())];
    ObservationLog::from_entries([Observation::new(p, true), Observation::new(a, false)])
}
