//! Synthetic worlds: a Fibonacci grid with random features, a random
//! candidate set, and test species derived from it.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{build_fibonacci_grid, FeatureEncoder, SurveyGrid, DEFAULT_FEATURE_DIM};
use crate::hypothesis::{model_logits, Hypothesis, HypothesisSet};
use crate::oracle::GroundTruth;
use crate::scalar::{sigmoid, Scalar};
use crate::strategies::RunRng;

/// Band the presence fraction of every generated hypothesis must fall in.
pub const PRESENCE_BAND: (f64, f64) = (0.01, 0.3);
const BISECTION_ITERS: usize = 100;
const SPECIES_ATTEMPTS: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesMode {
    /// Threshold one member of the candidate set.
    Member,
    /// Threshold the parameter average of `mixture_arity` random members.
    #[default]
    Mixture,
    /// Threshold a fresh hypothesis drawn like the candidate set.
    Independent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderChoice {
    TrigLoc,
    TrigLocEnv,
    #[default]
    RandomProjection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandMask {
    #[default]
    None,
    NorthernHemisphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cells: usize,
    pub n_hypotheses: usize,
    pub encoder: EncoderChoice,
    /// Output width of the random projection encoder.
    pub feature_dim: usize,
    /// Number of synthetic covariates for the `trig_loc_env` encoder.
    pub n_covariates: usize,
    pub encoder_seed: u64,
    pub hypothesis_seed: u64,
    pub species_mode: SpeciesMode,
    pub mixture_arity: usize,
    pub threshold: f64,
    pub logit_scale: f64,
    /// Drop the generating members from the candidate set of each run.
    pub exclude_generators: bool,
    pub land_mask: LandMask,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cells: 5000,
            n_hypotheses: 500,
            encoder: EncoderChoice::RandomProjection,
            feature_dim: DEFAULT_FEATURE_DIM,
            n_covariates: 20,
            encoder_seed: 0,
            hypothesis_seed: 1,
            species_mode: SpeciesMode::Mixture,
            mixture_arity: 2,
            threshold: 0.5,
            logit_scale: 3.0,
            exclude_generators: false,
            land_mask: LandMask::None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hypotheses < 1 {
            return Err(Error::Config("n_hypotheses must be at least 1".into()));
        }
        if self.species_mode == SpeciesMode::Mixture && self.mixture_arity < 2 {
            return Err(Error::Config("mixture_arity must be at least 2".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::Config("logit_scale must be positive".into()));
        }
        if self.n_cells < 2 {
            return Err(Error::Config("n_cells must be at least 2".into()));
        }
        Ok(())
    }

    pub fn encoder<T: Scalar>(&self) -> Result<FeatureEncoder<T>> {
        Ok(match self.encoder {
            EncoderChoice::TrigLoc => FeatureEncoder::TrigLoc,
            EncoderChoice::TrigLocEnv => FeatureEncoder::trig_loc_env(self.n_covariates, self.encoder_seed),
            EncoderChoice::RandomProjection => FeatureEncoder::random_projection(self.feature_dim, self.encoder_seed)?,
        })
    }

    pub fn build_grid<T: Scalar>(&self) -> Result<SurveyGrid<T>> {
        self.validate()?;
        let encoder = self.encoder()?;
        match self.land_mask {
            LandMask::None => build_fibonacci_grid(self.n_cells, &encoder, None),
            LandMask::NorthernHemisphere => {
                let north = |lat: T, _lon: T| lat >= T::zero();
                build_fibonacci_grid(self.n_cells, &encoder, Some(&north))
            }
        }
    }
}

/// Fraction of cells where `logit + bias > 0`.
fn presence_fraction<T: Scalar>(logits: &[T], bias: T) -> f64 {
    logits.iter().filter(|&&z| z + bias > T::zero()).count() as f64 / logits.len() as f64
}

/// Random hypothesis whose hard presence fraction over `grid` lands in
/// [`PRESENCE_BAND`]: Gaussian weights with scale `s/√D`, bias by bisection
/// toward a target fraction drawn uniformly from the band.
fn random_hypothesis<T: Scalar>(
    label: String,
    grid: &SurveyGrid<T>,
    logit_scale: f64,
    rng: &mut RunRng,
) -> Result<Hypothesis<T>> {
    let d = grid.feature_dim();
    let scale = logit_scale / (d as f64).sqrt();
    let weights: Vec<T> = (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * scale)
        })
        .collect();
    let target = rng.random_range(PRESENCE_BAND.0..PRESENCE_BAND.1);
    let logits = model_logits(&weights, T::zero(), grid);
    let span = logits.iter().fold(T::zero(), |m, z| m.max(z.abs())) + T::one();
    // fraction(lo) = 0, fraction(hi) = 1; keep that bracket while halving
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..BISECTION_ITERS {
        let mid = (lo + hi) / T::of(2.0);
        if presence_fraction(&logits, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let frac = presence_fraction(&logits, hi);
    if !(PRESENCE_BAND.0..=PRESENCE_BAND.1).contains(&frac) {
        return Err(Error::Generation(format!(
            "bias bisection for `{label}` ended at presence fraction {frac:.4}, outside [{}, {}]",
            PRESENCE_BAND.0, PRESENCE_BAND.1
        )));
    }
    Hypothesis::new(label, weights, hi)
}

/// Candidate set of `n_hypotheses` members, deterministic in `hypothesis_seed`.
pub fn gen_hypotheses<T: Scalar>(cfg: &SynthConfig, grid: &SurveyGrid<T>) -> Result<HypothesisSet<T>> {
    cfg.validate()?;
    let mut rng = RunRng::seed_from_u64(cfg.hypothesis_seed);
    let members = (0..cfg.n_hypotheses)
        .map(|k| random_hypothesis(format!("hyp_{k}"), grid, cfg.logit_scale, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    HypothesisSet::new(members)
}

fn threshold_labels<T: Scalar>(weights: &[T], bias: T, grid: &SurveyGrid<T>, tau: f64) -> Vec<bool> {
    let tau = T::of(tau);
    model_logits(weights, bias, grid)
        .into_iter()
        .map(|z| sigmoid(z) > tau)
        .collect()
}

/// Parameter average of the members at `indices`.
pub fn mix_members<T: Scalar>(set: &HypothesisSet<T>, indices: &[usize]) -> (Vec<T>, T) {
    let m = T::of(indices.len() as f64);
    let mut w = vec![T::zero(); set.feature_dim()];
    let mut b = T::zero();
    for &i in indices {
        let h = &set.members()[i];
        for (acc, &v) in w.iter_mut().zip(&h.weights) {
            *acc = *acc + v;
        }
        b = b + h.bias;
    }
    (w.into_iter().map(|v| v / m).collect(), b / m)
}

/// Draws one test species. Single-class draws are redrawn up to 50 times.
pub fn gen_test_species<T: Scalar>(
    cfg: &SynthConfig,
    set: &HypothesisSet<T>,
    grid: &SurveyGrid<T>,
    label: &str,
    rng: &mut RunRng,
) -> Result<GroundTruth> {
    cfg.validate()?;
    if set.feature_dim() != grid.feature_dim() {
        return Err(Error::Domain(
            "hypothesis set and grid feature dimensions differ".into(),
        ));
    }
    for _ in 0..SPECIES_ATTEMPTS {
        let (labels, generators) = match cfg.species_mode {
            SpeciesMode::Member => {
                let j = rng.random_range(0..set.len());
                let h = &set.members()[j];
                (threshold_labels(&h.weights, h.bias, grid, cfg.threshold), vec![j])
            }
            SpeciesMode::Mixture => {
                let idx: Vec<usize> = (0..cfg.mixture_arity).map(|_| rng.random_range(0..set.len())).collect();
                let (w, b) = mix_members(set, &idx);
                (threshold_labels(&w, b, grid, cfg.threshold), idx)
            }
            SpeciesMode::Independent => {
                let h = random_hypothesis(label.to_string(), grid, cfg.logit_scale, rng)?;
                (threshold_labels(&h.weights, h.bias, grid, cfg.threshold), vec![])
            }
        };
        let pos = labels.iter().filter(|&&y| y).count();
        if pos == 0 || pos == labels.len() {
            continue;
        }
        let mut gt = GroundTruth::new(labels, None, label)?;
        gt.generators = generators;
        return Ok(gt);
    }
    Err(Error::Generation(format!(
        "species `{label}`: {SPECIES_ATTEMPTS} draws in a row had a single class"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::predict;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_cells: 400,
            n_hypotheses: 5,
            feature_dim: 32,
            ..SynthConfig::default()
        }
    }

    fn fractions(set: &HypothesisSet<f64>, grid: &SurveyGrid<f64>) -> Vec<f64> {
        set.members()
            .iter()
            .map(|h| {
                grid.cells()
                    .iter()
                    .filter(|c| predict(h, &c.features).unwrap() > 0.5)
                    .count() as f64
                    / grid.len() as f64
            })
            .collect()
    }

    #[test]
    fn single_hypothesis_in_band() {
        let cfg = SynthConfig {
            n_hypotheses: 1,
            ..small_cfg()
        };
        let grid = cfg.build_grid::<f64>().unwrap();
        let set = gen_hypotheses(&cfg, &grid).unwrap();
        assert_eq!(set.len(), 1);
        let f = fractions(&set, &grid)[0];
        assert!((0.01..=0.3).contains(&f), "{f}");
    }

    #[test]
    fn hypotheses_deterministic() {
        let cfg = small_cfg();
        let grid = cfg.build_grid::<f64>().unwrap();
        let a = gen_hypotheses(&cfg, &grid).unwrap();
        let b = gen_hypotheses(&cfg, &grid).unwrap();
        assert_eq!(a.members(), b.members());
    }

    #[test]
    fn hundred_hypotheses_in_band() {
        let cfg = SynthConfig {
            n_hypotheses: 100,
            ..small_cfg()
        };
        let grid = cfg.build_grid::<f64>().unwrap();
        let set = gen_hypotheses(&cfg, &grid).unwrap();
        for f in fractions(&set, &grid) {
            assert!((0.01..=0.3).contains(&f), "{f}");
        }
    }

    #[test]
    fn member_mode_is_hard_prediction() {
        let cfg = SynthConfig {
            species_mode: SpeciesMode::Member,
            ..small_cfg()
        };
        let grid = cfg.build_grid::<f64>().unwrap();
        let set = gen_hypotheses(&cfg, &grid).unwrap();
        let mut rng = RunRng::seed_from_u64(4);
        let gt = gen_test_species(&cfg, &set, &grid, "s", &mut rng).unwrap();
        let j = gt.generators[0];
        for c in grid.cells() {
            assert_eq!(gt.label(c.id), predict(&set.members()[j], &c.features).unwrap() > 0.5);
        }
    }

    #[test]
    fn self_mixture_equals_member() {
        let cfg = small_cfg();
        let grid = cfg.build_grid::<f64>().unwrap();
        let set = gen_hypotheses(&cfg, &grid).unwrap();
        let (w, b) = mix_members(&set, &[2, 2]);
        let h = &set.members()[2];
        assert_eq!(
            threshold_labels(&w, b, &grid, 0.5),
            threshold_labels(&h.weights, h.bias, &grid, 0.5)
        );
    }

    #[test]
    fn mixture_matches_per_cell_oracle() {
        let cfg = SynthConfig {
            n_cells: 10,
            feature_dim: 8,
            n_hypotheses: 6,
            ..SynthConfig::default()
        };
        let grid = cfg.build_grid::<f64>().unwrap();
        // members are drawn on a larger grid so the band is attainable
        let big = SynthConfig {
            n_cells: 400,
            ..cfg.clone()
        }
        .build_grid::<f64>()
        .unwrap();
        let set = gen_hypotheses(&cfg, &big).unwrap();
        let mut rng = RunRng::seed_from_u64(17);
        let gt = gen_test_species(&cfg, &set, &grid, "m", &mut rng).unwrap();
        let (i, j) = (gt.generators[0], gt.generators[1]);
        let (hi, hj) = (&set.members()[i], &set.members()[j]);
        for c in grid.cells() {
            let z: f64 = (0..8)
                .map(|d| (hi.weights[d] + hj.weights[d]) / 2.0 * c.features[d])
                .sum::<f64>()
                + (hi.bias + hj.bias) / 2.0;
            let p = 1.0 / (1.0 + (-z).exp());
            assert_eq!(gt.label(c.id), p > 0.5);
        }
    }

    #[test]
    fn species_have_both_classes() {
        let cfg = small_cfg();
        let grid = cfg.build_grid::<f64>().unwrap();
        let set = gen_hypotheses(&cfg, &grid).unwrap();
        let mut rng = RunRng::seed_from_u64(0);
        for mode in [SpeciesMode::Member, SpeciesMode::Mixture, SpeciesMode::Independent] {
            let cfg = SynthConfig {
                species_mode: mode,
                ..cfg.clone()
            };
            for i in 0..10 {
                let gt = gen_test_species(&cfg, &set, &grid, &format!("s{i}"), &mut rng).unwrap();
                let (p, n) = gt.class_counts();
                assert!(p > 0 && n > 0);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig {
            n_hypotheses: 0,
            ..small_cfg()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            mixture_arity: 1,
            ..small_cfg()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            threshold: 1.0,
            ..small_cfg()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            species_mode: SpeciesMode::Member,
            mixture_arity: 1,
            ..small_cfg()
        }
        .validate()
        .is_ok());
    }
}
