//! Config-driven experiment runner: strategies × species × seeds × timesteps.

use std::borrow::Cow;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::render_map_chart;
use crate::error::{Error, Result};
use crate::eval::{average_precision, save_aggregate_csv, write_results_csv, AggregateCurve, RunTrace, StepRecord};
use crate::geo::{load_grid, SurveyGrid};
use crate::hypothesis::{HypothesisSet, Observation, ObservationLog, PredictionTable, VoteMode};
use crate::learner::TrainConfig;
use crate::oracle::{init_observations, query_label, GroundTruth, NoiseModel};
use crate::scalar::Scalar;
use crate::strategies::{OnlineReport, QueryContext, RunRng, StepModel, StrategyOptions, StrategySpec, Weighting};
use crate::synth::{gen_hypotheses, gen_test_species, SynthConfig};

pub const DEFAULT_STRATEGIES: [&str; 4] = ["WA_HSS+", "WA_HSS", "WA_random", "LR_uncertain"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileWorld {
    pub cells: PathBuf,
    pub features: PathBuf,
    pub hypotheses: PathBuf,
    /// One file per test species; the species label is the file stem.
    pub ground_truth: Vec<PathBuf>,
    #[serde(default)]
    pub zero_bias: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSource {
    Synth(SynthConfig),
    Files(FileWorld),
}

impl Default for WorldSource {
    fn default() -> Self {
        Self::Synth(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Used to name the chart file.
    pub name: String,
    /// Master seed; every run's random streams derive from it.
    pub seed: u64,
    /// Number of synthetic test species (file worlds use every listed file).
    pub n_species: usize,
    pub n_seeds: usize,
    pub n_timesteps: usize,
    pub strategies: Vec<String>,
    pub noise_rate: f64,
    /// Keep a uniformly drawn subset of this many candidate models.
    pub hypothesis_subset: Option<usize>,
    pub vote_mode: VoteMode,
    pub weighting: Weighting,
    pub online_report: OnlineReport,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub world: WorldSource,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            n_species: 50,
            n_seeds: 3,
            n_timesteps: 50,
            strategies: DEFAULT_STRATEGIES.iter().map(|s| s.to_string()).collect(),
            noise_rate: 0.0,
            hypothesis_subset: None,
            vote_mode: VoteMode::Soft,
            weighting: Weighting::Posterior,
            online_report: OnlineReport::Average,
            threads: None,
            out_dir: None,
            world: WorldSource::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative data paths are taken relative to the config file
        if let (WorldSource::Files(f), Some(base)) = (&mut cfg.world, path.parent()) {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut f.cells);
            fix(&mut f.features);
            fix(&mut f.hypotheses);
            f.ground_truth.iter_mut().for_each(fix);
        }
        Ok(cfg)
    }

    pub fn strategy_specs(&self) -> Result<Vec<StrategySpec>> {
        self.strategies
            .iter()
            .map(|s| Ok(s.parse::<StrategySpec>()?.with_vote_mode(self.vote_mode)))
            .collect()
    }

    pub fn options(&self) -> StrategyOptions {
        StrategyOptions {
            weighting: self.weighting,
            online_report: self.online_report,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds < 1 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if self.n_timesteps < 1 {
            return Err(Error::Config("n_timesteps must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config("noise_rate must lie in [0, 1]".into()));
        }
        if self.hypothesis_subset == Some(0) {
            return Err(Error::Config("hypothesis_subset must be positive".into()));
        }
        if matches!(self.world, WorldSource::Synth(_)) && self.n_species < 1 {
            return Err(Error::Config("n_species must be at least 1".into()));
        }
        if let WorldSource::Synth(s) = &self.world {
            s.validate()?;
        }
        self.train.validate()?;
        self.strategy_specs().map(|_| ())
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for a tuple of indices under the master seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

const STREAM_SPECIES: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_SELECT: u64 = 4;
const STREAM_SUBSET: u64 = 5;

pub type Candidates<'a, T> = (Cow<'a, HypothesisSet<T>>, Cow<'a, PredictionTable<T>>);

/// Grid, candidate set with cached member predictions, and test species.
pub struct World<T> {
    pub grid: SurveyGrid<T>,
    pub set: HypothesisSet<T>,
    pub table: PredictionTable<T>,
    pub species: Vec<GroundTruth>,
    /// Drop each species' generating members from its candidate set.
    pub exclude_generators: bool,
}

impl<T: Scalar> World<T> {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let (grid, full_set, species, exclude) = match &cfg.world {
            WorldSource::Synth(s) => {
                let grid = s.build_grid::<T>()?;
                let set = gen_hypotheses(s, &grid)?;
                let species = (0..cfg.n_species)
                    .map(|i| {
                        let mut rng = RunRng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SPECIES, i as u64]));
                        gen_test_species(s, &set, &grid, &format!("species_{i}"), &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (grid, set, species, s.exclude_generators)
            }
            WorldSource::Files(f) => {
                let grid = load_grid::<T>(&f.cells, &f.features)?;
                let set = HypothesisSet::load(&f.hypotheses, f.zero_bias)?;
                let species = f
                    .ground_truth
                    .iter()
                    .map(|p| {
                        let label = p
                            .file_stem()
                            .map_or("species".into(), |s| s.to_string_lossy().into_owned());
                        let gt = GroundTruth::load(p, label)?;
                        gt.check_grid(&grid)?;
                        Ok(gt)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if species.is_empty() {
                    return Err(Error::Config("file world lists no ground-truth files".into()));
                }
                (grid, set, species, false)
            }
        };
        let (set, species) = match cfg.hypothesis_subset {
            Some(m) if m < full_set.len() => {
                let mut rng = RunRng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SUBSET]));
                let mut keep = rand::seq::index::sample(&mut rng, full_set.len(), m).into_vec();
                keep.sort_unstable();
                let set = full_set.subset(&keep)?;
                // generator indices refer to the full set; remap or drop
                let species = species
                    .into_iter()
                    .map(|mut gt| {
                        gt.generators = gt
                            .generators
                            .iter()
                            .filter_map(|g| keep.binary_search(g).ok())
                            .collect();
                        gt
                    })
                    .collect();
                (set, species)
            }
            _ => (full_set, species),
        };
        Self::from_parts(grid, set, species, exclude)
    }

    pub fn from_parts(
        grid: SurveyGrid<T>,
        set: HypothesisSet<T>,
        species: Vec<GroundTruth>,
        exclude_generators: bool,
    ) -> Result<Self> {
        for gt in &species {
            gt.check_grid(&grid)?;
        }
        let table = set.prediction_table(&grid)?;
        Ok(Self {
            grid,
            set,
            table,
            species,
            exclude_generators,
        })
    }

    /// Candidate set and prediction table seen by runs on `species`.
    pub fn candidates_for(&self, species: usize) -> Result<Candidates<'_, T>> {
        let gens = &self.species[species].generators;
        if !self.exclude_generators || gens.is_empty() {
            return Ok((Cow::Borrowed(&self.set), Cow::Borrowed(&self.table)));
        }
        let keep: Vec<usize> = (0..self.set.len()).filter(|k| !gens.contains(k)).collect();
        if keep.is_empty() {
            return Err(Error::Setup("excluding the generators leaves no candidates".into()));
        }
        let set = self.set.subset(&keep)?;
        let table = PredictionTable {
            rows: keep.iter().map(|&k| self.table.rows[k].clone()).collect(),
        };
        Ok((Cow::Owned(set), Cow::Owned(table)))
    }
}

/// Parameters shared by every run of an experiment.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub master_seed: u64,
    pub n_timesteps: usize,
    pub noise_rate: f64,
    pub options: StrategyOptions,
    pub train: TrainConfig,
}

impl RunSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            master_seed: cfg.seed,
            n_timesteps: cfg.n_timesteps,
            noise_rate: cfg.noise_rate,
            options: cfg.options(),
            train: cfg.train.clone(),
        }
    }
}

/// The 1+1 initial observations for `(species, seed)`; identical for every strategy.
pub fn initial_observations<T: Scalar>(
    world: &World<T>,
    settings: &RunSettings,
    species: usize,
    seed: usize,
) -> Result<ObservationLog> {
    let mut rng = RunRng::seed_from_u64(derive_seed(
        settings.master_seed,
        &[STREAM_INIT, species as u64, seed as u64],
    ));
    init_observations(&world.species[species], &world.grid, &mut rng)
}

/// One active-learning run. At each timestep `t` the model fit to the current
/// observations is scored (AP over valid cells) before the next cell is
/// queried, so `t = 0` reflects the initial pair only. `observer` sees each
/// step's state before its query.
pub fn run_species<T: Scalar>(
    world: &World<T>,
    settings: &RunSettings,
    spec: &StrategySpec,
    species: usize,
    seed: usize,
    observer: &mut dyn FnMut(usize, &StepModel<T>, &ObservationLog),
) -> Result<RunTrace> {
    let gt = world
        .species
        .get(species)
        .ok_or_else(|| Error::Domain(format!("species index {species} out of range")))?;
    let (set, table) = world.candidates_for(species)?;
    let mut log = initial_observations(world, settings, species, seed)?;
    let ids = [species as u64, seed as u64];
    let mut noise = NoiseModel::with_rng(
        settings.noise_rate,
        RunRng::seed_from_u64(derive_seed(settings.master_seed, &[STREAM_NOISE, ids[0], ids[1]])),
    )?;
    let mut rng = RunRng::seed_from_u64(derive_seed(settings.master_seed, &[STREAM_SELECT, ids[0], ids[1]]));

    let eval_cells: Vec<usize> = (0..world.grid.len()).filter(|&c| gt.is_valid(c)).collect();
    let eval_labels: Vec<bool> = eval_cells.iter().map(|&c| gt.label(c)).collect();

    let mut records = Vec::with_capacity(settings.n_timesteps);
    for t in 0..settings.n_timesteps {
        let mut ctx = QueryContext {
            grid: &world.grid,
            set: &set,
            table: &table,
            log: &log,
            valid: gt.valid(),
            train: &settings.train,
            options: settings.options,
            rng: &mut rng,
        };
        let step = StepModel::build(spec, &ctx)?;
        let scores: Vec<T> = eval_cells.iter().map(|&c| step.logits[c]).collect();
        let ap = average_precision(&scores, &eval_labels)?;
        observer(t, &step, ctx.log);
        let cell = step.select(spec, &mut ctx)?;
        let label = query_label(gt, &mut noise, cell)?;
        log.push(Observation::new(cell, label))?;
        records.push(StepRecord {
            t,
            queried_cell: cell,
            label,
            ap,
        });
    }
    Ok(RunTrace {
        strategy: spec.name(),
        species: gt.species_label.clone(),
        species_index: species,
        seed,
        records,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub strategy: String,
    pub species: String,
    pub seed: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub traces: Vec<RunTrace>,
    pub aggregates: Vec<AggregateCurve>,
    pub failures: Vec<RunFailure>,
}

impl ExperimentOutcome {
    pub fn aggregate(&self, strategy: &str) -> Option<&AggregateCurve> {
        self.aggregates.iter().find(|a| a.strategy == strategy)
    }
}

/// Runs every (strategy, species, seed) on an already built world.
pub fn run_on_world<T: Scalar>(world: &World<T>, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let specs = cfg.strategy_specs()?;
    let settings = RunSettings::from_config(cfg);
    let jobs: Vec<(usize, usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..world.species.len()).flat_map(move |i| (0..cfg.n_seeds).map(move |r| (s, i, r))))
        .collect();
    let work = || {
        jobs.par_iter()
            .map(|&(s, i, r)| {
                run_species(world, &settings, &specs[s], i, r, &mut |_, _, _| {}).map_err(|e| RunFailure {
                    strategy: specs[s].name(),
                    species: world.species[i].species_label.clone(),
                    seed: r,
                    reason: e.to_string(),
                })
            })
            .collect::<Vec<_>>()
    };
    let results = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(t) => traces.push(t),
            Err(f) => {
                log::warn!(
                    "run {} / {} / seed {} aborted: {}",
                    f.strategy,
                    f.species,
                    f.seed,
                    f.reason
                );
                failures.push(f);
            }
        }
    }
    let mut aggregates = Vec::new();
    for spec in &specs {
        let name = spec.name();
        let mine: Vec<RunTrace> = traces.iter().filter(|t| t.strategy == name).cloned().collect();
        if mine.is_empty() {
            log::warn!("strategy {name} has no completed runs");
            continue;
        }
        aggregates.push(AggregateCurve::from_traces(&name, &mine)?);
    }
    Ok(ExperimentOutcome {
        traces,
        aggregates,
        failures,
    })
}

/// Builds the world described by `cfg` and runs the experiment on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let world = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| World::<f64>::build(cfg))?,
        None => World::<f64>::build(cfg)?,
    };
    run_on_world(&world, cfg)
}

/// Writes `results.csv`, `aggregate.csv`, `failures.csv` (when any run
/// aborted) and `<name>_map.svg` into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let results = dir.join("results.csv");
    let mut w = BufWriter::new(fs::File::create(&results)?);
    write_results_csv(&mut w, &outcome.traces)?;
    w.flush()?;
    written.push(results);

    let aggregate = dir.join("aggregate.csv");
    save_aggregate_csv(&aggregate, &outcome.aggregates)?;
    written.push(aggregate);

    if !outcome.failures.is_empty() {
        let path = dir.join("failures.csv");
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "strategy,species,seed,reason")?;
        for f in &outcome.failures {
            writeln!(
                w,
                "{},{},{},\"{}\"",
                f.strategy,
                f.species,
                f.seed,
                f.reason.replace('"', "'")
            )?;
        }
        w.flush()?;
        written.push(path);
    }

    match render_map_chart(&outcome.aggregates, name) {
        Some(svg) => {
            let path = dir.join(format!("{name}_map.svg"));
            fs::write(&path, svg)?;
            written.push(path);
        }
        None => log::warn!("no aggregate curves to chart"),
    }
    Ok(written)
}

/// Writes the synthetic world of `cfg` in the plain-text file formats.
pub fn export_world<T: Scalar>(world: &World<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    world.grid.save(&dir.join("cells.csv"), &dir.join("features.csv"))?;
    world.set.save(&dir.join("hypotheses.csv"))?;
    let gt_dir = dir.join("ground_truth");
    fs::create_dir_all(&gt_dir)?;
    for gt in &world.species {
        gt.save(&gt_dir.join(format!("{}.csv", gt.species_label)))?;
    }
    Ok(())
}
