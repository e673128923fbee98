//! Discretized world: queryable cells, their feature vectors, and the
//! encoders that turn a (lat, lon) pair into a feature vector.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textio::{parse_reals, read_lines};

/// Embedding width used by default for the random projection encoder.
pub const DEFAULT_FEATURE_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Cell<T> {
    pub id: usize,
    /// Degrees in `[-90, 90]`.
    pub lat: T,
    /// Degrees in `[-180, 180)`.
    pub lon: T,
    pub features: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Loaded,
}

/// Ordered, immutable set of cells that share one feature dimension.
#[derive(Clone, Debug)]
pub struct SurveyGrid<T> {
    cells: Vec<Cell<T>>,
    feature_dim: usize,
    provenance: Provenance,
}

impl<T: Scalar> SurveyGrid<T> {
    /// Validates the grid invariants: non-empty, ids contiguous from 0 in
    /// order, uniform feature dimension, finite features and unique coordinates.
    pub fn new(cells: Vec<Cell<T>>, provenance: Provenance) -> Result<Self> {
        let first = cells.first().ok_or_else(|| Error::EmptyGrid("no cells".into()))?;
        let feature_dim = first.features.len();
        if feature_dim == 0 {
            return Err(Error::Domain("feature dimension must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(cells.len());
        for (i, c) in cells.iter().enumerate() {
            if c.id != i {
                return Err(Error::Domain(format!(
                    "cell ids must be contiguous from 0, found id {} at position {i}",
                    c.id
                )));
            }
            check_coords(c.lat, c.lon)?;
            if c.features.len() != feature_dim {
                return Err(Error::Domain(format!(
                    "cell {i} has {} features, expected {feature_dim}",
                    c.features.len()
                )));
            }
            if c.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("cell {i} has a non-finite feature")));
            }
            if !seen.insert((c.lat.as_f64().to_bits(), c.lon.as_f64().to_bits())) {
                return Err(Error::Domain(format!(
                    "cell {i} duplicates coordinates ({}, {})",
                    c.lat, c.lon
                )));
            }
        }
        Ok(Self {
            cells,
            feature_dim,
            provenance,
        })
    }

    pub fn cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn features(&self, id: usize) -> &[T] {
        &self.cells[id].features
    }

    pub fn get(&self, id: usize) -> Option<&Cell<T>> {
        self.cells.get(id)
    }

    /// Writes the cell file (`id,lat,lon` with header) and the header-less
    /// feature file.
    pub fn save(&self, cells_path: &Path, features_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(cells_path)?);
        writeln!(w, "id,lat,lon")?;
        for c in &self.cells {
            writeln!(w, "{},{},{}", c.id, c.lat, c.lon)?;
        }
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(features_path)?);
        for c in &self.cells {
            write_row(&mut w, &c.features)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn write_row<T: Scalar, W: Write>(w: &mut W, row: &[T]) -> std::io::Result<()> {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            w.write_all(b",")?;
        }
        write!(w, "{v}")?;
    }
    w.write_all(b"\n")
}

fn check_coords<T: Scalar>(lat: T, lon: T) -> Result<()> {
    let (la, lo) = (lat.as_f64(), lon.as_f64());
    if !(-90.0..=90.0).contains(&la) || !(-180.0..180.0).contains(&lo) {
        return Err(Error::Domain(format!(
            "coordinates ({la}, {lo}) outside lat [-90, 90] / lon [-180, 180)"
        )));
    }
    Ok(())
}

/// Four-dimensional periodic location encoding
/// `[sin(lat·π/90), cos(lat·π/90), sin(lon·π/180), cos(lon·π/180)]`.
pub fn encode_trig<T: Scalar>(lat: T, lon: T) -> Result<[T; 4]> {
    check_coords(lat, lon)?;
    Ok(trig_unchecked(lat, lon))
}

fn trig_unchecked<T: Scalar>(lat: T, lon: T) -> [T; 4] {
    let a = lat * T::PI() / T::of(90.0);
    let b = lon * T::PI() / T::of(180.0);
    [a.sin(), a.cos(), b.sin(), b.cos()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    TrigLoc,
    TrigLocEnv,
    RandomProjection,
}

/// One affine layer followed by a rectifier. Weights are row-major `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn gaussian(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (n_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::of(z * scale)
                })
                .collect()
        };
        let weights = draw(n_in * n_out);
        let bias = draw(n_out);
        Self {
            n_in,
            n_out,
            weights,
            bias,
        }
    }

    /// `W·x` without bias or rectifier.
    pub fn linear(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.n_in)
            .map(|row| crate::scalar::dot(row, x))
            .collect()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.linear(x)
            .into_iter()
            .zip(&self.bias)
            .map(|(v, &b)| (v + b).max(T::zero()))
            .collect()
    }
}

/// Fixed, untrained rectifier network mapping the 4-d trig encoding to `D`
/// dimensions: two hidden layers of width `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjection<T> {
    pub seed: u64,
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> RandomProjection<T> {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("projection dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            DenseLayer::gaussian(4, dim, &mut rng),
            DenseLayer::gaussian(dim, dim, &mut rng),
        ];
        Ok(Self { seed, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(4, |l| l.n_out)
    }

    pub fn apply(&self, loc4: &[T]) -> Result<Vec<T>> {
        if loc4.len() != 4 {
            return Err(Error::Domain(format!(
                "random projection expects a 4-d trig encoding, got {} values",
                loc4.len()
            )));
        }
        let mut h = loc4.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        Ok(h)
    }
}

/// Smooth synthetic covariate fields standing in for gridded environmental
/// rasters: `c_j(u) = cos(ω_j·u + φ_j)` on the unit-sphere position `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvCovariates<T> {
    pub seed: u64,
    pub frequencies: Vec<[T; 3]>,
    pub phases: Vec<T>,
}

impl<T: Scalar> EnvCovariates<T> {
    pub fn new(n_covariates: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frequencies = Vec::with_capacity(n_covariates);
        let mut phases = Vec::with_capacity(n_covariates);
        for _ in 0..n_covariates {
            let mut w = [T::zero(); 3];
            for v in w.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = T::of(2.0 * z);
            }
            frequencies.push(w);
            let u: f64 = rand::Rng::random(&mut rng);
            phases.push(T::of(u * std::f64::consts::TAU));
        }
        Self {
            seed,
            frequencies,
            phases,
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn eval(&self, lat: T, lon: T) -> Vec<T> {
        let u = unit_vector(lat, lon);
        self.frequencies
            .iter()
            .zip(&self.phases)
            .map(|(w, &p)| (w[0] * u[0] + w[1] * u[1] + w[2] * u[2] + p).cos())
            .collect()
    }
}

fn unit_vector<T: Scalar>(lat: T, lon: T) -> [T; 3] {
    let (la, lo) = (lat.to_radians(), lon.to_radians());
    [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
}

/// Deterministic location encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureEncoder<T> {
    TrigLoc,
    TrigLocEnv(EnvCovariates<T>),
    RandomProjection(RandomProjection<T>),
}

impl<T: Scalar> FeatureEncoder<T> {
    pub fn random_projection(dim: usize, seed: u64) -> Result<Self> {
        Ok(Self::RandomProjection(RandomProjection::new(dim, seed)?))
    }

    pub fn trig_loc_env(n_covariates: usize, seed: u64) -> Self {
        Self::TrigLocEnv(EnvCovariates::new(n_covariates, seed))
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Self::TrigLoc => EncoderKind::TrigLoc,
            Self::TrigLocEnv(_) => EncoderKind::TrigLocEnv,
            Self::RandomProjection(_) => EncoderKind::RandomProjection,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::TrigLoc => 4,
            Self::TrigLocEnv(env) => 4 + env.len(),
            Self::RandomProjection(p) => p.output_dim(),
        }
    }

    pub fn encode(&self, lat: T, lon: T) -> Result<Vec<T>> {
        let loc = encode_trig(lat, lon)?;
        match self {
            Self::TrigLoc => Ok(loc.to_vec()),
            Self::TrigLocEnv(env) => {
                let mut v = loc.to_vec();
                v.extend(env.eval(lat, lon));
                Ok(v)
            }
            Self::RandomProjection(p) => p.apply(&loc),
        }
    }
}

/// Applies a random-projection encoder to an existing trig encoding.
pub fn encode_random_projection<T: Scalar>(loc4: &[T], encoder: &FeatureEncoder<T>) -> Result<Vec<T>> {
    match encoder {
        FeatureEncoder::RandomProjection(p) => p.apply(loc4),
        other => Err(Error::Domain(format!(
            "encoder kind {:?} is not a random projection",
            other.kind()
        ))),
    }
}

/// Generates `n` points of a Fibonacci sphere lattice as `(lat, lon)` degrees.
pub fn fibonacci_lattice(n: usize) -> Vec<(f64, f64)> {
    let golden_deg = 180.0 * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let lat = z.asin().to_degrees();
            let mut lon = (i as f64 * golden_deg).rem_euclid(360.0);
            if lon >= 180.0 {
                lon -= 360.0;
            }
            (lat, lon)
        })
        .collect()
}

/// Builds a near-equal-area grid of `n_cells` points, optionally keeping only
/// those accepted by `land_mask(lat, lon)`. Surviving cells are renumbered
/// contiguously.
pub fn build_fibonacci_grid<T: Scalar>(
    n_cells: usize,
    encoder: &FeatureEncoder<T>,
    land_mask: Option<&dyn Fn(T, T) -> bool>,
) -> Result<SurveyGrid<T>> {
    if n_cells < 2 {
        return Err(Error::Domain(format!("n_cells must be >= 2, got {n_cells}")));
    }
    let mut cells = Vec::with_capacity(n_cells);
    for (lat, lon) in fibonacci_lattice(n_cells) {
        let (lat, lon) = (T::of(lat), T::of(lon));
        if land_mask.is_some_and(|keep| !keep(lat, lon)) {
            continue;
        }
        let features = encoder.encode(lat, lon)?;
        cells.push(Cell {
            id: cells.len(),
            lat,
            lon,
            features,
        });
    }
    if cells.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "land mask rejected all {n_cells} lattice points"
        )));
    }
    SurveyGrid::new(cells, Provenance::Synthetic)
}

/// Reads a cell file (`id,lat,lon` with header) and a matching header-less
/// feature file. Row `i` of the feature file binds to cell id `i`.
pub fn load_grid<T: Scalar>(cells_path: &Path, features_path: &Path) -> Result<SurveyGrid<T>> {
    let cell_lines = read_lines(cells_path)?;
    let mut coords = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in cell_lines {
        if !header_seen {
            header_seen = true;
            let h: Vec<_> = line.split(',').map(str::trim).collect();
            if h != ["id", "lat", "lon"] {
                return Err(Error::parse(cells_path, lineno, "expected header `id,lat,lon`"));
            }
            continue;
        }
        let vals = parse_reals(cells_path, lineno, &line)?;
        if vals.len() != 3 {
            return Err(Error::parse(
                cells_path,
                lineno,
                format!("expected 3 fields, found {}", vals.len()),
            ));
        }
        let id = vals[0];
        if id.fract() != 0.0 || id < 0.0 || id as usize != coords.len() {
            return Err(Error::parse(
                cells_path,
                lineno,
                format!("cell id {id} out of order, expected {}", coords.len()),
            ));
        }
        if check_coords(vals[1], vals[2]).is_err() {
            return Err(Error::parse(cells_path, lineno, "coordinates out of range"));
        }
        coords.push((lineno, vals[1], vals[2]));
    }
    if !header_seen {
        return Err(Error::parse(cells_path, 1, "missing header"));
    }

    let feat_lines = read_lines(features_path)?;
    let mut features: Vec<Vec<T>> = Vec::with_capacity(feat_lines.len());
    for (lineno, line) in &feat_lines {
        let row = parse_reals(features_path, *lineno, line)?;
        if let Some(first) = features.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    features_path,
                    *lineno,
                    format!("expected {} values, found {}", first.len(), row.len()),
                ));
            }
        }
        features.push(row.into_iter().map(T::of).collect());
    }
    if features.len() != coords.len() {
        return Err(Error::RowCount {
            left: cells_path.to_path_buf(),
            left_rows: coords.len(),
            right: features_path.to_path_buf(),
            right_rows: features.len(),
        });
    }
    let cells = coords
        .into_iter()
        .zip(features)
        .enumerate()
        .map(|(id, ((_, lat, lon), features))| Cell {
            id,
            lat: T::of(lat),
            lon: T::of(lon),
            features,
        })
        .collect();
    SurveyGrid::new(cells, Provenance::Loaded)
}

/// Great-circle distance in radians on the unit sphere.
pub fn great_circle(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin()
}
