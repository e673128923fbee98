use proptest::prelude::*;
use rand::SeedableRng;

use activerange::eval::{average_precision, map_at, RunTrace, StepRecord};
use activerange::geo::{build_fibonacci_grid, encode_trig, load_grid, FeatureEncoder, Provenance};
use activerange::hypothesis::{
    committee_prediction, predict, Committee, Hypothesis, HypothesisSet, Observation, ObservationLog, PosteriorState,
    PredictionTable,
};
use activerange::learner::{fit_logistic_report, weighted_average_model, LogisticObjective, TrainConfig};
use activerange::oracle::{query_label, GroundTruth, NoiseModel};
use activerange::strategies::{
    select_hss, select_positive_logits, select_uncertain, select_uncertain_logits, QueryContext, RunRng,
    StrategyOptions,
};
use activerange::{Cell, Error, FittedModel, Grid, VoteMode};

/// Grid whose cells carry the 1-d feature `xs[i]`.
fn line_grid(xs: &[f64]) -> Grid {
    let cells = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| Cell {
            id: i,
            lat: -89.0 + 178.0 * i as f64 / xs.len() as f64,
            lon: 0.0,
            features: vec![x],
        })
        .collect();
    Grid::new(cells, Provenance::Loaded).unwrap()
}

struct Fixture {
    grid: Grid,
    set: HypothesisSet<f64>,
    table: PredictionTable<f64>,
    log: ObservationLog,
    train: TrainConfig,
    rng: RunRng,
}

impl Fixture {
    fn new(xs: &[f64]) -> Self {
        let grid = line_grid(xs);
        let set = HypothesisSet::new(vec![Hypothesis::new("id", vec![1.0], 0.0).unwrap()]).unwrap();
        let table = set.prediction_table(&grid).unwrap();
        Self {
            grid,
            set,
            table,
            log: ObservationLog::new(),
            train: TrainConfig::default(),
            rng: RunRng::seed_from_u64(0),
        }
    }

    fn ctx(&mut self) -> QueryContext<'_, f64> {
        QueryContext {
            grid: &self.grid,
            set: &self.set,
            table: &self.table,
            log: &self.log,
            valid: None,
            train: &self.train,
            options: StrategyOptions::default(),
            rng: &mut self.rng,
        }
    }
}

fn prob() -> impl Strategy<Value = f64> {
    0.05f64..0.95
}

/// `k` members × `n` cells of probabilities, plus observed labels on a prefix of cells.
fn committee_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(k, t)| {
        (
            prop::collection::vec(prop::collection::vec(prob(), t + 1), k),
            prop::collection::vec(any::<bool>(), t),
        )
    })
}

fn log_of(labels: &[bool]) -> ObservationLog {
    ObservationLog::from_entries(labels.iter().enumerate().map(|(c, &y)| Observation::new(c, y))).unwrap()
}

proptest! {
    #[test]
    fn trig_encoding_is_periodic_and_bounded(lat in -90.0f64..=90.0, lon in -180.0f64..180.0) {
        let a = encode_trig(lat, lon).unwrap();
        prop_assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(a, encode_trig(lat, lon).unwrap());
        // the formula itself is 360-periodic even where the domain check would refuse
        let shifted = [(lon - 360.0).to_radians().sin(), (lon - 360.0).to_radians().cos()];
        prop_assert!((a[2] - shifted[0]).abs() < 1e-12 && (a[3] - shifted[1]).abs() < 1e-12);
    }

    #[test]
    fn fibonacci_grid_has_requested_count(n in 2usize..400) {
        let g: Grid = build_fibonacci_grid(n, &FeatureEncoder::TrigLoc, None).unwrap();
        prop_assert_eq!(g.len(), n);
        prop_assert!(g.cells().iter().all(|c| (-90.0..=90.0).contains(&c.lat) && (-180.0..180.0).contains(&c.lon)));
    }

    #[test]
    fn posterior_permutes_with_members((rows, labels) in committee_instance(), seed in any::<u64>()) {
        let log = log_of(&labels);
        let post = Committee::new(rows.iter().map(Vec::as_slice).collect()).unwrap().posterior(&log).unwrap();
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut RunRng::seed_from_u64(seed));
        let permuted: Vec<&[f64]> = perm.iter().map(|&i| rows[i].as_slice()).collect();
        let post2 = Committee::new(permuted).unwrap().posterior(&log).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((post2.weights[j] - post.weights[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_matches_products((rows, labels) in committee_instance()) {
        let post = Committee::new(rows.iter().map(Vec::as_slice).collect()).unwrap().posterior(&log_of(&labels)).unwrap();
        let products: Vec<f64> = rows
            .iter()
            .map(|r| labels.iter().enumerate().map(|(c, &y)| if y { r[c] } else { 1.0 - r[c] }).product())
            .collect();
        let z: f64 = products.iter().sum();
        for (w, p) in post.weights.iter().zip(&products) {
            prop_assert!((w - p / z).abs() < 1e-9);
        }
        prop_assert!((post.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evidence_moves_weight_ratio(
        (rows, labels) in committee_instance(),
        pa in prob(),
        pb in prob(),
        present in any::<bool>(),
    ) {
        prop_assume!(rows.len() >= 2 && (pa - pb).abs() > 1e-3);
        let t = labels.len();
        let mut rows = rows;
        rows[0][t] = pa;
        rows[1][t] = pb;
        let committee = Committee::new(rows.iter().map(Vec::as_slice).collect()).unwrap();
        let before = committee.posterior(&log_of(&labels)).unwrap();
        let mut log = log_of(&labels);
        log.push(Observation::new(t, present)).unwrap();
        let after = committee.posterior(&log).unwrap();
        let (ma, mb) = if present { (pa, pb) } else { (1.0 - pa, 1.0 - pb) };
        let r0 = before.weights[0] / before.weights[1];
        let r1 = after.weights[0] / after.weights[1];
        if ma > mb {
            prop_assert!(r1 > r0);
        } else {
            prop_assert!(r1 < r0);
        }
    }

    #[test]
    fn extreme_log_likelihoods_normalize(lls in prop::collection::vec(-1e6f64..0.0, 1..20)) {
        let post = PosteriorState::from_log_likelihoods(lls);
        prop_assert!(post.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        prop_assert!((post.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_member_committee_is_predict(w in prop::collection::vec(-3.0f64..3.0, 1..6), b in -3.0f64..3.0, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = RunRng::seed_from_u64(seed);
        let x: Vec<f64> = (0..w.len()).map(|_| r.random_range(-2.0..2.0)).collect();
        let h = Hypothesis::new("h", w, b).unwrap();
        let p = predict(&h, &x).unwrap();
        let set = HypothesisSet::new(vec![h]).unwrap();
        let post = PosteriorState::uniform(1);
        prop_assert_eq!(committee_prediction(&set, &post, &x, VoteMode::Soft).unwrap(), p);
    }

    #[test]
    fn hard_equals_soft_on_binary_predictions(
        rows in (1usize..6, 2usize..30).prop_flat_map(|(k, n)| prop::collection::vec(prop::collection::vec(any::<bool>(), n), k)),
        lls in prop::collection::vec(-5.0f64..0.0, 6),
    ) {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect();
        let committee = Committee::new(rows.iter().map(Vec::as_slice).collect()).unwrap();
        let post = PosteriorState::from_log_likelihoods(lls[..rows.len()].to_vec());
        prop_assert_eq!(committee.scores(&post, VoteMode::Soft).unwrap(), committee.scores(&post, VoteMode::Hard).unwrap());
    }

    #[test]
    fn gradient_matches_central_differences(
        (xs, ys, params) in (1usize..6, 2usize..10).prop_flat_map(|(d, n)| (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(-2.0f64..2.0, d + 1),
        )),
        l2 in 0.0f64..3.0,
    ) {
        let obj = LogisticObjective::new(xs.iter().map(Vec::as_slice).collect(), ys, l2).unwrap();
        let g = obj.gradient(&params);
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0f64;
        for j in 0..params.len() {
            let mut up = params.clone();
            let mut dn = params.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
            num += (g[j] - fd).powi(2);
            den = den.max(g[j].abs()).max(fd.abs());
        }
        prop_assert!(num.sqrt() <= 1e-4 * den.max(1e-8));
    }

    #[test]
    fn fit_objective_never_increases(
        xs in prop::collection::vec(-3.0f64..3.0, 4..12),
        flips in prop::collection::vec(any::<bool>(), 12),
    ) {
        let grid = line_grid(&xs);
        let mut labels: Vec<bool> = xs.iter().zip(&flips).map(|(&x, &f)| (x > 0.0) ^ f).collect();
        labels[0] = true;
        labels[1] = false;
        let report = fit_logistic_report(&log_of(&labels), &grid, &TrainConfig::default()).unwrap();
        prop_assert!(report.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn averaged_model_in_member_box(
        members in (1usize..6, 1usize..5).prop_flat_map(|(k, d)| prop::collection::vec((prop::collection::vec(-5.0f64..5.0, d), -5.0f64..5.0), k)),
        lls in prop::collection::vec(-10.0f64..0.0, 6),
    ) {
        let set = HypothesisSet::new(members.iter().map(|(w, b)| Hypothesis::new("h", w.clone(), *b).unwrap()).collect()).unwrap();
        let post = PosteriorState::from_log_likelihoods(lls[..set.len()].to_vec());
        let m = weighted_average_model(&set, &post).unwrap();
        for j in 0..set.feature_dim() {
            let lo = members.iter().map(|(w, _)| w[j]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|(w, _)| w[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.weights[j] >= lo - 1e-12 && m.weights[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn uncertain_follows_permutation(logits in prop::collection::vec(-5.0f64..5.0, 2..40), seed in any::<u64>()) {
        let mut fx = Fixture::new(&logits);
        let pick = select_uncertain_logits(&logits, &fx.ctx()).unwrap();
        // brute-force argmin with lowest-id tie break
        let best = (0..logits.len()).min_by(|&a, &b| logits[a].abs().total_cmp(&logits[b].abs()).then(a.cmp(&b))).unwrap();
        prop_assert_eq!(pick, best);

        let mut perm: Vec<usize> = (0..logits.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut RunRng::seed_from_u64(seed));
        let permuted: Vec<f64> = perm.iter().map(|&i| logits[i]).collect();
        let mut fx2 = Fixture::new(&permuted);
        let p2 = select_uncertain_logits(&permuted, &fx2.ctx()).unwrap();
        prop_assert_eq!(permuted[p2].abs(), logits[pick].abs());
        let tied: Vec<usize> = (0..permuted.len()).filter(|&j| permuted[j].abs() == logits[pick].abs()).collect();
        prop_assert_eq!(p2, tied[0]);
    }

    #[test]
    fn positive_is_argmax_with_low_id_ties(levels in prop::collection::vec(0u8..5, 1..40)) {
        let logits: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
        let mut fx = Fixture::new(&logits);
        let pick = select_positive_logits(&logits, &fx.ctx()).unwrap();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(pick, logits.iter().position(|&v| v == top).unwrap());
    }

    #[test]
    fn concentrated_hss_agrees_with_uncertain(
        ws in prop::collection::vec((-3.0f64..3.0, -2.0f64..2.0), 2..5),
        xs in prop::collection::vec(-3.0f64..3.0, 3..30),
        j in any::<prop::sample::Index>(),
    ) {
        let mut fx = Fixture::new(&xs);
        let set = HypothesisSet::new(ws.iter().map(|&(w, b)| Hypothesis::new("h", vec![w], b).unwrap()).collect()).unwrap();
        let j = j.index(set.len());
        let mut lls = vec![-40.0; set.len()];
        lls[j] = 0.0;
        let post = PosteriorState::from_log_likelihoods(lls);
        prop_assert!(post.weights[j] > 1.0 - 1e-9);
        let h = &set.members()[j];
        let model = FittedModel { weights: h.weights.clone(), bias: h.bias, source: activerange::learner::ModelSource::Averaged };
        let ctx = fx.ctx();
        let a = select_hss(&set, &post, &ctx, VoteMode::Soft).unwrap();
        let b = select_uncertain(&model, &ctx).unwrap();
        // distinct scores are needed for the two orderings to coincide
        let z = |c: usize| (h.weights[0] * xs[c] + h.bias).abs();
        prop_assume!((0..xs.len()).filter(|&c| c != b).all(|c| (z(c) - z(b)).abs() > 1e-6));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ap_invariant_under_increasing_transform(
        scores in prop::collection::vec(-5.0f64..5.0, 1..50),
        labels in prop::collection::vec(any::<bool>(), 50),
    ) {
        let labels = &labels[..scores.len()];
        prop_assume!(labels.iter().any(|&y| y));
        let a = average_precision(&scores, labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert!((a - average_precision(&transformed, labels).unwrap()).abs() < 1e-12);
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn ap_matches_precision_recall_integration(
        scores in prop::collection::vec(0u8..8, 1..50),
        labels in prop::collection::vec(any::<bool>(), 50),
    ) {
        let labels = &labels[..scores.len()];
        prop_assume!(labels.iter().any(|&y| y));
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        // step-wise integration of precision over recall
        let n_pos = labels.iter().filter(|&&y| y).count() as f64;
        let (mut tp, mut prev_recall, mut area) = (0.0, 0.0, 0.0);
        for (k, &i) in order.iter().enumerate() {
            if labels[i] {
                tp += 1.0;
            }
            let recall = tp / n_pos;
            area += (recall - prev_recall) * tp / (k + 1) as f64;
            prev_recall = recall;
        }
        prop_assert!((average_precision(&s, labels).unwrap() - area).abs() < 1e-12);
    }

    #[test]
    fn map_ignores_species_order(aps in prop::collection::vec(0.0f64..1.0, 1..12), seed in any::<u64>()) {
        let trace = |i: usize, ap: f64| RunTrace {
            strategy: "s".into(),
            species: format!("sp{i}"),
            species_index: i,
            seed: 0,
            records: vec![StepRecord { t: 0, queried_cell: 0, label: false, ap }],
        };
        let traces: Vec<RunTrace> = aps.iter().enumerate().map(|(i, &a)| trace(i, a)).collect();
        let mut shuffled = traces.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut RunRng::seed_from_u64(seed));
        let a = map_at(&traces, 0).unwrap().mean;
        let b = map_at(&shuffled, 0).unwrap().mean;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn oracle_never_reports_false_presence(rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let gt = GroundTruth::new(vec![true, false, false], None, "s").unwrap();
        let mut noise = NoiseModel::new(rate, seed).unwrap();
        for _ in 0..20 {
            prop_assert!(!query_label(&gt, &mut noise, 1).unwrap());
            prop_assert!(!query_label(&gt, &mut noise, 2).unwrap());
        }
    }

    #[test]
    fn noiseless_oracle_is_pure(labels in prop::collection::vec(any::<bool>(), 2..30), seeds in (any::<u64>(), any::<u64>())) {
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let gt = GroundTruth::new(labels.clone(), None, "s").unwrap();
        let mut a = NoiseModel::new(0.0, seeds.0).unwrap();
        let mut b = NoiseModel::new(0.0, seeds.1).unwrap();
        for (c, &y) in labels.iter().enumerate() {
            prop_assert_eq!(query_label(&gt, &mut a, c).unwrap(), y);
            prop_assert_eq!(query_label(&gt, &mut b, c).unwrap(), y);
        }
    }
}

#[test]
fn grid_row_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cells = dir.path().join("cells.csv");
    let feats = dir.path().join("features.csv");
    std::fs::write(&cells, "id,lat,lon\n0,10,20\n1,-5,30\n2,40,-100\n").unwrap();
    std::fs::write(&feats, "0.1,0.2\n0.3,0.4\n").unwrap();
    match load_grid::<f64>(&cells, &feats) {
        Err(Error::RowCount {
            left_rows: 3,
            right_rows: 2,
            ..
        }) => {}
        other => panic!("expected a row-count error, got {other:?}"),
    }
}

#[test]
fn non_finite_feature_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let cells = dir.path().join("cells.csv");
    let feats = dir.path().join("features.csv");
    std::fs::write(&cells, "id,lat,lon\n0,10,20\n1,-5,30\n").unwrap();
    std::fs::write(&feats, "0.1,0.2\n0.3,NaN\n").unwrap();
    match load_grid::<f64>(&cells, &feats) {
        Err(Error::Parse { line: 2, .. }) => {}
        other => panic!("expected a parse error on line 2, got {other:?}"),
    }
}

#[test]
fn three_row_grid_loads() {
    let dir = tempfile::tempdir().unwrap();
    let cells = dir.path().join("cells.csv");
    let feats = dir.path().join("features.csv");
    std::fs::write(&cells, "id,lat,lon\n0,10,20\n1,-5,30\n2,40,-100\n").unwrap();
    std::fs::write(&feats, "0.1,0.2\n0.3,0.4\n0.5,0.6\n").unwrap();
    let g = load_grid::<f32>(&cells, &feats).unwrap();
    assert_eq!(g.len(), 3);
    assert_eq!(g.feature_dim(), 2);
    assert_eq!(g.provenance(), Provenance::Loaded);
}

#[test]
fn every_selector_avoids_sampled_cells() {
    use activerange::experiment::{run_species, ExperimentConfig, RunSettings, WorldSource};
    use activerange::{SynthConfig, World};
    let cfg = ExperimentConfig {
        n_species: 2,
        n_seeds: 1,
        n_timesteps: 15,
        world: WorldSource::Synth(SynthConfig {
            n_cells: 400,
            n_hypotheses: 30,
            feature_dim: 16,
            ..SynthConfig::default()
        }),
        ..ExperimentConfig::default()
    };
    let world = World::build(&cfg).unwrap();
    let settings = RunSettings::from_config(&cfg);
    let names = [
        "LR_random",
        "LR_uncertain",
        "LR_EMC",
        "LR_HSS",
        "LR_QBC",
        "LR_positive",
        "WA_random",
        "WA_uncertain",
        "WA_positive",
        "WA_HSS",
        "WA_random+",
        "WA_uncertain+",
        "WA_positive+",
        "WA_HSS+",
    ];
    for name in names {
        let spec = name.parse().unwrap();
        for s in 0..world.species.len() {
            let mut init = Vec::new();
            let trace = run_species(&world, &settings, &spec, s, 0, &mut |t, _, log| {
                if t == 0 {
                    init = log.entries().iter().map(|o| o.cell_id).collect();
                }
            })
            .unwrap();
            let mut seen = init.clone();
            seen.extend(trace.records.iter().map(|r| r.queried_cell));
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), n, "{name} repeated a cell");
        }
    }
}

#[test]
fn f32_and_f64_agree_on_small_world() {
    use activerange::experiment::{run_on_world, ExperimentConfig, World, WorldSource};
    use activerange::SynthConfig;
    let cfg = ExperimentConfig {
        n_species: 2,
        n_seeds: 1,
        n_timesteps: 3,
        strategies: vec!["LR_random".into()],
        world: WorldSource::Synth(SynthConfig {
            n_cells: 300,
            n_hypotheses: 10,
            feature_dim: 8,
            ..SynthConfig::default()
        }),
        ..ExperimentConfig::default()
    };
    let a = run_on_world(&World::<f64>::build(&cfg).unwrap(), &cfg).unwrap();
    let b = run_on_world(&World::<f32>::build(&cfg).unwrap(), &cfg).unwrap();
    for (x, y) in a.traces.iter().zip(&b.traces) {
        for (r, s) in x.records.iter().zip(&y.records) {
            assert_eq!(r.queried_cell, s.queried_cell);
            assert!((r.ap - s.ap).abs() < 1e-3);
        }
    }
}
