//! Mini-batch construction, the joint training loop of both towers and the
//! learning-rate grid search.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::network::{init_tower, sgd_step, OptimizerState, Tower};
use crate::numerics::Matrix;
use crate::objective::{evaluate, residuals, BatchActivations, LossReport, ObjectiveParams, PairLabel, PreActivations};
use crate::rng::{self, Rng};
use crate::scalar::Real;
use crate::types::{labels_intersect, Modality, TrainConfig, TrainingSets};

/// Objective values above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Smallest share of similar pairs kept in a batch when the pool has any.
pub const MIN_SIMILAR_FRACTION: f64 = 0.25;

/// Row selection of one mini-batch. Indices refer to `x_pool` / `y_pool`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub aux_x: Vec<usize>,
    pub aux_y: Vec<usize>,
    pub target_x: Vec<usize>,
    pub target_y: Vec<usize>,
    /// Pairs indexing positions in `aux_x` / `aux_y`.
    pub pairs: Vec<PairLabel>,
}

impl Batch {
    pub fn similar_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.similar).count()
    }

    /// Input rows for each tower: auxiliary rows followed by target rows.
    pub fn inputs<T: Real>(&self, sets: &TrainingSets<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let xf = sets.x_pool.features();
        let yf = sets.y_pool.features();
        let x = Matrix::vstack(&[&xf.select_rows(&self.aux_x), &xf.select_rows(&self.target_x)])?;
        let y = Matrix::vstack(&[&yf.select_rows(&self.aux_y), &yf.select_rows(&self.target_y)])?;
        Ok((x, y))
    }
}

/// Draws one mini-batch.
///
/// `B/2` relations are drawn from `S` (a similar one with probability one
/// half when `S` has both kinds); their endpoints form the auxiliary rows and
/// every cross pair among them is labeled, from `S` when listed and by label
/// intersection otherwise. Pairs with neither source of supervision are
/// dropped. Similar pairs are duplicated until they make up at least a
/// quarter of the labeled pairs. `B/2` target rows per modality are drawn
/// with replacement for the MMD terms.
pub fn sample_batch<T: Real>(sets: &TrainingSets<T>, cfg: &TrainConfig, rng: &mut Rng) -> Result<Batch> {
    let rels = sets.relations.pairs();
    if rels.is_empty() || sets.aux_x_count == 0 || sets.aux_y_count == 0 {
        return Err(Error::Empty("sample_batch: auxiliary pools or relations"));
    }
    let half = (cfg.batch_size / 2).max(1);
    let similar: Vec<usize> = (0..rels.len()).filter(|&i| rels[i].similar).collect();
    let dissimilar: Vec<usize> = (0..rels.len()).filter(|&i| !rels[i].similar).collect();

    let mut aux_x = Vec::with_capacity(half);
    let mut aux_y = Vec::with_capacity(half);
    for _ in 0..half {
        let from = if similar.is_empty() {
            &dissimilar
        } else if dissimilar.is_empty() || rng.random_bool(0.5) {
            &similar
        } else {
            &dissimilar
        };
        let r = rels[from[rng.random_range(0..from.len())]];
        aux_x.push(r.x);
        aux_y.push(r.y);
    }

    let lookup = sets.relations.lookup();
    let xl = sets.x_pool.labels();
    let yl = sets.y_pool.labels();
    let mut pairs = Vec::with_capacity(half * half);
    for (i, &x) in aux_x.iter().enumerate() {
        for (j, &y) in aux_y.iter().enumerate() {
            let label = lookup.get(&(x, y)).copied().or_else(|| {
                (!xl[x].is_empty() && !yl[y].is_empty()).then(|| labels_intersect(&xl[x], &yl[y]))
            });
            if let Some(similar) = label {
                pairs.push(PairLabel { x: i, y: j, similar });
            }
        }
    }

    let sim: Vec<PairLabel> = pairs.iter().copied().filter(|p| p.similar).collect();
    if !sim.is_empty() {
        let mut k = 0;
        while ((sim.len() + k) as f64) < MIN_SIMILAR_FRACTION * pairs.len() as f64 {
            pairs.push(sim[k % sim.len()]);
            k += 1;
        }
    }

    let draw = |rng: &mut Rng, start: usize, count: usize| -> Vec<usize> {
        if count == 0 {
            return Vec::new();
        }
        (0..half).map(|_| start + rng.random_range(0..count)).collect()
    };
    let target_x = draw(rng, sets.aux_x_count, sets.target_x_count());
    let target_y = draw(rng, sets.aux_y_count, sets.target_y_count());

    Ok(Batch {
        aux_x,
        aux_y,
        target_x,
        target_y,
        pairs,
    })
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Objective of the untrained towers on the first batch.
    pub initial: Option<LossReport>,
    /// Mean loss components over each completed epoch.
    pub epochs: Vec<LossReport>,
    pub seconds: Vec<f64>,
    pub config: Option<TrainConfig>,
}

impl TrainLog {
    /// Line-delimited records `epoch L Q Dq Dd C seconds`; the initial
    /// objective, when present, is epoch 0 with zero seconds.
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch L Q Dq Dd C seconds\n");
        let mut line = |e: usize, r: &LossReport, secs: f64| {
            let _ = writeln!(s, "{e} {} {} {} {} {} {secs}", r.l, r.q, r.dq, r.dd, r.c);
        };
        if let Some(r) = &self.initial {
            line(0, r, 0.0);
        }
        for (i, (r, secs)) in self.epochs.iter().zip(&self.seconds).enumerate() {
            line(i + 1, r, *secs);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub tower_x: Tower<T>,
    pub tower_y: Tower<T>,
    pub log: TrainLog,
}

/// Iterations per epoch: `|S| / B`, at least one.
pub fn iterations_per_epoch(relations: usize, batch_size: usize) -> usize {
    (relations / batch_size).max(1)
}

/// Freshly initialized towers for `cfg` and the pool dimensions.
pub fn initial_towers<T: Real>(sets: &TrainingSets<T>, cfg: &TrainConfig) -> Result<(Tower<T>, Tower<T>)> {
    let tx = init_tower(
        &cfg.layer_sizes(Modality::X, sets.x_pool.dim()),
        rng::stream_seed(cfg.seed, rng::STREAM_INIT_X),
    )?;
    let ty = init_tower(
        &cfg.layer_sizes(Modality::Y, sets.y_pool.dim()),
        rng::stream_seed(cfg.seed, rng::STREAM_INIT_Y),
    )?;
    Ok((tx, ty))
}

/// Work state shared by the training loop and single-step callers.
pub struct Trainer<'a, T> {
    sets: &'a TrainingSets<T>,
    cfg: TrainConfig,
    pub tower_x: Tower<T>,
    pub tower_y: Tower<T>,
    opt_x: OptimizerState<T>,
    opt_y: OptimizerState<T>,
    rng: Rng,
    iteration: usize,
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepReport<T> {
    /// Loss before the update.
    pub loss: LossReport,
    pub batch: Batch,
    /// Residuals of the target rows (query then database modality).
    pub target_residuals: (Matrix<T>, Matrix<T>),
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(sets: &'a TrainingSets<T>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if sets.relations.is_empty() {
            return Err(Error::Empty("train: relation set"));
        }
        let (tower_x, tower_y) = initial_towers(sets, cfg)?;
        let opt = |t: &Tower<T>| OptimizerState::new(t, cfg.learning_rate, cfg.momentum, cfg.hash_lr_multiplier);
        Ok(Trainer {
            sets,
            cfg: cfg.clone(),
            opt_x: opt(&tower_x),
            opt_y: opt(&tower_y),
            tower_x,
            tower_y,
            rng: rng::stream(cfg.seed, rng::STREAM_SAMPLING),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Samples a batch and applies one joint update to both towers.
    pub fn step(&mut self, epoch: usize) -> Result<StepReport<T>> {
        let batch = sample_batch(self.sets, &self.cfg, &mut self.rng)?;
        self.step_on(batch, epoch)
    }

    /// One joint update on a given batch.
    pub fn step_on(&mut self, batch: Batch, epoch: usize) -> Result<StepReport<T>> {
        self.iteration += 1;
        let (xin, yin) = batch.inputs(self.sets)?;
        let trace_x = self.tower_x.forward(&xin)?;
        let trace_y = self.tower_y.forward(&yin)?;
        if !trace_x.output().is_finite() || !trace_y.output().is_finite() {
            return Err(Error::Diverged {
                epoch,
                iteration: self.iteration,
                value: f64::NAN,
            });
        }
        let (zx, zq) = trace_x.output().split_rows(batch.aux_x.len());
        let (zy, zd) = trace_y.output().split_rows(batch.aux_y.len());
        let (px, pq) = trace_x.pre_output().split_rows(batch.aux_x.len());
        let (py, pd) = trace_y.pre_output().split_rows(batch.aux_y.len());

        let acts = BatchActivations::new(zx, zy, zq, zd, batch.pairs.clone())?;
        let params = ObjectiveParams::resolve(&self.cfg, &acts);
        let loss = evaluate(&acts, &params)?;
        if !loss.c.is_finite() || loss.c > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                epoch,
                iteration: self.iteration,
                value: loss.c,
            });
        }
        let pre = PreActivations {
            zx: px,
            zy: py,
            zq: pq,
            zd: pd,
        };
        let res = residuals(&acts, &params, &pre)?;
        let gx = self.tower_x.backward(&trace_x, &Matrix::vstack(&[&res.zx, &res.zq])?)?;
        let gy = self.tower_y.backward(&trace_y, &Matrix::vstack(&[&res.zy, &res.zd])?)?;
        sgd_step(&mut self.tower_x, &gx, &mut self.opt_x)?;
        sgd_step(&mut self.tower_y, &gy, &mut self.opt_y)?;
        Ok(StepReport {
            loss,
            batch,
            target_residuals: (res.zq, res.zd),
        })
    }
}

/// Trains both towers jointly on `sets`.
///
/// Each epoch runs `max(1, |S|/B)` iterations; the log records the mean
/// loss components of every epoch. Training aborts with
/// [`Error::Diverged`] when the objective is non-finite or exceeds
/// [`DIVERGENCE_LIMIT`].
pub fn train<T: Real>(sets: &TrainingSets<T>, cfg: &TrainConfig) -> Result<Trained<T>> {
    train_with(sets, cfg, |_, _| {})
}

/// [`train`] with a callback after every completed epoch.
pub fn train_with<T: Real>(
    sets: &TrainingSets<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossReport),
) -> Result<Trained<T>> {
    let mut tr = Trainer::new(sets, cfg)?;
    let mut log = TrainLog {
        config: Some(cfg.clone()),
        ..TrainLog::default()
    };
    let iters = iterations_per_epoch(sets.relations.len(), cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut sum = LossReport::default();
        for _ in 0..iters {
            let r = tr.step(epoch)?.loss;
            if log.initial.is_none() {
                log.initial = Some(r);
            }
            sum.l += r.l;
            sum.q += r.q;
            sum.dq += r.dq;
            sum.dd += r.dd;
            sum.c += r.c;
        }
        let n = iters as f64;
        let mean = LossReport {
            l: sum.l / n,
            q: sum.q / n,
            dq: sum.dq / n,
            dd: sum.dd / n,
            c: sum.c / n,
        };
        on_epoch(epoch, &mean);
        log.epochs.push(mean);
        log.seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(Trained {
        tower_x: tr.tower_x,
        tower_y: tr.tower_y,
        log,
    })
}

/// The nine learning rates `10^-5, 10^-4.5, …, 10^-1`.
pub fn default_lr_grid() -> Vec<f64> {
    (0..9)
        .map(|k| {
            let whole = 1.0 / 10f64.powi(5 - k / 2);
            if k % 2 == 0 {
                whole
            } else {
                whole * 10f64.sqrt()
            }
        })
        .collect()
}

/// Outcome of [`grid_search_lr`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSearch {
    pub best: f64,
    pub best_score: f64,
    /// Every candidate with its holdout score or failure message.
    pub scores: Vec<(f64, std::result::Result<f64, String>)>,
}

/// Trains one model per learning rate in `grid` and keeps the one with the
/// highest `holdout` score; ties go to the smaller rate.
pub fn grid_search_lr<T: Real>(
    sets: &TrainingSets<T>,
    cfg: &TrainConfig,
    grid: &[f64],
    mut holdout: impl FnMut(&Tower<T>, &Tower<T>) -> Result<f64>,
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::Empty("grid_search_lr: candidate grid"));
    }
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(order.len());
    let mut best: Option<(f64, f64)> = None;
    for &lr in &order {
        let run = TrainConfig {
            learning_rate: lr,
            ..cfg.clone()
        };
        let outcome = train(sets, &run).and_then(|t| holdout(&t.tower_x, &t.tower_y)).and_then(|s| {
            if s.is_finite() {
                Ok(s)
            } else {
                Err(Error::NonFinite("holdout score"))
            }
        });
        match outcome {
            Ok(s) => {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((lr, s));
                }
                scores.push((lr, Ok(s)));
            }
            Err(e) => scores.push((lr, Err(e.to_string()))),
        }
    }
    match best {
        Some((best, best_score)) => Ok(GridSearch {
            best,
            best_score,
            scores,
        }),
        None => Err(Error::AllCandidatesFailed(
            scores
                .into_iter()
                .filter_map(|(lr, r)| r.err().map(|e| format!("lr {lr:e}: {e}")))
                .collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{build_training_sets, Domain, FeatureDataset, Relation, RelationSet};

    fn toy_sets(similar_everywhere: bool) -> TrainingSets<f64> {
        let mut r = rng::stream(3, "toy");
        let n = 12;
        let labels: Vec<Vec<u32>> = (0..n).map(|i| vec![(i % 3) as u32]).collect();
        let fx = Matrix::from_fn(n, 5, |i, k| (i % 3) as f64 + 0.1 * k as f64 + r.random_range(-0.1..0.1));
        let fy = Matrix::from_fn(n, 4, |i, k| -((i % 3) as f64) + 0.2 * k as f64 + r.random_range(-0.1..0.1));
        let ax = FeatureDataset::new(Modality::X, Domain::Auxiliary, fx.clone(), labels.clone()).unwrap();
        let ay = FeatureDataset::new(Modality::Y, Domain::Auxiliary, fy.clone(), labels.clone()).unwrap();
        let q = FeatureDataset::new(Modality::X, Domain::Target, fx.map(|v| v + 0.5), labels.clone()).unwrap();
        let d = FeatureDataset::new(Modality::Y, Domain::Target, fy.map(|v| v - 0.5), labels).unwrap();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| [(i, i), (i, (i + 1) % n)]).collect();
        let rels = if similar_everywhere {
            RelationSet::from_labels(&pairs, ax.labels(), ay.labels()).unwrap()
        } else {
            let rels = pairs.iter().map(|&(x, y)| Relation { x, y, similar: false }).collect();
            RelationSet::new(rels, n, n).unwrap()
        };
        build_training_sets(&ax, &ay, &rels, &q, &d, 6, 6, 1).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            bits: 4,
            batch_size: 8,
            epochs: 3,
            hidden_x: vec![6],
            hidden_y: vec![6],
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_of_four_has_two_rows_and_four_pairs() {
        let sets = toy_sets(true);
        let cfg = TrainConfig {
            batch_size: 4,
            ..small_cfg()
        };
        let mut r = rng::stream(0, rng::STREAM_SAMPLING);
        for _ in 0..20 {
            let b = sample_batch(&sets, &cfg, &mut r).unwrap();
            assert_eq!((b.aux_x.len(), b.aux_y.len()), (2, 2));
            assert_eq!((b.target_x.len(), b.target_y.len()), (2, 2));
            assert!(b.pairs.len() >= 4);
            // the four distinct cross pairs plus at most one duplicated similar pair
            let mut distinct: Vec<(usize, usize)> = b.pairs.iter().map(|p| (p.x, p.y)).collect();
            distinct.sort_unstable();
            distinct.dedup();
            assert_eq!(distinct.len(), 4);
            assert!(b.target_x.iter().all(|&i| i >= sets.aux_x_count));
        }
    }

    #[test]
    fn batches_are_balanced_and_deterministic() {
        let sets = toy_sets(true);
        let cfg = small_cfg();
        let mut a = rng::stream(5, rng::STREAM_SAMPLING);
        let mut b = rng::stream(5, rng::STREAM_SAMPLING);
        for _ in 0..20 {
            let ba = sample_batch(&sets, &cfg, &mut a).unwrap();
            assert_eq!(ba, sample_batch(&sets, &cfg, &mut b).unwrap());
            let sim = ba.similar_count();
            assert!(sim > 0 && sim < ba.pairs.len());
            assert!(sim as f64 >= MIN_SIMILAR_FRACTION * ba.pairs.len() as f64);
        }
    }

    #[test]
    fn dissimilar_only_pool_is_not_an_error() {
        let mut sets = toy_sets(false);
        // drop label supervision so only S labels the pairs
        let n = sets.x_pool.len();
        sets.x_pool = FeatureDataset::new(Modality::X, Domain::Auxiliary, sets.x_pool.features().clone(), vec![vec![]; n]).unwrap();
        let mut r = rng::stream(0, rng::STREAM_SAMPLING);
        let b = sample_batch(&sets, &small_cfg(), &mut r).unwrap();
        assert!(!b.pairs.is_empty());
        assert_eq!(b.similar_count(), 0);
    }

    #[test]
    fn empty_relations_error() {
        let mut sets = toy_sets(true);
        sets.relations = RelationSet::default();
        let mut r = rng::stream(0, rng::STREAM_SAMPLING);
        assert!(sample_batch(&sets, &small_cfg(), &mut r).is_err());
        assert!(train(&sets, &small_cfg()).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let sets = toy_sets(true);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let t = train(&sets, &cfg).unwrap();
        let (ix, iy) = initial_towers(&sets, &cfg).unwrap();
        assert_eq!(t.tower_x, ix);
        assert_eq!(t.tower_y, iy);
        assert!(t.log.epochs.is_empty() && t.log.initial.is_none());
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let sets = toy_sets(true);
        let a = train(&sets, &small_cfg()).unwrap();
        let b = train(&sets, &small_cfg()).unwrap();
        assert_eq!(a.tower_x, b.tower_x);
        assert_eq!(a.tower_y, b.tower_y);
        assert_eq!(a.log.epochs, b.log.epochs);
        assert_eq!(a.log.epochs.len(), 3);
        let text = a.log.to_text();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().nth(1).unwrap().split(' ').count(), 7);
    }

    #[test]
    fn no_mmd_leaves_target_rows_untouched() {
        let sets = toy_sets(true);
        let cfg = TrainConfig {
            ablation: crate::types::Ablation::NoMMD,
            ..small_cfg()
        };
        let mut tr = Trainer::new(&sets, &cfg).unwrap();
        for _ in 0..5 {
            let s = tr.step(1).unwrap();
            assert!(s.loss.dq > 0.0 || s.loss.dd > 0.0);
            assert!(s.target_residuals.0.as_slice().iter().all(|&v| v == 0.0));
            assert!(s.target_residuals.1.as_slice().iter().all(|&v| v == 0.0));
        }
        let mut tr = Trainer::new(&sets, &small_cfg()).unwrap();
        let s = tr.step(1).unwrap();
        assert!(s.target_residuals.0.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let sets = toy_sets(true);
        let mut tr = Trainer::new(&sets, &small_cfg()).unwrap();
        tr.step(1).unwrap();
        for v in tr.tower_x.weights_mut()[0].as_mut_slice() {
            *v = f64::MAX;
        }
        match tr.step(1) {
            Err(e @ Error::Diverged { iteration: 2, .. }) => assert!(e.to_string().contains("iteration 2")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lr_grid_spans_the_decades() {
        let g = default_lr_grid();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], 1e-5);
        assert_eq!(g[8], 1e-1);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_search_picks_best_and_breaks_ties_low() {
        let sets = toy_sets(true);
        let cfg = TrainConfig {
            epochs: 1,
            ..small_cfg()
        };
        let one = grid_search_lr(&sets, &cfg, &[3e-3], |_, _| Ok(0.5)).unwrap();
        assert_eq!(one.best, 3e-3);
        let tie = grid_search_lr(&sets, &cfg, &[1e-2, 1e-3, 1e-4], |_, _| Ok(0.5)).unwrap();
        assert_eq!(tie.best, 1e-4);
        let mut calls = 0;
        let pick = grid_search_lr(&sets, &cfg, &[1e-4, 1e-3, 1e-2], |_, _| {
            calls += 1;
            Ok(if calls == 2 { 0.9 } else { 0.1 })
        })
        .unwrap();
        assert_eq!(pick.best, 1e-3);
        assert_eq!(pick.scores.len(), 3);
    }

    #[test]
    fn grid_search_reports_every_failure() {
        let sets = toy_sets(true);
        let cfg = TrainConfig {
            epochs: 1,
            ..small_cfg()
        };
        match grid_search_lr(&sets, &cfg, &[1e-3, 1e-2], |_, _| Err(Error::invalid("boom"))) {
            Err(Error::AllCandidatesFailed(msgs)) => assert_eq!(msgs.len(), 2),
            other => panic!("expected failure list, got {other:?}"),
        }
    }
}
