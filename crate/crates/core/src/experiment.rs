//! End-to-end runs: train a variant, encode the target sets, and score
//! cross-modal retrieval in both directions.

use std::fmt::Write as _;
use std::time::Instant;

use crate::datagen::SynthData;
use crate::error::{Error, Result};
use crate::evaluation::{mean_average_precision, EvalReport};
use crate::network::Tower;
use crate::numerics::Matrix;
use crate::objective::quantization_gap;
use crate::retrieval::{binarize, CodeTable, HammingIndex};
use crate::scalar::Real;
use crate::training::{train, TrainLog};
use crate::types::{build_training_sets, Ablation, FeatureDataset, TrainConfig, TrainingSets};

/// Hash-layer activations and sign codes of a feature matrix.
pub fn encode<T: Real>(tower: &Tower<T>, features: &Matrix<T>) -> Result<(Matrix<T>, CodeTable)> {
    if tower.input_dim() != features.cols() {
        return Err(Error::invalid(format!(
            "tower expects {}-dimensional input, features have {} columns",
            tower.input_dim(),
            features.cols()
        )));
    }
    let z = tower.output(features)?;
    let codes = binarize(&z)?;
    Ok((z, codes))
}

/// Scores of one trained variant.
#[derive(Clone, Debug)]
pub struct VariantResult {
    pub ablation: Ablation,
    pub bits: usize,
    /// Query modality X against database modality Y.
    pub x_to_y: EvalReport,
    /// Database items as queries against the query items.
    pub y_to_x: EvalReport,
    /// Mean `1 − |z|` over all target activations.
    pub quantization_gap: f64,
    /// Mean `1 − |z|` over all auxiliary activations.
    pub aux_quantization_gap: f64,
    pub log: TrainLog,
    pub seconds: f64,
    /// Fingerprint of the target rows drawn into the training pools.
    pub split: u64,
}

impl VariantResult {
    pub fn mean_map(&self) -> f64 {
        0.5 * (self.x_to_y.map + self.y_to_x.map)
    }
}

/// Target items entering the training pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSizes {
    pub n_hat: usize,
    pub m_hat: usize,
}

impl PoolSizes {
    /// Every target item.
    pub fn all<T: Real>(data: &SynthData<T>) -> Self {
        PoolSizes {
            n_hat: data.query.len(),
            m_hat: data.database.len(),
        }
    }
}

/// Order-sensitive fingerprint of the target rows in the pools; equal
/// fingerprints mean identical splits.
pub fn split_fingerprint<T: Real>(sets: &TrainingSets<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let parts = [&sets.target_x_source, &sets.target_y_source];
    for (k, part) in parts.into_iter().enumerate() {
        for &v in part.iter().chain(std::iter::once(&usize::MAX)) {
            for b in (v as u64 ^ k as u64).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

pub fn training_sets<T: Real>(data: &SynthData<T>, pools: PoolSizes, seed: u64) -> Result<TrainingSets<T>> {
    build_training_sets(
        &data.aux_x,
        &data.aux_y,
        &data.relations,
        &data.query,
        &data.database,
        pools.n_hat,
        pools.m_hat,
        seed,
    )
}

/// MAP in both directions between a query-modality and a database-modality
/// set, plus the quantization gap of all their activations.
pub fn cross_modal_scores<T: Real>(
    tower_x: &Tower<T>,
    tower_y: &Tower<T>,
    query: &FeatureDataset<T>,
    database: &FeatureDataset<T>,
    cutoff: Option<usize>,
) -> Result<(EvalReport, EvalReport, f64)> {
    let (zq, cq) = encode(tower_x, query.features())?;
    let (zd, cd) = encode(tower_y, database.features())?;
    let x_to_y = mean_average_precision(
        &cq,
        query.labels(),
        &HammingIndex::new(cd.clone(), database.modality),
        database.labels(),
        cutoff,
    )?;
    let y_to_x = mean_average_precision(
        &cd,
        database.labels(),
        &HammingIndex::new(cq, query.modality),
        query.labels(),
        cutoff,
    )?;
    let (nq, nd) = (zq.as_slice().len() as f64, zd.as_slice().len() as f64);
    let gap = (quantization_gap(&zq) * nq + quantization_gap(&zd) * nd) / (nq + nd);
    Ok((x_to_y, y_to_x, gap))
}

/// Trains `cfg` on `data` and evaluates it on the target sets.
pub fn run_variant<T: Real>(data: &SynthData<T>, cfg: &TrainConfig, pools: PoolSizes) -> Result<VariantResult> {
    let start = Instant::now();
    let sets = training_sets(data, pools, cfg.seed)?;
    let trained = train(&sets, cfg)?;
    let (x_to_y, y_to_x, gap) = cross_modal_scores(&trained.tower_x, &trained.tower_y, &data.query, &data.database, None)?;
    let (zx, _) = encode(&trained.tower_x, data.aux_x.features())?;
    let (zy, _) = encode(&trained.tower_y, data.aux_y.features())?;
    let (nx, ny) = (zx.as_slice().len() as f64, zy.as_slice().len() as f64);
    let aux_gap = (quantization_gap(&zx) * nx + quantization_gap(&zy) * ny) / (nx + ny);
    Ok(VariantResult {
        ablation: cfg.ablation,
        bits: cfg.bits,
        x_to_y,
        y_to_x,
        quantization_gap: gap,
        aux_quantization_gap: aux_gap,
        log: trained.log,
        seconds: start.elapsed().as_secs_f64(),
        split: split_fingerprint(&sets),
    })
}

/// Every `(variant, bits)` combination on one dataset with shared splits.
pub fn ablation_study<T: Real>(
    data: &SynthData<T>,
    base: &TrainConfig,
    variants: &[Ablation],
    bits: &[usize],
    pools: PoolSizes,
    mut on_result: impl FnMut(&VariantResult),
) -> Result<Vec<VariantResult>> {
    let mut out = Vec::with_capacity(variants.len() * bits.len());
    for &ablation in variants {
        for &b in bits {
            let cfg = TrainConfig {
                ablation,
                bits: b,
                ..base.clone()
            };
            let r = run_variant(data, &cfg, pools)?;
            on_result(&r);
            out.push(r);
        }
    }
    Ok(out)
}

/// One row per variant, `X→Y` and `Y→X` MAP columns per bit width.
pub fn format_table(results: &[VariantResult]) -> String {
    let mut variants: Vec<Ablation> = Vec::new();
    let mut bits: Vec<usize> = Vec::new();
    for r in results {
        if !variants.contains(&r.ablation) {
            variants.push(r.ablation);
        }
        if !bits.contains(&r.bits) {
            bits.push(r.bits);
        }
    }
    let mut s = String::from("variant");
    for b in &bits {
        let _ = write!(s, " x2y@{b} y2x@{b}");
    }
    s.push('\n');
    for v in variants {
        s.push_str(v.name());
        for &b in &bits {
            match results.iter().find(|r| r.ablation == v && r.bits == b) {
                Some(r) => {
                    let _ = write!(s, " {:.4} {:.4}", r.x_to_y.map, r.y_to_x.map);
                }
                None => s.push_str(" - -"),
            }
        }
        s.push('\n');
    }
    s
}
