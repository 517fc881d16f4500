//! Datasets, supervised relations, training pools and the training
//! configuration.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng;
use crate::scalar::Real;

/// Feature space an item lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Query-side modality (e.g. image features).
    X,
    /// Database-side modality (e.g. text features).
    Y,
}

/// Source distribution of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Auxiliary,
    Target,
}

/// Sorted, duplicate-free category indices of one item.
pub type LabelSet = Vec<u32>;

/// Normalizes a label list into a [`LabelSet`].
pub fn label_set(mut labels: Vec<u32>) -> LabelSet {
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// True iff two sorted label sets share a category.
pub fn labels_intersect(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Feature matrix (one row per item) with modality, domain and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset<T> {
    pub modality: Modality,
    pub domain: Domain,
    features: Matrix<T>,
    labels: Vec<LabelSet>,
}

impl<T: Real> FeatureDataset<T> {
    pub fn new(
        modality: Modality,
        domain: Domain,
        features: Matrix<T>,
        labels: Vec<LabelSet>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Length {
                op: "FeatureDataset::new (rows vs labels)",
                left: features.rows(),
                right: labels.len(),
            });
        }
        let labels = labels.into_iter().map(label_set).collect();
        Ok(FeatureDataset {
            modality,
            domain,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[LabelSet] {
        &self.labels
    }

    /// Copy of the selected items, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        FeatureDataset {
            modality: self.modality,
            domain: self.domain,
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Same features, every label set emptied.
    pub fn without_labels(&self) -> Self {
        FeatureDataset {
            labels: vec![Vec::new(); self.len()],
            ..self.clone()
        }
    }
}

/// One supervised cross-modal pair: `x` indexes the modality-X set,
/// `y` the modality-Y set, `similar` is the label `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Relation {
    pub x: usize,
    pub y: usize,
    pub similar: bool,
}

/// The supervised relationship set `S`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelationSet {
    pairs: Vec<Relation>,
}

impl RelationSet {
    /// Builds a relation set, checking indices against the set sizes.
    pub fn new(pairs: Vec<Relation>, n_x: usize, n_y: usize) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.x >= n_x || p.y >= n_y) {
            return Err(Error::invalid(format!(
                "relation ({}, {}) out of bounds for sets of size {n_x} and {n_y}",
                p.x, p.y
            )));
        }
        Ok(RelationSet { pairs })
    }

    /// Labels every listed `(x, y)` pair by label-set intersection.
    pub fn from_labels(pairs: &[(usize, usize)], x_labels: &[LabelSet], y_labels: &[LabelSet]) -> Result<Self> {
        let rels = pairs
            .iter()
            .map(|&(x, y)| {
                let (lx, ly) = x_labels
                    .get(x)
                    .zip(y_labels.get(y))
                    .ok_or_else(|| Error::invalid(format!("relation ({x}, {y}) out of bounds")))?;
                Ok(Relation {
                    x,
                    y,
                    similar: labels_intersect(lx, ly),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RelationSet { pairs: rels })
    }

    pub fn pairs(&self) -> &[Relation] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Lookup table from `(x, y)` to the label; the last duplicate wins.
    pub fn lookup(&self) -> HashMap<(usize, usize), bool> {
        self.pairs.iter().map(|p| ((p.x, p.y), p.similar)).collect()
    }
}

/// Training pools: the auxiliary sets followed by sampled target items.
#[derive(Clone, Debug)]
pub struct TrainingSets<T> {
    /// `N = n̄ + n̂` modality-X items, auxiliary first.
    pub x_pool: FeatureDataset<T>,
    /// `M = m̄ + m̂` modality-Y items, auxiliary first.
    pub y_pool: FeatureDataset<T>,
    pub aux_x_count: usize,
    pub aux_y_count: usize,
    /// Supervised pairs over the auxiliary prefixes.
    pub relations: RelationSet,
    /// Query-set indices of the sampled target rows of `x_pool`.
    pub target_x_source: Vec<usize>,
    /// Database-set indices of the sampled target rows of `y_pool`.
    pub target_y_source: Vec<usize>,
}

impl<T: Real> TrainingSets<T> {
    pub fn target_x_count(&self) -> usize {
        self.x_pool.len() - self.aux_x_count
    }

    pub fn target_y_count(&self) -> usize {
        self.y_pool.len() - self.aux_y_count
    }
}

/// Assembles the training pools: the whole auxiliary sets plus `n_hat`
/// query items and `m_hat` database items drawn without replacement.
///
/// Target rows enter the pools unlabeled; only the auxiliary prefix carries
/// supervision.
#[allow(clippy::too_many_arguments)]
pub fn build_training_sets<T: Real>(
    aux_x: &FeatureDataset<T>,
    aux_y: &FeatureDataset<T>,
    relations: &RelationSet,
    query: &FeatureDataset<T>,
    database: &FeatureDataset<T>,
    n_hat: usize,
    m_hat: usize,
    seed: u64,
) -> Result<TrainingSets<T>> {
    if aux_x.modality != Modality::X || query.modality != Modality::X {
        return Err(Error::invalid("auxiliary-X and query sets must be modality X"));
    }
    if aux_y.modality != Modality::Y || database.modality != Modality::Y {
        return Err(Error::invalid("auxiliary-Y and database sets must be modality Y"));
    }
    if aux_x.dim() != query.dim() {
        return Err(Error::Length {
            op: "build_training_sets (aux-X dim vs query dim)",
            left: aux_x.dim(),
            right: query.dim(),
        });
    }
    if aux_y.dim() != database.dim() {
        return Err(Error::Length {
            op: "build_training_sets (aux-Y dim vs database dim)",
            left: aux_y.dim(),
            right: database.dim(),
        });
    }
    if n_hat > query.len() {
        return Err(Error::invalid(format!(
            "n_hat = {n_hat} exceeds the {} query items",
            query.len()
        )));
    }
    if m_hat > database.len() {
        return Err(Error::invalid(format!(
            "m_hat = {m_hat} exceeds the {} database items",
            database.len()
        )));
    }
    let relations = RelationSet::new(relations.pairs().to_vec(), aux_x.len(), aux_y.len())?;

    let mut r = rng::stream(seed, rng::STREAM_POOL);
    let tx = sample(&mut r, query.len(), n_hat).into_vec();
    let ty = sample(&mut r, database.len(), m_hat).into_vec();

    let pool = |aux: &FeatureDataset<T>, target: &FeatureDataset<T>, idx: &[usize]| {
        let t = target.subset(idx).without_labels();
        let features = Matrix::vstack(&[aux.features(), t.features()])?;
        let mut labels = aux.labels().to_vec();
        labels.extend_from_slice(t.labels());
        FeatureDataset::new(aux.modality, Domain::Auxiliary, features, labels)
    };

    Ok(TrainingSets {
        x_pool: pool(aux_x, query, &tx)?,
        y_pool: pool(aux_y, database, &ty)?,
        aux_x_count: aux_x.len(),
        aux_y_count: aux_y.len(),
        relations,
        target_x_source: tx,
        target_y_source: ty,
    })
}

/// Kernel bandwidth selection for the MMD terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    Fixed(f64),
    /// `1 / median` of squared pairwise distances, frozen per batch.
    Median,
}

impl fmt::Display for GammaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaMode::Fixed(g) => write!(f, "{g}"),
            GammaMode::Median => f.write_str("median"),
        }
    }
}

impl FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(GammaMode::Median);
        }
        match s.parse::<f64>() {
            Ok(g) if g > 0.0 && g.is_finite() => Ok(GammaMode::Fixed(g)),
            _ => Err(Error::invalid(format!("gamma must be 'median' or a positive number, got '{s}'"))),
        }
    }
}

/// Which objective variant to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Cross-entropy relationship loss, quantization loss and MMD.
    Full,
    /// Inner-product squared-error loss in place of the cross-entropy loss.
    IP,
    /// No distribution alignment (`mu = 0`).
    NoMMD,
    /// No quantization loss (`lambda = 0`).
    NoQuant,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::IP, Ablation::NoMMD, Ablation::NoQuant];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::IP => "ip",
            Ablation::NoMMD => "no-mmd",
            Ablation::NoQuant => "no-quant",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown ablation '{s}' (expected full, ip, no-mmd, no-quant)")))
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Bits per code (`b`).
    pub bits: usize,
    /// Quantization trade-off.
    pub lambda: f64,
    /// MMD trade-off.
    pub mu: f64,
    pub gamma: GammaMode,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning-rate multiplier of the final (hash) layer of each tower.
    pub hash_lr_multiplier: f64,
    /// Mini-batch size `B`; half of it is drawn per modality and domain.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_x: Vec<usize>,
    pub hidden_y: Vec<usize>,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: 16,
            lambda: 3e-5,
            mu: 100.0,
            gamma: GammaMode::Median,
            learning_rate: 1e-4,
            momentum: 0.9,
            hash_lr_multiplier: 10.0,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            hidden_x: vec![1000, 500],
            hidden_y: vec![1000, 500],
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits < 1 {
            return Err(Error::invalid("bits must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("lambda and mu must be nonnegative"));
        }
        if !(self.hash_lr_multiplier > 0.0 && self.hash_lr_multiplier.is_finite()) {
            return Err(Error::invalid("hash_lr_multiplier must be positive"));
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid("fixed gamma must be positive"));
            }
        }
        if self.hidden_x.contains(&0) || self.hidden_y.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// Quantization weight after applying the ablation.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation == Ablation::NoQuant {
            0.0
        } else {
            self.lambda
        }
    }

    /// MMD weight after applying the ablation.
    pub fn effective_mu(&self) -> f64 {
        if self.ablation == Ablation::NoMMD {
            0.0
        } else {
            self.mu
        }
    }

    /// Copy with the ablation folded into `lambda` / `mu`.
    pub fn resolved(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.effective_lambda(),
            mu: self.effective_mu(),
            ..self.clone()
        }
    }

    /// Layer sizes of a tower for the given input dimension.
    pub fn layer_sizes(&self, modality: Modality, input_dim: usize) -> Vec<usize> {
        let hidden = match modality {
            Modality::X => &self.hidden_x,
            Modality::Y => &self.hidden_y,
        };
        std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(self.bits))
            .collect()
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Every field as `(key, value)`, in a fixed order.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("bits", self.bits.to_string()),
            ("lambda", self.lambda.to_string()),
            ("mu", self.mu.to_string()),
            ("gamma", self.gamma.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("hash_lr_multiplier", self.hash_lr_multiplier.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("hidden_x", list(&self.hidden_x)),
            ("hidden_y", list(&self.hidden_y)),
            ("ablation", self.ablation.to_string()),
        ]
    }

    /// Sets one field from its key; `-` and `_` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse '{value}'")))
        }
        fn widths(key: &str, value: &str) -> Result<Vec<usize>> {
            value
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| num(key, t))
                .collect()
        }
        match key.replace('-', "_").as_str() {
            "bits" => self.bits = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "gamma" => self.gamma = value.trim().parse()?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "hash_lr_multiplier" => self.hash_lr_multiplier = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "hidden_x" => self.hidden_x = widths(key, value)?,
            "hidden_y" => self.hidden_y = widths(key, value)?,
            "ablation" => self.ablation = value.trim().parse()?,
            _ => return Err(Error::invalid(format!("unknown training key '{key}'"))),
        }
        Ok(())
    }
}
