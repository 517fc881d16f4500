//! Synthetic two-modality, two-domain data with a controllable domain
//! shift, and the text formats for features, labels and relations.
//!
//! Every category owns a latent prototype. An item's latent point is the
//! mean of its categories' prototypes; each modality embeds latent points
//! through its own random orthonormal map, then adds Gaussian noise. Target
//! items are additionally rotated and translated in feature space.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::objective::{median_gamma, mmd};
use crate::rng::{self, Rng};
use crate::scalar::{format_exact, parse_real, Real};
use crate::types::{label_set, Domain, FeatureDataset, LabelSet, Modality, Relation, RelationSet};

/// Generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub categories: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    /// Dimension of the shared latent space; at most `min(dim_x, dim_y)`.
    pub latent_dim: usize,
    pub n_aux_x: usize,
    pub n_aux_y: usize,
    pub n_query: usize,
    pub n_database: usize,
    /// Norm of every category prototype.
    pub separation: f64,
    /// Norm of the target-domain translation.
    pub shift_translation: f64,
    /// Givens angle (radians) of the target-domain rotation.
    pub shift_rotation: f64,
    pub noise: f64,
    /// Probability that an item carries a second category.
    pub multi_label_prob: f64,
    /// Random extra relations per auxiliary X item, besides its partner.
    pub pairs_per_item: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::reference(0)
    }
}

impl SynthSpec {
    /// The shifted benchmark: 8 categories, dims 64/32, 2000 auxiliary and
    /// 500 target items per modality.
    pub fn reference(seed: u64) -> Self {
        SynthSpec {
            categories: 8,
            dim_x: 64,
            dim_y: 32,
            latent_dim: 16,
            n_aux_x: 2000,
            n_aux_y: 2000,
            n_query: 500,
            n_database: 500,
            separation: 3.0,
            shift_translation: 2.0,
            shift_rotation: 0.6,
            noise: 0.5,
            multi_label_prob: 0.2,
            pairs_per_item: 3,
            seed,
        }
    }

    /// Noiseless, well separated and shift free.
    pub fn clean(seed: u64) -> Self {
        SynthSpec {
            separation: 6.0,
            shift_translation: 0.0,
            shift_rotation: 0.0,
            noise: 0.0,
            multi_label_prob: 0.0,
            ..SynthSpec::reference(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("categories", self.categories),
            ("dim_x", self.dim_x),
            ("dim_y", self.dim_y),
            ("latent_dim", self.latent_dim),
            ("n_aux_x", self.n_aux_x),
            ("n_aux_y", self.n_aux_y),
            ("n_query", self.n_query),
            ("n_database", self.n_database),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.latent_dim > self.dim_x.min(self.dim_y) {
            return Err(Error::invalid(format!(
                "latent_dim {} exceeds min(dim_x, dim_y) = {}",
                self.latent_dim,
                self.dim_x.min(self.dim_y)
            )));
        }
        let reals = [
            ("separation", self.separation),
            ("shift_translation", self.shift_translation),
            ("shift_rotation", self.shift_rotation),
            ("noise", self.noise),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("{name} must be finite and nonnegative")));
        }
        if !(0.0..=1.0).contains(&self.multi_label_prob) {
            return Err(Error::invalid("multi_label_prob must lie in [0, 1]"));
        }
        if self.multi_label_prob > 0.0 && self.categories < 2 {
            return Err(Error::invalid("multi-label items need at least two categories"));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("categories", self.categories.to_string()),
            ("dim_x", self.dim_x.to_string()),
            ("dim_y", self.dim_y.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("n_aux_x", self.n_aux_x.to_string()),
            ("n_aux_y", self.n_aux_y.to_string()),
            ("n_query", self.n_query.to_string()),
            ("n_database", self.n_database.to_string()),
            ("separation", self.separation.to_string()),
            ("shift_translation", self.shift_translation.to_string()),
            ("shift_rotation", self.shift_rotation.to_string()),
            ("noise", self.noise.to_string()),
            ("multi_label_prob", self.multi_label_prob.to_string()),
            ("pairs_per_item", self.pairs_per_item.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from its manifest key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse '{value}'")))
        }
        match key {
            "categories" => self.categories = num(key, value)?,
            "dim_x" => self.dim_x = num(key, value)?,
            "dim_y" => self.dim_y = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "n_aux_x" => self.n_aux_x = num(key, value)?,
            "n_aux_y" => self.n_aux_y = num(key, value)?,
            "n_query" => self.n_query = num(key, value)?,
            "n_database" => self.n_database = num(key, value)?,
            "separation" => self.separation = num(key, value)?,
            "shift_translation" => self.shift_translation = num(key, value)?,
            "shift_rotation" => self.shift_rotation = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "multi_label_prob" => self.multi_label_prob = num(key, value)?,
            "pairs_per_item" => self.pairs_per_item = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown datagen key '{key}'"))),
        }
        Ok(())
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData<T> {
    pub aux_x: FeatureDataset<T>,
    pub aux_y: FeatureDataset<T>,
    pub query: FeatureDataset<T>,
    pub database: FeatureDataset<T>,
    pub relations: RelationSet,
}

fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `dim × k` matrix with orthonormal columns, by Gram-Schmidt on a Gaussian
/// draw.
fn orthonormal_map(rng: &mut Rng, dim: usize, k: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= p * y;
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    cols
}

/// Rotation by `angle` in disjoint random coordinate planes, then a
/// translation.
struct Shift {
    planes: Vec<(usize, usize)>,
    cos: f64,
    sin: f64,
    translation: Vec<f64>,
}

impl Shift {
    fn draw(rng: &mut Rng, dim: usize, angle: f64, translation: f64) -> Self {
        let mut perm: Vec<usize> = (0..dim).collect();
        for i in (1..dim).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let planes = perm.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let dir = unit_vector(rng, dim);
        Shift {
            planes,
            cos: angle.cos(),
            sin: angle.sin(),
            translation: dir.into_iter().map(|v| v * translation).collect(),
        }
    }

    fn apply(&self, f: &mut [f64]) {
        for &(i, j) in &self.planes {
            let (a, b) = (f[i], f[j]);
            f[i] = self.cos * a - self.sin * b;
            f[j] = self.sin * a + self.cos * b;
        }
        for (v, t) in f.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }
}

struct ModalityMap {
    columns: Vec<Vec<f64>>,
    dim: usize,
    shift: Shift,
}

impl ModalityMap {
    fn embed(&self, latent: &[f64], noise: f64, target: bool, rng: &mut Rng) -> Vec<f64> {
        let mut f = vec![0.0; self.dim];
        for (c, &h) in self.columns.iter().zip(latent) {
            for (v, &a) in f.iter_mut().zip(c) {
                *v += a * h;
            }
        }
        if noise > 0.0 {
            for v in &mut f {
                *v += noise * gaussian(rng);
            }
        }
        if target {
            self.shift.apply(&mut f);
        }
        f
    }
}

fn draw_labels(rng: &mut Rng, spec: &SynthSpec) -> LabelSet {
    let first = rng.random_range(0..spec.categories) as u32;
    if spec.multi_label_prob > 0.0 && rng.random_bool(spec.multi_label_prob) {
        let mut second = rng.random_range(0..spec.categories - 1) as u32;
        if second >= first {
            second += 1;
        }
        label_set(vec![first, second])
    } else {
        vec![first]
    }
}

fn latent_point(prototypes: &[Vec<f64>], labels: &[u32]) -> Vec<f64> {
    let mut h = vec![0.0; prototypes[0].len()];
    for &c in labels {
        for (v, p) in h.iter_mut().zip(&prototypes[c as usize]) {
            *v += p;
        }
    }
    let n = labels.len() as f64;
    h.into_iter().map(|v| v / n).collect()
}

fn build<T: Real>(
    map: &ModalityMap,
    modality: Modality,
    domain: Domain,
    labels: Vec<LabelSet>,
    prototypes: &[Vec<f64>],
    noise: f64,
    rng: &mut Rng,
) -> Result<FeatureDataset<T>> {
    let mut data = Vec::with_capacity(labels.len() * map.dim);
    for l in &labels {
        let f = map.embed(&latent_point(prototypes, l), noise, domain == Domain::Target, rng);
        data.extend(f.into_iter().map(T::of));
    }
    FeatureDataset::new(modality, domain, Matrix::new(labels.len(), map.dim, data)?, labels)
}

/// Generates the four datasets and the auxiliary relations.
///
/// Auxiliary items `i` of both modalities share their labels and form a
/// similar pair; every auxiliary X item additionally gets `pairs_per_item`
/// random Y partners. All relations are labeled by category overlap.
pub fn generate<T: Real>(spec: &SynthSpec) -> Result<SynthData<T>> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::STREAM_DATAGEN);
    let prototypes: Vec<Vec<f64>> = (0..spec.categories)
        .map(|_| unit_vector(&mut rng, spec.latent_dim).into_iter().map(|v| v * spec.separation).collect())
        .collect();
    let mut map = |dim: usize| {
        let columns = orthonormal_map(&mut rng, dim, spec.latent_dim);
        let shift = Shift::draw(&mut rng, dim, spec.shift_rotation, spec.shift_translation);
        ModalityMap { columns, dim, shift }
    };
    let map_x = map(spec.dim_x);
    let map_y = map(spec.dim_y);

    let shared: Vec<LabelSet> = (0..spec.n_aux_x.max(spec.n_aux_y)).map(|_| draw_labels(&mut rng, spec)).collect();
    let query_labels: Vec<LabelSet> = (0..spec.n_query).map(|_| draw_labels(&mut rng, spec)).collect();
    let db_labels: Vec<LabelSet> = (0..spec.n_database).map(|_| draw_labels(&mut rng, spec)).collect();

    let aux_x = build(
        &map_x,
        Modality::X,
        Domain::Auxiliary,
        shared[..spec.n_aux_x].to_vec(),
        &prototypes,
        spec.noise,
        &mut rng,
    )?;
    let aux_y = build(
        &map_y,
        Modality::Y,
        Domain::Auxiliary,
        shared[..spec.n_aux_y].to_vec(),
        &prototypes,
        spec.noise,
        &mut rng,
    )?;
    let query = build(&map_x, Modality::X, Domain::Target, query_labels, &prototypes, spec.noise, &mut rng)?;
    let database = build(&map_y, Modality::Y, Domain::Target, db_labels, &prototypes, spec.noise, &mut rng)?;

    let mut pairs = BTreeSet::new();
    for i in 0..spec.n_aux_x {
        if i < spec.n_aux_y {
            pairs.insert((i, i));
        }
        for _ in 0..spec.pairs_per_item {
            pairs.insert((i, rng.random_range(0..spec.n_aux_y)));
        }
    }
    let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    let relations = RelationSet::from_labels(&pairs, aux_x.labels(), aux_y.labels())?;

    Ok(SynthData {
        aux_x,
        aux_y,
        query,
        database,
        relations,
    })
}

/// Two-sample permutation test of the biased MMD with a median-heuristic
/// bandwidth. Returns the observed statistic and the permutation p-value.
pub fn mmd_permutation_test<T: Real>(a: &Matrix<T>, b: &Matrix<T>, permutations: usize, seed: u64) -> Result<(f64, f64)> {
    let gamma = median_gamma(a, b);
    let observed = mmd(a, b, gamma)?.to_f64_lossy();
    let pooled = Matrix::vstack(&[a, b])?;
    let mut rng = rng::stream(seed, "permutation-test");
    let mut idx: Vec<usize> = (0..pooled.rows()).collect();
    let mut at_least = 0usize;
    for _ in 0..permutations {
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let (pa, pb) = pooled.select_rows(&idx).split_rows(a.rows());
        if mmd(&pa, &pb, gamma)?.to_f64_lossy() >= observed {
            at_least += 1;
        }
    }
    Ok((observed, (1 + at_least) as f64 / (1 + permutations) as f64))
}

/// Companion label file of a feature file: same stem, `.labels` extension.
pub fn labels_path(features: &Path) -> PathBuf {
    features.with_extension("labels")
}

/// Writes `"n d"` and one row per line at full precision, plus the label
/// file next to it.
pub fn save_features<T: Real>(ds: &FeatureDataset<T>, path: &Path) -> Result<()> {
    let f = ds.features();
    let mut s = String::with_capacity(f.rows() * f.cols() * 24 + 16);
    let _ = writeln!(s, "{} {}", f.rows(), f.cols());
    for row in f.row_iter() {
        for (k, &v) in row.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            s.push_str(&format_exact(v));
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))?;
    save_labels(ds.labels(), &labels_path(path))
}

pub fn save_labels(labels: &[LabelSet], path: &Path) -> Result<()> {
    let mut s = String::new();
    for l in labels {
        let line: Vec<String> = l.iter().map(u32::to_string).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn parse_features<T: Real>(text: &str, origin: &Path) -> Result<Matrix<T>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(origin, 1, format!("malformed header '{header}', expected 'n d'")))?;
    let [n, d] = dims[..] else {
        return Err(Error::parse(origin, 1, format!("malformed header '{header}', expected 'n d'")));
    };
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let ln = i + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(origin, ln, format!("expected {n} rows, file ends after {i}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v = parse_real::<T>(tok)
                .ok_or_else(|| Error::parse(origin, ln, format!("row {}: invalid number '{tok}'", i + 1)))?;
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::parse(
                origin,
                ln,
                format!("row {} has {} values, expected {d}", i + 1, data.len() - before),
            ));
        }
    }
    if let Some((extra, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(origin, n + 2 + extra, "unexpected data after the last row"));
    }
    Matrix::new(n, d, data)
}

pub fn parse_labels(text: &str, origin: &Path) -> Result<Vec<LabelSet>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| Error::parse(origin, i + 1, format!("invalid category '{t}'")))
                })
                .collect::<Result<Vec<u32>>>()
                .map(label_set)
        })
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

/// Loads a feature file and, when present, its label file; without one
/// every item is unlabeled.
pub fn load_features<T: Real>(path: &Path, modality: Modality, domain: Domain) -> Result<FeatureDataset<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let features = parse_features(&text, path)?;
    let lp = labels_path(path);
    let labels = if lp.exists() {
        let labels = load_labels(&lp)?;
        if labels.len() != features.rows() {
            return Err(Error::parse(
                &lp,
                labels.len(),
                format!("{} label lines for {} feature rows", labels.len(), features.rows()),
            ));
        }
        labels
    } else {
        vec![Vec::new(); features.rows()]
    };
    FeatureDataset::new(modality, domain, features, labels)
}

/// `"n"`, then one `"i j s"` line per relation.
pub fn save_relations(rels: &RelationSet, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(rels.len() * 16 + 8);
    let _ = writeln!(s, "{}", rels.len());
    for r in rels.pairs() {
        let _ = writeln!(s, "{} {} {}", r.x, r.y, u8::from(r.similar));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn parse_relations(text: &str, origin: &Path, n_x: usize, n_y: usize) -> Result<RelationSet> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
    let n: usize = header
        .trim()
        .parse()
        .map_err(|_| Error::parse(origin, 1, format!("malformed header '{header}', expected a count")))?;
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let ln = i + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(origin, ln, format!("expected {n} relations, file ends after {i}")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::parse(origin, ln, format!("expected 'i j s', found '{line}'"));
        let [x, y, s] = toks[..] else {
            return Err(bad());
        };
        let x: usize = x.parse().map_err(|_| bad())?;
        let y: usize = y.parse().map_err(|_| bad())?;
        let similar = match s {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        };
        if x >= n_x || y >= n_y {
            return Err(Error::parse(
                origin,
                ln,
                format!("relation ({x}, {y}) out of bounds for sets of size {n_x} and {n_y}"),
            ));
        }
        pairs.push(Relation { x, y, similar });
    }
    RelationSet::new(pairs, n_x, n_y)
}

pub fn load_relations(path: &Path, n_x: usize, n_y: usize) -> Result<RelationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_relations(&text, path, n_x, n_y)
}

/// File names inside a generated dataset directory.
pub mod files {
    pub const AUX_X: &str = "aux_x.feat";
    pub const AUX_Y: &str = "aux_y.feat";
    pub const QUERY: &str = "query.feat";
    pub const DATABASE: &str = "database.feat";
    pub const RELATIONS: &str = "relations.txt";
}

/// Writes the four feature/label pairs and the relations into `dir`.
pub fn save_dataset<T: Real>(data: &SynthData<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_features(&data.aux_x, &dir.join(files::AUX_X))?;
    save_features(&data.aux_y, &dir.join(files::AUX_Y))?;
    save_features(&data.query, &dir.join(files::QUERY))?;
    save_features(&data.database, &dir.join(files::DATABASE))?;
    save_relations(&data.relations, &dir.join(files::RELATIONS))
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset<T: Real>(dir: &Path) -> Result<SynthData<T>> {
    let aux_x = load_features(&dir.join(files::AUX_X), Modality::X, Domain::Auxiliary)?;
    let aux_y = load_features(&dir.join(files::AUX_Y), Modality::Y, Domain::Auxiliary)?;
    let query = load_features(&dir.join(files::QUERY), Modality::X, Domain::Target)?;
    let database = load_features(&dir.join(files::DATABASE), Modality::Y, Domain::Target)?;
    let relations = load_relations(&dir.join(files::RELATIONS), aux_x.len(), aux_y.len())?;
    Ok(SynthData {
        aux_x,
        aux_y,
        query,
        database,
        relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::labels_intersect;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_aux_x: 120,
            n_aux_y: 100,
            n_query: 80,
            n_database: 60,
            ..SynthSpec::reference(seed)
        }
    }

    fn sq(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn shapes_and_determinism() {
        let spec = small(4);
        let a: SynthData<f64> = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_ne!(a, generate::<f64>(&small(5)).unwrap());
        assert_eq!((a.aux_x.len(), a.aux_x.dim()), (120, 64));
        assert_eq!((a.aux_y.len(), a.aux_y.dim()), (100, 32));
        assert_eq!((a.query.len(), a.database.len()), (80, 60));
        assert_eq!(a.query.domain, Domain::Target);
        assert!(a.relations.len() >= 100);
        assert!(a.relations.pairs().iter().any(|r| r.similar));
        assert!(a.relations.pairs().iter().any(|r| !r.similar));
        for r in a.relations.pairs() {
            assert_eq!(r.similar, labels_intersect(&a.aux_x.labels()[r.x], &a.aux_y.labels()[r.y]));
        }
        for i in 0..100 {
            assert_eq!(a.aux_x.labels()[i], a.aux_y.labels()[i]);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            SynthSpec { categories: 0, ..small(0) },
            SynthSpec { noise: -1.0, ..small(0) },
            SynthSpec { latent_dim: 40, ..small(0) },
            SynthSpec { n_query: 0, ..small(0) },
            SynthSpec { multi_label_prob: 1.5, ..small(0) },
        ] {
            assert!(generate::<f64>(&spec).is_err());
        }
    }

    #[test]
    fn noiseless_features_sit_on_prototypes() {
        let spec = SynthSpec { noise: 0.0, separation: 10.0, multi_label_prob: 0.0, ..small(2) };
        let data: SynthData<f64> = generate(&spec).unwrap();
        let ds = &data.aux_x;
        // class means in feature space act as the embedded prototypes
        let mut centers: Vec<Option<Vec<f64>>> = vec![None; spec.categories];
        for (row, l) in ds.features().row_iter().zip(ds.labels()) {
            centers[l[0] as usize].get_or_insert_with(|| row.to_vec());
        }
        for (row, l) in ds.features().row_iter().zip(ds.labels()) {
            let nearest = (0..spec.categories)
                .filter(|&c| centers[c].is_some())
                .min_by(|&a, &b| {
                    sq(row, centers[a].as_ref().unwrap()).total_cmp(&sq(row, centers[b].as_ref().unwrap()))
                })
                .unwrap();
            assert_eq!(nearest as u32, l[0]);
        }
    }

    #[test]
    fn shift_free_domains_are_indistinguishable() {
        let spec = SynthSpec { shift_translation: 0.0, shift_rotation: 0.0, ..small(7) };
        let data: SynthData<f64> = generate(&spec).unwrap();
        let a = data.aux_x.features().select_rows(&(0..80).collect::<Vec<_>>());
        let (_, p) = mmd_permutation_test(&a, data.query.features(), 199, 1).unwrap();
        assert!(p > 0.05, "p = {p}");
    }

    #[test]
    fn shifted_domains_are_detected() {
        let data: SynthData<f64> = generate(&small(7)).unwrap();
        let a = data.aux_x.features().select_rows(&(0..80).collect::<Vec<_>>());
        let (stat, p) = mmd_permutation_test(&a, data.query.features(), 199, 1).unwrap();
        assert!(p < 0.05, "p = {p}, stat = {stat}");
    }

    #[test]
    fn feature_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: SynthData<f64> = generate(&small(1)).unwrap();
        save_dataset(&data, dir.path()).unwrap();
        let back: SynthData<f64> = load_dataset(dir.path()).unwrap();
        assert_eq!(back, data);

        let f32data: SynthData<f32> = generate(&small(1)).unwrap();
        let p = dir.path().join("f32.feat");
        save_features(&f32data.query, &p).unwrap();
        assert_eq!(load_features::<f32>(&p, Modality::X, Domain::Target).unwrap(), f32data.query);
    }

    #[test]
    fn malformed_feature_files_name_the_line() {
        let o = Path::new("f.feat");
        let err = parse_features::<f64>("3 4\n1 2 3 4\n1 2 3 4 5\n1 2 3 4\n", o).unwrap_err().to_string();
        assert!(err.contains("f.feat:3") && err.contains("row 2"), "{err}");
        assert!(parse_features::<f64>("3\n", o).is_err());
        assert!(parse_features::<f64>("1 2\n1 x\n", o).unwrap_err().to_string().contains("'x'"));
        assert!(parse_features::<f64>("2 2\n1 2\n", o).is_err());
        assert!(parse_features::<f64>("1 1\n1\n2\n", o).is_err());
        assert!(parse_features::<f64>("1 1\nNaN\n", o).is_err());
    }

    #[test]
    fn empty_label_lines_are_unlabeled_items() {
        let labels = parse_labels("3 1\n\n2\n", Path::new("l")).unwrap();
        assert_eq!(labels, vec![vec![1, 3], vec![], vec![2]]);
        assert!(parse_labels("1 -2\n", Path::new("l")).is_err());
    }

    #[test]
    fn missing_label_file_means_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.feat");
        std::fs::write(&p, "2 1\n0.5\n-1\n").unwrap();
        let ds = load_features::<f64>(&p, Modality::X, Domain::Target).unwrap();
        assert!(ds.labels().iter().all(Vec::is_empty));
        std::fs::write(labels_path(&p), "1\n").unwrap();
        assert!(load_features::<f64>(&p, Modality::X, Domain::Target).is_err());
    }

    #[test]
    fn relation_files() {
        let o = Path::new("r");
        let r = parse_relations("2\n0 1 1\n1 0 0\n", o, 2, 2).unwrap();
        assert_eq!(r.len(), 2);
        assert!(parse_relations("1\n0 5 1\n", o, 2, 2).unwrap_err().to_string().contains("r:2"));
        assert!(parse_relations("1\n0 1 2\n", o, 2, 2).is_err());
        assert!(parse_relations("2\n0 1 1\n", o, 2, 2).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let spec = SynthSpec { noise: 0.125, seed: 99, ..small(0) };
        let mut back = SynthSpec::reference(0);
        for line in spec.to_manifest().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v).unwrap();
        }
        assert_eq!(back, spec);
        assert!(back.set("nope", "1").is_err());
        assert!(back.set("noise", "x").is_err());
    }
}
