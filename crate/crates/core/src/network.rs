//! Feedforward towers: ReLU hidden layers, a tanh hash layer, hand-written
//! backpropagation and SGD with momentum.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::Rng;
use crate::scalar::{format_exact, parse_real, Real};

const CHECKPOINT_MAGIC: &str = "THN-TOWER";
const CHECKPOINT_VERSION: u32 = 1;

/// One modality's network. `weights[k]` maps layer `k` to layer `k + 1`
/// and has shape `layer_sizes[k + 1] × layer_sizes[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tower<T> {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
}

/// Activations recorded by [`Tower::forward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub input: Matrix<T>,
    /// Pre-activation of every layer; the last one is `z̃`.
    pub pre: Vec<Matrix<T>>,
    /// Post-activation of every layer; the last one is `z = tanh(z̃)`.
    pub post: Vec<Matrix<T>>,
}

impl<T: Real> ForwardTrace<T> {
    /// Final tanh activations `z`.
    pub fn output(&self) -> &Matrix<T> {
        self.post.last().expect("tower has at least one layer")
    }

    /// Final pre-activations `z̃`.
    pub fn pre_output(&self) -> &Matrix<T> {
        self.pre.last().expect("tower has at least one layer")
    }
}

/// Parameter-shaped buffers: gradients or optimizer velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(t: &Tower<T>) -> Self {
        Gradients {
            weights: t.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: t.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    fn matches(&self, t: &Tower<T>) -> bool {
        self.weights.len() == t.weights.len()
            && self.weights.iter().zip(&t.weights).all(|(g, w)| g.shape() == w.shape())
            && self.biases.iter().zip(&t.biases).all(|(g, b)| g.len() == b.len())
    }

    /// Iterates over all entries, weights then biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()).copied())
    }
}

/// Momentum buffers and step sizes.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub velocity: Gradients<T>,
    pub momentum: T,
    pub learning_rate: T,
    /// Per-layer multiplier on the learning rate.
    pub layer_lr_multipliers: Vec<T>,
}

impl<T: Real> OptimizerState<T> {
    /// Zero velocity; every layer at multiplier 1 except the final layer,
    /// which gets `hash_multiplier`.
    pub fn new(t: &Tower<T>, learning_rate: f64, momentum: f64, hash_multiplier: f64) -> Self {
        let layers = t.weights.len();
        let layer_lr_multipliers = (0..layers)
            .map(|k| if k + 1 == layers { T::of(hash_multiplier) } else { T::one() })
            .collect();
        OptimizerState {
            velocity: Gradients::zeros_like(t),
            momentum: T::of(momentum),
            learning_rate: T::of(learning_rate),
            layer_lr_multipliers,
        }
    }
}

/// Glorot-uniform weights, zero biases, reproducible from `seed`.
pub fn init_tower<T: Real>(layer_sizes: &[usize], seed: u64) -> Result<Tower<T>> {
    validate_sizes(layer_sizes)?;
    let mut rng = Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| T::of(rng.random_range(-s..=s))));
        biases.push(vec![T::zero(); fan_out]);
    }
    Ok(Tower {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
    })
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "a tower needs at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::invalid(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

#[inline]
fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

impl<T: Real> Tower<T> {
    /// Builds a tower from explicit parameters, checking every shape.
    pub fn from_parts(layer_sizes: Vec<usize>, weights: Vec<Matrix<T>>, biases: Vec<Vec<T>>) -> Result<Self> {
        validate_sizes(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::invalid(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for k in 0..layers {
            let want = (layer_sizes[k + 1], layer_sizes[k]);
            if weights[k].shape() != want {
                return Err(Error::shape("Tower::from_parts", weights[k].shape(), want));
            }
            if biases[k].len() != want.0 {
                return Err(Error::Length {
                    op: "Tower::from_parts (bias)",
                    left: biases[k].len(),
                    right: want.0,
                });
            }
        }
        Ok(Tower {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn bits(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Runs the batch (one item per row) through every layer.
    pub fn forward(&self, batch: &Matrix<T>) -> Result<ForwardTrace<T>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape("Tower::forward", batch.shape(), (batch.rows(), self.input_dim())));
        }
        let layers = self.weights.len();
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Matrix<T>> = Vec::with_capacity(layers);
        for k in 0..layers {
            let input = if k == 0 { batch } else { &post[k - 1] };
            let mut z = input.matmul_transposed(&self.weights[k])?;
            z.add_row_vector(&self.biases[k]);
            let a = if k + 1 == layers { z.map(|v| v.tanh()) } else { z.map(relu) };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace {
            input: batch.clone(),
            pre,
            post,
        })
    }

    /// Final activations `z` only.
    pub fn output(&self, batch: &Matrix<T>) -> Result<Matrix<T>> {
        let mut t = self.forward(batch)?;
        Ok(t.post.pop().unwrap())
    }

    /// Back-propagates residuals `∂C/∂z̃` (one row per batch item) to
    /// parameter gradients. Gradients are summed over the batch.
    pub fn backward(&self, trace: &ForwardTrace<T>, residuals: &Matrix<T>) -> Result<Gradients<T>> {
        let out = trace.pre_output();
        if residuals.shape() != out.shape() {
            return Err(Error::shape("Tower::backward", residuals.shape(), out.shape()));
        }
        let layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = residuals.clone();
        for k in (0..layers).rev() {
            let input = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            grads.weights[k] = delta.transposed_matmul(input)?;
            grads.biases[k] = delta.column_sums();
            if k > 0 {
                let mut d_in = delta.matmul(&self.weights[k])?;
                // ReLU derivative, 0 at exactly 0.
                for (g, &p) in d_in.as_mut_slice().iter_mut().zip(trace.pre[k - 1].as_slice()) {
                    if p <= T::zero() {
                        *g = T::zero();
                    }
                }
                delta = d_in;
            }
        }
        Ok(grads)
    }

    /// Serializes to the text checkpoint format.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let sizes: Vec<String> = self.layer_sizes.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "layers {}", sizes.join(" "));
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let _ = writeln!(s, "weight {k} {} {}", w.rows(), w.cols());
            for r in w.row_iter() {
                push_row(&mut s, r);
            }
            let _ = writeln!(s, "bias {k} {}", b.len());
            push_row(&mut s, b);
        }
        s
    }

    pub fn from_checkpoint_str(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(origin, 0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        let mut tok = header.split_whitespace();
        if tok.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::parse(origin, ln, "not a tower checkpoint (bad magic)"));
        }
        match tok.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(CHECKPOINT_VERSION) => {}
            other => return Err(Error::parse(origin, ln, format!("unsupported checkpoint version {other:?}"))),
        }

        let (ln, layers_line) = next("layer sizes")?;
        let mut tok = layers_line.split_whitespace();
        if tok.next() != Some("layers") {
            return Err(Error::parse(origin, ln, "expected 'layers' line"));
        }
        let sizes = tok
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(origin, ln, format!("bad layer size: {e}")))?;
        validate_sizes(&sizes).map_err(|e| Error::parse(origin, ln, e.to_string()))?;

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..sizes.len() - 1 {
            let (rows, cols) = (sizes[k + 1], sizes[k]);
            let (ln, head) = next("weight header")?;
            if head.split_whitespace().collect::<Vec<_>>() != ["weight", &k.to_string(), &rows.to_string(), &cols.to_string()] {
                return Err(Error::parse(origin, ln, format!("expected 'weight {k} {rows} {cols}'")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, line) = next("weight row")?;
                data.extend(parse_row::<T>(line, cols, origin, ln)?);
            }
            weights.push(Matrix::new(rows, cols, data)?);
            let (ln, head) = next("bias header")?;
            if head.split_whitespace().collect::<Vec<_>>() != ["bias", &k.to_string(), &rows.to_string()] {
                return Err(Error::parse(origin, ln, format!("expected 'bias {k} {rows}'")));
            }
            let (ln, line) = next("bias row")?;
            biases.push(parse_row::<T>(line, rows, origin, ln)?);
        }
        Tower::from_parts(sizes, weights, biases)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, path)
    }
}

fn push_row<T: Real>(s: &mut String, row: &[T]) {
    for (i, &v) in row.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format_exact(v));
    }
    s.push('\n');
}

fn parse_row<T: Real>(line: &str, expected: usize, origin: &Path, ln: usize) -> Result<Vec<T>> {
    let vals = line
        .split_whitespace()
        .map(|t| parse_real::<T>(t).ok_or_else(|| Error::parse(origin, ln, format!("non-numeric token '{t}'"))))
        .collect::<Result<Vec<T>>>()?;
    if vals.len() != expected {
        return Err(Error::parse(
            origin,
            ln,
            format!("expected {expected} values, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

/// One momentum step: `v ← momentum·v − lr·mult·grad`, `θ ← θ + v`.
pub fn sgd_step<T: Real>(tower: &mut Tower<T>, grads: &Gradients<T>, state: &mut OptimizerState<T>) -> Result<()> {
    if !grads.matches(tower) || !state.velocity.matches(tower) || state.layer_lr_multipliers.len() != tower.weights.len() {
        return Err(Error::invalid("sgd_step: gradient/velocity shapes do not match the tower"));
    }
    let m = state.momentum;
    for k in 0..tower.weights.len() {
        let lr = state.learning_rate * state.layer_lr_multipliers[k];
        let pairs = [
            (
                tower.weights[k].as_mut_slice(),
                state.velocity.weights[k].as_mut_slice(),
                grads.weights[k].as_slice(),
            ),
            (
                tower.biases[k].as_mut_slice(),
                state.velocity.biases[k].as_mut_slice(),
                grads.biases[k].as_slice(),
            ),
        ];
        for (params, vel, g) in pairs {
            for ((p, v), &g) in params.iter_mut().zip(vel.iter_mut()).zip(g) {
                *v = m * *v - lr * g;
                *p += *v;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut r = crate::rng::Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.5..1.5))
    }

    #[test]
    fn init_shapes_and_determinism() {
        let t: Tower<f64> = init_tower(&[10, 5, 4], 3).unwrap();
        assert_eq!(t.weights()[0].shape(), (5, 10));
        assert_eq!(t.weights()[1].shape(), (4, 5));
        assert!(t.biases().iter().flatten().all(|&b| b == 0.0));
        let s = (6.0f64 / 15.0).sqrt();
        assert!(t.weights()[0].as_slice().iter().all(|w| w.abs() <= s));
        assert_eq!(t, init_tower(&[10, 5, 4], 3).unwrap());
        assert_ne!(t, init_tower(&[10, 5, 4], 4).unwrap());
        assert!(init_tower::<f64>(&[10], 0).is_err());
        assert!(init_tower::<f64>(&[], 0).is_err());
        assert!(init_tower::<f64>(&[3, 0, 2], 0).is_err());
    }

    #[test]
    fn zero_tower_outputs_zero() {
        let mut t: Tower<f64> = init_tower(&[3, 4, 2], 0).unwrap();
        for w in t.weights_mut() {
            w.as_mut_slice().fill(0.0);
        }
        let z = t.output(&batch(5, 3, 1)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_are_independent() {
        let t: Tower<f64> = init_tower(&[6, 8, 4], 2).unwrap();
        let b = batch(5, 6, 7);
        let full = t.output(&b).unwrap();
        let single = t.output(&b.select_rows(&[3])).unwrap();
        assert_eq!(single.row(0), full.row(3));
        let perm = [4, 2, 0, 3, 1];
        let permuted = t.output(&b.select_rows(&perm)).unwrap();
        assert_eq!(permuted, full.select_rows(&perm));
    }

    #[test]
    fn outputs_in_tanh_range_and_dim_checked() {
        let t: Tower<f64> = init_tower(&[4, 16, 8], 5).unwrap();
        let z = t.output(&batch(20, 4, 9)).unwrap();
        assert!(z.as_slice().iter().all(|v| v.abs() < 1.0));
        assert!(t.forward(&batch(2, 5, 0)).is_err());
    }

    #[test]
    fn zero_residuals_give_zero_gradients() {
        let t: Tower<f64> = init_tower(&[4, 6, 3], 1).unwrap();
        let tr = t.forward(&batch(3, 4, 2)).unwrap();
        let g = t.backward(&tr, &Matrix::zeros(3, 3)).unwrap();
        assert!(g.values().all(|v| v == 0.0));
        assert!(t.backward(&tr, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn stacked_duplicates_double_gradients() {
        let t: Tower<f64> = init_tower(&[4, 6, 3], 1).unwrap();
        let x = batch(1, 4, 3);
        let r = batch(1, 3, 4);
        let g1 = t.backward(&t.forward(&x).unwrap(), &r).unwrap();
        let x2 = Matrix::vstack(&[&x, &x]).unwrap();
        let r2 = Matrix::vstack(&[&r, &r]).unwrap();
        let g2 = t.backward(&t.forward(&x2).unwrap(), &r2).unwrap();
        for (a, b) in g1.values().zip(g2.values()) {
            assert_eq!(2.0 * a, b);
        }
    }

    /// Smooth scalarization `ℓ(z) = Σ c_ij z_ij + ½ Σ z_ij²`; its residual
    /// with respect to `z̃` is `(c + z) ⊙ (1 − z²)`.
    fn scalarized(t: &Tower<f64>, x: &Matrix<f64>, c: &Matrix<f64>) -> f64 {
        let z = t.output(x).unwrap();
        z.as_slice().iter().zip(c.as_slice()).map(|(&z, &c)| c * z + 0.5 * z * z).sum()
    }

    fn analytic(t: &Tower<f64>, x: &Matrix<f64>, c: &Matrix<f64>) -> Gradients<f64> {
        let tr = t.forward(x).unwrap();
        let z = tr.output();
        let mut r = Matrix::zeros(z.rows(), z.cols());
        for ((r, &z), &c) in r.as_mut_slice().iter_mut().zip(z.as_slice()).zip(c.as_slice()) {
            *r = (c + z) * (1.0 - z * z);
        }
        t.backward(&tr, &r).unwrap()
    }

    fn check_fd(sizes: &[usize], seed: u64, step: f64, tol: f64) {
        let t: Tower<f64> = init_tower(sizes, seed).unwrap();
        let mut t = t;
        // nonzero biases so the check also covers them
        let mut r = crate::rng::Rng::seed_from_u64(seed ^ 0xabc);
        for b in t.biases_mut() {
            for v in b.iter_mut() {
                *v = r.random_range(-0.3..0.3);
            }
        }
        let x = batch(3, sizes[0], seed + 100);
        let c = batch(3, *sizes.last().unwrap(), seed + 200);
        let g = analytic(&t, &x, &c);
        let mut probe = t.clone();
        for k in 0..t.weights().len() {
            for idx in 0..t.weights()[k].as_slice().len() {
                let orig = t.weights()[k].as_slice()[idx];
                probe.weights_mut()[k].as_mut_slice()[idx] = orig + step;
                let up = scalarized(&probe, &x, &c);
                probe.weights_mut()[k].as_mut_slice()[idx] = orig - step;
                let down = scalarized(&probe, &x, &c);
                probe.weights_mut()[k].as_mut_slice()[idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let an = g.weights[k].as_slice()[idx];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(err < tol || (fd - an).abs() < 1e-8, "W{k}[{idx}] fd {fd} an {an}");
            }
            for idx in 0..t.biases()[k].len() {
                let orig = t.biases()[k][idx];
                probe.biases_mut()[k][idx] = orig + step;
                let up = scalarized(&probe, &x, &c);
                probe.biases_mut()[k][idx] = orig - step;
                let down = scalarized(&probe, &x, &c);
                probe.biases_mut()[k][idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let an = g.biases[k][idx];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(err < tol || (fd - an).abs() < 1e-8, "b{k}[{idx}] fd {fd} an {an}");
            }
        }
    }

    #[test]
    fn single_layer_matches_finite_differences() {
        for seed in 0..5 {
            check_fd(&[5, 3], seed, 1e-6, 1e-6);
        }
    }

    #[test]
    fn deep_tower_matches_finite_differences() {
        for seed in 0..20 {
            check_fd(&[7, 5, 4], seed, 1e-5, 1e-4);
        }
    }

    #[test]
    fn sgd_reductions() {
        let mut t: Tower<f64> = init_tower(&[3, 2], 0).unwrap();
        let before = t.clone();
        let zero = Gradients::zeros_like(&t);
        let mut st = OptimizerState::new(&t, 0.1, 0.9, 1.0);
        sgd_step(&mut t, &zero, &mut st).unwrap();
        assert_eq!(t, before);

        let mut g = Gradients::zeros_like(&t);
        g.weights[0].as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 - 2.0);
        g.biases[0] = vec![0.5, -1.0];
        let mut st = OptimizerState::new(&t, 0.1, 0.0, 1.0);
        sgd_step(&mut t, &g, &mut st).unwrap();
        for ((a, b), gv) in t.weights()[0].as_slice().iter().zip(before.weights()[0].as_slice()).zip(g.weights[0].as_slice()) {
            assert_eq!(*a, b - 0.1 * gv);
        }
        assert_eq!(t.biases()[0], vec![-0.05, 0.1]);
    }

    #[test]
    fn momentum_two_step_displacement() {
        let mut t: Tower<f64> = init_tower(&[2, 2], 0).unwrap();
        let start = t.clone();
        let mut g = Gradients::zeros_like(&t);
        g.weights[0] = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap();
        g.biases[0] = vec![3.0, -1.0];
        let mut st = OptimizerState::new(&t, 1.0, 0.9, 1.0);
        sgd_step(&mut t, &g, &mut st).unwrap();
        sgd_step(&mut t, &g, &mut st).unwrap();
        let got: Vec<f64> = t.weights()[0].as_slice().iter().zip(start.weights()[0].as_slice()).map(|(a, b)| a - b).collect();
        for (d, gv) in got.iter().zip(g.weights[0].as_slice()) {
            assert!((d + 2.9 * gv).abs() < 1e-12);
        }
        for (b, gv) in t.biases()[0].iter().zip(&g.biases[0]) {
            assert!((b + 2.9 * gv).abs() < 1e-12);
        }
    }

    #[test]
    fn hash_layer_gets_multiplier() {
        let t: Tower<f64> = init_tower(&[3, 4, 2], 0).unwrap();
        let st = OptimizerState::new(&t, 0.01, 0.9, 10.0);
        assert_eq!(st.layer_lr_multipliers, vec![1.0, 10.0]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut t: Tower<f64> = init_tower(&[5, 7, 3], 11).unwrap();
        t.biases_mut()[1] = vec![1.0 / 3.0, -2e-310, 7.0];
        let text = t.to_checkpoint_string();
        let back = Tower::<f64>::from_checkpoint_str(&text, Path::new("mem")).unwrap();
        for (a, b) in t.weights().iter().zip(back.weights()) {
            assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back, t);
        assert_eq!(back.to_checkpoint_string(), text);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let p = Path::new("ckpt");
        assert!(Tower::<f64>::from_checkpoint_str("NOPE 1\n", p).is_err());
        let t: Tower<f64> = init_tower(&[2, 2], 0).unwrap();
        let text = t.to_checkpoint_string().replacen("weight 0 2 2", "weight 0 2 3", 1);
        let err = Tower::<f64>::from_checkpoint_str(&text, p).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn forward_is_permutation_equivariant(seed in 0u64..1000) {
            let t: Tower<f64> = init_tower(&[4, 5, 3], seed).unwrap();
            let b = batch(4, 4, seed + 1);
            let perm = [2, 0, 3, 1];
            prop_assert_eq!(t.output(&b.select_rows(&perm)).unwrap(), t.output(&b).unwrap().select_rows(&perm));
        }
    }
}
