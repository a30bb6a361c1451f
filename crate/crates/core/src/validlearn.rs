//! Learned transformation-validity penalty.
//!
//! Data comes from probing a simulator with transforms of growing magnitude:
//! for each round `i` the bounds are scaled by `i / n_valid`, every probe
//! transition is transformed and re-simulated, and the transform with the
//! smallest re-simulation error is kept. A small tanh MLP then regresses the
//! error from the transform parameters and serves as a smooth penalty.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{Point, TransformBounds, TransformKind, TransformParams};

/// One probed transition: moved-object points, robot points and action
/// points at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<Point>,
    pub robot: Vec<Point>,
    pub action: Vec<Point>,
}

impl Transition {
    pub fn transformed(&self, t: &TransformParams) -> Transition {
        Transition {
            state: t.apply_to_points(&self.state, None).0,
            robot: t.apply_to_points(&self.robot, None).0,
            action: t.apply_to_points(&self.action, None).0,
        }
    }

    pub fn centroid(&self) -> Point {
        if self.state.is_empty() {
            return Point::zeros();
        }
        self.state.iter().sum::<Point>() / self.state.len() as f64
    }
}

/// Deterministic one-step simulator used to score transforms.
pub trait TransitionSimulator: Sync {
    fn kind(&self) -> TransformKind;

    /// Returns `(s_{t+1}, r_{t+1})`.
    fn simulate(&self, transition: &Transition) -> Result<(Vec<Point>, Vec<Point>)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityExample {
    pub transform: TransformParams,
    pub error: f64,
}

/// `⌈√(10^d)⌉`.
pub fn n_valid_for(d: usize) -> usize {
    let exact = 10f64.powf(d as f64 / 2.0);
    // Round near-integers first so 10^3 = 1000 does not become 1001.
    let r = exact.round();
    if (exact - r).abs() < 1e-9 {
        r as usize
    } else {
        exact.ceil() as usize
    }
}

fn stacked_distance(a: &[Point], b: &[Point]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>().sqrt()
}

/// Probes `simulator` with transforms of increasing magnitude and returns one
/// minimum-error example per round. The running minimum restarts every round.
pub fn collect_validity_data<S: TransitionSimulator, R: Rng + ?Sized>(
    simulator: &S,
    probes: &[Transition],
    bounds: &TransformBounds,
    n_valid: usize,
    rng: &mut R,
) -> Result<Vec<ValidityExample>> {
    if probes.is_empty() {
        return Err(Error::Empty("validity data collection needs at least one probe"));
    }
    if bounds.kind() != simulator.kind() {
        return Err(Error::DimensionMismatch {
            expected: simulator.kind().dim(),
            actual: bounds.dim(),
        });
    }

    let originals: Vec<Option<Vec<Point>>> = probes
        .par_iter()
        .enumerate()
        .map(|(k, p)| match simulator.simulate(p) {
            Ok((next, _)) => Some(next),
            Err(e) => {
                log::warn!("probe {k}: original transition failed to simulate: {e}");
                None
            }
        })
        .collect();

    // Draw every transform up front so results do not depend on scheduling.
    let mut draws = Vec::with_capacity(n_valid * probes.len());
    for i in 1..=n_valid {
        let scaled = bounds.scaled(i as f64 / n_valid as f64)?;
        for (k, p) in probes.iter().enumerate() {
            let t = scaled.sample_uniform(p.centroid(), rng);
            draws.push((i, k, t));
        }
    }

    let errors: Vec<Option<f64>> = draws
        .par_iter()
        .map(|(i, k, t)| {
            let next = originals[*k].as_ref()?;
            let expected = t.apply_to_points(next, None).0;
            match simulator.simulate(&probes[*k].transformed(t)) {
                Ok((predicted, _)) => Some(stacked_distance(&expected, &predicted)),
                Err(e) => {
                    log::warn!("round {i}, probe {k}: skipped: {e}");
                    None
                }
            }
        })
        .collect();

    let mut out = Vec::with_capacity(n_valid);
    for (round, (draw_chunk, err_chunk)) in draws.chunks(probes.len()).zip(errors.chunks(probes.len())).enumerate() {
        let mut best: Option<(f64, &TransformParams)> = None;
        for ((_, _, t), err) in draw_chunk.iter().zip(err_chunk) {
            if let Some(y) = err {
                if best.is_none_or(|(b, _)| *y < b) {
                    best = Some((*y, t));
                }
            }
        }
        match best {
            Some((error, t)) => out.push(ValidityExample {
                transform: t.clone(),
                error,
            }),
            None => log::warn!("round {}: every probe failed, no example emitted", round + 1),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// L2 penalty on weights (not biases), added to the loss gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            epochs: 2000,
            lr: 0.01,
            weight_decay: 1e-4,
        }
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    /// `Wᵀ δ`.
    fn backward_input(&self, delta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.inputs, 0.0);
        for (o, d) in delta.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (acc, w) in out.iter_mut().zip(row) {
                *acc += w * d;
            }
        }
    }
}

/// Tanh MLP `T ↦ scale · softplus(net(normalize(T)))`.
///
/// Inputs are mapped to `[-1, 1]` by the bounds the model was trained under;
/// the output is non-negative everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityModel {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    input_lower: Vec<f64>,
    input_upper: Vec<f64>,
    output_scale: f64,
    bounds: TransformBounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
}

struct Tape {
    normalized: Vec<f64>,
    /// Post-activation values of each hidden layer.
    hidden: Vec<Vec<f64>>,
    z: f64,
}

impl ValidityModel {
    /// Randomly initialized network (Glorot uniform, zero biases).
    pub fn new<R: Rng + ?Sized>(bounds: TransformBounds, hidden: &[usize], rng: &mut R) -> Self {
        let d = bounds.dim();
        let mut layer_sizes = vec![d];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect(),
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Self {
            layer_sizes,
            layers,
            input_lower: bounds.lower().to_vec(),
            input_upper: bounds.upper().to_vec(),
            output_scale: 1.0,
            bounds,
            final_loss: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn bounds(&self) -> &TransformBounds {
        &self.bounds
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.final_loss
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    /// Sets every weight and bias to zero.
    pub fn zeroed(mut self) -> Self {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        self
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let (a, c) = self.input_affine(i);
                a * v + c
            })
            .collect()
    }

    /// Same function, different stored input normalization: the first layer
    /// absorbs the change.
    pub fn renormalized(&self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.dim() || upper.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: lower.len(),
            });
        }
        let mut out = self.clone();
        out.input_lower = lower;
        out.input_upper = upper;
        // old(x) = a·x + c and new(x) = a'·x + c', so old = (a/a')·new + c − (a/a')·c'.
        let inputs = self.layers[0].inputs;
        for o in 0..self.layers[0].outputs {
            let mut shift = 0.0;
            for i in 0..inputs {
                let (a, c) = self.input_affine(i);
                let (a2, c2) = out.input_affine(i);
                let ratio = a / a2;
                let w = self.layers[0].weights[o * inputs + i];
                out.layers[0].weights[o * inputs + i] = w * ratio;
                shift += w * (c - ratio * c2);
            }
            out.layers[0].biases[o] += shift;
        }
        Ok(out)
    }

    /// Normalization of input `i` as `x ↦ a·x + c`.
    fn input_affine(&self, i: usize) -> (f64, f64) {
        let span = self.input_upper[i] - self.input_lower[i];
        if span > 0.0 {
            let a = 2.0 / span;
            (a, -self.input_lower[i] * a - 1.0)
        } else {
            (1.0, -self.input_lower[i])
        }
    }

    fn forward_tape(&self, x: &[f64]) -> Tape {
        let normalized = self.normalize(x);
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = normalized.clone();
        let mut buf = Vec::new();
        for layer in &self.layers[..self.layers.len() - 1] {
            layer.forward(&cur, &mut buf);
            cur = buf.iter().map(|v| v.tanh()).collect();
            hidden.push(cur.clone());
        }
        self.layers[self.layers.len() - 1].forward(&cur, &mut buf);
        Tape {
            normalized,
            hidden,
            z: buf[0],
        }
    }

    fn check_dim(&self, t: &TransformParams) -> Result<()> {
        if t.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: t.dim(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, t: &TransformParams) -> Result<f64> {
        self.check_dim(t)?;
        Ok(self.output_scale * softplus(self.forward_tape(t.values()).z))
    }

    /// Forward value and exact input gradient by reverse accumulation.
    pub fn evaluate_with_gradient(&self, t: &TransformParams) -> Result<(f64, Vec<f64>)> {
        self.check_dim(t)?;
        let tape = self.forward_tape(t.values());
        let value = self.output_scale * softplus(tape.z);
        let mut delta = vec![self.output_scale * sigmoid(tape.z)];
        let mut buf = Vec::new();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            layer.backward_input(&delta, &mut buf);
            if li > 0 {
                let act = &tape.hidden[li - 1];
                delta = buf.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
            } else {
                delta = buf.clone();
            }
        }
        let grad = delta
            .iter()
            .enumerate()
            .map(|(i, g)| g * self.input_affine(i).0)
            .collect();
        Ok((value, grad))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: ValidityModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("validity model: {m}")));
        if self.layer_sizes.len() < 2 || self.layers.len() + 1 != self.layer_sizes.len() {
            return bad("layer sizes do not match layers");
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return bad("output layer must have one unit");
        }
        if self.bounds.dim() != self.dim()
            || self.input_lower.len() != self.dim()
            || self.input_upper.len() != self.dim()
        {
            return bad("input dimension disagrees with bounds");
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.inputs != w[0] || l.outputs != w[1] || l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return bad("weight shapes do not match layer sizes");
            }
        }
        Ok(())
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 20.0 {
        y
    } else if y > 1e-12 {
        y.exp_m1().ln()
    } else {
        -27.6
    }
}

/// Full-batch Adam on mean squared error of scaled targets. Inputs are
/// normalized by `bounds`; targets are divided by their standard deviation so
/// the softplus output stays non-negative.
pub fn train_validity_model<R: Rng + ?Sized>(
    data: &[ValidityExample],
    bounds: &TransformBounds,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ValidityModel> {
    if data.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 validity examples, got {}",
            data.len()
        )));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(
            "learning rate must be positive and finite".into(),
        ));
    }
    if !(cfg.weight_decay >= 0.0 && cfg.weight_decay.is_finite()) {
        return Err(Error::InvalidArgument(
            "weight decay must be non-negative and finite".into(),
        ));
    }
    for ex in data {
        if ex.transform.dim() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                actual: ex.transform.dim(),
            });
        }
        if !(ex.error.is_finite() && ex.error >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid target error {}", ex.error)));
        }
    }

    let n = data.len() as f64;
    let mean = data.iter().map(|e| e.error).sum::<f64>() / n;
    let std = (data.iter().map(|e| (e.error - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 1e-12 {
        std
    } else if mean > 1e-12 {
        mean
    } else {
        1.0
    };

    let mut model = ValidityModel::new(bounds.clone(), &cfg.hidden, rng);
    model.output_scale = scale;
    let last = model.layers.len() - 1;
    model.layers[last].biases[0] = inverse_softplus(mean / scale);

    let inputs: Vec<Vec<f64>> = data.iter().map(|e| model.normalize(e.transform.values())).collect();
    let targets: Vec<f64> = data.iter().map(|e| e.error / scale).collect();

    let shapes: Vec<(usize, usize)> = model.layers.iter().map(|l| (l.weights.len(), l.biases.len())).collect();
    let zeros = || -> Vec<(Vec<f64>, Vec<f64>)> { shapes.iter().map(|&(w, b)| (vec![0.0; w], vec![0.0; b])).collect() };
    let (mut m1, mut m2) = (zeros(), zeros());
    let (beta1, beta2, eps) = (0.9_f64, 0.999_f64, 1e-8);
    let mut last_finite = f64::NAN;
    let mut loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        let mut grads = zeros();
        loss = 0.0;
        for (x, &y) in inputs.iter().zip(&targets) {
            let tape = forward_normalized(&model, x);
            let pred = softplus(tape.z);
            let err = pred - y;
            loss += err * err;
            let mut delta = vec![2.0 * err * sigmoid(tape.z) / n];
            let mut buf = Vec::new();
            for li in (0..model.layers.len()).rev() {
                let layer = &model.layers[li];
                let input: &[f64] = if li == 0 {
                    &tape.normalized
                } else {
                    &tape.hidden[li - 1]
                };
                let (gw, gb) = &mut grads[li];
                for (o, d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += d * v;
                    }
                }
                if li > 0 {
                    layer.backward_input(&delta, &mut buf);
                    let act = &tape.hidden[li - 1];
                    delta = buf.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
                }
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                last_finite_loss: last_finite,
            });
        }
        last_finite = loss;

        if cfg.weight_decay > 0.0 {
            for (layer, (gw, _)) in model.layers.iter().zip(grads.iter_mut()) {
                for (g, w) in gw.iter_mut().zip(&layer.weights) {
                    *g += 2.0 * cfg.weight_decay * w;
                }
            }
        }
        let step = (epoch + 1) as i32;
        let c1 = 1.0 - beta1.powi(step);
        let c2 = 1.0 - beta2.powi(step);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let params = [&mut layer.weights, &mut layer.biases];
            let g = [&grads[li].0, &grads[li].1];
            let (a, b) = (&mut m1[li], &mut m2[li]);
            let ma = [&mut a.0, &mut a.1];
            let mb = [&mut b.0, &mut b.1];
            for (((p, g), m), v) in params.into_iter().zip(g).zip(ma).zip(mb) {
                for k in 0..p.len() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                    p[k] -= cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            }
        }
        let finite = model
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|w| w.is_finite()));
        if !finite {
            return Err(Error::TrainingDiverged {
                epoch,
                last_finite_loss: last_finite,
            });
        }
    }
    model.final_loss = Some(loss);
    Ok(model)
}

fn forward_normalized(model: &ValidityModel, normalized: &[f64]) -> Tape {
    let mut hidden = Vec::with_capacity(model.layers.len() - 1);
    let mut cur = normalized.to_vec();
    let mut buf = Vec::new();
    for layer in &model.layers[..model.layers.len() - 1] {
        layer.forward(&cur, &mut buf);
        cur = buf.iter().map(|v| v.tanh()).collect();
        hidden.push(cur.clone());
    }
    model.layers[model.layers.len() - 1].forward(&cur, &mut buf);
    Tape {
        normalized: normalized.to_vec(),
        hidden,
        z: buf[0],
    }
}

/// Collects probe data and fits a model with one seed.
pub fn learn_validity<S: TransitionSimulator>(
    simulator: &S,
    probes: &[Transition],
    bounds: &TransformBounds,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ValidityModel, Vec<ValidityExample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_valid = n_valid_for(bounds.dim());
    let data = collect_validity_data(simulator, probes, bounds, n_valid, &mut rng)?;
    let model = train_validity_model(&data, bounds, cfg, &mut rng)?;
    Ok((model, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::TransformKind;

    fn bounds3() -> TransformBounds {
        TransformBounds::new(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap()
    }

    fn tp(v: &[f64]) -> TransformParams {
        TransformParams::new(v.to_vec(), Point::zeros()).unwrap()
    }

    #[test]
    fn n_valid_sizes() {
        assert_eq!(n_valid_for(6), 1000);
        assert_eq!(n_valid_for(3), 32);
        assert_eq!(n_valid_for(2), 10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = TransformBounds::new(vec![-0.2, -0.1, -1.5], vec![0.3, 0.1, 1.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ValidityModel::new(b.clone(), &[16, 16], &mut rng);
        let h = 1e-5;
        for _ in 0..100 {
            let t = b.sample_uniform(Point::zeros(), &mut rng);
            let (_, g) = model.evaluate_with_gradient(&t).unwrap();
            for k in 0..3 {
                let mut p = t.values().to_vec();
                let mut m = t.values().to_vec();
                p[k] += h;
                m[k] -= h;
                let fd = (model.evaluate(&tp(&p)).unwrap() - model.evaluate(&tp(&m)).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-4 * fd.abs().max(g[k].abs()) + 1e-10,
                    "{fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn zero_weights_give_constant_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ValidityModel::new(bounds3(), &[8], &mut rng).zeroed();
        let (v0, g0) = model.evaluate_with_gradient(&tp(&[0.0, 0.0, 0.0])).unwrap();
        let (v1, g1) = model.evaluate_with_gradient(&tp(&[0.5, -0.3, 0.9])).unwrap();
        assert_eq!(v0, v1);
        assert!((v0 - 2f64.ln()).abs() < 1e-15);
        assert!(g0.iter().chain(&g1).all(|&g| g == 0.0));
    }

    #[test]
    fn renormalization_preserves_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ValidityModel::new(bounds3(), &[8, 8], &mut rng);
        let other = model.renormalized(vec![-3.0, 0.5, -0.2], vec![1.0, 2.0, 0.7]).unwrap();
        for v in [[0.1, 0.2, 0.3], [-0.9, 0.7, 0.0], [1.0, -1.0, 0.5]] {
            let a = model.evaluate(&tp(&v)).unwrap();
            let b = other.evaluate(&tp(&v)).unwrap();
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
        let back = other.renormalized(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        for (x, y) in back.layers[0].weights.iter().zip(&model.layers[0].weights) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn output_never_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ValidityModel::new(bounds3(), &[8], &mut rng);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = TransformParams::new(v, Point::zeros());
            if let Ok(t) = t {
                assert!(model.evaluate(&t).unwrap() >= 0.0);
            }
        }
    }

    fn synthetic(n: usize, rng: &mut ChaCha8Rng, f: impl Fn(&[f64]) -> f64) -> Vec<ValidityExample> {
        (0..n)
            .map(|_| {
                let t = bounds3().sample_uniform(Point::zeros(), rng);
                let error = f(t.values());
                ValidityExample { transform: t, error }
            })
            .collect()
    }

    #[test]
    fn constant_target_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = synthetic(50, &mut rng, |_| 0.3);
        let cfg = TrainConfig {
            epochs: 300,
            ..Default::default()
        };
        let model = train_validity_model(&data, &bounds3(), &cfg, &mut rng).unwrap();
        for ex in data.iter().take(10) {
            assert!((model.evaluate(&ex.transform).unwrap() - 0.3).abs() < 1e-3);
        }
    }

    #[test]
    fn quadratic_target_generalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let train = synthetic(400, &mut rng, sq);
        let test = synthetic(200, &mut rng, sq);
        let model = train_validity_model(&train, &bounds3(), &TrainConfig::default(), &mut rng).unwrap();
        let mean = test.iter().map(|e| e.error).sum::<f64>() / test.len() as f64;
        let var = test.iter().map(|e| (e.error - mean).powi(2)).sum::<f64>() / test.len() as f64;
        let mse = test
            .iter()
            .map(|e| (model.evaluate(&e.transform).unwrap() - e.error).powi(2))
            .sum::<f64>()
            / test.len() as f64;
        assert!(mse <= 0.01 * var, "mse {mse} var {var}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = synthetic(30, &mut ChaCha8Rng::seed_from_u64(1), |v| v[0].abs());
        let cfg = TrainConfig {
            epochs: 50,
            ..Default::default()
        };
        let a = train_validity_model(&data, &bounds3(), &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = train_validity_model(&data, &bounds3(), &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_examples_rejected() {
        let data = synthetic(5, &mut ChaCha8Rng::seed_from_u64(1), |_| 1.0);
        let r = train_validity_model(
            &data,
            &bounds3(),
            &TrainConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(r.is_err());
    }

    #[test]
    fn bad_learning_rate_rejected() {
        let data = synthetic(20, &mut ChaCha8Rng::seed_from_u64(1), |v| v[1].abs());
        for lr in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let cfg = TrainConfig {
                epochs: 10,
                lr,
                ..Default::default()
            };
            assert!(train_validity_model(&data, &bounds3(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        }
    }

    #[test]
    fn model_file_roundtrip_and_dimension_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ValidityModel::new(bounds3(), &[4], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        let back = ValidityModel::load(&path).unwrap();
        assert_eq!(
            back.evaluate(&tp(&[0.1, 0.2, 0.3])).unwrap(),
            model.evaluate(&tp(&[0.1, 0.2, 0.3])).unwrap()
        );
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["layer_sizes"] = serde_json::json!([3, 5, 1]);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(ValidityModel::load(&path).is_err());
        let six = TransformParams::identity(6, Point::zeros()).unwrap();
        assert!(model.evaluate(&six).is_err());
    }

    /// Error grows with |first parameter|; identity costs nothing.
    struct ShiftSim;

    impl TransitionSimulator for ShiftSim {
        fn kind(&self) -> TransformKind {
            TransformKind::Se2
        }

        fn simulate(&self, tr: &Transition) -> Result<(Vec<Point>, Vec<Point>)> {
            // Snaps the state back onto the x axis: any y offset is "invalid".
            let next = tr.state.iter().map(|p| Point::new(p.x + 0.01, 0.0, 0.0)).collect();
            Ok((next, tr.robot.clone()))
        }
    }

    #[test]
    fn collection_emits_n_valid_with_growing_magnitude() {
        let probe = Transition {
            state: vec![Point::new(0.0, 0.0, 0.0), Point::new(0.1, 0.0, 0.0)],
            robot: vec![],
            action: vec![],
        };
        let b = TransformBounds::new(vec![-0.2, -0.2, -0.5], vec![0.2, 0.2, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = n_valid_for(3);
        let data = collect_validity_data(&ShiftSim, &[probe.clone(), probe], &b, n, &mut rng).unwrap();
        assert_eq!(data.len(), 32);
        for (i, ex) in data.iter().enumerate() {
            let alpha = (i + 1) as f64 / n as f64;
            for (k, v) in ex.transform.values().iter().enumerate() {
                assert!(v.abs() <= alpha * b.upper()[k] + 1e-12);
            }
            assert!(ex.error >= 0.0 && ex.error.is_finite());
        }
    }

    #[test]
    fn identity_probe_has_zero_error() {
        let probe = Transition {
            state: vec![Point::new(0.3, 0.0, 0.0)],
            robot: vec![],
            action: vec![],
        };
        let b = TransformBounds::degenerate(TransformKind::Se2);
        let data = collect_validity_data(&ShiftSim, &[probe], &b, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(data.iter().all(|e| e.error <= 1e-9));
    }
}
