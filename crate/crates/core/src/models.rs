//! Small differentiable classifiers with exact per-example gradients.
//!
//! Two architectures: a linear soft-max classifier and a one-hidden-layer tanh
//! network. Parameters live in one flat vector laid out as
//!
//! ```text
//! linear: W (C×d) | b (C)
//! mlp:    W1 (H×d) | b1 (H) | W2 (C×H) | b2 (C)
//! ```
//!
//! with bias blocks present only when `bias` is set.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Example};
use crate::numerics::{axpy, log_sum_exp, Rng};
use crate::{Error, Result};

/// Margins are clamped to `±MARGIN_CLAMP` so `σ(f)` never saturates to an
/// exact 0 or 1.
pub const MARGIN_CLAMP: f64 = 30.0;
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Arch {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_dim: usize,
    pub class_count: usize,
    pub bias: bool,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Linear,
            input_dim: 10,
            class_count: 2,
            bias: true,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::invalid("class_count must be at least 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be at least 1"));
        }
        if let Arch::Mlp { hidden: 0 } = self.arch {
            return Err(Error::invalid("mlp hidden width must be at least 1"));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::invalid("init_scale must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of parameters `p`.
    pub fn param_count(&self) -> usize {
        let (d, c, b) = (self.input_dim, self.class_count, usize::from(self.bias));
        match self.arch {
            Arch::Linear => c * d + b * c,
            Arch::Mlp { hidden: h } => h * d + b * h + c * h + b * c,
        }
    }

    pub fn with_seed(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Decays linearly from `learning_rate` to zero over all steps.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            schedule: LrSchedule::Linear,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Flat model parameters together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    theta: Vec<f64>,
    config: ModelConfig,
}

/// Offsets of the parameter blocks inside `theta`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    c: usize,
    h: usize,
    w1: usize,
    b1: Option<usize>,
    w2: usize,
    b2: Option<usize>,
}

impl Layout {
    fn of(cfg: &ModelConfig) -> Layout {
        let (d, c) = (cfg.input_dim, cfg.class_count);
        match cfg.arch {
            Arch::Linear => Layout {
                d,
                c,
                h: 0,
                w1: 0,
                b1: None,
                w2: 0,
                b2: cfg.bias.then_some(c * d),
            },
            Arch::Mlp { hidden: h } => {
                let b1 = cfg.bias.then_some(h * d);
                let w2 = h * d + if cfg.bias { h } else { 0 };
                Layout {
                    d,
                    c,
                    h,
                    w1: 0,
                    b1,
                    w2,
                    b2: cfg.bias.then_some(w2 + c * h),
                }
            }
        }
    }

    fn is_linear(&self) -> bool {
        self.h == 0
    }
}

/// Reusable activations for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dlogits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl ParamVector {
    /// Random initialization: weights `N(0, 1) · init_scale / √fan_in`,
    /// biases zero. Deterministic in `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::of(cfg);
        let mut theta = vec![0.0; cfg.param_count()];
        let mut rng = Rng::new(cfg.seed);
        let mut fill = |range: core::ops::Range<usize>, fan_in: usize| {
            let s = cfg.init_scale / libm::sqrt(fan_in as f64);
            for t in &mut theta[range] {
                *t = rng.standard_normal() * s;
            }
        };
        if layout.is_linear() {
            fill(0..layout.c * layout.d, layout.d);
        } else {
            fill(layout.w1..layout.w1 + layout.h * layout.d, layout.d);
            fill(layout.w2..layout.w2 + layout.c * layout.h, layout.h);
        }
        Ok(ParamVector {
            theta,
            config: cfg.clone(),
        })
    }

    pub fn from_parts(theta: Vec<f64>, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if theta.len() != config.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, architecture needs {}",
                theta.len(),
                config.param_count()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(ParamVector { theta, config })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn check_input(&self, x: &[f32]) {
        assert_eq!(
            x.len(),
            self.config.input_dim,
            "input has {} features, model expects {}",
            x.len(),
            self.config.input_dim
        );
    }

    /// Forward pass into `s.logits` (and `s.hidden` for the mlp).
    fn forward(&self, x: &[f32], s: &mut Scratch) {
        self.check_input(x);
        let l = Layout::of(&self.config);
        s.input.clear();
        s.input.extend(x.iter().map(|&v| f64::from(v)));
        let t = &self.theta;
        let (layer_in, w_off, width) = if l.is_linear() {
            (&s.input, l.w2, l.d)
        } else {
            s.hidden.clear();
            for j in 0..l.h {
                let w = &t[l.w1 + j * l.d..l.w1 + (j + 1) * l.d];
                let mut a: f64 = w.iter().zip(&s.input).map(|(a, b)| a * b).sum();
                if let Some(b1) = l.b1 {
                    a += t[b1 + j];
                }
                s.hidden.push(libm::tanh(a));
            }
            (&s.hidden, l.w2, l.h)
        };
        s.logits.clear();
        for c in 0..l.c {
            let w = &t[w_off + c * width..w_off + (c + 1) * width];
            let mut z: f64 = w.iter().zip(layer_in).map(|(a, b)| a * b).sum();
            if let Some(b2) = l.b2 {
                z += t[b2 + c];
            }
            s.logits.push(z);
        }
    }

    /// Adds `scale · ∂(Σ_c dlogits_c · logit_c)/∂θ` into `grad`, using the
    /// activations left in `s` by the last forward pass.
    fn backward(&self, s: &mut Scratch, scale: f64, grad: &mut [f64]) {
        let l = Layout::of(&self.config);
        let t = &self.theta;
        let (layer_in, width) = if l.is_linear() {
            (&s.input, l.d)
        } else {
            (&s.hidden, l.h)
        };
        for c in 0..l.c {
            let dc = scale * s.dlogits[c];
            if dc == 0.0 {
                continue;
            }
            axpy(dc, layer_in, &mut grad[l.w2 + c * width..l.w2 + (c + 1) * width]);
            if let Some(b2) = l.b2 {
                grad[b2 + c] += dc;
            }
        }
        if l.is_linear() {
            return;
        }
        s.dhidden.clear();
        s.dhidden.resize(l.h, 0.0);
        for c in 0..l.c {
            let dc = scale * s.dlogits[c];
            axpy(dc, &t[l.w2 + c * l.h..l.w2 + (c + 1) * l.h], &mut s.dhidden);
        }
        for j in 0..l.h {
            let da = s.dhidden[j] * (1.0 - s.hidden[j] * s.hidden[j]);
            if da == 0.0 {
                continue;
            }
            axpy(da, &s.input, &mut grad[l.w1 + j * l.d..l.w1 + (j + 1) * l.d]);
            if let Some(b1) = l.b1 {
                grad[b1 + j] += da;
            }
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut s = Scratch::default();
        self.forward(x, &mut s);
        s.logits
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits(x))
    }

    /// Correct-class margin `log(p / (1 − p))` with `p` the soft-max
    /// probability of `z.label`, clamped to `±MARGIN_CLAMP`.
    pub fn margin(&self, z: &Example) -> f64 {
        margin_from_logits(&self.logits(&z.features), z.label)
    }

    /// Cross-entropy `−log softmax(logits)[y]`.
    pub fn cross_entropy(&self, z: &Example) -> f64 {
        let logits = self.logits(&z.features);
        log_sum_exp(logits.iter().copied()) - logits[z.label]
    }

    /// Exact gradient of the unclamped margin with respect to `θ`.
    pub fn margin_gradient(&self, z: &Example) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta.len()];
        self.margin_gradient_into(z, &mut Scratch::default(), &mut grad);
        grad
    }

    /// [`Self::margin_gradient`] into a caller-provided buffer (overwritten).
    pub fn margin_gradient_into(&self, z: &Example, s: &mut Scratch, grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.forward(&z.features, s);
        let y = z.label;
        // f = l_y − log Σ_{c≠y} exp(l_c): ∂f/∂l_y = 1, ∂f/∂l_c = −softmax_{c≠y}(l)_c
        let others = log_sum_exp(
            s.logits
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != y)
                .map(|(_, &v)| v),
        );
        s.dlogits.clear();
        s.dlogits.extend(s.logits.iter().enumerate().map(|(c, &v)| {
            if c == y {
                1.0
            } else {
                -libm::exp(v - others)
            }
        }));
        self.backward(s, 1.0, grad);
    }

    /// Adds `scale · ∇θ cross_entropy(z)` into `grad` and returns the loss.
    fn accumulate_loss_gradient(&self, z: &Example, s: &mut Scratch, scale: f64, grad: &mut [f64]) -> f64 {
        self.forward(&z.features, s);
        let lse = log_sum_exp(s.logits.iter().copied());
        let loss = lse - s.logits[z.label];
        s.dlogits.clear();
        s.dlogits.extend(s.logits.iter().map(|&v| libm::exp(v - lse)));
        s.dlogits[z.label] -= 1.0;
        self.backward(s, scale, grad);
        loss
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// `log(p / (1 − p))` for `p = softmax(logits)[y]`, clamped to `±MARGIN_CLAMP`.
pub fn margin_from_logits(logits: &[f64], y: usize) -> f64 {
    let others = log_sum_exp(
        logits
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != y)
            .map(|(_, &v)| v),
    );
    (logits[y] - others).clamp(-MARGIN_CLAMP, MARGIN_CLAMP)
}

/// Free-function form of [`ParamVector::margin`].
pub fn margin(theta: &ParamVector, z: &Example) -> f64 {
    theta.margin(z)
}

/// Free-function form of [`ParamVector::margin_gradient`].
pub fn per_example_gradient(theta: &ParamVector, z: &Example) -> Vec<f64> {
    theta.margin_gradient(z)
}

/// Sorted, de-duplicated copy of `subset`, checked against `n`.
pub(crate) fn normalize_subset(subset: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut idx = subset.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if let Some(&last) = idx.last() {
        if last >= n {
            return Err(Error::invalid(format!(
                "training index {last} out of range for {n} examples"
            )));
        }
    }
    Ok(idx)
}

/// Trains a fresh model on `ds[subset]` with minibatch momentum SGD on mean
/// cross-entropy plus L2 weight decay.
///
/// The index set is sorted first and batches come from a per-epoch shuffle
/// seeded by `tcfg.seed`, so the result depends only on the set of indices
/// and the two seeds.
pub fn train(ds: &Dataset, subset: &[usize], mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<ParamVector> {
    tcfg.validate()?;
    if mcfg.input_dim != ds.feature_dim() {
        return Err(Error::invalid(format!(
            "model input_dim {} does not match dataset dimension {}",
            mcfg.input_dim,
            ds.feature_dim()
        )));
    }
    if ds.class_count() > mcfg.class_count {
        return Err(Error::invalid("dataset has more classes than the model"));
    }
    let base = normalize_subset(subset, ds.len())?;
    if base.is_empty() {
        return Err(Error::invalid("cannot train on an empty index set"));
    }

    let mut model = ParamVector::init(mcfg)?;
    let p = model.theta.len();
    let mut velocity = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut scratch = Scratch::default();
    let mut rng = Rng::new(tcfg.seed);
    let mut order = base.clone();

    let batches_per_epoch = base.len().div_ceil(tcfg.batch_size);
    let total_steps = (tcfg.epochs * batches_per_epoch) as f64;
    let mut step = 0usize;
    let examples = ds.examples();

    for epoch in 0..tcfg.epochs {
        order.copy_from_slice(&base);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += model.accumulate_loss_gradient(&examples[i], &mut scratch, scale, &mut grad);
            }
            let lr = match tcfg.schedule {
                LrSchedule::Constant => tcfg.learning_rate,
                LrSchedule::Linear => tcfg.learning_rate * (1.0 - step as f64 / total_steps),
            };
            for ((t, v), g) in model.theta.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = MOMENTUM * *v + g + tcfg.weight_decay * *t;
                *t -= lr * *v;
            }
            step += 1;
        }
        if !epoch_loss.is_finite() || model.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    Ok(model)
}

/// Per-group loss and accuracy on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub counts: Vec<usize>,
    /// Mean cross-entropy; `None` for groups without members.
    pub losses: Vec<Option<f64>>,
    /// Mean 0-1 accuracy; `None` for groups without members.
    pub accuracies: Vec<Option<f64>>,
}

impl GroupStats {
    /// Losses of every group, failing on the first empty one.
    pub fn present_losses(&self) -> Result<Vec<f64>> {
        collect_present(&self.losses)
    }

    pub fn present_accuracies(&self) -> Result<Vec<f64>> {
        collect_present(&self.accuracies)
    }
}

fn collect_present(xs: &[Option<f64>]) -> Result<Vec<f64>> {
    xs.iter()
        .enumerate()
        .map(|(g, x)| x.ok_or(Error::EmptyGroup { group: g }))
        .collect()
}

/// Per-group mean cross-entropy and accuracy with explicit group assignments.
pub fn group_stats(theta: &ParamVector, ds: &Dataset, groups: &[usize], group_count: usize) -> Result<GroupStats> {
    if groups.len() != ds.len() {
        return Err(Error::invalid("one group per example is required"));
    }
    let mut counts = vec![0usize; group_count];
    let mut loss = vec![0.0; group_count];
    let mut correct = vec![0usize; group_count];
    for (ex, &g) in ds.examples().iter().zip(groups) {
        if g >= group_count {
            return Err(Error::invalid(format!("group {g} out of range")));
        }
        let logits = theta.logits(&ex.features);
        counts[g] += 1;
        loss[g] += log_sum_exp(logits.iter().copied()) - logits[ex.label];
        correct[g] += usize::from(argmax(&logits) == ex.label);
    }
    let per = |total: &dyn Fn(usize) -> f64| -> Vec<Option<f64>> {
        (0..group_count)
            .map(|g| (counts[g] > 0).then(|| total(g) / counts[g] as f64))
            .collect()
    };
    Ok(GroupStats {
        losses: per(&|g| loss[g]),
        accuracies: per(&|g| correct[g] as f64),
        counts,
    })
}

/// [`group_stats`] using the dataset's own group labels.
pub fn group_losses(theta: &ParamVector, ds: &Dataset) -> Result<GroupStats> {
    let n = ds.group_count().ok_or(Error::MissingGroupLabels)?;
    group_stats(theta, ds, &ds.groups()?, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic, Split, SynthConfig};
    use alloc::string::ToString;

    fn model(arch: Arch, d: usize, c: usize, bias: bool, seed: u64) -> ParamVector {
        ParamVector::init(&ModelConfig {
            arch,
            input_dim: d,
            class_count: c,
            bias,
            init_scale: 1.0,
            seed,
        })
        .unwrap()
    }

    fn with_theta(m: &ParamVector, theta: Vec<f64>) -> ParamVector {
        ParamVector::from_parts(theta, m.config().clone()).unwrap()
    }

    fn random_example(d: usize, c: usize, rng: &mut Rng) -> Example {
        let x = (0..d).map(|_| rng.standard_normal() as f32).collect();
        Example::new(x, (rng.next_u64() % c as u64) as usize)
    }

    fn finite_difference(m: &ParamVector, z: &Example, h: f64) -> Vec<f64> {
        (0..m.len())
            .map(|j| {
                let mut plus = m.theta().to_vec();
                let mut minus = m.theta().to_vec();
                plus[j] += h;
                minus[j] -= h;
                (with_theta(m, plus).margin(z) - with_theta(m, minus).margin(z)) / (2.0 * h)
            })
            .collect()
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff = libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
        let scale = crate::numerics::norm(a).max(crate::numerics::norm(b)).max(1e-12);
        diff / scale
    }

    #[test]
    fn param_counts() {
        assert_eq!(model(Arch::Linear, 10, 2, true, 0).len(), 22);
        assert_eq!(model(Arch::Linear, 10, 3, false, 0).len(), 30);
        assert_eq!(model(Arch::Mlp { hidden: 4 }, 3, 2, true, 0).len(), 4 * 3 + 4 + 2 * 4 + 2);
    }

    #[test]
    fn margin_of_equal_logits_is_zero() {
        let m = model(Arch::Linear, 2, 2, true, 0);
        let zero = with_theta(&m, vec![0.0; m.len()]);
        assert_eq!(zero.margin(&Example::new(vec![0.3, -1.0], 1)), 0.0);
    }

    #[test]
    fn binary_margin_is_the_logit() {
        // logits (0, 3) → p(y=1) = σ(3) → margin 3
        let m = model(Arch::Linear, 1, 2, true, 0);
        let theta = vec![0.0, 0.0, 0.0, 3.0];
        let z = Example::new(vec![0.7], 1);
        assert!((with_theta(&m, theta.clone()).margin(&z) - 3.0).abs() < 1e-9);
        let z0 = Example::new(vec![0.7], 0);
        assert!((with_theta(&m, theta).margin(&z0) + 3.0).abs() < 1e-9);
    }

    #[test]
    fn margin_matches_probability_form() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let m = model(Arch::Mlp { hidden: 5 }, 4, 4, true, rng.next_u64());
            let z = random_example(4, 4, &mut rng);
            let logits = m.logits(&z.features);
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
            let p = e[z.label] / e.iter().sum::<f64>();
            let oracle = libm::log(p / (1.0 - p));
            assert!((m.margin(&z) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn margin_is_clamped() {
        let m = model(Arch::Linear, 1, 2, true, 0);
        let m = with_theta(&m, vec![0.0, 0.0, -500.0, 500.0]);
        assert_eq!(m.margin(&Example::new(vec![0.0], 1)), MARGIN_CLAMP);
        assert_eq!(m.margin(&Example::new(vec![0.0], 0)), -MARGIN_CLAMP);
    }

    #[test]
    fn margin_monotone_in_true_logit() {
        let m = model(Arch::Linear, 1, 3, true, 0);
        let z = Example::new(vec![0.0], 2);
        let mut last = f64::NEG_INFINITY;
        for k in -20..20 {
            let theta = vec![0.0, 0.0, 0.0, 0.4, -0.3, f64::from(k) * 0.5];
            let f = with_theta(&m, theta).margin(&z);
            assert!(f > last);
            last = f;
        }
    }

    #[test]
    fn linear_binary_gradient_closed_form() {
        // f = (w_y − w_o)·x + (b_y − b_o): ∂f/∂w_y = x, ∂f/∂w_o = −x, ∂f/∂b = ±1,
        // independent of θ.
        let m = model(Arch::Linear, 3, 2, true, 5);
        let z = Example::new(vec![0.5, -1.25, 2.0], 0);
        let g = m.margin_gradient(&z);
        let want = [0.5, -1.25, 2.0, -0.5, 1.25, -2.0, 1.0, -1.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{g:?}");
        }
    }

    #[test]
    fn zero_input_bias_free_gradient() {
        let m = model(Arch::Linear, 3, 3, false, 2);
        let z = Example::new(vec![0.0; 3], 1);
        let g = m.margin_gradient(&z);
        assert!(g.iter().all(|&v| v == 0.0));
        let fd = finite_difference(&m, &z, 1e-5);
        assert!(fd.iter().all(|v| v.abs() < 1e-9));

        // with biases only the bias block moves: δ = (−½, 1, −½) at equal logits
        let mb = model(Arch::Linear, 3, 3, true, 2);
        let g = mb.margin_gradient(&z);
        assert!(g[..9].iter().all(|&v| v == 0.0));
        assert!((g[9] + 0.5).abs() < 1e-12 && (g[10] - 1.0).abs() < 1e-12 && (g[11] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(17);
        for arch in [Arch::Linear, Arch::Mlp { hidden: 6 }] {
            for draw in 0..100 {
                let c = 2 + draw % 3;
                let m = model(arch, 5, c, true, rng.next_u64());
                let z = random_example(5, c, &mut rng);
                let err = relative_error(&m.margin_gradient(&z), &finite_difference(&m, &z, 1e-5));
                assert!(err < 1e-4, "{arch:?} draw {draw}: {err}");
            }
        }
    }

    fn two_points() -> Dataset {
        let mut a = Example::new(vec![1.0, 0.0], 1);
        a.group = Some(0);
        let mut b = Example::new(vec![-1.0, 0.0], 0);
        b.group = Some(1);
        Dataset::new(vec![a, b], 2, 2, Some(vec!["a".to_string(), "b".to_string()]), None, Split::Train).unwrap()
    }

    #[test]
    fn separable_pair_is_fit() {
        let ds = two_points();
        let mcfg = ModelConfig {
            input_dim: 2,
            ..ModelConfig::default()
        };
        let m = train(&ds, &[0, 1], &mcfg, &TrainConfig::default()).unwrap();
        for ex in ds.examples() {
            assert_eq!(m.predict(&ex.features), ex.label);
        }
        let stats = group_losses(&m, &ds).unwrap();
        assert_eq!(stats.accuracies, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn training_rejects_bad_subsets() {
        let ds = two_points();
        let mcfg = ModelConfig {
            input_dim: 2,
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig::default();
        assert!(matches!(train(&ds, &[], &mcfg, &tcfg), Err(Error::InvalidArgument(_))));
        assert!(train(&ds, &[2], &mcfg, &tcfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = two_points();
        let mcfg = ModelConfig {
            input_dim: 2,
            ..ModelConfig::default()
        };
        // weight decay with lr·wd ≫ 2 makes every step amplify θ
        let tcfg = TrainConfig {
            epochs: 200,
            learning_rate: 1e3,
            weight_decay: 1e3,
            schedule: LrSchedule::Constant,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ds, &[0, 1], &mcfg, &tcfg), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn training_is_deterministic_and_order_free() {
        let cfg = SynthConfig {
            n_train: 300,
            n_val: 8,
            n_test: 8,
            ..SynthConfig::default()
        };
        let (train_ds, _, _) = generate_synthetic(&cfg).unwrap();
        let mcfg = ModelConfig {
            arch: Arch::Mlp { hidden: 4 },
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let idx: Vec<usize> = (0..200).collect();
        let mut rev = idx.clone();
        rev.reverse();
        let a = train(&train_ds, &idx, &mcfg, &tcfg).unwrap();
        let b = train(&train_ds, &idx, &mcfg, &tcfg).unwrap();
        let c = train(&train_ds, &rev, &mcfg, &tcfg).unwrap();
        assert_eq!(a.theta(), b.theta());
        assert_eq!(a.theta(), c.theta());
        let d = train(&train_ds, &idx, &mcfg, &tcfg.with_seed(1)).unwrap();
        assert_ne!(a.theta(), d.theta());
    }

    #[test]
    fn uniform_classifier_loss_is_log_c() {
        let (_, val, _) = generate_synthetic(&SynthConfig {
            n_train: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        let m = model(Arch::Linear, 10, 2, true, 0);
        let m = with_theta(&m, vec![0.0; m.len()]);
        let stats = group_losses(&m, &val).unwrap();
        for l in stats.losses {
            assert!((l.unwrap() - libm::log(2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_groups_are_absent() {
        let ds = two_points();
        let m = model(Arch::Linear, 2, 2, true, 0);
        let stats = group_stats(&m, &ds, &[0, 0], 3).unwrap();
        assert_eq!(stats.counts, vec![2, 0, 0]);
        assert!(stats.losses[1].is_none() && stats.accuracies[2].is_none());
        assert_eq!(stats.present_losses(), Err(Error::EmptyGroup { group: 1 }));
        assert_eq!(group_losses(&m, &ds.without_groups()), Err(Error::MissingGroupLabels));
    }
}
