//! TRAK attribution coefficients and retraining oracles.
//!
//! One trial trains `θ*` on a random subsample, projects margin gradients of
//! every training example and every target through a Gaussian matrix `P`, and
//! scores
//!
//! ```text
//! τ(z)_i = g(z)ᵀ (Σ_j g_j g_jᵀ + λI)⁻¹ g_i · (1 − σ(f(z; θ*)))
//! ```
//!
//! with the Gram sum over the full training set. [`trak_ensemble`] averages
//! independent trials.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Example};
use crate::exec::Executor;
use crate::models::{train, ModelConfig, ParamVector, Scratch, TrainConfig};
use crate::numerics::{
    default_lambda, derive_seed, gaussian_projection, mean, regularized_gram_inverse, sigmoid, spearman, Matrix, Rng,
};
use crate::{Error, Result};

/// Largest training set [`loo_margin_oracle`] accepts without an override.
pub const LOO_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrakConfig {
    pub proj_dim: usize,
    pub trials: usize,
    pub subsample_fraction: f64,
    /// Ridge added to the projected Gram matrix; `None` uses
    /// [`default_lambda`].
    pub lambda_reg: Option<f64>,
    pub seed: u64,
}

impl Default for TrakConfig {
    fn default() -> Self {
        TrakConfig {
            proj_dim: 64,
            trials: 20,
            subsample_fraction: 0.5,
            lambda_reg: None,
            seed: 0,
        }
    }
}

impl TrakConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_dim == 0 || self.trials == 0 {
            return Err(Error::invalid("proj_dim and trials must be at least 1"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::invalid("subsample_fraction must lie in (0, 1]"));
        }
        if let Some(l) = self.lambda_reg {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::invalid("lambda_reg must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Number of training examples each trial's model sees.
    pub fn subsample_size(&self, n: usize) -> usize {
        (libm::ceil(self.subsample_fraction * n as f64) as usize).clamp(1, n.max(1))
    }
}

/// Seeds of the random choices inside one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub subsample: u64,
    pub model: u64,
    pub train: u64,
    pub projection: u64,
}

impl TrialSeeds {
    pub fn from_trial_seed(seed: u64) -> TrialSeeds {
        TrialSeeds {
            subsample: derive_seed(seed, 0),
            model: derive_seed(seed, 1),
            train: derive_seed(seed, 2),
            projection: derive_seed(seed, 3),
        }
    }
}

/// Seed of trial `t` of an ensemble seeded with `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    derive_seed(seed, t as u64)
}

/// Attribution rows `τ(z)` for each target, one column per training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub values: Matrix,
    pub target_ids: Vec<usize>,
    pub train_ids: Vec<usize>,
    pub config: TrakConfig,
}

impl AttributionMatrix {
    pub fn new(values: Matrix, target_ids: Vec<usize>, train_ids: Vec<usize>, config: TrakConfig) -> Result<Self> {
        if values.rows() != target_ids.len() || values.cols() != train_ids.len() {
            return Err(Error::invalid(format!(
                "{}x{} attribution matrix with {} target ids and {} train ids",
                values.rows(),
                values.cols(),
                target_ids.len(),
                train_ids.len()
            )));
        }
        Ok(AttributionMatrix {
            values,
            target_ids,
            train_ids,
            config,
        })
    }

    pub fn target_count(&self) -> usize {
        self.values.rows()
    }

    pub fn train_count(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row(r)
    }
}

/// Projected margin gradients `Pᵀ∇θ f(z; θ)`, one row per example.
pub fn projected_gradients(model: &ParamVector, examples: &[Example], projection: &Matrix) -> Matrix {
    let k = projection.cols();
    let mut out = Matrix::zeros(examples.len(), k);
    let mut grad = vec![0.0; model.len()];
    let mut scratch = Scratch::default();
    for (r, z) in examples.iter().enumerate() {
        model.margin_gradient_into(z, &mut scratch, &mut grad);
        let row = out.row_mut(r);
        for (j, &gj) in grad.iter().enumerate() {
            if gj != 0.0 {
                crate::numerics::axpy(gj, projection.row(j), row);
            }
        }
    }
    out
}

/// Step (d) on precomputed projected gradients: rows of `g_targets` against
/// rows of `g_train`, each row scaled by `1 − σ(margin)`.
pub fn trak_scores(g_train: &Matrix, g_targets: &Matrix, target_margins: &[f64], lambda_reg: Option<f64>) -> Result<Matrix> {
    if g_train.cols() != g_targets.cols() || g_targets.rows() != target_margins.len() {
        return Err(Error::invalid("gradient and margin shapes disagree"));
    }
    let lambda = match lambda_reg {
        Some(l) => l,
        None => default_lambda(&g_train.gram()),
    };
    let inverse = regularized_gram_inverse(g_train, lambda)?;
    let mut scores = g_targets.matmul(&inverse).matmul_transpose(g_train);
    for (r, &f) in target_margins.iter().enumerate() {
        scores.scale_row(r, 1.0 - sigmoid(f));
    }
    Ok(scores)
}

/// One trial with explicitly chosen seeds.
pub fn trak_trial_with_seeds(
    ds_train: &Dataset,
    targets: &[Example],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    tkcfg: &TrakConfig,
    seeds: TrialSeeds,
) -> Result<Matrix> {
    tkcfg.validate()?;
    let n = ds_train.len();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let subset = Rng::new(seeds.subsample).sample_indices(n, tkcfg.subsample_size(n));
    let model = train(ds_train, &subset, &mcfg.with_seed(seeds.model), &tcfg.with_seed(seeds.train))?;
    let projection = gaussian_projection(model.len(), tkcfg.proj_dim, &mut Rng::new(seeds.projection))?;
    let g_train = projected_gradients(&model, ds_train.examples(), &projection);
    let g_targets = projected_gradients(&model, targets, &projection);
    let margins: Vec<f64> = targets.iter().map(|z| model.margin(z)).collect();
    trak_scores(&g_train, &g_targets, &margins, tkcfg.lambda_reg)
}

/// Steps (a)-(d) for one trial; deterministic in `trial_seed`.
pub fn trak_single_trial(
    ds_train: &Dataset,
    targets: &[Example],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    trial_seed: u64,
    tkcfg: &TrakConfig,
) -> Result<Matrix> {
    trak_trial_with_seeds(ds_train, targets, mcfg, tcfg, tkcfg, TrialSeeds::from_trial_seed(trial_seed))
}

/// Element-wise mean of equally shaped matrices, summed in slice order.
pub fn average_trials(trials: &[Matrix]) -> Result<Matrix> {
    let first = trials.first().ok_or_else(|| Error::invalid("no trials to average"))?;
    let (rows, cols) = (first.rows(), first.cols());
    let mut sum = vec![0.0; rows * cols];
    for m in trials {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::invalid("trial matrices differ in shape"));
        }
        for (s, v) in sum.iter_mut().zip(m.as_slice()) {
            *s += v;
        }
    }
    let t = trials.len() as f64;
    sum.iter_mut().for_each(|s| *s /= t);
    Matrix::from_vec(rows, cols, sum)
}

/// Step (e): averages `tkcfg.trials` independent trials. Trials run through
/// `exec`; the reduction is in trial order so scheduling cannot change the
/// result.
pub fn trak_ensemble<E: Executor>(
    ds_train: &Dataset,
    targets: &[Example],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    tkcfg: &TrakConfig,
    exec: &E,
) -> Result<AttributionMatrix> {
    tkcfg.validate()?;
    let results = exec.run(tkcfg.trials, |t| {
        trak_single_trial(ds_train, targets, mcfg, tcfg, trial_seed(tkcfg.seed, t), tkcfg)
    });
    let mut trials = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        trials.push(r.map_err(|e| Error::Trial {
            index,
            source: alloc::boxed::Box::new(e),
        })?);
    }
    AttributionMatrix::new(
        average_trials(&trials)?,
        (0..targets.len()).collect(),
        (0..ds_train.len()).collect(),
        tkcfg.clone(),
    )
}

/// True leave-one-out effects `f(z; θ(S)) − f(z; θ(S∖{i}))` by retraining
/// with fixed seeds. Refuses more than [`LOO_LIMIT`] training examples unless
/// `override_guard` is set.
pub fn loo_margin_oracle<E: Executor>(
    ds_train: &Dataset,
    targets: &[Example],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    override_guard: bool,
    exec: &E,
) -> Result<Matrix> {
    let n = ds_train.len();
    if n > LOO_LIMIT && !override_guard {
        return Err(Error::CostGuard {
            what: "leave-one-out retraining",
            n,
            limit: LOO_LIMIT,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let full = train(ds_train, &all, mcfg, tcfg)?;
    let base: Vec<f64> = targets.iter().map(|z| full.margin(z)).collect();
    let columns = exec.run(n, |i| -> Result<Vec<f64>> {
        let kept: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        if kept.is_empty() {
            return Err(Error::invalid("leave-one-out needs at least two examples"));
        }
        let m = train(ds_train, &kept, mcfg, tcfg)?;
        Ok(targets.iter().zip(&base).map(|(z, b)| b - m.margin(z)).collect())
    });
    let mut out = Matrix::zeros(targets.len(), n);
    for (i, col) in columns.into_iter().enumerate() {
        for (r, v) in col?.into_iter().enumerate() {
            out.row_mut(r)[i] = v;
        }
    }
    Ok(out)
}

/// Linear datamodeling score: per target, the Spearman correlation between
/// `Σ_{i∈D} τ(z)_i` and the retrained margin `f(z; θ(D))` over `n_subsets`
/// random subsets of size `⌈subset_frac·n⌉`. `None` where either side is
/// constant.
#[allow(clippy::too_many_arguments)]
pub fn lds_score<E: Executor>(
    am: &AttributionMatrix,
    ds_train: &Dataset,
    targets: &[Example],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    n_subsets: usize,
    subset_frac: f64,
    seed: u64,
    exec: &E,
) -> Result<Vec<Option<f64>>> {
    if n_subsets < 5 {
        return Err(Error::invalid("lds_score needs at least 5 subsets"));
    }
    if !(subset_frac > 0.0 && subset_frac <= 1.0) {
        return Err(Error::invalid("subset_frac must lie in (0, 1]"));
    }
    let n = ds_train.len();
    if am.train_count() != n || am.target_count() != targets.len() {
        return Err(Error::invalid("attribution matrix does not match the datasets"));
    }
    let size = (libm::ceil(subset_frac * n as f64) as usize).clamp(1, n);
    let runs = exec.run(n_subsets, |s| -> Result<(Vec<f64>, Vec<f64>)> {
        let subset = Rng::derive(seed, s as u64).sample_indices(n, size);
        let model = train(ds_train, &subset, mcfg, tcfg)?;
        let predicted = (0..targets.len())
            .map(|r| {
                let row = am.row(r);
                subset.iter().map(|&i| row[i]).sum()
            })
            .collect();
        let actual = targets.iter().map(|z| model.margin(z)).collect();
        Ok((predicted, actual))
    });
    let runs: Vec<(Vec<f64>, Vec<f64>)> = runs.into_iter().collect::<Result<_>>()?;
    Ok((0..targets.len())
        .map(|r| {
            let p: Vec<f64> = runs.iter().map(|(p, _)| p[r]).collect();
            let a: Vec<f64> = runs.iter().map(|(_, a)| a[r]).collect();
            spearman(&p, &a)
        })
        .collect())
}

/// Mean of the defined entries, `None` if there are none.
pub fn mean_defined(xs: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = xs.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| mean(&defined))
}

/// Mean over targets of the Spearman correlation between matching rows of
/// two attribution matrices.
pub fn mean_row_spearman(a: &Matrix, b: &Matrix) -> Option<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return None;
    }
    let per: Vec<Option<f64>> = a.row_iter().zip(b.row_iter()).map(|(x, y)| spearman(x, y)).collect();
    mean_defined(&per)
}
