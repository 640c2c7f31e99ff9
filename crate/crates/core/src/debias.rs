//! Group alignment scores and data removal.
//!
//! Validation rows of the attribution matrix are averaged per group into
//! `τ(G)`, and the groups are blended with soft-max weights on their losses:
//!
//! ```text
//! A_i = Σ_g w_g τ(g)_i,   w = softmax(β ℓ)
//! ```
//!
//! Examples with the lowest `A_i` are the ones that hurt the worst groups
//! most; removing them and retraining is the intervention.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attribution::{trak_ensemble, AttributionMatrix, TrakConfig};
use crate::datasets::{complement, Dataset};
use crate::error::StageExt;
use crate::eval::{default_k_grid, evaluate_groups, RunReport};
use crate::exec::Executor;
use crate::models::{group_stats, train, ModelConfig, ParamVector, TrainConfig};
use crate::numerics::{derive_seed, mean, softmax_weights};
use crate::{Error, Result};

/// Which per-group loss feeds the soft-max weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLoss {
    #[default]
    CrossEntropy,
    ZeroOne,
}

/// How many of the lowest-scoring examples to remove.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RemovalStrategy {
    /// Remove exactly the examples with `A_i < 0`.
    NegativeHeuristic,
    /// Remove the `count` examples with the smallest `A_i`.
    TopK { count: usize },
    /// Retrain at every count on [`search_grid`] and keep the smallest count
    /// whose held-out validation worst-group accuracy is within one standard
    /// error of the best (see [`debias_with_groups`]).
    #[default]
    ValidationSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct D3MConfig {
    pub beta: f64,
    pub removal: RemovalStrategy,
    pub group_loss: GroupLoss,
}

impl Default for D3MConfig {
    fn default() -> Self {
        D3MConfig {
            beta: 1.0,
            removal: RemovalStrategy::default(),
            group_loss: GroupLoss::default(),
        }
    }
}

impl D3MConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScores {
    pub scores: Vec<f64>,
    pub group_losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub group_coeffs: Vec<Vec<f64>>,
}

impl AlignmentScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `|{i : A_i < 0}|`.
    pub fn heuristic_k(&self) -> usize {
        self.scores.iter().filter(|&&a| a < 0.0).count()
    }
}

/// Mean attribution row per group, where `groups[r]` is the group of row `r`.
pub fn group_coefficients_for(am: &AttributionMatrix, groups: &[usize], group_count: usize) -> Result<Vec<Vec<f64>>> {
    if groups.len() != am.target_count() {
        return Err(Error::invalid("one group per attribution row is required"));
    }
    let mut sums = vec![vec![0.0; am.train_count()]; group_count];
    let mut counts = vec![0usize; group_count];
    for (r, &g) in groups.iter().enumerate() {
        if g >= group_count {
            return Err(Error::invalid(format!("group {g} out of range")));
        }
        counts[g] += 1;
        for (s, v) in sums[g].iter_mut().zip(am.row(r)) {
            *s += v;
        }
    }
    for (g, (sum, &c)) in sums.iter_mut().zip(&counts).enumerate() {
        if c == 0 {
            return Err(Error::EmptyGroup { group: g });
        }
        sum.iter_mut().for_each(|s| *s /= c as f64);
    }
    Ok(sums)
}

/// `τ(G)` for every validation group; attribution rows are matched to
/// `ds_val` through `am.target_ids`.
pub fn group_coefficients(am: &AttributionMatrix, ds_val: &Dataset) -> Result<Vec<Vec<f64>>> {
    let n_groups = ds_val.group_count().ok_or(Error::MissingGroupLabels)?;
    let all = ds_val.groups()?;
    let groups = am
        .target_ids
        .iter()
        .map(|&t| {
            all.get(t)
                .copied()
                .ok_or_else(|| Error::invalid(format!("target id {t} is not a validation example")))
        })
        .collect::<Result<Vec<_>>>()?;
    group_coefficients_for(am, &groups, n_groups)
}

/// Soft-max blend of group coefficients by group loss.
pub fn alignment_scores(group_coeffs: &[Vec<f64>], group_losses: &[f64], beta: f64) -> Result<AlignmentScores> {
    if group_coeffs.len() != group_losses.len() {
        return Err(Error::invalid(format!(
            "{} coefficient groups but {} group losses",
            group_coeffs.len(),
            group_losses.len()
        )));
    }
    let weights = softmax_weights(group_losses, beta)?;
    let n = group_coeffs[0].len();
    if group_coeffs.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("group coefficient vectors differ in length"));
    }
    let mut scores = vec![0.0; n];
    for (w, coeffs) in weights.iter().zip(group_coeffs) {
        crate::numerics::axpy(*w, coeffs, &mut scores);
    }
    Ok(AlignmentScores {
        scores,
        group_losses: group_losses.to_vec(),
        weights,
        group_coeffs: group_coeffs.to_vec(),
    })
}

/// Indices of the `k` smallest scores, ties by ascending index, returned
/// sorted. `k` is capped at the number of scores.
pub fn smallest_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// `(retained, removed)`, both ascending, partitioning `0..n`.
pub fn select_retained(scores: &[f64], removal: &RemovalStrategy) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = scores.len();
    let removed = match *removal {
        RemovalStrategy::NegativeHeuristic => (0..n).filter(|&i| scores[i] < 0.0).collect(),
        RemovalStrategy::TopK { count } => {
            if count > n {
                return Err(Error::invalid(format!("cannot remove {count} of {n} examples")));
            }
            smallest_k(scores, count)
        }
        RemovalStrategy::ValidationSearch => {
            return Err(Error::invalid(
                "validation search chooses the count by retraining; run the pipeline instead",
            ))
        }
    };
    Ok((complement(n, &removed)?, removed))
}

/// Removal counts tried by [`RemovalStrategy::ValidationSearch`]: zero plus
/// 12 geometric points from `n/100` to `n/2`.
pub fn search_grid(n: usize) -> Vec<usize> {
    default_k_grid(n, n / 2)
}

/// Mean alignment of the training examples sharing a label and an
/// annotation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpopCell {
    pub label: usize,
    pub annotation: usize,
    pub annotation_name: String,
    pub value: bool,
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean; zero for single-member cells.
    pub std_err: f64,
}

/// Every non-empty `(label, annotation, value)` cell, sorted ascending by
/// mean score.
pub fn subpopulation_alignment(scores: &[f64], ds_train: &Dataset) -> Result<Vec<SubpopCell>> {
    let names = ds_train.annotation_names().ok_or(Error::MissingAnnotations)?;
    if scores.len() != ds_train.len() {
        return Err(Error::invalid("one score per training example is required"));
    }
    let mut cells = Vec::new();
    for label in 0..ds_train.class_count() {
        for (bit, name) in names.iter().enumerate() {
            for value in [false, true] {
                let members: Vec<f64> = ds_train
                    .examples()
                    .iter()
                    .zip(scores)
                    .filter(|(e, _)| e.label == label && e.annotation(bit) == Some(value))
                    .map(|(_, &s)| s)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let m = mean(&members);
                let count = members.len();
                let std_err = if count > 1 {
                    let var = members.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (count - 1) as f64;
                    libm::sqrt(var / count as f64)
                } else {
                    0.0
                };
                cells.push(SubpopCell {
                    label,
                    annotation: bit,
                    annotation_name: name.to_string(),
                    value,
                    count,
                    mean: m,
                    std_err,
                });
            }
        }
    }
    cells.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(a.label.cmp(&b.label))
            .then(a.annotation.cmp(&b.annotation))
            .then(a.value.cmp(&b.value))
    });
    Ok(cells)
}

/// Model and training seeds for the debiased retrain, derived from the base
/// seeds so the final model never reuses the base model's randomness.
pub fn retrain_configs(mcfg: &ModelConfig, tcfg: &TrainConfig) -> (ModelConfig, TrainConfig) {
    const STREAM: u64 = 0xd3;
    (
        mcfg.with_seed(derive_seed(mcfg.seed, STREAM)),
        tcfg.with_seed(derive_seed(tcfg.seed, STREAM)),
    )
}

/// One candidate removal count tried by validation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub k: usize,
    /// Held-out worst-group accuracy, averaged over the two folds.
    pub val_wga: f64,
    pub std_err: f64,
    /// Held-out overall accuracy, averaged over the two folds.
    pub val_overall: f64,
    pub overall_std_err: f64,
}

/// Position of the chosen search point. `points` must be sorted by ascending
/// `k` and start at `k = 0`.
///
/// Points whose overall accuracy falls more than one standard error below
/// the first point's are not admissible. Among the rest, the smallest `k`
/// whose WGA is within one standard error of the best WGA wins.
pub fn one_standard_error_choice(points: &[SearchPoint]) -> usize {
    let Some(first) = points.first() else {
        return 0;
    };
    let floor = first.val_overall - first.overall_std_err;
    let admissible: Vec<usize> = (0..points.len()).filter(|&j| j == 0 || points[j].val_overall >= floor).collect();
    let mut best = 0;
    for &j in &admissible {
        if points[j].val_wga > points[best].val_wga {
            best = j;
        }
    }
    let bar = points[best].val_wga - points[best].std_err;
    admissible.into_iter().find(|&j| points[j].val_wga >= bar).unwrap_or(best)
}

/// Everything [`debias_with_groups`] decided and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Debiased {
    pub model: ParamVector,
    pub alignment: AlignmentScores,
    pub removed: Vec<usize>,
    pub search: Vec<SearchPoint>,
    /// Base model on the validation groups used for the decision.
    pub val_before: RunReport,
    /// Retrained model on the same groups.
    pub val_after: RunReport,
}

/// Validation rows, their target ids and groups.
struct RowSet {
    rows: Vec<usize>,
    val: Dataset,
    groups: Vec<usize>,
}

impl RowSet {
    fn new(am: &AttributionMatrix, rows: Vec<usize>, ds_val: &Dataset, val_groups: &[usize]) -> Result<RowSet> {
        let ids: Vec<usize> = rows.iter().map(|&r| am.target_ids[r]).collect();
        let groups = ids
            .iter()
            .map(|&t| val_groups.get(t).copied().ok_or_else(|| Error::invalid(format!("target id {t} has no group"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(RowSet {
            val: ds_val.subset(&ids)?,
            rows,
            groups,
        })
    }

    /// Alignment scores built from these rows and examples only.
    fn alignment(&self, am: &AttributionMatrix, base_model: &ParamVector, group_count: usize, dcfg: &D3MConfig) -> Result<AlignmentScores> {
        let stats = group_stats(base_model, &self.val, &self.groups, group_count).stage("group-losses")?;
        let losses = match dcfg.group_loss {
            GroupLoss::CrossEntropy => stats.present_losses(),
            GroupLoss::ZeroOne => stats.present_accuracies().map(|a| a.iter().map(|x| 1.0 - x).collect()),
        }
        .stage("group-losses")?;
        let sub = AttributionMatrix::new(
            am.values.select_rows(&self.rows),
            (0..self.rows.len()).collect(),
            am.train_ids.clone(),
            am.config.clone(),
        )?;
        let coeffs = group_coefficients_for(&sub, &self.groups, group_count).stage("alignment")?;
        alignment_scores(&coeffs, &losses, dcfg.beta).stage("alignment")
    }
}

/// Alignment scores from every attribution row, with group losses measured
/// on the base model and `val_groups[t]` the group of validation example `t`.
pub fn validation_alignment(
    am: &AttributionMatrix,
    ds_val: &Dataset,
    val_groups: &[usize],
    group_count: usize,
    base_model: &ParamVector,
    dcfg: &D3MConfig,
) -> Result<AlignmentScores> {
    dcfg.validate()?;
    RowSet::new(am, (0..am.target_count()).collect(), ds_val, val_groups)
        .stage("alignment")?
        .alignment(am, base_model, group_count, dcfg)
}

/// Splits attribution rows into two folds, alternating within each group.
fn stratified_folds(row_groups: &[usize], group_count: usize) -> [Vec<usize>; 2] {
    let mut seen = vec![0usize; group_count];
    let mut folds = [Vec::new(), Vec::new()];
    for (r, &g) in row_groups.iter().enumerate() {
        folds[seen[g] % 2].push(r);
        seen[g] += 1;
    }
    folds
}

/// Scores, selects and retrains given a base model, its attribution matrix
/// for the validation set and a grouping of the validation rows.
///
/// Validation search is cross-fitted: the validation rows are split into two
/// group-stratified folds, scores built from one fold pick the removal set
/// whose retrained model is judged on the other, and the count with the best
/// mean worst-group accuracy (under the one-standard-error rule) is then
/// applied to scores from the full validation set.
#[allow(clippy::too_many_arguments)]
pub fn debias_with_groups<E: Executor>(
    ds_train: &Dataset,
    ds_val: &Dataset,
    val_groups: &[usize],
    group_count: usize,
    base_model: &ParamVector,
    am: &AttributionMatrix,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    dcfg: &D3MConfig,
    exec: &E,
) -> Result<Debiased> {
    dcfg.validate()?;
    let all = RowSet::new(am, (0..am.target_count()).collect(), ds_val, val_groups).stage("alignment")?;
    let alignment = all.alignment(am, base_model, group_count, dcfg)?;
    let val_before = evaluate_groups(base_model, ds_val, val_groups, group_count).stage("evaluate")?;

    let n = ds_train.len();
    let (m, t) = retrain_configs(mcfg, tcfg);
    let retrain = |removed: &[usize]| train(ds_train, &complement(n, removed)?, &m, &t);

    let (removed, search) = match dcfg.removal {
        RemovalStrategy::ValidationSearch => {
            let grid = search_grid(n);
            let folds = stratified_folds(&all.groups, group_count);
            let sets = folds
                .into_iter()
                .map(|rows| RowSet::new(am, rows, ds_val, val_groups))
                .collect::<Result<Vec<_>>>()
                .stage("selection")?;
            let scores = sets
                .iter()
                .map(|s| s.alignment(am, base_model, group_count, dcfg))
                .collect::<Result<Vec<_>>>()
                .stage("selection")?;
            let runs = exec.run(2 * grid.len(), |j| -> Result<RunReport> {
                let (k, fold) = (grid[j / 2], j % 2);
                let model = retrain(&smallest_k(&scores[fold].scores, k))?;
                let held_out = &sets[1 - fold];
                evaluate_groups(&model, &held_out.val, &held_out.groups, group_count)
            });
            let runs = runs.into_iter().collect::<Result<Vec<_>>>().stage("selection")?;
            let search: Vec<SearchPoint> = grid
                .iter()
                .zip(runs.chunks(2))
                .map(|(&k, pair)| SearchPoint {
                    k,
                    val_wga: (pair[0].worst_group_accuracy + pair[1].worst_group_accuracy) / 2.0,
                    std_err: libm::hypot(pair[0].worst_group_std_err(), pair[1].worst_group_std_err()) / 2.0,
                    val_overall: (pair[0].overall_accuracy + pair[1].overall_accuracy) / 2.0,
                    overall_std_err: libm::hypot(pair[0].overall_std_err(), pair[1].overall_std_err()) / 2.0,
                })
                .collect();
            let chosen = one_standard_error_choice(&search);
            (smallest_k(&alignment.scores, grid[chosen]), search)
        }
        strategy => (select_retained(&alignment.scores, &strategy).stage("selection")?.1, Vec::new()),
    };
    let model = retrain(&removed).stage("retrain")?;
    let val_after = evaluate_groups(&model, ds_val, val_groups, group_count)
        .stage("evaluate")?
        .with_removal(removed.len());
    Ok(Debiased {
        model,
        alignment,
        removed,
        search,
        val_before,
        val_after,
    })
}

/// Output of a full pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub base_model: ParamVector,
    pub attribution: AttributionMatrix,
    pub debiased: Debiased,
}

impl PipelineOutcome {
    pub fn model(&self) -> &ParamVector {
        &self.debiased.model
    }

    pub fn removed_count(&self) -> usize {
        self.debiased.removed.len()
    }
}

/// Base model trained on the whole training set with the given seeds.
pub fn train_base(ds_train: &Dataset, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<ParamVector> {
    let all: Vec<usize> = (0..ds_train.len()).collect();
    train(ds_train, &all, mcfg, tcfg).stage("base-train")
}

/// Full D3M: base model, attribution of the validation set, group alignment,
/// removal and retraining.
#[allow(clippy::too_many_arguments)]
pub fn d3m_pipeline<E: Executor>(
    ds_train: &Dataset,
    ds_val: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    tkcfg: &TrakConfig,
    dcfg: &D3MConfig,
    exec: &E,
) -> Result<PipelineOutcome> {
    let group_count = ds_val.group_count().ok_or(Error::MissingGroupLabels)?;
    let val_groups = ds_val.groups()?;
    dcfg.validate()?;
    let base_model = train_base(ds_train, mcfg, tcfg)?;
    let attribution = trak_ensemble(ds_train, ds_val.examples(), mcfg, tcfg, tkcfg, exec).stage("attribution")?;
    let debiased = debias_with_groups(
        ds_train,
        ds_val,
        &val_groups,
        group_count,
        &base_model,
        &attribution,
        mcfg,
        tcfg,
        dcfg,
        exec,
    )?;
    Ok(PipelineOutcome {
        base_model,
        attribution,
        debiased,
    })
}
