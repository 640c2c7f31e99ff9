//! Pseudo-group discovery for data without group labels.
//!
//! Within each class the validation rows of the attribution matrix are
//! stacked, their top principal component is taken, and examples are split by
//! their projection onto it. The side on which the base model does worse is
//! the minority pseudo-group and holds a `minority_quantile` share of the
//! class. D3M then runs with these pseudo-groups in place of real ones.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attribution::{trak_ensemble, AttributionMatrix, TrakConfig};
use crate::datasets::Dataset;
use crate::debias::{debias_with_groups, train_base, D3MConfig, PipelineOutcome};
use crate::error::StageExt;
use crate::eval::{evaluate, RunReport};
use crate::exec::Executor;
use crate::models::{ModelConfig, ParamVector, TrainConfig};
use crate::numerics::{dot, top_principal_component};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub minority_quantile: f64,
    pub min_class_val_count: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            minority_quantile: 0.35,
            min_class_val_count: 10,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.minority_quantile > 0.0 && self.minority_quantile < 1.0) {
            return Err(Error::invalid("minority_quantile must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Size of the minority side for a class with `n` validation examples.
    pub fn minority_size(&self, n: usize) -> usize {
        (libm::ceil(self.minority_quantile * n as f64) as usize).clamp(1, n.saturating_sub(1).max(1))
    }
}

/// Pseudo-group assignment of the validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGroups {
    /// `2·class + bit` per validation example.
    pub groups: Vec<usize>,
    /// Minority membership per validation example.
    pub bits: Vec<bool>,
    /// Projection onto the oriented class direction, per validation example.
    pub projections: Vec<f64>,
    /// Per class, the top principal component oriented so the minority side
    /// has the larger projections.
    pub directions: Vec<Vec<f64>>,
    /// Per class, the smallest minority projection. Minority members are the
    /// `m` largest projections; ties at the threshold go to earlier examples.
    pub thresholds: Vec<f64>,
}

impl PseudoGroups {
    pub fn group_count(&self) -> usize {
        2 * self.directions.len()
    }
}

/// Orientation and threshold for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplit {
    /// `+1` keeps the direction, `−1` negates it.
    pub sign: f64,
    pub threshold: f64,
    pub bits: Vec<bool>,
}

/// The `m` positions with the largest values, ties by ascending position.
fn top_m(values: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(m);
    order
}

/// Splits one class by its projections so the side where the base model is
/// less accurate (then: has the lower mean margin) gets `m` members.
pub fn split_class(projections: &[f64], correct: &[bool], margins: &[f64], m: usize) -> ClassSplit {
    let neg: Vec<f64> = projections.iter().map(|p| -p).collect();
    let score = |side: &[usize]| {
        let acc = side.iter().filter(|&&i| correct[i]).count() as f64 / side.len() as f64;
        let margin = side.iter().map(|&i| margins[i]).sum::<f64>() / side.len() as f64;
        (acc, margin)
    };
    let (acc_hi, m_hi) = score(&top_m(projections, m));
    let (acc_lo, m_lo) = score(&top_m(&neg, m));
    let keep = match acc_hi.total_cmp(&acc_lo) {
        core::cmp::Ordering::Less => true,
        core::cmp::Ordering::Greater => false,
        core::cmp::Ordering::Equal => m_hi <= m_lo,
    };
    let (sign, oriented) = if keep { (1.0, projections) } else { (-1.0, &neg[..]) };
    let side = top_m(oriented, m);
    let mut bits = vec![false; oriented.len()];
    for &i in &side {
        bits[i] = true;
    }
    ClassSplit {
        sign,
        threshold: oriented[*side.last().expect("m >= 1")],
        bits,
    }
}

/// Pseudo-group labels from per-class principal components of the
/// validation attribution rows. Never reads group labels.
pub fn pseudo_group_labels(
    am: &AttributionMatrix,
    ds_val: &Dataset,
    base_model: &ParamVector,
    cfg: &DiscoveryConfig,
) -> Result<PseudoGroups> {
    cfg.validate()?;
    let ds = ds_val.without_groups();
    let n = ds.len();
    let mut row_of = vec![None; n];
    for (r, &t) in am.target_ids.iter().enumerate() {
        match row_of.get_mut(t) {
            Some(slot @ None) => *slot = Some(r),
            Some(Some(_)) => return Err(Error::invalid(format!("validation example {t} has two attribution rows"))),
            None => return Err(Error::invalid(format!("target id {t} is not a validation example"))),
        }
    }
    let rows: Vec<usize> = row_of
        .iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::invalid(format!("validation example {i} has no attribution row"))))
        .collect::<Result<_>>()?;

    let classes = ds.class_count();
    let mut out = PseudoGroups {
        groups: vec![0; n],
        bits: vec![false; n],
        projections: vec![0.0; n],
        directions: Vec::with_capacity(classes),
        thresholds: Vec::with_capacity(classes),
    };
    for class in 0..classes {
        let members: Vec<usize> = (0..n).filter(|&i| ds.examples()[i].label == class).collect();
        let required = cfg.min_class_val_count.max(2);
        if members.len() < required {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                required,
            });
        }
        let t = am.values.select_rows(&members.iter().map(|&i| rows[i]).collect::<Vec<_>>());
        let v = top_principal_component(&t)?;
        let proj: Vec<f64> = t.row_iter().map(|r| dot(r, &v)).collect();
        let correct: Vec<bool> = members
            .iter()
            .map(|&i| {
                let z = &ds.examples()[i];
                base_model.predict(&z.features) == z.label
            })
            .collect();
        let margins: Vec<f64> = members.iter().map(|&i| base_model.margin(&ds.examples()[i])).collect();
        let split = split_class(&proj, &correct, &margins, cfg.minority_size(members.len()));
        for (j, &i) in members.iter().enumerate() {
            out.bits[i] = split.bits[j];
            out.groups[i] = 2 * class + usize::from(split.bits[j]);
            out.projections[i] = split.sign * proj[j];
        }
        out.directions.push(v.iter().map(|x| split.sign * x).collect());
        out.thresholds.push(split.threshold);
    }
    Ok(out)
}

/// Result of a run without group labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoOutcome {
    pub pipeline: PipelineOutcome,
    pub pseudo: PseudoGroups,
    /// True-group validation metrics of the base and final models, when the
    /// validation set happens to carry group labels. Diagnostic only.
    pub true_val_before: Option<RunReport>,
    pub true_val_after: Option<RunReport>,
}

/// Auto-D3M: base model, validation attribution, pseudo-groups, then D3M on
/// the pseudo-groups. Group labels of both sets are stripped before use.
#[allow(clippy::too_many_arguments)]
pub fn auto_d3m_pipeline<E: Executor>(
    ds_train: &Dataset,
    ds_val: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    tkcfg: &TrakConfig,
    dcfg: &D3MConfig,
    dscfg: &DiscoveryConfig,
    exec: &E,
) -> Result<AutoOutcome> {
    dcfg.validate()?;
    dscfg.validate()?;
    let train_view = ds_train.without_groups();
    let val_view = ds_val.without_groups();
    let base_model = train_base(&train_view, mcfg, tcfg)?;
    let attribution =
        trak_ensemble(&train_view, val_view.examples(), mcfg, tcfg, tkcfg, exec).stage("attribution")?;
    let pseudo = pseudo_group_labels(&attribution, &val_view, &base_model, dscfg).stage("discovery")?;
    let debiased = debias_with_groups(
        &train_view,
        &val_view,
        &pseudo.groups,
        pseudo.group_count(),
        &base_model,
        &attribution,
        mcfg,
        tcfg,
        dcfg,
        exec,
    )?;
    let (true_val_before, true_val_after) = if ds_val.has_groups() {
        (
            Some(evaluate(&base_model, ds_val).stage("evaluate")?),
            Some(evaluate(&debiased.model, ds_val).stage("evaluate")?),
        )
    } else {
        (None, None)
    };
    Ok(AutoOutcome {
        pipeline: PipelineOutcome {
            base_model,
            attribution,
            debiased,
        },
        pseudo,
        true_val_before,
        true_val_after,
    })
}
