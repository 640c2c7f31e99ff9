//! Group metrics, the removal-count sweep and its baselines.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::{complement, group_counts, Dataset};
use crate::debias::smallest_k;
use crate::exec::Executor;
use crate::models::{argmax, train, ModelConfig, ParamVector, TrainConfig};
use crate::numerics::{derive_seed, Rng};
use crate::{Error, Result};

/// Accuracy metrics of one model on one grouped evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub per_group: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub group_names: Option<Vec<String>>,
    pub worst_group_accuracy: f64,
    pub balanced_accuracy: f64,
    pub overall_accuracy: f64,
    pub removed_count: usize,
    pub seed: u64,
}

impl RunReport {
    /// Index of the group with the lowest accuracy (first on ties).
    pub fn worst_group(&self) -> usize {
        let mut worst = 0;
        for (g, &a) in self.per_group.iter().enumerate() {
            if a < self.per_group[worst] {
                worst = g;
            }
        }
        worst
    }

    /// Binomial standard error of the overall accuracy.
    pub fn overall_std_err(&self) -> f64 {
        let n: usize = self.group_sizes.iter().sum();
        let p = self.overall_accuracy;
        libm::sqrt(p * (1.0 - p) / n as f64)
    }

    /// Binomial standard error of the worst-group accuracy.
    pub fn worst_group_std_err(&self) -> f64 {
        let g = self.worst_group();
        let (p, n) = (self.per_group[g], self.group_sizes[g] as f64);
        libm::sqrt(p * (1.0 - p) / n)
    }

    pub fn with_removal(mut self, removed_count: usize) -> Self {
        self.removed_count = removed_count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Exact per-group 0-1 accuracies under an explicit grouping.
pub fn evaluate_groups(theta: &ParamVector, ds: &Dataset, groups: &[usize], group_count: usize) -> Result<RunReport> {
    if groups.len() != ds.len() {
        return Err(Error::invalid("one group per example is required"));
    }
    let mut counts = vec![0usize; group_count];
    let mut correct = vec![0usize; group_count];
    for (ex, &g) in ds.examples().iter().zip(groups) {
        if g >= group_count {
            return Err(Error::invalid(format!("group {g} out of range")));
        }
        counts[g] += 1;
        correct[g] += usize::from(argmax(&theta.logits(&ex.features)) == ex.label);
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup { group: g });
    }
    let per_group: Vec<f64> = counts.iter().zip(&correct).map(|(&n, &c)| c as f64 / n as f64).collect();
    Ok(RunReport {
        worst_group_accuracy: per_group.iter().copied().fold(f64::INFINITY, f64::min),
        balanced_accuracy: per_group.iter().sum::<f64>() / group_count as f64,
        overall_accuracy: correct.iter().sum::<usize>() as f64 / ds.len() as f64,
        per_group,
        group_sizes: counts,
        group_names: None,
        removed_count: 0,
        seed: 0,
    })
}

/// Metrics on `ds` under its own group labels.
pub fn evaluate(theta: &ParamVector, ds: &Dataset) -> Result<RunReport> {
    let n = ds.group_count().ok_or(Error::MissingGroupLabels)?;
    let mut report = evaluate_groups(theta, ds, &ds.groups()?, n)?;
    report.group_names = ds.group_names().map(<[String]>::to_vec);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    D3m,
    Random,
    Balancing,
}

impl SweepMethod {
    pub const ALL: [SweepMethod; 3] = [SweepMethod::D3m, SweepMethod::Random, SweepMethod::Balancing];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepMethod::D3m => "d3m",
            SweepMethod::Random => "random",
            SweepMethod::Balancing => "balancing",
        }
    }

    pub fn parse(s: &str) -> Option<SweepMethod> {
        SweepMethod::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: SweepMethod,
    pub k: usize,
    pub wga: f64,
    pub balanced: f64,
    pub overall: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k_grid: Vec<usize>,
    /// Grid points, method-major in the order requested, then ascending `k`.
    pub points: Vec<SweepPoint>,
    /// `|{i : A_i < 0}|` when alignment scores were supplied.
    pub heuristic_k: Option<usize>,
    /// d3m evaluated at `heuristic_k`.
    pub heuristic: Option<SweepPoint>,
}

impl SweepResult {
    pub fn curve(&self, method: SweepMethod) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.method == method).collect()
    }

    pub fn at(&self, method: SweepMethod, k: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.method == method && p.k == k)
    }

    /// Highest-WGA point of a curve; ties go to the smaller `k`.
    pub fn best(&self, method: SweepMethod) -> Option<&SweepPoint> {
        self.curve(method).into_iter().fold(None, |best: Option<&SweepPoint>, p| match best {
            Some(b) if b.wga >= p.wga => Some(b),
            _ => Some(p),
        })
    }
}

/// Number of examples balancing would remove: `Σ_g (n_g − min_g n_g)`.
pub fn balancing_point(ds: &Dataset) -> Result<usize> {
    let counts = group_counts(ds)?;
    let min = counts.iter().copied().min().unwrap_or(0);
    Ok(counts.iter().map(|c| c - min).sum())
}

/// `0` followed by 12 geometrically spaced counts from `n/100` to `upper`,
/// rounded and de-duplicated.
pub fn default_k_grid(n: usize, upper: usize) -> Vec<usize> {
    let upper = upper.min(n);
    let lo = (n / 100).max(1);
    let mut grid = vec![0];
    if upper == 0 {
        return grid;
    }
    let lo = lo.min(upper) as f64;
    let ratio = upper as f64 / lo;
    for j in 0..12 {
        let k = libm::round(lo * libm::pow(ratio, j as f64 / 11.0)) as usize;
        grid.push(k.clamp(1, upper));
    }
    grid.dedup();
    grid
}

/// `k` examples drawn uniformly from the members of groups above the minimum
/// group size, never taking a group below that minimum.
pub fn balancing_removal_k(ds: &Dataset, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let groups = ds.groups()?;
    let counts = group_counts(ds)?;
    let min = counts.iter().copied().min().unwrap_or(0);
    let excess: usize = counts.iter().map(|c| c - min).sum();
    if k > excess {
        return Err(Error::invalid(format!(
            "balancing can remove at most {excess} examples, {k} requested"
        )));
    }
    let mut pool: Vec<usize> = (0..ds.len()).filter(|&i| counts[groups[i]] > min).collect();
    rng.shuffle(&mut pool);
    let mut left = counts.clone();
    let mut removed = Vec::with_capacity(k);
    for i in pool {
        if removed.len() == k {
            break;
        }
        let g = groups[i];
        if left[g] > min {
            left[g] -= 1;
            removed.push(i);
        }
    }
    removed.sort_unstable();
    Ok(removed)
}

/// Retrain configs shared by every cell of a sweep seeded with `seed`.
pub fn sweep_configs(mcfg: &ModelConfig, tcfg: &TrainConfig, seed: u64) -> (ModelConfig, TrainConfig) {
    (mcfg.with_seed(derive_seed(seed, 0)), tcfg.with_seed(derive_seed(seed, 1)))
}

/// Removal set of one sweep cell.
pub fn sweep_removal(
    method: SweepMethod,
    k: usize,
    ds_train: &Dataset,
    scores: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = ds_train.len();
    if k > n {
        return Err(Error::invalid(format!("cannot remove {k} of {n} examples")));
    }
    match method {
        SweepMethod::D3m => {
            let scores = scores.ok_or_else(|| Error::invalid("the d3m sweep needs alignment scores"))?;
            Ok(smallest_k(scores, k))
        }
        SweepMethod::Random => Ok(Rng::derive(derive_seed(seed, 2), k as u64).sample_indices(n, k)),
        SweepMethod::Balancing => balancing_removal_k(ds_train, k, &mut Rng::derive(derive_seed(seed, 3), k as u64)),
    }
}

/// Retrains once per `(method, k)` cell and reports test metrics.
///
/// All cells share one model/training seed pair derived from `seed`, so `k = 0`
/// gives the same model for every method.
#[allow(clippy::too_many_arguments)]
pub fn sweep_k<E: Executor>(
    ds_train: &Dataset,
    ds_test: &Dataset,
    scores: Option<&[f64]>,
    methods: &[SweepMethod],
    k_grid: &[usize],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
    exec: &E,
) -> Result<SweepResult> {
    if let Some(s) = scores {
        if s.len() != ds_train.len() {
            return Err(Error::invalid("one alignment score per training example is required"));
        }
    }
    if methods.contains(&SweepMethod::Balancing) && !ds_train.has_groups() {
        return Err(Error::MissingGroupLabels);
    }
    let heuristic_k = scores.map(|s| s.iter().filter(|&&a| a < 0.0).count());
    let mut cells: Vec<(SweepMethod, usize)> = methods
        .iter()
        .flat_map(|&m| k_grid.iter().map(move |&k| (m, k)))
        .collect();
    let heuristic_cell = match heuristic_k {
        Some(k) if methods.contains(&SweepMethod::D3m) => {
            cells.push((SweepMethod::D3m, k));
            true
        }
        _ => false,
    };
    let (m, t) = sweep_configs(mcfg, tcfg, seed);
    let results = exec.run(cells.len(), |c| -> Result<SweepPoint> {
        let (method, k) = cells[c];
        let removed = sweep_removal(method, k, ds_train, scores, seed)?;
        let model = train(ds_train, &complement(ds_train.len(), &removed)?, &m, &t)?;
        let r = evaluate(&model, ds_test)?;
        Ok(SweepPoint {
            method,
            k,
            wga: r.worst_group_accuracy,
            balanced: r.balanced_accuracy,
            overall: r.overall_accuracy,
            seed,
        })
    });
    let mut points = results.into_iter().collect::<Result<Vec<_>>>()?;
    let heuristic = if heuristic_cell { points.pop() } else { None };
    Ok(SweepResult {
        k_grid: k_grid.to_vec(),
        points,
        heuristic_k,
        heuristic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic, Example, Split, SynthConfig};
    use crate::exec::Sequential;
    use alloc::string::ToString;

    fn grouped(labels: &[usize], groups: &[usize]) -> Dataset {
        let examples = labels
            .iter()
            .zip(groups)
            .map(|(&y, &g)| {
                let mut e = Example::new(vec![if y == 1 { 1.0 } else { -1.0 }], y);
                e.group = Some(g);
                e
            })
            .collect();
        let names = (0..=*groups.iter().max().unwrap()).map(|g| format!("g{g}")).collect();
        Dataset::new(examples, 1, 2, Some(names), None, Split::Test).unwrap()
    }

    fn sign_model(flip: bool) -> ParamVector {
        let cfg = ModelConfig {
            input_dim: 1,
            ..ModelConfig::default()
        };
        let w = if flip { -1.0 } else { 1.0 };
        ParamVector::from_parts(vec![-w, w, 0.0, 0.0], cfg).unwrap()
    }

    proptest::proptest! {
        #[test]
        fn worst_le_balanced_le_best(
            rows in proptest::collection::vec((-3.0f32..3.0, 0usize..2, 0usize..5), 5..80),
            w in -2.0f64..2.0,
        ) {
            let examples: Vec<Example> = rows
                .iter()
                .enumerate()
                .map(|(i, &(x, y, g))| {
                    let mut e = Example::new(vec![x], y);
                    // every group gets at least one member
                    e.group = Some(if i < 5 { i } else { g });
                    e
                })
                .collect();
            let names = (0..5).map(|g| format!("g{g}")).collect();
            let ds = Dataset::new(examples, 1, 2, Some(names), None, Split::Test).unwrap();
            let cfg = ModelConfig { input_dim: 1, ..ModelConfig::default() };
            let m = ParamVector::from_parts(vec![-w, w, 0.1, -0.1], cfg).unwrap();
            let r = evaluate(&m, &ds).unwrap();
            let best = r.per_group.iter().copied().fold(0.0, f64::max);
            proptest::prop_assert!(r.worst_group_accuracy <= r.balanced_accuracy + 1e-15);
            proptest::prop_assert!(r.balanced_accuracy <= best + 1e-15);
        }
    }

    #[test]
    fn perfect_classifier() {
        let ds = grouped(&[0, 1, 0, 1], &[0, 1, 2, 3]);
        let r = evaluate(&sign_model(false), &ds).unwrap();
        assert_eq!((r.worst_group_accuracy, r.balanced_accuracy, r.overall_accuracy), (1.0, 1.0, 1.0));
        assert_eq!(r.group_names.unwrap()[3], "g3".to_string());
    }

    #[test]
    fn wrong_on_one_group() {
        let mut ds_ex = grouped(&[0, 1, 1, 0, 1, 1], &[0, 0, 1, 1, 2, 2]).examples().to_vec();
        for e in &mut ds_ex[..2] {
            e.features[0] = -e.features[0];
        }
        let names = (0..3).map(|g| format!("g{g}")).collect();
        let ds = Dataset::new(ds_ex, 1, 2, Some(names), None, Split::Test).unwrap();
        let r = evaluate(&sign_model(false), &ds).unwrap();
        assert_eq!(r.worst_group_accuracy, 0.0);
        assert!((r.balanced_accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_group, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn balanced_set_balanced_equals_overall() {
        let (_, _, test) = generate_synthetic(&SynthConfig {
            n_train: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig::default();
        let m = ParamVector::init(&cfg).unwrap();
        let r = evaluate(&m, &test).unwrap();
        assert!((r.balanced_accuracy - r.overall_accuracy).abs() < 1e-12);
        assert!(r.worst_group_accuracy <= r.balanced_accuracy);
    }

    #[test]
    fn missing_and_empty_groups() {
        let ds = grouped(&[0, 1], &[0, 2]);
        assert_eq!(evaluate(&sign_model(false), &ds), Err(Error::EmptyGroup { group: 1 }));
        assert_eq!(evaluate(&sign_model(false), &ds.without_groups()), Err(Error::MissingGroupLabels));
    }

    #[test]
    fn k_grid_shape() {
        let g = default_k_grid(5000, 3000);
        assert_eq!(g[0], 0);
        assert_eq!(g[1], 50);
        assert_eq!(*g.last().unwrap(), 3000);
        assert_eq!(g.len(), 13);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(default_k_grid(10, 0), vec![0]);
        assert_eq!(default_k_grid(10, 2), vec![0, 1, 2]);
    }

    #[test]
    fn balancing_removal_respects_minimum() {
        let (train_ds, _, _) = generate_synthetic(&SynthConfig {
            n_train: 500,
            n_val: 8,
            n_test: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(balancing_point(&train_ds).unwrap(), 300);
        let full = balancing_removal_k(&train_ds, 300, &mut Rng::new(1)).unwrap();
        let kept = crate::datasets::remove_indices(&train_ds, &full).unwrap();
        assert_eq!(group_counts(&kept).unwrap(), vec![50, 50, 50, 50]);
        let some = balancing_removal_k(&train_ds, 120, &mut Rng::new(1)).unwrap();
        let groups = train_ds.groups().unwrap();
        assert_eq!(some.len(), 120);
        assert!(some.iter().all(|&i| groups[i] < 2));
        assert!(balancing_removal_k(&train_ds, 301, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn sweep_zero_matches_erm_and_is_deterministic() {
        let (train_ds, _, test) = generate_synthetic(&SynthConfig {
            n_train: 400,
            n_val: 8,
            n_test: 200,
            ..SynthConfig::default()
        })
        .unwrap();
        let scores: Vec<f64> = (0..400).map(|i| (i as f64 * 0.37).sin()).collect();
        let mcfg = ModelConfig::default();
        let tcfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let grid = [0, 10, 40];
        let run = || {
            sweep_k(&train_ds, &test, Some(&scores), &SweepMethod::ALL, &grid, &mcfg, &tcfg, 5, &Sequential).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let (m, t) = sweep_configs(&mcfg, &tcfg, 5);
        let all: Vec<usize> = (0..400).collect();
        let erm = evaluate(&train(&train_ds, &all, &m, &t).unwrap(), &test).unwrap();
        for method in SweepMethod::ALL {
            assert_eq!(a.at(method, 0).unwrap().wga, erm.worst_group_accuracy);
        }
        let hk = scores.iter().filter(|&&s| s < 0.0).count();
        assert_eq!(a.heuristic_k, Some(hk));
        assert_eq!(a.heuristic.as_ref().unwrap().k, hk);
        assert_eq!(a.points.len(), 9);
    }

    #[test]
    fn balancing_sweep_needs_groups() {
        let (train_ds, _, test) = generate_synthetic(&SynthConfig {
            n_train: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        let r = sweep_k(
            &train_ds.without_groups(),
            &test,
            None,
            &[SweepMethod::Balancing],
            &[0],
            &ModelConfig::default(),
            &TrainConfig::default(),
            0,
            &Sequential,
        );
        assert_eq!(r, Err(Error::MissingGroupLabels));
        let r = sweep_k(&train_ds, &test, None, &[SweepMethod::D3m], &[0], &ModelConfig::default(), &TrainConfig::default(), 0, &Sequential);
        assert!(r.is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in SweepMethod::ALL {
            assert_eq!(SweepMethod::parse(m.as_str()), Some(m));
        }
        assert_eq!(SweepMethod::parse("jtt"), None);
    }
}
