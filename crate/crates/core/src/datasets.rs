//! Examples, datasets and the planted-bias synthetic generator.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::{Error, Result};

/// One labelled input. Features are stored as `f32`, which is also the
/// on-disk precision; models compute in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f32>,
    pub label: usize,
    pub group: Option<usize>,
    /// Bit `j` is the value of the `j`-th auxiliary annotation.
    pub annotations: Option<u64>,
}

impl Example {
    pub fn new(features: Vec<f32>, label: usize) -> Self {
        Example {
            features,
            label,
            group: None,
            annotations: None,
        }
    }

    pub fn annotation(&self, bit: usize) -> Option<bool> {
        self.annotations.map(|a| (a >> bit) & 1 == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Split> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// A validated collection of examples sharing one feature dimension.
///
/// `group_names` is present exactly when every example carries a group, and
/// `annotation_names` exactly when every example carries annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    feature_dim: usize,
    class_count: usize,
    group_names: Option<Vec<String>>,
    annotation_names: Option<Vec<String>>,
    split: Split,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        feature_dim: usize,
        class_count: usize,
        group_names: Option<Vec<String>>,
        annotation_names: Option<Vec<String>>,
        split: Split,
    ) -> Result<Self> {
        if class_count < 1 {
            return Err(Error::invalid("class_count must be at least 1"));
        }
        if let Some(names) = &annotation_names {
            if names.len() > 64 {
                return Err(Error::invalid("at most 64 annotation bits are supported"));
            }
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != feature_dim {
                return Err(Error::invalid(format!(
                    "example {i} has {} features, expected {feature_dim}",
                    ex.features.len()
                )));
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("example {i} has a non-finite feature")));
            }
            if ex.label >= class_count {
                return Err(Error::invalid(format!(
                    "example {i} has label {} but class_count is {class_count}",
                    ex.label
                )));
            }
            match (&group_names, ex.group) {
                (Some(names), Some(g)) if g >= names.len() => {
                    return Err(Error::invalid(format!(
                        "example {i} has group {g} but only {} groups are named",
                        names.len()
                    )))
                }
                (Some(_), None) => {
                    return Err(Error::invalid(format!("example {i} is missing its group")))
                }
                (None, Some(_)) => {
                    return Err(Error::invalid(format!(
                        "example {i} has a group but the dataset has no group names"
                    )))
                }
                _ => {}
            }
            match (&annotation_names, ex.annotations) {
                (Some(names), Some(bits)) => {
                    if names.len() < 64 && bits >> names.len() != 0 {
                        return Err(Error::invalid(format!(
                            "example {i} sets annotation bits beyond the {} named ones",
                            names.len()
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "example {i} disagrees with the dataset about annotations"
                    )))
                }
            }
        }
        Ok(Dataset {
            examples,
            feature_dim,
            class_count,
            group_names,
            annotation_names,
            split,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn group_names(&self) -> Option<&[String]> {
        self.group_names.as_deref()
    }

    pub fn annotation_names(&self) -> Option<&[String]> {
        self.annotation_names.as_deref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn has_groups(&self) -> bool {
        self.group_names.is_some()
    }

    pub fn group_count(&self) -> Option<usize> {
        self.group_names.as_ref().map(Vec::len)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Group index per example.
    pub fn groups(&self) -> Result<Vec<usize>> {
        if !self.has_groups() {
            return Err(Error::MissingGroupLabels);
        }
        Ok(self.examples.iter().map(|e| e.group.unwrap_or(0)).collect())
    }

    /// Copy with every group label removed.
    pub fn without_groups(&self) -> Dataset {
        let mut ds = self.clone();
        ds.group_names = None;
        ds.examples.iter_mut().for_each(|e| e.group = None);
        ds
    }

    /// Copy with group labels replaced by `groups`.
    pub fn with_groups(&self, groups: &[usize], names: Vec<String>) -> Result<Dataset> {
        if groups.len() != self.len() {
            return Err(Error::invalid("one group per example is required"));
        }
        let mut examples = self.examples.clone();
        for (e, &g) in examples.iter_mut().zip(groups) {
            e.group = Some(g);
        }
        Dataset::new(
            examples,
            self.feature_dim,
            self.class_count,
            Some(names),
            self.annotation_names.clone(),
            self.split,
        )
    }

    /// Examples at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut examples = Vec::with_capacity(idx.len());
        for &i in idx {
            let ex = self.examples.get(i).ok_or_else(|| {
                Error::invalid(format!("index {i} out of range for {} examples", self.len()))
            })?;
            examples.push(ex.clone());
        }
        Ok(Dataset {
            examples,
            ..self.empty_like()
        })
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            examples: Vec::new(),
            feature_dim: self.feature_dim,
            class_count: self.class_count,
            group_names: self.group_names.clone(),
            annotation_names: self.annotation_names.clone(),
            split: self.split,
        }
    }
}

/// Exact number of examples per group index.
pub fn group_counts(ds: &Dataset) -> Result<Vec<usize>> {
    let n_groups = ds.group_count().ok_or(Error::MissingGroupLabels)?;
    let mut counts = vec![0; n_groups];
    for g in ds.groups()? {
        counts[g] += 1;
    }
    Ok(counts)
}

/// Indices of `0..n` not in `removed`. Errors on out-of-range or repeated
/// indices.
pub fn complement(n: usize, removed: &[usize]) -> Result<Vec<usize>> {
    let mut drop = vec![false; n];
    for &i in removed {
        if i >= n {
            return Err(Error::invalid(format!("index {i} out of range for {n} examples")));
        }
        if drop[i] {
            return Err(Error::invalid(format!("index {i} listed twice")));
        }
        drop[i] = true;
    }
    Ok((0..n).filter(|&i| !drop[i]).collect())
}

/// New dataset without the examples at `idx`; retained examples keep their
/// order.
pub fn remove_indices(ds: &Dataset, idx: &[usize]) -> Result<Dataset> {
    ds.subset(&complement(ds.len(), idx)?)
}

/// Indices to drop so every group shrinks to the size of the smallest one.
/// Members of each group are dropped uniformly at random.
pub fn balancing_removal(ds: &Dataset, rng: &mut Rng) -> Result<Vec<usize>> {
    let groups = ds.groups()?;
    let counts = group_counts(ds)?;
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup { group: g });
    }
    let target = counts.iter().copied().min().unwrap_or(0);
    let mut removed = Vec::new();
    for (g, &count) in counts.iter().enumerate() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| groups[i] == g).collect();
        let keep = rng.sample_indices(count, target);
        let mut keep_mask = vec![false; count];
        keep.iter().for_each(|&j| keep_mask[j] = true);
        removed.extend(members.iter().zip(&keep_mask).filter(|(_, &k)| !k).map(|(&i, _)| i));
    }
    removed.sort_unstable();
    Ok(removed)
}

/// Downsamples every group to the smallest group size.
pub fn balance_by_subsampling(ds: &Dataset, rng: &mut Rng) -> Result<(Dataset, usize)> {
    let removed = balancing_removal(ds, rng)?;
    let count = removed.len();
    Ok((remove_indices(ds, &removed)?, count))
}

/// Parameters of the planted-bias generator.
///
/// The task is binary. Each example has a label `y` and a spurious attribute
/// `a`, and `x = core·s(y)·e₁ + spurious·s(a)·e₂ + N(0, σ²I)` with
/// `s(0) = −1, s(1) = +1`. In the training split the groups with `y = a`
/// outnumber those with `y ≠ a` by `majority_ratio : 1`; validation and test
/// splits are group balanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub dim: usize,
    pub majority_ratio: f64,
    pub core_strength: f64,
    pub spurious_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 5000,
            n_val: 1000,
            n_test: 4000,
            dim: 10,
            majority_ratio: 4.0,
            core_strength: 1.0,
            spurious_strength: 3.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

/// Group order used by the generator: the two majority groups first.
pub const SYNTH_GROUPS: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];
pub const SYNTH_GROUP_NAMES: [&str; 4] = ["y0_a0", "y1_a1", "y0_a1", "y1_a0"];
pub const SYNTH_ANNOTATIONS: [&str; 2] = ["spurious", "noise"];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.majority_ratio >= 1.0) || !self.majority_ratio.is_finite() {
            return Err(Error::invalid(format!(
                "majority_ratio must be >= 1, got {}",
                self.majority_ratio
            )));
        }
        if !(self.core_strength >= 0.0) || !(self.spurious_strength >= 0.0) {
            return Err(Error::invalid("feature strengths must be >= 0"));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma must be > 0"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim must be at least 2 (core and spurious axes)"));
        }
        for (name, n) in [("n_val", self.n_val), ("n_test", self.n_test)] {
            if n < 4 {
                return Err(Error::invalid(format!("{name} must cover all four groups")));
            }
        }
        self.train_group_sizes().map(|_| ())
    }

    /// Train sizes in [`SYNTH_GROUPS`] order. Minority groups get
    /// `⌊n / (2(r + 1))⌋` each; the remainder is split over the majority
    /// groups, the first taking any odd example.
    pub fn train_group_sizes(&self) -> Result<[usize; 4]> {
        let n = self.n_train;
        let minority = libm::floor(n as f64 / (2.0 * (self.majority_ratio + 1.0))) as usize;
        if minority == 0 {
            return Err(Error::invalid(format!(
                "n_train = {n} with majority_ratio = {} leaves empty minority groups",
                self.majority_ratio
            )));
        }
        let majority_total = n - 2 * minority;
        let second = majority_total / 2;
        Ok([majority_total - second, second, minority, minority])
    }
}

fn balanced_sizes(n: usize) -> [usize; 4] {
    let mut sizes = [n / 4; 4];
    for s in sizes.iter_mut().take(n % 4) {
        *s += 1;
    }
    sizes
}

fn generate_split(cfg: &SynthConfig, sizes: [usize; 4], split: Split, rng: &mut Rng) -> Dataset {
    let sign = |b: usize| if b == 1 { 1.0 } else { -1.0 };
    let mut examples = Vec::with_capacity(sizes.iter().sum());
    for (g, (&(y, a), &size)) in SYNTH_GROUPS.iter().zip(&sizes).enumerate() {
        for _ in 0..size {
            let mut x: Vec<f32> = (0..cfg.dim)
                .map(|_| (cfg.noise_sigma * rng.standard_normal()) as f32)
                .collect();
            x[0] = (f64::from(x[0]) + cfg.core_strength * sign(y)) as f32;
            x[1] = (f64::from(x[1]) + cfg.spurious_strength * sign(a)) as f32;
            let noise_bit = u64::from(rng.bernoulli(0.5));
            examples.push(Example {
                features: x,
                label: y,
                group: Some(g),
                annotations: Some(a as u64 | (noise_bit << 1)),
            });
        }
    }
    rng.shuffle(&mut examples);
    Dataset {
        examples,
        feature_dim: cfg.dim,
        class_count: 2,
        group_names: Some(SYNTH_GROUP_NAMES.iter().map(|s| s.to_string()).collect()),
        annotation_names: Some(SYNTH_ANNOTATIONS.iter().map(|s| s.to_string()).collect()),
        split,
    }
}

/// Train, validation and test splits with a planted spurious correlation.
/// Deterministic in `cfg.seed`; each split draws from its own stream.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Dataset, Dataset, Dataset)> {
    cfg.validate()?;
    let train = generate_split(
        cfg,
        cfg.train_group_sizes()?,
        Split::Train,
        &mut Rng::derive(cfg.seed, 0),
    );
    let val = generate_split(cfg, balanced_sizes(cfg.n_val), Split::Val, &mut Rng::derive(cfg.seed, 1));
    let test = generate_split(
        cfg,
        balanced_sizes(cfg.n_test),
        Split::Test,
        &mut Rng::derive(cfg.seed, 2),
    );
    Ok((train, val, test))
}
