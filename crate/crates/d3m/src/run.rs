//! The `generate`, `run` and `report` commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use d3m_core::attribution::{trak_ensemble, AttributionMatrix};
use d3m_core::datasets::{generate_synthetic, Dataset};
use d3m_core::debias::{
    debias_with_groups, subpopulation_alignment, train_base, validation_alignment, AlignmentScores, Debiased, SearchPoint,
    SubpopCell,
};
use d3m_core::discovery::{pseudo_group_labels, PseudoGroups};
use d3m_core::eval::{balancing_point, default_k_grid, evaluate, RunReport, SweepMethod, SweepResult};
use d3m_core::models::ParamVector;

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, IoContext, Result};
use crate::formats::{load_attribution, load_dataset, load_params, save_attribution, save_dataset, save_params, sidecar_path, write_atomic};
use crate::manifest::{sha256_file, Artifact, RunManifest};
use crate::pool::ThreadPool;
use crate::report::{render, DiscoverySummary, Metrics, Removal, Report, SweepSummary, REPORT_VERSION};
use crate::tables;

pub const CONFIG_FILE: &str = "config.toml";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Erm,
    D3m,
    AutoD3m,
    Sweep,
    Subpop,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Erm => "erm",
            Mode::D3m => "d3m",
            Mode::AutoD3m => "auto-d3m",
            Mode::Sweep => "sweep",
            Mode::Subpop => "subpop",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub workers: usize,
    pub force: bool,
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn split_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

fn load_splits(dir: &Path) -> Result<Splits> {
    let [train, val, test] = SPLITS.map(|s| split_path(dir, s));
    Ok(Splits {
        train: load_dataset(&train)?,
        val: load_dataset(&val)?,
        test: load_dataset(&test)?,
    })
}

fn check_dims(cfg: &RunConfig, s: &Splits) -> Result<()> {
    for ds in [&s.train, &s.val, &s.test] {
        if ds.feature_dim() != cfg.model.input_dim {
            return Err(CliError::config(
                "model.input_dim",
                format!("is {} but the {} split has {} features", cfg.model.input_dim, ds.split().as_str(), ds.feature_dim()),
            ));
        }
        if ds.class_count() != cfg.model.class_count {
            return Err(CliError::config(
                "model.class_count",
                format!("is {} but the {} split has {} classes", cfg.model.class_count, ds.split().as_str(), ds.class_count()),
            ));
        }
    }
    Ok(())
}

fn is_empty_dir(path: &Path) -> Result<bool> {
    Ok(fs::read_dir(path).at(path)?.next().is_none())
}

fn refuse(path: &Path, reason: &str) -> CliError {
    CliError::Refused {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Writes a dataset file set: `train.bin`, `val.bin`, `test.bin` and their
/// sidecars, plus a manifest and the config used.
pub fn cmd_generate(cfg: &RunConfig, out: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let synth = cfg.synth().ok_or_else(|| CliError::Usage("generate needs a [data.synthetic] source".into()))?;
    if out.exists() {
        if !out.is_dir() {
            return Err(refuse(out, "not a directory"));
        }
        if !force && !is_empty_dir(out)? {
            return Err(refuse(out, "directory is not empty (pass --force to overwrite)"));
        }
    }
    let (train, val, test) = generate_synthetic(&synth).map_err(|e| CliError::stage("generate", e))?;
    fs::create_dir_all(out).at(out)?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let mut manifest = RunManifest::new("generate", None, cfg.hash(), cfg.seed, Vec::new());
    manifest.begin("generate");
    let mut written = Vec::new();
    let mut artifacts = Vec::new();
    for (name, ds) in SPLITS.into_iter().zip([&train, &val, &test]) {
        let path = split_path(out, name);
        save_dataset(ds, &path)?;
        artifacts.push(format!("{name}.bin"));
        artifacts.push(format!("{name}.meta.json"));
        written.push(path.clone());
        written.push(sidecar_path(&path));
    }
    manifest.complete(out, "generate", &artifacts)?;
    manifest.save(out)?;
    Ok(written)
}

/// Digests of the input dataset files, in a fixed order.
fn input_digests(dir: &Path) -> Result<Vec<Artifact>> {
    let mut out = Vec::new();
    for name in SPLITS {
        let bin = split_path(dir, name);
        for p in [sidecar_path(&bin), bin] {
            out.push(Artifact {
                path: p.display().to_string(),
                sha256: sha256_file(&p)?,
            });
        }
    }
    Ok(out)
}

/// Decides between a fresh run and resuming the manifest already in `out`.
fn open_run_dir(out: &Path, fresh: RunManifest, force: bool) -> Result<RunManifest> {
    if !out.exists() {
        fs::create_dir_all(out).at(out)?;
        return Ok(fresh);
    }
    if !out.is_dir() {
        return Err(refuse(out, "not a directory"));
    }
    if is_empty_dir(out)? {
        return Ok(fresh);
    }
    match RunManifest::load(out) {
        Ok(m)
            if m.command == fresh.command
                && m.mode == fresh.mode
                && m.config_hash == fresh.config_hash
                && m.inputs == fresh.inputs =>
        {
            Ok(m)
        }
        _ if force => Ok(fresh),
        Err(e @ CliError::Version { .. }) => Err(e),
        Ok(_) => Err(refuse(out, "directory holds a different run (pass --force to overwrite)")),
        Err(_) => Err(refuse(out, "directory is not empty and has no readable manifest (pass --force to overwrite)")),
    }
}

/// A run directory and its manifest. Stages whose artifacts still match
/// their recorded digests are loaded instead of recomputed.
struct RunDir<'a> {
    root: &'a Path,
    manifest: RunManifest,
    order: Vec<String>,
}

impl RunDir<'_> {
    fn stage<T>(
        &mut self,
        name: &str,
        load: impl FnOnce(&Path) -> Result<T>,
        compute: impl FnOnce(&Path) -> Result<(T, Vec<String>)>,
    ) -> Result<T> {
        self.order.push(name.to_string());
        if self.manifest.verified(self.root, name) {
            if let Ok(v) = load(self.root) {
                return Ok(v);
            }
        }
        self.manifest.begin(name);
        self.manifest.save(self.root)?;
        match compute(self.root) {
            Ok((v, artifacts)) => {
                self.manifest.complete(self.root, name, &artifacts)?;
                self.manifest.save(self.root)?;
                Ok(v)
            }
            Err(e) => {
                self.manifest.fail(name, &e);
                self.manifest.save(self.root)?;
                Err(e)
            }
        }
    }
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).at(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}

fn write(root: &Path, name: &str, bytes: &[u8]) -> Result<String> {
    write_atomic(&root.join(name), bytes)?;
    Ok(name.to_string())
}

/// What the debias stage keeps besides the final parameters.
#[derive(Serialize, Deserialize)]
struct DebiasRecord {
    alignment: AlignmentScores,
    removed: Vec<usize>,
    search: Vec<SearchPoint>,
    val_before: RunReport,
    val_after: RunReport,
}

fn chosen_k(d: &Debiased) -> usize {
    d.removed.len()
}

fn debias_stage(
    run: &mut RunDir,
    compute: impl FnOnce() -> d3m_core::Result<Debiased>,
    group_names: Option<&[String]>,
) -> Result<Debiased> {
    run.stage(
        "debias",
        |root| {
            let r: DebiasRecord = load_json(&root.join("debias.json"))?;
            Ok(Debiased {
                model: load_params(&root.join("final.params"))?,
                alignment: r.alignment,
                removed: r.removed,
                search: r.search,
                val_before: r.val_before,
                val_after: r.val_after,
            })
        },
        |root| {
            let d = compute().map_err(|e| CliError::stage("debias", e))?;
            save_params(&d.model, &root.join("final.params"))?;
            let record = DebiasRecord {
                alignment: d.alignment.clone(),
                removed: d.removed.clone(),
                search: d.search.clone(),
                val_before: d.val_before.clone(),
                val_after: d.val_after.clone(),
            };
            save_json(&root.join("debias.json"), &record)?;
            let artifacts = vec![
                "final.params".to_string(),
                "debias.json".to_string(),
                write(root, "scores.csv", &tables::scores_csv(&d.alignment, group_names))?,
                write(root, "weights.csv", &tables::weights_csv(&d.alignment, group_names))?,
                write(root, "removed.csv", &tables::removed_csv(&d.removed))?,
                write(root, "search.csv", &tables::search_csv(&d.search, chosen_k(&d)))?,
            ];
            Ok((d, artifacts))
        },
    )
}

fn alignment_stage(
    run: &mut RunDir,
    am: &AttributionMatrix,
    s: &Splits,
    base: &ParamVector,
    cfg: &RunConfig,
) -> Result<AlignmentScores> {
    run.stage(
        "alignment",
        |root| load_json(&root.join("alignment.json")),
        |root| {
            let fail = |e| CliError::stage("alignment", e);
            let groups = s.val.groups().map_err(fail)?;
            let count = s.val.group_count().unwrap_or(0);
            let a = validation_alignment(am, &s.val, &groups, count, base, &cfg.d3m).map_err(fail)?;
            save_json(&root.join("alignment.json"), &a)?;
            let names = s.val.group_names();
            let artifacts = vec![
                "alignment.json".to_string(),
                write(root, "scores.csv", &tables::scores_csv(&a, names))?,
                write(root, "weights.csv", &tables::weights_csv(&a, names))?,
            ];
            Ok((a, artifacts))
        },
    )
}

/// Per class, agreement of pseudo bits with the true two-way group split,
/// maximised over relabelling.
pub fn pseudo_agreement(p: &PseudoGroups, val: &Dataset) -> Option<Vec<Option<f64>>> {
    let groups = val.groups().ok()?;
    let per_class = (0..val.class_count())
        .map(|c| {
            let members: Vec<usize> = (0..val.len()).filter(|&i| val.examples()[i].label == c).collect();
            let mut distinct: Vec<usize> = members.iter().map(|&i| groups[i]).collect();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() != 2 {
                return None;
            }
            let hits = members.iter().filter(|&&i| p.bits[i] == (groups[i] == distinct[1])).count();
            let a = hits as f64 / members.len() as f64;
            Some(a.max(1.0 - a))
        })
        .collect();
    Some(per_class)
}

/// Runs one pipeline into `opts.out` and writes `report.json`.
pub fn cmd_run(cfg: &RunConfig, mode: Mode, opts: &RunOptions) -> Result<Report> {
    cfg.validate()?;
    let (preloaded, inputs) = match cfg.source() {
        DataSource::Path(dir) => {
            let s = load_splits(dir)?;
            check_dims(cfg, &s)?;
            (Some(s), input_digests(dir)?)
        }
        DataSource::Synthetic(_) => (None, Vec::new()),
    };
    let fresh = RunManifest::new("run", Some(mode.as_str()), cfg.hash(), cfg.seed, inputs);
    let manifest = open_run_dir(&opts.out, fresh, opts.force)?;
    write_atomic(&opts.out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let mut run = RunDir {
        root: &opts.out,
        manifest,
        order: Vec::new(),
    };
    let pool = ThreadPool::new(opts.workers);

    let s = match preloaded {
        Some(s) => s,
        None => run.stage(
            "data",
            |root| load_splits(&root.join("data")),
            |root| {
                let synth = cfg.synth().expect("synthetic source");
                let (train, val, test) = generate_synthetic(&synth).map_err(|e| CliError::stage("data", e))?;
                let dir = root.join("data");
                fs::create_dir_all(&dir).at(&dir)?;
                let mut artifacts = Vec::new();
                for (name, ds) in SPLITS.into_iter().zip([&train, &val, &test]) {
                    save_dataset(ds, &split_path(&dir, name))?;
                    artifacts.push(format!("data/{name}.bin"));
                    artifacts.push(format!("data/{name}.meta.json"));
                }
                Ok((Splits { train, val, test }, artifacts))
            },
        )?,
    };

    let (mcfg, tcfg, tkcfg) = (cfg.model_config(), cfg.train_config(), cfg.trak_config());
    let base = run.stage(
        "base-train",
        |root| load_params(&root.join("base.params")),
        |root| {
            let m = train_base(&s.train, &mcfg, &tcfg).map_err(|e| CliError::stage("base-train", e))?;
            save_params(&m, &root.join("base.params"))?;
            Ok((m, vec!["base.params".to_string()]))
        },
    )?;
    let eval = |m: &ParamVector| evaluate(m, &s.test).map(|r| Metrics::from_report(&r)).map_err(|e| CliError::stage("report", e));
    let baseline = eval(&base)?;
    let n = s.train.len();
    let mut report = Report {
        version: REPORT_VERSION,
        mode: mode.as_str().to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        metrics: baseline.clone(),
        baseline: None,
        removal: Removal {
            count: 0,
            heuristic_k: None,
            train_size: n,
        },
        stages: Vec::new(),
        discovery: None,
        sweep: None,
    };

    if mode != Mode::Erm {
        // auto-d3m never sees group labels
        let (train_view, val_view) = if mode == Mode::AutoD3m {
            (s.train.without_groups(), s.val.without_groups())
        } else {
            (s.train.clone(), s.val.clone())
        };
        let am = run.stage(
            "attribution",
            |root| load_attribution(&root.join("attrib.bin")),
            |root| {
                let am = trak_ensemble(&train_view, val_view.examples(), &mcfg, &tcfg, &tkcfg, &pool)
                    .map_err(|e| CliError::stage("attribution", e))?;
                save_attribution(&am, &root.join("attrib.bin"))?;
                Ok((am, vec!["attrib.bin".to_string()]))
            },
        )?;

        match mode {
            Mode::D3m => {
                let d = debias_stage(
                    &mut run,
                    || {
                        let groups = s.val.groups()?;
                        let count = s.val.group_count().unwrap_or(0);
                        debias_with_groups(&s.train, &s.val, &groups, count, &base, &am, &mcfg, &tcfg, &cfg.d3m, &pool)
                    },
                    s.val.group_names(),
                )?;
                report.baseline = Some(baseline);
                report.metrics = eval(&d.model)?;
                report.removal.count = d.removed.len();
                report.removal.heuristic_k = Some(d.alignment.heuristic_k());
            }
            Mode::AutoD3m => {
                let pseudo = run.stage(
                    "discovery",
                    |root| load_json(&root.join("pseudo.json")),
                    |root| {
                        let p = pseudo_group_labels(&am, &val_view, &base, &cfg.discovery)
                            .map_err(|e| CliError::stage("discovery", e))?;
                        save_json(&root.join("pseudo.json"), &p)?;
                        let artifacts = vec![
                            "pseudo.json".to_string(),
                            write(root, "pseudo_groups.csv", &tables::pseudo_groups_csv(&p, &val_view.labels()))?,
                            write(root, "pseudo_directions.csv", &tables::directions_csv(&p))?,
                        ];
                        Ok((p, artifacts))
                    },
                )?;
                let d = debias_stage(
                    &mut run,
                    || {
                        debias_with_groups(
                            &train_view,
                            &val_view,
                            &pseudo.groups,
                            pseudo.group_count(),
                            &base,
                            &am,
                            &mcfg,
                            &tcfg,
                            &cfg.d3m,
                            &pool,
                        )
                    },
                    None,
                )?;
                let mut sizes = vec![0; pseudo.group_count()];
                for &g in &pseudo.groups {
                    sizes[g] += 1;
                }
                report.baseline = Some(baseline);
                report.metrics = eval(&d.model)?;
                report.removal.count = d.removed.len();
                report.removal.heuristic_k = Some(d.alignment.heuristic_k());
                report.discovery = Some(DiscoverySummary {
                    agreement: pseudo_agreement(&pseudo, &s.val).unwrap_or_default(),
                    pseudo_group_sizes: sizes,
                });
            }
            Mode::Sweep => {
                let a = alignment_stage(&mut run, &am, &s, &base, cfg)?;
                let balancing_k = balancing_point(&s.train).ok();
                let grid = if cfg.eval.k_grid.is_empty() {
                    default_k_grid(n, balancing_k.unwrap_or(n / 2))
                } else {
                    cfg.eval.k_grid.clone()
                };
                let sweep: SweepResult = run.stage(
                    "sweep",
                    |root| load_json(&root.join("sweep.json")),
                    |root| {
                        let r = d3m_core::eval::sweep_k(
                            &s.train,
                            &s.test,
                            Some(&a.scores),
                            &cfg.eval.methods,
                            &grid,
                            &mcfg,
                            &tcfg,
                            cfg.sweep_seed(),
                            &pool,
                        )
                        .map_err(|e| CliError::stage("sweep", e))?;
                        save_json(&root.join("sweep.json"), &r)?;
                        let artifacts = vec!["sweep.json".to_string(), write(root, "sweep.csv", &tables::sweep_csv(&r))?];
                        Ok((r, artifacts))
                    },
                )?;
                report.removal.heuristic_k = Some(a.heuristic_k());
                report.sweep = Some(SweepSummary {
                    best: SweepMethod::ALL.iter().filter_map(|&m| sweep.best(m).cloned()).collect(),
                    heuristic: sweep.heuristic.clone(),
                    balancing_k,
                });
            }
            Mode::Subpop => {
                let a = alignment_stage(&mut run, &am, &s, &base, cfg)?;
                run.stage(
                    "subpop",
                    |root| load_json::<Vec<SubpopCell>>(&root.join("subpop.json")),
                    |root| {
                        let cells = subpopulation_alignment(&a.scores, &s.train).map_err(|e| CliError::stage("subpop", e))?;
                        save_json(&root.join("subpop.json"), &cells)?;
                        let artifacts = vec!["subpop.json".to_string(), write(root, "subpop.csv", &tables::subpop_csv(&cells))?];
                        Ok((cells, artifacts))
                    },
                )?;
                report.removal.heuristic_k = Some(a.heuristic_k());
            }
            Mode::Erm => unreachable!(),
        }
    }

    report.stages = run.order.clone();
    run.stage(
        "report",
        |_| Ok(()),
        |root| {
            report.save(root)?;
            Ok(((), vec![crate::report::REPORT_FILE.to_string()]))
        },
    )?;
    Ok(report)
}

/// Summary of a run directory; rewrites `report.json` when the run got that
/// far.
pub fn cmd_report(run_dir: &Path) -> Result<(String, Option<Report>)> {
    let manifest = RunManifest::load(run_dir)?;
    let report = if run_dir.join(crate::report::REPORT_FILE).exists() {
        let r = Report::load(run_dir)?;
        r.save(run_dir)?;
        Some(r)
    } else {
        None
    };
    Ok((render(&manifest, report.as_ref()), report))
}
