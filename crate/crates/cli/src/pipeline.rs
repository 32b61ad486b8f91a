use std::path::{Path, PathBuf};

use bitraj_core::bidir::{save_generated, BiModelPair};
use bitraj_core::completion::CompletionModels;
use bitraj_core::envs::{load_dataset, save_dataset, MdpSpec, OfflineDataset, Trajectory};
use bitraj_core::eval::{
    augment, collect_dataset, complete_generated, filter_cell, generate_cell, metric_rows, train_and_evaluate,
    train_completion, train_diffusion, write_csv, Algorithm, AugmentMode, CellResult, ExperimentReport, MetricReport,
    StageFailure,
};
use bitraj_core::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{hash_files, sha256_file, sha256_json, FileHash, Manifest, Upstream, MANIFEST_FILE, MANIFEST_SCHEMA};
use crate::{CliError, Result, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Collect,
    TrainDiffusion,
    TrainCompletion,
    Generate,
    Filter,
    Augment,
    Eval,
    Metrics,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::TrainDiffusion => "train-diffusion",
            Stage::TrainCompletion => "train-completion",
            Stage::Generate => "generate",
            Stage::Filter => "filter",
            Stage::Augment => "augment",
            Stage::Eval => "eval",
            Stage::Metrics => "metrics",
            Stage::Report => "report",
        }
    }

    /// Config keys whose values feed this stage's config hash. Everything
    /// else reaches the stage through its upstream manifests.
    fn config_keys(self) -> &'static [&'static str] {
        match self {
            Stage::Collect => &["env", "dataset", "dataset_path"],
            Stage::TrainDiffusion => &["diffusion"],
            Stage::TrainCompletion => &["completion"],
            Stage::Generate => &["anchors", "generation", "seeds"],
            Stage::Filter => &["filter"],
            Stage::Augment => &[],
            Stage::Eval => &["learners", "learner", "eval_episodes"],
            Stage::Metrics => &[],
            Stage::Report => &["modes", "learners", "seeds"],
        }
    }

    fn per_mode(self) -> bool {
        matches!(self, Stage::Generate | Stage::Filter | Stage::Augment | Stage::Eval | Stage::Metrics)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// Inputs and config were unchanged and the outputs intact.
    Skipped,
}

/// Per-seed counts written by the filter stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FilterCount {
    seed: usize,
    generated: usize,
    kept: usize,
}

struct Produced {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    failures: Vec<StageFailure>,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub root: PathBuf,
    pub force: bool,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let root = config.out.clone();
        Ok(Self {
            config,
            root,
            force: false,
        })
    }

    pub fn dir(&self, stage: Stage, mode: Option<AugmentMode>) -> PathBuf {
        let d = self.root.join(stage.as_str());
        match mode {
            Some(m) => d.join(m.as_str()),
            None => d,
        }
    }

    pub fn manifest_path(&self, stage: Stage, mode: Option<AugmentMode>) -> PathBuf {
        self.dir(stage, mode).join(MANIFEST_FILE)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dir(Stage::Collect, None).join("dataset.jsonl")
    }

    pub fn policy_path(&self, mode: AugmentMode, seed: usize, learner: Algorithm) -> PathBuf {
        self.dir(Stage::Eval, Some(mode)).join(format!("seed-{seed}.{}.policy.json", learner.as_str()))
    }

    fn seed_file(&self, stage: Stage, mode: AugmentMode, seed: usize, suffix: &str) -> PathBuf {
        self.dir(stage, Some(mode)).join(format!("seed-{seed}.{suffix}"))
    }

    fn modes(&self, mode: Option<AugmentMode>, generated_only: bool) -> Vec<AugmentMode> {
        let all = match mode {
            Some(m) => vec![m],
            None => self.config.experiment.modes.clone(),
        };
        all.into_iter().filter(|m| !generated_only || m.gen_mode().is_some()).collect()
    }

    fn needs_models(&self) -> bool {
        self.config.experiment.modes.iter().any(|m| m.gen_mode().is_some())
    }

    fn spec(&self, stage: Stage) -> Result<MdpSpec> {
        self.config.experiment.spec().map_err(|e| core_err(stage, e))
    }

    pub fn run(&self, stage: Stage, mode: Option<AugmentMode>) -> Result<Vec<Outcome>> {
        match stage {
            Stage::Collect => Ok(vec![self.collect()?]),
            Stage::TrainDiffusion => Ok(vec![self.train_diffusion()?]),
            Stage::TrainCompletion => Ok(vec![self.train_completion()?]),
            Stage::Report => Ok(vec![self.report()?]),
            _ => {
                let generated_only = matches!(stage, Stage::Generate | Stage::Filter | Stage::Metrics);
                if let Some(m) = mode.filter(|m| generated_only && m.gen_mode().is_none()) {
                    return Err(CliError::Invalid {
                        stage: stage.to_string(),
                        message: format!("mode `{m}` has no generated data"),
                    });
                }
                self.modes(mode, generated_only)
                    .into_iter()
                    .map(|m| match stage {
                        Stage::Generate => self.generate(m),
                        Stage::Filter => self.filter(m),
                        Stage::Augment => self.augment(m),
                        Stage::Eval => self.eval(m),
                        _ => self.metrics(m),
                    })
                    .collect()
            }
        }
    }

    /// Every stage in order, for every configured mode.
    pub fn run_all(&self) -> Result<Vec<(Stage, Option<AugmentMode>, Outcome)>> {
        let mut log = vec![(Stage::Collect, None, self.collect()?)];
        if self.needs_models() {
            log.push((Stage::TrainDiffusion, None, self.train_diffusion()?));
            log.push((Stage::TrainCompletion, None, self.train_completion()?));
        }
        for m in self.modes(None, true) {
            log.push((Stage::Generate, Some(m), self.generate(m)?));
            log.push((Stage::Filter, Some(m), self.filter(m)?));
        }
        for m in self.modes(None, false) {
            log.push((Stage::Augment, Some(m), self.augment(m)?));
            log.push((Stage::Eval, Some(m), self.eval(m)?));
        }
        for m in self.modes(None, true) {
            log.push((Stage::Metrics, Some(m), self.metrics(m)?));
        }
        log.push((Stage::Report, None, self.report()?));
        Ok(log)
    }

    /// Loads and verifies an upstream manifest: every output it lists must
    /// exist with the recorded hash.
    fn upstream(&self, stage: Stage, up: Stage, mode: Option<AugmentMode>) -> Result<(Manifest, Upstream)> {
        let path = self.manifest_path(up, mode);
        let command = match mode {
            Some(m) => format!("{up} --mode {m}"),
            None => up.to_string(),
        };
        if !path.exists() {
            return Err(CliError::MissingUpstream {
                stage: stage.to_string(),
                upstream: up.to_string(),
                command,
                path,
            });
        }
        let manifest = Manifest::load(&path)?;
        for f in &manifest.outputs {
            let p = self.root.join(&f.path);
            if !p.exists() || sha256_file(&p)? != f.sha256 {
                return Err(CliError::StaleUpstream {
                    stage: stage.to_string(),
                    upstream: up.to_string(),
                    command,
                    path: f.path.clone(),
                });
            }
        }
        let link = Upstream {
            stage: match mode {
                Some(m) => format!("{up}/{m}"),
                None => up.to_string(),
            },
            manifest: crate::relative(&self.root, &path),
            sha256: sha256_file(&path)?,
        };
        Ok((manifest, link))
    }

    fn config_hash(&self, stage: Stage) -> String {
        let mut v = self.config.section(stage.config_keys());
        v["stage"] = serde_json::Value::from(stage.as_str());
        sha256_json(&v)
    }

    fn hash_inputs(&self, paths: &[PathBuf]) -> Result<Vec<FileHash>> {
        let mut out = hash_files(&self.root, paths)?;
        // Files outside the run directory keep their absolute path.
        for f in &mut out {
            if Path::new(&f.path).is_relative() && !self.root.join(&f.path).exists() {
                if let Ok(abs) = std::fs::canonicalize(&f.path) {
                    f.path = abs.display().to_string();
                }
            }
        }
        Ok(out)
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn up_to_date(&self, path: &Path, expected: &Manifest) -> Result<bool> {
        if self.force || !path.exists() {
            return Ok(false);
        }
        let Ok(old) = Manifest::load(path) else {
            return Ok(false);
        };
        if old.config_hash != expected.config_hash
            || old.master_seed != expected.master_seed
            || old.upstream != expected.upstream
            || old.mode != expected.mode
        {
            return Ok(false);
        }
        for f in old.inputs.iter().chain(&old.outputs) {
            let p = self.resolve(&f.path);
            if !p.exists() || sha256_file(&p)? != f.sha256 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Shared stage driver: verifies upstreams, skips when up to date,
    /// otherwise clears the stage directory, runs `body` and writes the
    /// manifest.
    fn execute(
        &self,
        stage: Stage,
        mode: Option<AugmentMode>,
        ups: &[(Stage, Option<AugmentMode>)],
        body: impl FnOnce(&Path) -> Result<Produced>,
    ) -> Result<Outcome> {
        debug_assert_eq!(stage.per_mode(), mode.is_some());
        let upstream = ups
            .iter()
            .map(|&(s, m)| self.upstream(stage, s, m).map(|(_, link)| link))
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            stage: stage.to_string(),
            mode: mode.map(|m| m.to_string()),
            master_seed: self.config.seed,
            stage_seed: derive_seed(self.config.seed, stage.as_str()),
            config_hash: self.config_hash(stage),
            upstream,
            inputs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
        };
        let path = self.manifest_path(stage, mode);
        if self.up_to_date(&path, &manifest)? {
            log::info!("{stage}{}: up to date", mode.map(|m| format!(" [{m}]")).unwrap_or_default());
            return Ok(Outcome::Skipped);
        }
        let dir = self.dir(stage, mode);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        log::info!("{stage}{}: running", mode.map(|m| format!(" [{m}]")).unwrap_or_default());
        let produced = body(&dir)?;
        manifest.inputs = self.hash_inputs(&produced.inputs)?;
        manifest.outputs = hash_files(&self.root, &produced.outputs)?;
        manifest.failures = produced.failures;
        for f in &manifest.failures {
            log::warn!("{stage}: seed {:?}: {}", f.seed, f.message);
        }
        manifest.save(&path)?;
        Ok(Outcome::Ran)
    }

    fn load_dataset(&self, stage: Stage) -> Result<OfflineDataset> {
        load_dataset(self.dataset_path()).map_err(|e| core_err(stage, e))
    }

    pub fn collect(&self) -> Result<Outcome> {
        let stage = Stage::Collect;
        self.execute(stage, None, &[], |dir| {
            let out = dir.join("dataset.jsonl");
            let mut inputs = Vec::new();
            let dataset = match &self.config.dataset_path {
                Some(p) => {
                    let d = load_dataset(p).map_err(|e| core_err(stage, e))?;
                    if d.env != self.config.experiment.env {
                        return Err(CliError::Invalid {
                            stage: stage.to_string(),
                            message: format!("{} holds `{}` data but the config names `{}`", p.display(), d.env, self.config.experiment.env),
                        });
                    }
                    inputs.push(p.clone());
                    d
                }
                None => collect_dataset(&self.config.experiment, self.config.seed).map_err(|e| core_err(stage, e))?,
            };
            save_dataset(&dataset, &out).map_err(|e| core_err(stage, e))?;
            Ok(Produced {
                inputs,
                outputs: vec![out],
                failures: Vec::new(),
            })
        })
    }

    pub fn train_diffusion(&self) -> Result<Outcome> {
        let stage = Stage::TrainDiffusion;
        self.execute(stage, None, &[(Stage::Collect, None)], |dir| {
            let dataset = self.load_dataset(stage)?;
            let pair = train_diffusion(&dataset, &self.config.experiment, self.config.seed).map_err(|e| core_err(stage, e))?;
            let outputs = pair.save(dir).map_err(|e| core_err(stage, e))?;
            Ok(Produced {
                inputs: vec![self.dataset_path()],
                outputs,
                failures: Vec::new(),
            })
        })
    }

    pub fn train_completion(&self) -> Result<Outcome> {
        let stage = Stage::TrainCompletion;
        self.execute(stage, None, &[(Stage::Collect, None)], |dir| {
            let dataset = self.load_dataset(stage)?;
            let models =
                train_completion(&dataset, &self.config.experiment, self.config.seed).map_err(|e| core_err(stage, e))?;
            let outputs = models.save(dir).map_err(|e| core_err(stage, e))?;
            Ok(Produced {
                inputs: vec![self.dataset_path()],
                outputs,
                failures: Vec::new(),
            })
        })
    }

    /// Samples, stitches and completes trajectories for every seed index.
    /// Writes `seed-<i>.gen.jsonl` (state trajectories, one record per
    /// anchor) and `seed-<i>.completed.jsonl`.
    pub fn generate(&self, mode: AugmentMode) -> Result<Outcome> {
        let stage = Stage::Generate;
        let gm = mode.gen_mode().ok_or_else(|| CliError::Invalid {
            stage: stage.to_string(),
            message: format!("mode `{mode}` has no generated data"),
        })?;
        let ups = [(Stage::Collect, None), (Stage::TrainDiffusion, None), (Stage::TrainCompletion, None)];
        self.execute(stage, Some(mode), &ups, |_| {
            let spec = self.spec(stage)?;
            let dataset = self.load_dataset(stage)?;
            let diffusion_dir = self.dir(Stage::TrainDiffusion, None);
            let completion_dir = self.dir(Stage::TrainCompletion, None);
            let pair = BiModelPair::load(&diffusion_dir).map_err(|e| core_err(stage, e))?;
            let models = CompletionModels::load(&completion_dir).map_err(|e| core_err(stage, e))?;
            let exp = &self.config.experiment;
            let results: Vec<std::result::Result<Vec<PathBuf>, StageFailure>> = (0..exp.seeds)
                .into_par_iter()
                .map(|seed| {
                    let fail = |e: String| failure(stage, mode, seed, e);
                    let file = generate_cell(&pair, &dataset, exp, gm, seed, self.config.seed).map_err(|e| fail(e.to_string()))?;
                    let gen_path = self.seed_file(stage, mode, seed, "gen.jsonl");
                    save_generated(&file, &gen_path).map_err(|e| fail(e.to_string()))?;
                    let completed = complete_generated(&file, &models, &spec).map_err(|e| fail(e.to_string()))?;
                    let done_path = self.seed_file(stage, mode, seed, "completed.jsonl");
                    save_trajectories(&dataset, completed, &done_path).map_err(|e| fail(e.to_string()))?;
                    Ok(vec![gen_path, done_path])
                })
                .collect();
            let (outputs, failures) = split(results);
            let mut inputs = vec![self.dataset_path()];
            inputs.extend(list_files(&diffusion_dir)?);
            inputs.extend(list_files(&completion_dir)?);
            Ok(Produced {
                inputs,
                outputs: outputs.into_iter().flatten().collect(),
                failures,
            })
        })
    }

    /// OOD and greedy filtering per seed. Writes `seed-<i>.kept.jsonl`,
    /// `seed-<i>.filter.csv` and `counts.json`.
    pub fn filter(&self, mode: AugmentMode) -> Result<Outcome> {
        let stage = Stage::Filter;
        let ups = [(Stage::Collect, None), (Stage::Generate, Some(mode))];
        self.execute(stage, Some(mode), &ups, |dir| {
            let dataset = self.load_dataset(stage)?;
            let exp = &self.config.experiment;
            let results: Vec<std::result::Result<(FilterCount, Vec<PathBuf>), StageFailure>> = (0..exp.seeds)
                .into_par_iter()
                .map(|seed| {
                    let fail = |e: String| failure(stage, mode, seed, e);
                    let src = self.seed_file(Stage::Generate, mode, seed, "completed.jsonl");
                    if !src.exists() {
                        return Err(fail("no generated trajectories for this seed".into()));
                    }
                    let completed = load_dataset(&src).map_err(|e| fail(e.to_string()))?.trajectories;
                    let (report, kept) =
                        filter_cell(&dataset, &completed, &exp.filter, seed, self.config.seed).map_err(|e| fail(e.to_string()))?;
                    let report_path = self.seed_file(stage, mode, seed, "filter.csv");
                    report.write_csv(&report_path).map_err(|e| fail(e.to_string()))?;
                    let count = FilterCount {
                        seed,
                        generated: completed.len(),
                        kept: kept.len(),
                    };
                    let kept_path = self.seed_file(stage, mode, seed, "kept.jsonl");
                    save_trajectories(&dataset, kept, &kept_path).map_err(|e| fail(e.to_string()))?;
                    Ok((count, vec![src, kept_path, report_path]))
                })
                .collect();
            let (done, failures) = split(results);
            let counts: Vec<&FilterCount> = done.iter().map(|(c, _)| c).collect();
            let counts_path = dir.join("counts.json");
            write_json(&counts_path, &counts)?;
            let mut inputs = vec![self.dataset_path()];
            let mut outputs = vec![counts_path];
            for (_, files) in done {
                inputs.push(files[0].clone());
                outputs.extend(files[1..].iter().cloned());
            }
            Ok(Produced { inputs, outputs, failures })
        })
    }

    /// `𝒟 ∪ 𝒟̃` per seed as `seed-<i>.jsonl`; for `base` the dataset alone.
    pub fn augment(&self, mode: AugmentMode) -> Result<Outcome> {
        let stage = Stage::Augment;
        let mut ups = vec![(Stage::Collect, None)];
        if mode.gen_mode().is_some() {
            ups.push((Stage::Filter, Some(mode)));
        }
        self.execute(stage, Some(mode), &ups, |_| {
            let dataset = self.load_dataset(stage)?;
            let mut inputs = vec![self.dataset_path()];
            let mut outputs = Vec::new();
            let mut failures = Vec::new();
            for seed in 0..self.config.experiment.seeds {
                let kept = if mode.gen_mode().is_some() {
                    let src = self.seed_file(Stage::Filter, mode, seed, "kept.jsonl");
                    if !src.exists() {
                        failures.push(failure(stage, mode, seed, "no filtered trajectories for this seed".into()));
                        continue;
                    }
                    inputs.push(src.clone());
                    load_dataset(&src).map_err(|e| core_err(stage, e))?.trajectories
                } else {
                    Vec::new()
                };
                let data = augment(&dataset, &kept).map_err(|e| core_err(stage, e))?;
                let out = self.seed_file(stage, mode, seed, "jsonl");
                save_dataset(&data, &out).map_err(|e| core_err(stage, e))?;
                outputs.push(out);
            }
            Ok(Produced { inputs, outputs, failures })
        })
    }

    /// Trains every learner on every seed's augmented dataset and
    /// evaluates it from seam-crossing starts. Writes the policies plus
    /// `cells.json` and `cells.csv`.
    pub fn eval(&self, mode: AugmentMode) -> Result<Outcome> {
        let stage = Stage::Eval;
        let mut ups = vec![(Stage::Augment, Some(mode))];
        if mode.gen_mode().is_some() {
            ups.push((Stage::Filter, Some(mode)));
        }
        self.execute(stage, Some(mode), &ups, |dir| {
            let exp = &self.config.experiment;
            let counts: Vec<FilterCount> = if mode.gen_mode().is_some() {
                read_json(&self.dir(Stage::Filter, Some(mode)).join("counts.json"))?
            } else {
                Vec::new()
            };
            let jobs: Vec<(usize, Algorithm)> =
                (0..exp.seeds).flat_map(|s| exp.learners.iter().map(move |&a| (s, a))).collect();
            let results: Vec<std::result::Result<(CellResult, PathBuf, PathBuf), StageFailure>> = jobs
                .par_iter()
                .map(|&(seed, learner)| {
                    let fail = |e: String| failure(stage, mode, seed, e);
                    let src = self.seed_file(Stage::Augment, mode, seed, "jsonl");
                    if !src.exists() {
                        return Err(fail("no augmented dataset for this seed".into()));
                    }
                    let data = load_dataset(&src).map_err(|e| fail(e.to_string()))?;
                    let (policy, result) =
                        train_and_evaluate(&data, exp, learner, seed, self.config.seed).map_err(|e| fail(e.to_string()))?;
                    let out = self.policy_path(mode, seed, learner);
                    policy.save_json(&out).map_err(|e| fail(e.to_string()))?;
                    let (generated, kept) = counts
                        .iter()
                        .find(|c| c.seed == seed)
                        .map_or((0, 0), |c| (c.generated, c.kept));
                    let cell = CellResult {
                        mode,
                        seed,
                        learner,
                        generated,
                        kept,
                        mean_return: result.mean_return,
                        success_rate: result.success_rate,
                    };
                    Ok((cell, src, out))
                })
                .collect();
            let (done, failures) = split(results);
            let cells: Vec<CellResult> = done.iter().map(|(c, _, _)| c.clone()).collect();
            let json = dir.join("cells.json");
            write_json(&json, &cells)?;
            let csv = dir.join("cells.csv");
            write_csv(&csv, &cells).map_err(|e| core_err(stage, e))?;
            let mut outputs = vec![json, csv];
            let mut inputs = Vec::new();
            for (_, src, out) in done {
                inputs.push(src);
                outputs.push(out);
            }
            Ok(Produced { inputs, outputs, failures })
        })
    }

    /// E_Dyn and E_L2D of every completed trajectory before filtering.
    pub fn metrics(&self, mode: AugmentMode) -> Result<Outcome> {
        let stage = Stage::Metrics;
        let ups = [(Stage::Collect, None), (Stage::Generate, Some(mode))];
        self.execute(stage, Some(mode), &ups, |dir| {
            let spec = self.spec(stage)?;
            let dataset = self.load_dataset(stage)?;
            let mut inputs = vec![self.dataset_path()];
            let mut rows = Vec::new();
            let mut skipped = 0;
            let mut failures = Vec::new();
            for seed in 0..self.config.experiment.seeds {
                let src = self.seed_file(Stage::Generate, mode, seed, "completed.jsonl");
                if !src.exists() {
                    failures.push(failure(stage, mode, seed, "no generated trajectories for this seed".into()));
                    continue;
                }
                let trajs = load_dataset(&src).map_err(|e| core_err(stage, e))?.trajectories;
                let (r, s) = metric_rows(mode.as_str(), seed, &trajs, &dataset, &spec).map_err(|e| core_err(stage, e))?;
                rows.extend(r);
                skipped += s;
                inputs.push(src);
            }
            let report = MetricReport::from_rows(mode.as_str(), rows, skipped);
            let json = dir.join("report.json");
            write_json(&json, &report)?;
            let csv = dir.join("metrics.csv");
            write_csv(&csv, &report.rows).map_err(|e| core_err(stage, e))?;
            Ok(Produced {
                inputs,
                outputs: vec![json, csv],
                failures,
            })
        })
    }

    /// Collects eval cells, metrics and every recorded failure into
    /// `report/`, together with the config that produced them.
    pub fn report(&self) -> Result<Outcome> {
        let stage = Stage::Report;
        let mut ups: Vec<(Stage, Option<AugmentMode>)> = self.modes(None, false).into_iter().map(|m| (Stage::Eval, Some(m))).collect();
        ups.extend(self.modes(None, true).into_iter().map(|m| (Stage::Metrics, Some(m))));
        let report = self.load_report()?;
        self.execute(stage, None, &ups, |dir| {
            report.write(dir).map_err(|e| core_err(stage, e))?;
            let config = dir.join("config.toml");
            // The snapshot leaves out the output location so that runs in
            // different directories produce the same report.
            let mut snapshot = self.config.clone();
            snapshot.out = PathBuf::from(".");
            std::fs::write(&config, snapshot.to_toml()).map_err(|e| CliError::io(&config, e))?;
            let outputs = ["cells.csv", "summary.csv", "metrics.csv", "metrics_summary.csv", "failures.json", "config.toml"]
                .iter()
                .map(|f| dir.join(f))
                .collect();
            Ok(Produced {
                inputs: Vec::new(),
                outputs,
                failures: Vec::new(),
            })
        })
    }

    /// Assembles the experiment report from the eval and metrics stage
    /// outputs currently on disk.
    pub fn load_report(&self) -> Result<ExperimentReport> {
        let stage = Stage::Report;
        let mut cells = Vec::new();
        let mut metrics = Vec::new();
        let mut failures = Vec::new();
        let mut stages: Vec<(Stage, Option<AugmentMode>)> = vec![(Stage::Collect, None)];
        if self.needs_models() {
            stages.push((Stage::TrainDiffusion, None));
            stages.push((Stage::TrainCompletion, None));
        }
        for m in self.modes(None, false) {
            for s in [Stage::Generate, Stage::Filter, Stage::Metrics] {
                if m.gen_mode().is_some() {
                    stages.push((s, Some(m)));
                }
            }
            stages.push((Stage::Augment, Some(m)));
            stages.push((Stage::Eval, Some(m)));
        }
        for (s, m) in stages {
            let (manifest, _) = self.upstream(stage, s, m)?;
            failures.extend(manifest.failures);
            match s {
                Stage::Eval => cells.extend(read_json::<Vec<CellResult>>(&self.dir(s, m).join("cells.json"))?),
                Stage::Metrics => metrics.push(read_json::<MetricReport>(&self.dir(s, m).join("report.json"))?),
                _ => {}
            }
        }
        Ok(ExperimentReport { cells, metrics, failures })
    }
}

fn core_err(stage: Stage, source: bitraj_core::Error) -> CliError {
    CliError::Stage {
        stage: stage.to_string(),
        source,
    }
}

fn failure(stage: Stage, mode: AugmentMode, seed: usize, message: String) -> StageFailure {
    StageFailure {
        stage: stage.to_string(),
        mode: Some(mode),
        seed: Some(seed),
        message,
    }
}

fn split<T>(results: Vec<std::result::Result<T, StageFailure>>) -> (Vec<T>, Vec<StageFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(f) => failed.push(f),
        }
    }
    (ok, failed)
}

fn save_trajectories(like: &OfflineDataset, trajs: Vec<Trajectory>, path: &Path) -> bitraj_core::Result<()> {
    let d = OfflineDataset::new(&like.env, like.state_dim, like.action_dim, trajs)?;
    save_dataset(&d, path)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(out)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
