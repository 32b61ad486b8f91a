//! The augmentation experiment: one offline dataset, one trained model pair
//! and completion models, then a grid of cells `(mode, seed)` each with its
//! own generated data and learners.
//!
//! Derived seeds: `collect`, `train-diffusion`, `train-completion` come
//! from the master seed by label; per-cell streams use indexed labels
//! (`anchors`, `generate`, `filter`, `learner/<id>`, `eval`) with the cell's
//! seed index, so every mode sees the same anchors, learner initialization
//! and evaluation starts for a given seed index.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learners::{train_policy, Algorithm, LearnerConfig, PolicyParams};
use super::metrics::{mean, metric_rows, MetricReport, MetricRow};
use super::rollout::{evaluate_policy, EvalResult};
use crate::bidir::{generate_batch, pick_anchors, train_pair, AnchorConfig, BiModelPair, GenConfig, GenFile, GenMode, GenRecord, PairConfig};
use crate::completion::{self, complete, CompletionConfig, CompletionModels};
use crate::envs::{collect, MdpSpec, OfflineDataset, Trajectory};
use crate::filters::{run_filters, FilterConfig, FilterReport, IsolationForest};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::{Error, Result};

/// What a learner is trained on: the dataset alone or the dataset plus
/// data generated in one of the generation modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    Base,
    ForwardOnly,
    BackwardOnly,
    Bidirectional,
}

impl AugmentMode {
    pub const DEFAULT: [AugmentMode; 3] = [AugmentMode::Base, AugmentMode::ForwardOnly, AugmentMode::Bidirectional];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentMode::Base => "base",
            AugmentMode::ForwardOnly => "forward-only",
            AugmentMode::BackwardOnly => "backward-only",
            AugmentMode::Bidirectional => "bidirectional",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Self::Base, Self::ForwardOnly, Self::BackwardOnly, Self::Bidirectional]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "mode",
                name: s.to_string(),
            })
    }

    pub fn gen_mode(self) -> Option<GenMode> {
        match self {
            AugmentMode::Base => None,
            AugmentMode::ForwardOnly => Some(GenMode::ForwardOnly),
            AugmentMode::BackwardOnly => Some(GenMode::BackwardOnly),
            AugmentMode::Bidirectional => Some(GenMode::Bidirectional),
        }
    }
}

impl std::fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Behavior policy id, see [`crate::envs::POLICY_IDS`].
    pub policy: String,
    pub episodes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            policy: "modes-ab".to_string(),
            episodes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: String,
    pub dataset: DatasetConfig,
    pub diffusion: PairConfig,
    pub completion: CompletionConfig,
    pub anchors: AnchorConfig,
    pub generation: GenConfig,
    pub filter: FilterConfig,
    pub learners: Vec<Algorithm>,
    pub learner: LearnerConfig,
    pub modes: Vec<AugmentMode>,
    pub seeds: usize,
    pub eval_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "chain-1d".to_string(),
            dataset: DatasetConfig::default(),
            diffusion: PairConfig::default(),
            completion: CompletionConfig::default(),
            anchors: AnchorConfig::default(),
            generation: GenConfig::default(),
            filter: FilterConfig::default(),
            learners: vec![Algorithm::Bc, Algorithm::Td3BcLite],
            learner: LearnerConfig::default(),
            modes: AugmentMode::DEFAULT.to_vec(),
            seeds: 5,
            eval_episodes: 50,
        }
    }
}

impl ExperimentConfig {
    pub fn spec(&self) -> Result<MdpSpec> {
        MdpSpec::named(&self.env)
    }
}

pub fn collect_dataset(config: &ExperimentConfig, master: u64) -> Result<OfflineDataset> {
    let spec = config.spec()?;
    collect(&spec, &config.dataset.policy, config.dataset.episodes, derive_seed(master, "collect"))
}

pub fn train_diffusion(dataset: &OfflineDataset, config: &ExperimentConfig, master: u64) -> Result<BiModelPair> {
    let spec = config.spec()?;
    train_pair(dataset, spec.gamma, &config.diffusion, derive_seed(master, "train-diffusion"))
}

pub fn train_completion(dataset: &OfflineDataset, config: &ExperimentConfig, master: u64) -> Result<CompletionModels> {
    completion::train_models(dataset, &config.completion, derive_seed(master, "train-completion"))
}

/// Picks anchors for seed index `seed`, samples in `mode`, and keeps the
/// record for every anchor, including failures.
pub fn generate_cell(
    pair: &BiModelPair,
    dataset: &OfflineDataset,
    config: &ExperimentConfig,
    mode: GenMode,
    seed: usize,
    master: u64,
) -> Result<GenFile> {
    let spec = config.spec()?;
    let corridor = config.anchors.corridor_only.then_some(&spec.layout.corridor);
    let mut rng = rng_from_seed(derive_indexed(master, "anchors", seed as u64));
    let anchors = pick_anchors(dataset, pair.horizon(), spec.gamma, &config.anchors, corridor, &mut rng)?;
    let outputs = generate_batch(
        pair,
        dataset,
        &anchors,
        mode,
        &config.generation,
        derive_indexed(master, "generate", seed as u64),
    );
    Ok(GenFile {
        env: spec.name.clone(),
        horizon: pair.horizon(),
        mode,
        guidance: config.generation.guidance,
        records: outputs.into_iter().map(GenRecord::from).collect(),
    })
}

/// Completes every successful record with two or more states. Episode ids
/// are the record indices.
pub fn complete_generated(file: &GenFile, models: &CompletionModels, spec: &MdpSpec) -> Result<Vec<Trajectory>> {
    file.records
        .par_iter()
        .filter_map(|r| r.traj.as_ref().filter(|t| t.len() >= 2).map(|t| (r.index, t)))
        .map(|(i, t)| complete(t, &models.idm, &models.rm, spec, i as u64))
        .collect()
}

/// Fits the isolation forest on the dataset's states and runs both filter
/// stages. Returns the report and the surviving trajectories.
pub fn filter_cell(
    dataset: &OfflineDataset,
    completed: &[Trajectory],
    config: &FilterConfig,
    seed: usize,
    master: u64,
) -> Result<(FilterReport, Vec<Trajectory>)> {
    if completed.is_empty() {
        let report = FilterReport {
            rows: Vec::new(),
            kept: Vec::new(),
            c_ood: 0,
            c_greedy: 0,
        };
        return Ok((report, Vec::new()));
    }
    let states: Vec<&[f64]> = dataset.trajectories.iter().flat_map(|t| t.states()).collect();
    let mut rng = rng_from_seed(derive_indexed(master, "filter", seed as u64));
    let forest = IsolationForest::fit(&states, &config.forest, &mut rng)?;
    let report = run_filters(&forest, completed, config)?;
    let kept = report.kept.iter().map(|&i| completed[i].clone()).collect();
    Ok((report, kept))
}

/// `𝒟 ∪ 𝒟̃` with statistics recomputed over the union.
pub fn augment(dataset: &OfflineDataset, generated: &[Trajectory]) -> Result<OfflineDataset> {
    let extra = OfflineDataset::new(&dataset.env, dataset.state_dim, dataset.action_dim, generated.to_vec())?;
    dataset.merged(&extra)
}

pub fn learner_seed(master: u64, algorithm: Algorithm, seed: usize) -> u64 {
    derive_indexed(master, &format!("learner/{}", algorithm.as_str()), seed as u64)
}

pub fn eval_seed(master: u64, seed: usize) -> u64 {
    derive_indexed(master, "eval", seed as u64)
}

/// Trains one learner on `data` and evaluates it from the seed's start
/// states.
pub fn train_and_evaluate(
    data: &OfflineDataset,
    config: &ExperimentConfig,
    algorithm: Algorithm,
    seed: usize,
    master: u64,
) -> Result<(PolicyParams, EvalResult)> {
    let spec = config.spec()?;
    let policy = train_policy(data, &spec, algorithm, &config.learner, learner_seed(master, algorithm, seed))?;
    let result = evaluate_policy(&policy, &spec, config.eval_episodes, eval_seed(master, seed));
    Ok((policy, result))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mode: AugmentMode,
    pub seed: usize,
    pub learner: Algorithm,
    /// Completed trajectories before filtering.
    pub generated: usize,
    pub kept: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: AugmentMode,
    pub learner: Algorithm,
    pub seeds: usize,
    pub mean_success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub mode: Option<AugmentMode>,
    pub seed: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    /// Generated-data metrics per generation mode, pooled over seeds.
    pub metrics: Vec<MetricReport>,
    pub failures: Vec<StageFailure>,
}

impl ExperimentReport {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(AugmentMode, Algorithm)> = self.cells.iter().map(|c| (c.mode, c.learner)).collect();
        keys.sort_by_key(|(m, a)| (*m, a.as_str()));
        keys.dedup();
        keys.into_iter()
            .map(|(mode, learner)| {
                let cells: Vec<&CellResult> = self.cells.iter().filter(|c| c.mode == mode && c.learner == learner).collect();
                SummaryRow {
                    mode,
                    learner,
                    seeds: cells.len(),
                    mean_success_rate: mean(&cells.iter().map(|c| c.success_rate).collect::<Vec<_>>()),
                    mean_return: mean(&cells.iter().map(|c| c.mean_return).collect::<Vec<_>>()),
                }
            })
            .collect()
    }

    pub fn mean_success(&self, mode: AugmentMode, learner: Algorithm) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.mode == mode && r.learner == learner)
            .map(|r| r.mean_success_rate)
    }

    pub fn metric(&self, mode: AugmentMode) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.mode == mode.as_str())
    }

    /// Writes `cells.csv`, `summary.csv`, `metrics.csv` (one row per
    /// generated trajectory, the scatter data), `metrics_summary.csv` and
    /// `failures.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_csv(dir.join("cells.csv"), &self.cells)?;
        write_csv(dir.join("summary.csv"), &self.summary())?;
        let rows: Vec<&MetricRow> = self.metrics.iter().flat_map(|m| &m.rows).collect();
        write_csv(dir.join("metrics.csv"), &rows)?;
        let agg: Vec<MetricAggregate> = self.metrics.iter().map(MetricAggregate::from).collect();
        write_csv(dir.join("metrics_summary.csv"), &agg)?;
        std::fs::write(dir.join("failures.json"), serde_json::to_vec_pretty(&self.failures)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct MetricAggregate<'a> {
    mode: &'a str,
    trajectories: usize,
    skipped: usize,
    mean_e_dyn: Option<f64>,
    median_e_dyn: Option<f64>,
    mean_e_l2d: Option<f64>,
    median_e_l2d: Option<f64>,
}

impl<'a> From<&'a MetricReport> for MetricAggregate<'a> {
    fn from(m: &'a MetricReport) -> Self {
        Self {
            mode: &m.mode,
            trajectories: m.rows.len(),
            skipped: m.skipped,
            mean_e_dyn: m.mean_e_dyn,
            median_e_dyn: m.median_e_dyn,
            mean_e_l2d: m.mean_e_l2d,
            median_e_l2d: m.median_e_l2d,
        }
    }
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Generated data for one `(mode, seed)` cell.
#[derive(Debug, Clone)]
pub struct CellData {
    pub mode: AugmentMode,
    pub seed: usize,
    pub completed: Vec<Trajectory>,
    pub kept: Vec<Trajectory>,
}

fn failure(stage: &str, mode: Option<AugmentMode>, seed: Option<usize>, e: &Error) -> StageFailure {
    StageFailure {
        stage: stage.to_string(),
        mode,
        seed,
        message: e.to_string(),
    }
}

/// Runs generation, completion and filtering for every generated mode and
/// seed. A failing cell is recorded and skipped.
pub fn generate_cells(
    pair: &BiModelPair,
    models: &CompletionModels,
    dataset: &OfflineDataset,
    config: &ExperimentConfig,
    master: u64,
) -> Result<(Vec<CellData>, Vec<StageFailure>)> {
    let spec = config.spec()?;
    let jobs: Vec<(AugmentMode, GenMode, usize)> = config
        .modes
        .iter()
        .filter_map(|m| m.gen_mode().map(|g| (*m, g)))
        .flat_map(|(m, g)| (0..config.seeds).map(move |s| (m, g, s)))
        .collect();
    let results: Vec<std::result::Result<CellData, StageFailure>> = jobs
        .par_iter()
        .map(|&(mode, gm, seed)| {
            let file = generate_cell(pair, dataset, config, gm, seed, master)
                .map_err(|e| failure("generate", Some(mode), Some(seed), &e))?;
            let completed = complete_generated(&file, models, &spec)
                .map_err(|e| failure("generate", Some(mode), Some(seed), &e))?;
            let (_, kept) = filter_cell(dataset, &completed, &config.filter, seed, master)
                .map_err(|e| failure("filter", Some(mode), Some(seed), &e))?;
            Ok(CellData {
                mode,
                seed,
                completed,
                kept,
            })
        })
        .collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(f) => failures.push(f),
        }
    }
    Ok((cells, failures))
}

/// Trains and evaluates every learner on every cell. `base` cells use the
/// dataset alone.
pub fn evaluate_cells(
    dataset: &OfflineDataset,
    cells: &[CellData],
    config: &ExperimentConfig,
    master: u64,
) -> (Vec<CellResult>, Vec<StageFailure>) {
    let mut jobs: Vec<(AugmentMode, usize, Option<&CellData>, Algorithm)> = Vec::new();
    for &mode in &config.modes {
        for seed in 0..config.seeds {
            let data = cells.iter().find(|c| c.mode == mode && c.seed == seed);
            if mode != AugmentMode::Base && data.is_none() {
                continue;
            }
            for &alg in &config.learners {
                jobs.push((mode, seed, data, alg));
            }
        }
    }
    let results: Vec<std::result::Result<CellResult, StageFailure>> = jobs
        .par_iter()
        .map(|&(mode, seed, data, learner)| {
            let fail = |e: Error| failure("eval", Some(mode), Some(seed), &e);
            let kept = data.map(|d| d.kept.as_slice()).unwrap_or(&[]);
            let train = augment(dataset, kept).map_err(fail)?;
            let (_, result) = train_and_evaluate(&train, config, learner, seed, master).map_err(fail)?;
            Ok(CellResult {
                mode,
                seed,
                learner,
                generated: data.map_or(0, |d| d.completed.len()),
                kept: kept.len(),
                mean_return: result.mean_return,
                success_rate: result.success_rate,
            })
        })
        .collect();
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => out.push(c),
            Err(f) => failures.push(f),
        }
    }
    (out, failures)
}

/// E_Dyn / E_L2D of the completed (pre-filter) trajectories, pooled per
/// generation mode.
pub fn cell_metrics(dataset: &OfflineDataset, cells: &[CellData], config: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    let spec = config.spec()?;
    let mut out = Vec::new();
    for &mode in config.modes.iter().filter(|m| m.gen_mode().is_some()) {
        let mut rows = Vec::new();
        let mut skipped = 0;
        for c in cells.iter().filter(|c| c.mode == mode) {
            let (r, s) = metric_rows(mode.as_str(), c.seed, &c.completed, dataset, &spec)?;
            rows.extend(r);
            skipped += s;
        }
        out.push(MetricReport::from_rows(mode.as_str(), rows, skipped));
    }
    Ok(out)
}

/// Full in-memory run. Dataset and model failures abort with the stage
/// name; per-cell failures are collected in the report. With `out`, the
/// report and a `config.json` snapshot are written there.
pub fn run_experiment(config: &ExperimentConfig, master: u64, out: Option<&Path>) -> Result<ExperimentReport> {
    let dataset = collect_dataset(config, master).map_err(|e| e.in_stage("collect"))?;
    let needs_models = config.modes.iter().any(|m| m.gen_mode().is_some());
    let (cells, mut failures) = if needs_models {
        let (pair, models) = rayon::join(
            || train_diffusion(&dataset, config, master),
            || train_completion(&dataset, config, master),
        );
        let pair = pair.map_err(|e| e.in_stage("train-diffusion"))?;
        let models = models.map_err(|e| e.in_stage("train-completion"))?;
        generate_cells(&pair, &models, &dataset, config, master)?
    } else {
        (Vec::new(), Vec::new())
    };
    let (results, eval_failures) = evaluate_cells(&dataset, &cells, config, master);
    failures.extend(eval_failures);
    let metrics = match cell_metrics(&dataset, &cells, config) {
        Ok(m) => m,
        Err(e) => {
            failures.push(failure("metrics", None, None, &e));
            Vec::new()
        }
    };
    let report = ExperimentReport {
        cells: results,
        metrics,
        failures,
    };
    if let Some(dir) = out {
        report.write(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(config)?)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.dataset.episodes = 8;
        c.diffusion.horizon = 3;
        c.diffusion.schedule.steps = 10;
        c.diffusion.train.hidden = vec![16, 16];
        c.diffusion.train.steps = 30;
        c.completion.hidden = vec![16];
        c.completion.fit.steps = 30;
        c.anchors.count = 12;
        c.learner.hidden = vec![16];
        c.learner.steps = 30;
        c.seeds = 2;
        c.eval_episodes = 4;
        c
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [AugmentMode::Base, AugmentMode::ForwardOnly, AugmentMode::BackwardOnly, AugmentMode::Bidirectional] {
            assert_eq!(AugmentMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(AugmentMode::parse("sideways").is_err());
    }

    #[test]
    fn tiny_run_fills_every_cell_and_writes_outputs() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&cfg, 7, Some(dir.path())).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.cells.len(), 3 * 2 * 2);
        for c in &report.cells {
            assert!((0.0..=1.0).contains(&c.success_rate));
            if c.mode == AugmentMode::Base {
                assert_eq!((c.generated, c.kept), (0, 0));
            } else {
                assert!(c.kept > 0 && c.kept <= c.generated);
            }
        }
        assert_eq!(report.metrics.len(), 2);
        for m in &report.metrics {
            assert!(m.rows.iter().all(|r| r.e_dyn >= 0.0 && r.e_l2d >= 0.0));
        }
        for f in ["cells.csv", "summary.csv", "metrics.csv", "metrics_summary.csv", "failures.json", "config.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let again = run_experiment(&cfg, 7, None).unwrap();
        assert_eq!(again.cells, report.cells);
    }

    #[test]
    fn base_cell_matches_plain_training() {
        let cfg = tiny();
        let d = collect_dataset(&cfg, 3).unwrap();
        let spec = cfg.spec().unwrap();
        let plain = train_policy(&d, &spec, Algorithm::Bc, &cfg.learner, learner_seed(3, Algorithm::Bc, 0)).unwrap();
        let (via_cell, _) = train_and_evaluate(&augment(&d, &[]).unwrap(), &cfg, Algorithm::Bc, 0, 3).unwrap();
        assert_eq!(plain, via_cell);
    }

    #[test]
    fn dataset_failure_names_the_stage() {
        let mut cfg = tiny();
        cfg.dataset.policy = "teleport".into();
        match run_experiment(&cfg, 0, None) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "collect"),
            other => panic!("expected a stage error, got {other:?}"),
        }
    }
}
