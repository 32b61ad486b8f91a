//! Run configuration: one TOML file holding the master seed, the output
//! directory and every experiment hyperparameter.
//!
//! Top-level keys are `seed`, `out`, `dataset_path` plus the experiment
//! fields (`env`, `learners`, `modes`, `seeds`, `eval_episodes`) and the
//! tables `[dataset]`, `[diffusion]`, `[completion]`, `[anchors]`,
//! `[generation]`, `[filter]`, `[learner]`. Missing keys take their
//! defaults; `bitraj init` prints the full default file.

use std::path::{Path, PathBuf};

use bitraj_core::envs::{MdpSpec, POLICY_IDS};
use bitraj_core::eval::{Algorithm, AugmentMode, ExperimentConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; every stage derives its randomness from it.
    pub seed: u64,
    /// Output directory, relative paths resolve against the working
    /// directory.
    pub out: PathBuf,
    /// Use this dataset file instead of collecting one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            dataset_path: None,
            experiment: ExperimentConfig::default(),
        }
    }
}

/// One offending config entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Issues(Vec<Issue>);

impl Issues {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Issue {
            field: field.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, field: &str, message: &str) {
        if !ok {
            self.push(field, message);
        }
    }

    fn hidden(&mut self, field: &str, sizes: &[usize]) {
        self.check(sizes.iter().all(|&h| h > 0), field, "layer widths must be positive");
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![Issue {
            field: "<file>".into(),
            message: e.message().to_string(),
        }]))?;
        Self::from_table(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Parses a raw table and validates it. Every problem found is
    /// reported together: unknown keys, unknown enum names, type errors and
    /// out-of-range values.
    pub fn from_table(mut raw: toml::Table) -> Result<Self> {
        let mut issues = Issues(Vec::new());
        prune_enum_list(&mut raw, "learners", &mut issues, |s| Algorithm::parse(s).is_ok());
        prune_enum_list(&mut raw, "modes", &mut issues, |s| AugmentMode::parse(s).is_ok());
        if let Some(train) = raw
            .get_mut("diffusion")
            .and_then(|d| d.as_table_mut())
            .and_then(|d| d.get_mut("train"))
            .and_then(|t| t.as_table_mut())
        {
            if let Some(target) = train.get("target") {
                if !matches!(target.as_str(), Some("epsilon" | "sample")) {
                    issues.push("diffusion.train.target", format!("unknown target {target}, expected \"epsilon\" or \"sample\""));
                    train.remove("target");
                }
            }
        }

        let parsed: Option<RunConfig> = match RunConfig::deserialize(toml::Value::Table(raw.clone())) {
            Ok(c) => Some(c),
            Err(e) => {
                issues.push("<file>", e.message().to_string());
                None
            }
        };
        if let Some(cfg) = &parsed {
            let known = toml::Value::try_from(cfg).expect("config serializes");
            unknown_keys(&toml::Value::Table(raw), &known, "", &mut issues);
            cfg.check(&mut issues);
        }
        match (parsed, issues.0.is_empty()) {
            (Some(cfg), true) => Ok(cfg),
            (_, _) => Err(CliError::Config(issues.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Issues(Vec::new());
        self.check(&mut issues);
        if issues.0.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(issues.0))
        }
    }

    fn check(&self, v: &mut Issues) {
        let e = &self.experiment;
        if MdpSpec::named(&e.env).is_err() {
            v.push("env", format!("unknown environment `{}`", e.env));
        }
        if self.dataset_path.is_none() {
            v.check(POLICY_IDS.contains(&e.dataset.policy.as_str()), "dataset.policy", &format!("unknown policy `{}`, expected one of {POLICY_IDS:?}", e.dataset.policy));
            v.check(e.dataset.episodes >= 1, "dataset.episodes", "must be at least 1");
        }

        let d = &e.diffusion;
        v.check(d.horizon >= 1, "diffusion.horizon", "must be at least 1");
        v.check(d.schedule.steps >= 1, "diffusion.schedule.steps", "must be at least 1");
        v.check(d.schedule.beta_start > 0.0 && d.schedule.beta_start < 1.0, "diffusion.schedule.beta_start", "must lie in (0, 1)");
        v.check(d.schedule.beta_end > 0.0 && d.schedule.beta_end < 1.0, "diffusion.schedule.beta_end", "must lie in (0, 1)");
        v.check(d.schedule.beta_start <= d.schedule.beta_end, "diffusion.schedule", "beta_start must not exceed beta_end");
        v.hidden("diffusion.train.hidden", &d.train.hidden);
        v.check(d.train.steps >= 1, "diffusion.train.steps", "must be at least 1");
        v.check(d.train.batch_size >= 1, "diffusion.train.batch_size", "must be at least 1");
        v.check(d.train.lr > 0.0, "diffusion.train.lr", "must be positive");
        v.check((0.0..=1.0).contains(&d.train.final_lr_ratio), "diffusion.train.final_lr_ratio", "must lie in [0, 1]");
        v.check((0.0..1.0).contains(&d.train.cond_dropout), "diffusion.train.cond_dropout", "must lie in [0, 1)");

        let c = &e.completion;
        v.hidden("completion.hidden", &c.hidden);
        v.check(c.fit.steps >= 1, "completion.fit.steps", "must be at least 1");
        v.check(c.fit.batch_size >= 1, "completion.fit.batch_size", "must be at least 1");
        v.check(c.fit.lr > 0.0, "completion.fit.lr", "must be positive");
        v.check((0.0..=1.0).contains(&c.fit.final_lr_ratio), "completion.fit.final_lr_ratio", "must lie in [0, 1]");
        v.check((0.0..1.0).contains(&c.holdout_fraction), "completion.holdout_fraction", "must lie in [0, 1)");

        v.check(e.anchors.count >= 1, "anchors.count", "must be at least 1");
        v.check((0.0..=1.0).contains(&e.anchors.quantile), "anchors.quantile", "must lie in [0, 1]");
        if e.generation.cfg_extrapolate {
            v.check(e.generation.guidance >= 0.0, "generation.guidance", "must be non-negative");
        } else {
            v.check((0.0..=1.0).contains(&e.generation.guidance), "generation.guidance", "must lie in [0, 1] unless cfg_extrapolate is set");
        }
        v.check(e.generation.chunk_size >= 1, "generation.chunk_size", "must be at least 1");

        let f = &e.filter;
        v.check(f.forest.n_trees >= 1, "filter.forest.n_trees", "must be at least 1");
        v.check(f.forest.subsample >= 2, "filter.forest.subsample", "must be at least 2");
        if let Some(c_ood) = f.c_ood {
            v.check(c_ood >= 1 && c_ood <= e.anchors.count, "filter.c_ood", "must lie in [1, anchors.count]");
            if let Some(c_greedy) = f.c_greedy {
                v.check(c_greedy <= c_ood, "filter.c_greedy", "must not exceed filter.c_ood");
            }
        }
        if let Some(c_greedy) = f.c_greedy {
            v.check(c_greedy >= 1, "filter.c_greedy", "must be at least 1");
        }

        let l = &e.learner;
        v.check(!e.learners.is_empty(), "learners", "at least one learner is required");
        v.hidden("learner.hidden", &l.hidden);
        v.check(l.steps >= 1, "learner.steps", "must be at least 1");
        v.check(l.batch_size >= 1, "learner.batch_size", "must be at least 1");
        v.check(l.actor_lr > 0.0, "learner.actor_lr", "must be positive");
        v.check(l.critic_lr > 0.0, "learner.critic_lr", "must be positive");
        v.check((0.0..=1.0).contains(&l.final_lr_ratio), "learner.final_lr_ratio", "must lie in [0, 1]");
        v.check(l.alpha >= 0.0, "learner.alpha", "must be non-negative");
        v.check(l.q_weight >= 0.0, "learner.q_weight", "must be non-negative");
        v.check((0.0..1.0).contains(&l.gamma), "learner.gamma", "must lie in [0, 1)");
        v.check(l.tau > 0.0 && l.tau <= 1.0, "learner.tau", "must lie in (0, 1]");
        v.check(l.policy_delay >= 1, "learner.policy_delay", "must be at least 1");
        v.check(l.target_noise >= 0.0, "learner.target_noise", "must be non-negative");
        v.check(l.noise_clip >= 0.0, "learner.noise_clip", "must be non-negative");

        v.check(!e.modes.is_empty(), "modes", "at least one mode is required");
        v.check(e.seeds >= 1, "seeds", "must be at least 1");
        v.check(e.eval_episodes >= 1, "eval_episodes", "must be at least 1");
    }

    /// Canonical JSON of a set of config sections, hashed into stage
    /// manifests.
    pub fn section(&self, keys: &[&str]) -> serde_json::Value {
        let full = serde_json::to_value(self).expect("config serializes");
        let mut out = serde_json::Map::new();
        for &k in keys {
            out.insert(k.to_string(), full.get(k).cloned().unwrap_or(serde_json::Value::Null));
        }
        serde_json::Value::Object(out)
    }
}

fn prune_enum_list(raw: &mut toml::Table, key: &str, issues: &mut Issues, ok: impl Fn(&str) -> bool) {
    let Some(toml::Value::Array(items)) = raw.get_mut(key) else {
        return;
    };
    let mut i = 0;
    items.retain(|v| {
        let keep = v.as_str().is_some_and(&ok);
        if !keep {
            issues.push(format!("{key}[{i}]"), format!("unknown name {v}"));
        }
        i += 1;
        keep
    });
}

fn unknown_keys(raw: &toml::Value, known: &toml::Value, prefix: &str, issues: &mut Issues) {
    let (Some(raw), Some(known)) = (raw.as_table(), known.as_table()) else {
        return;
    };
    for (k, v) in raw {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            Some(kv) => unknown_keys(v, kv, &path, issues),
            // Optional fields are absent from the serialized defaults.
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => issues.push(path, "unknown key"),
        }
    }
}

const OPTIONAL_KEYS: &[&str] = &["dataset_path", "filter.c_ood", "filter.c_greedy"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_template_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn optional_fields_parse() {
        let cfg = RunConfig::from_toml("dataset_path = \"d.jsonl\"\n[filter]\nc_ood = 10\nc_greedy = 5\n").unwrap();
        assert_eq!(cfg.experiment.filter.c_ood, Some(10));
        assert_eq!(cfg.dataset_path, Some(PathBuf::from("d.jsonl")));
    }

    #[test]
    fn every_offending_field_is_listed() {
        let text = r#"
env = "maze-9"
learners = ["bc", "dqn"]
modes = ["sideways", "bidirectional"]
seeds = 0
colour = "blue"
[diffusion]
horizon = 0
[diffusion.train]
target = "velocity"
[anchors]
quantile = 1.5
[learner]
gamma = 1.0
"#;
        let Err(CliError::Config(issues)) = RunConfig::from_toml(text) else {
            panic!("expected a config error");
        };
        let fields: Vec<&str> = issues.iter().map(|i| i.field.as_str()).collect();
        for f in ["env", "learners[1]", "modes[0]", "seeds", "colour", "diffusion.horizon", "diffusion.train.target", "anchors.quantile", "learner.gamma"] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
        assert_eq!(issues.len(), 9, "{issues:?}");
    }

    #[test]
    fn type_errors_are_reported() {
        assert!(matches!(RunConfig::from_toml("seeds = \"five\""), Err(CliError::Config(_))));
    }

    #[test]
    fn sections_select_keys() {
        let cfg = RunConfig::default();
        let s = cfg.section(&["env", "seeds"]);
        assert_eq!(s["env"], "chain-1d");
        assert_eq!(s["seeds"], 5);
        assert_eq!(s.as_object().unwrap().len(), 2);
    }
}
