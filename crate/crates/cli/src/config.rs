//! Flat run configuration, flag overrides and stage hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plan2vec_core::eval::{CostConfig, Method, TaskConfig};
use plan2vec_core::local_metric::{Architecture, LocalMetricConfig, Objective};
use plan2vec_core::maze::{LayoutKind, RolloutConfig};
use plan2vec_core::trainer::{TargetSearch, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "PLAN2VEC_OUT";
pub const CONFIG_FILE: &str = "config.json";

/// Keys that locate or schedule a run without changing its results.
const UNHASHED: [&str; 2] = ["out_dir", "workers"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub layout: LayoutKind,
    pub resolution: usize,
    pub n_rollouts: usize,
    pub horizon: usize,
    pub n_policies: usize,
    pub step_size: f32,

    pub local_architecture: Architecture,
    /// `regression` or `nce`.
    pub local_objective: String,
    pub local_nce_negatives: usize,
    pub local_hidden: Vec<usize>,
    pub local_embedding_dim: usize,
    pub local_epochs: usize,
    pub local_lr: f32,
    pub local_ratio: [usize; 3],
    pub local_batch: usize,
    pub local_hinge_far: bool,
    pub local_holdout_fraction: f64,
    /// Edge threshold, also the local metric's classification threshold.
    pub d0: f32,

    pub train_mode: TrainMode,
    pub train_target_search: TargetSearch,
    pub train_iterations: usize,
    pub train_batch_rollouts: usize,
    pub train_steps_per_rollout: usize,
    pub train_opt_epochs: usize,
    pub train_minibatch: usize,
    pub train_lr: f32,
    pub train_target_scale: Option<f32>,
    pub train_lookahead: usize,
    pub train_step_limit: usize,
    pub train_target_sync_interval: usize,
    pub train_latent_dim: usize,
    pub train_hidden: Vec<usize>,
    pub train_p: f32,

    pub eval_methods: Vec<Method>,
    pub eval_n_tasks: usize,
    pub eval_success_radius: f32,
    pub eval_step_budget: usize,
    pub eval_max_goal_hops: usize,
    pub eval_lookahead: usize,
    pub eval_frontier_cap: usize,
    pub eval_k_values: Vec<usize>,
    /// Methods traced over `eval_k_values`; random values gain nothing from lookahead.
    pub eval_sweep_methods: Vec<Method>,
    pub diagnostics_pairs: usize,
    pub cost_plan_lengths: Vec<usize>,
    pub cost_queries_per_length: usize,
    pub cost_step_limit: usize,

    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rollout = RolloutConfig::default();
        let local = LocalMetricConfig::default();
        let train = TrainConfig::default();
        let tasks = TaskConfig::default();
        let cost = CostConfig::default();
        RunConfig {
            layout: LayoutKind::CMaze,
            resolution: rollout.resolution,
            n_rollouts: rollout.n_rollouts,
            horizon: rollout.horizon,
            n_policies: rollout.n_policies,
            step_size: rollout.step_size,
            local_architecture: local.architecture,
            local_objective: "regression".into(),
            local_nce_negatives: 8,
            local_hidden: local.hidden,
            local_embedding_dim: local.embedding_dim,
            local_epochs: local.epochs,
            local_lr: local.lr,
            local_ratio: [local.ratio.0, local.ratio.1, local.ratio.2],
            local_batch: local.batch,
            local_hinge_far: local.hinge_far,
            local_holdout_fraction: local.holdout_fraction,
            d0: local.threshold,
            train_mode: train.mode,
            train_target_search: train.target_search,
            train_iterations: train.iterations,
            train_batch_rollouts: train.batch_rollouts,
            train_steps_per_rollout: train.steps_per_rollout,
            train_opt_epochs: train.opt_epochs,
            train_minibatch: train.minibatch,
            train_lr: train.lr,
            train_target_scale: train.target_scale,
            train_lookahead: train.lookahead,
            train_step_limit: train.step_limit,
            train_target_sync_interval: train.target_sync_interval,
            train_latent_dim: train.latent_dim,
            train_hidden: train.hidden,
            train_p: train.p,
            eval_methods: Method::ALL.to_vec(),
            eval_n_tasks: tasks.n_tasks,
            eval_success_radius: tasks.success_radius,
            eval_step_budget: tasks.step_budget,
            eval_max_goal_hops: tasks.max_goal_hops,
            eval_lookahead: 1,
            eval_frontier_cap: 1,
            eval_k_values: vec![1, 2, 3, 4],
            eval_sweep_methods: vec![Method::Plan2vecValue, Method::LocalMetricGreedy, Method::GraphTruthOracle],
            diagnostics_pairs: 1000,
            cost_plan_lengths: cost.plan_lengths,
            cost_queries_per_length: cost.queries_per_length,
            cost_step_limit: 50,
            seed: 0,
            out_dir: None,
            workers: None,
        }
    }
}

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenData,
    TrainLocal,
    BuildGraph,
    TrainPlan2vec,
    ExportEmbedding,
    Evaluate,
    PlanCost,
    Plot,
}

impl Stage {
    pub const PIPELINE: [Stage; 8] = [
        Stage::GenData,
        Stage::TrainLocal,
        Stage::BuildGraph,
        Stage::TrainPlan2vec,
        Stage::ExportEmbedding,
        Stage::Evaluate,
        Stage::PlanCost,
        Stage::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainLocal => "train-local",
            Stage::BuildGraph => "build-graph",
            Stage::TrainPlan2vec => "train-plan2vec",
            Stage::ExportEmbedding => "export-embedding",
            Stage::Evaluate => "evaluate",
            Stage::PlanCost => "plan-cost",
            Stage::Plot => "plot",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::PIPELINE.into_iter().find(|s| s.name() == name)
    }

    /// The stage whose artifact this one builds on, if any.
    fn parent(self) -> Option<Stage> {
        match self {
            Stage::GenData => None,
            Stage::TrainLocal => Some(Stage::GenData),
            Stage::BuildGraph => Some(Stage::TrainLocal),
            Stage::TrainPlan2vec => Some(Stage::BuildGraph),
            Stage::ExportEmbedding | Stage::Evaluate | Stage::PlanCost => Some(Stage::TrainPlan2vec),
            Stage::Plot => None,
        }
    }

    /// Config keys this stage reads (beyond those of its ancestors).
    fn owns(self, key: &str) -> bool {
        match self {
            Stage::GenData => matches!(key, "layout" | "resolution" | "n_rollouts" | "horizon" | "n_policies" | "step_size" | "seed"),
            Stage::TrainLocal => key.starts_with("local_") || key == "d0",
            Stage::BuildGraph => key == "d0",
            Stage::TrainPlan2vec => key.starts_with("train_"),
            Stage::ExportEmbedding | Stage::Plot => false,
            Stage::Evaluate => key.starts_with("eval_") || key == "diagnostics_pairs",
            Stage::PlanCost => key.starts_with("cost_"),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

impl RunConfig {
    fn hashed_fields(&self) -> Map<String, Value> {
        let Value::Object(mut map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config is a struct");
        };
        for key in UNHASHED {
            map.remove(key);
        }
        map
    }

    /// Hash of every result-affecting field.
    pub fn config_hash(&self) -> String {
        let canonical: BTreeMap<_, _> = self.hashed_fields().into_iter().collect();
        sha256_hex(serde_json::to_string(&canonical).expect("json").as_bytes())
    }

    /// Hash of the fields a stage and its ancestors read. Artifacts carry it,
    /// so a downstream stage can tell whether an input is stale.
    pub fn stage_hash(&self, stage: Stage) -> String {
        if stage == Stage::Plot {
            return self.config_hash();
        }
        let parent = stage.parent().map(|p| self.stage_hash(p)).unwrap_or_default();
        let own: BTreeMap<_, _> = self.hashed_fields().into_iter().filter(|(k, _)| stage.owns(k)).collect();
        let text = format!("{}|{}|{}", stage.name(), parent, serde_json::to_string(&own).expect("json"));
        sha256_hex(text.as_bytes())[..16].to_string()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| default_out_dir(self.layout, self.seed))
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            n_rollouts: self.n_rollouts,
            horizon: self.horizon,
            n_policies: self.n_policies,
            step_size: self.step_size,
            resolution: self.resolution,
            seed: self.seed,
        }
    }

    pub fn local_config(&self) -> CliResult<LocalMetricConfig> {
        let objective = match self.local_objective.as_str() {
            "regression" => Objective::Regression,
            "nce" => Objective::Nce {
                negatives: self.local_nce_negatives,
            },
            other => {
                return Err(CliError::Config(format!(
                    "local_objective must be \"regression\" or \"nce\", got {other:?}"
                )))
            }
        };
        let [a, b, c] = self.local_ratio;
        Ok(LocalMetricConfig {
            architecture: self.local_architecture,
            objective,
            hidden: self.local_hidden.clone(),
            embedding_dim: self.local_embedding_dim,
            epochs: self.local_epochs,
            lr: self.local_lr,
            ratio: (a, b, c),
            batch: self.local_batch,
            hinge_far: self.local_hinge_far,
            holdout_fraction: self.local_holdout_fraction,
            threshold: self.d0,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train_mode,
            target_search: self.train_target_search,
            iterations: self.train_iterations,
            batch_rollouts: self.train_batch_rollouts,
            steps_per_rollout: self.train_steps_per_rollout,
            opt_epochs: self.train_opt_epochs,
            minibatch: self.train_minibatch,
            lr: self.train_lr,
            target_scale: self.train_target_scale,
            lookahead: self.train_lookahead,
            step_limit: self.train_step_limit,
            target_sync_interval: self.train_target_sync_interval,
            latent_dim: self.train_latent_dim,
            hidden: self.train_hidden.clone(),
            p: self.train_p,
            seed: self.seed,
        }
    }

    pub fn task_config(&self) -> TaskConfig {
        TaskConfig {
            n_tasks: self.eval_n_tasks,
            success_radius: self.eval_success_radius,
            step_budget: self.eval_step_budget,
            max_goal_hops: self.eval_max_goal_hops,
            seed: self.seed,
        }
    }

    pub fn cost_config(&self) -> CostConfig {
        CostConfig {
            plan_lengths: self.cost_plan_lengths.clone(),
            queries_per_length: self.cost_queries_per_length,
            seed: self.seed,
        }
    }
}

pub fn default_out_dir(layout: LayoutKind, seed: u64) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-seed{}", layout.name(), seed))
}

/// Every config key with its default value, sorted by key.
pub fn config_keys() -> Vec<(String, Value)> {
    let Value::Object(map) = serde_json::to_value(RunConfig::default()).expect("config serializes") else {
        unreachable!("config is a struct");
    };
    map.into_iter().collect()
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Parses a flag value into JSON shaped like the key's default.
pub fn parse_flag_value(key: &str, raw: &str, default: &Value) -> CliResult<Value> {
    let bad = |why: String| CliError::Config(format!("--{} {raw:?}: {why}", flag_name(key)));
    match default {
        Value::Array(_) if !raw.trim_start().starts_with('[') => raw
            .split(',')
            .map(|item| {
                let item = item.trim();
                serde_json::from_str(item).or_else(|_| Ok(Value::String(item.to_string())))
            })
            .collect::<Result<Vec<Value>, serde_json::Error>>()
            .map(Value::Array)
            .map_err(|e| bad(e.to_string())),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        _ if raw == "none" => Ok(Value::Null),
        _ => match serde_json::from_str(raw) {
            Ok(v) => Ok(v),
            // bare words for enum-valued keys
            Err(_) => Ok(Value::String(raw.to_string())),
        },
    }
}

/// Layers `overrides` on top of `base` and validates the result.
pub fn merge(base: &Value, overrides: &Map<String, Value>) -> CliResult<RunConfig> {
    let mut merged = base.clone();
    let obj = merged.as_object_mut().ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
    for (k, v) in overrides {
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).map_err(|e| CliError::Config(format!("invalid config: {e}")))
}

pub fn load_config_file(path: &Path) -> CliResult<Value> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let Some(obj) = value.as_object_mut() else {
        return Err(CliError::Config(format!("{}: config must be a JSON object", path.display())));
    };
    // saved run configs carry their hash; it is derived, not an input
    obj.remove("config_hash");
    // validate keys early so typos surface with the file name
    serde_json::from_value::<RunConfig>(value.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_location_and_workers() {
        let a = RunConfig::default();
        let b = RunConfig {
            out_dir: Some("/elsewhere".into()),
            workers: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn stage_hashes_track_only_upstream_fields() {
        let a = RunConfig::default();
        let b = RunConfig {
            eval_n_tasks: 7,
            ..RunConfig::default()
        };
        assert_eq!(a.stage_hash(Stage::TrainPlan2vec), b.stage_hash(Stage::TrainPlan2vec));
        assert_ne!(a.stage_hash(Stage::Evaluate), b.stage_hash(Stage::Evaluate));
        let c = RunConfig { d0: 1.2, ..RunConfig::default() };
        assert_eq!(a.stage_hash(Stage::GenData), c.stage_hash(Stage::GenData));
        assert_ne!(a.stage_hash(Stage::BuildGraph), c.stage_hash(Stage::BuildGraph));
        assert_ne!(a.stage_hash(Stage::PlanCost), c.stage_hash(Stage::PlanCost));
    }

    #[test]
    fn flag_values_follow_default_shapes() {
        let keys: BTreeMap<String, Value> = config_keys().into_iter().collect();
        let v = parse_flag_value("eval_k_values", "1,2,4", &keys["eval_k_values"]).unwrap();
        assert_eq!(v, serde_json::json!([1, 2, 4]));
        let v = parse_flag_value("layout", "open", &keys["layout"]).unwrap();
        let mut o = Map::new();
        o.insert("layout".into(), v);
        o.insert("train_target_scale".into(), parse_flag_value("train_target_scale", "2.5", &keys["train_target_scale"]).unwrap());
        let cfg = merge(&serde_json::to_value(RunConfig::default()).unwrap(), &o).unwrap();
        assert_eq!(cfg.layout, LayoutKind::Open);
        assert_eq!(cfg.train_target_scale, Some(2.5));
        let methods = parse_flag_value("eval_methods", "random,plan2vec-value", &keys["eval_methods"]).unwrap();
        o.insert("eval_methods".into(), methods);
        let cfg = merge(&serde_json::to_value(RunConfig::default()).unwrap(), &o).unwrap();
        assert_eq!(cfg.eval_methods, vec![Method::Random, Method::Plan2vecValue]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut o = Map::new();
        o.insert("learning_rate".into(), serde_json::json!(1));
        assert!(merge(&serde_json::to_value(RunConfig::default()).unwrap(), &o).is_err());
    }
}
