//! Pipeline stages. Each reads its inputs from the run directory, checks
//! their producing hash, writes its artifacts atomically, and appends a
//! record to `run.jsonl`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use plan2vec_core::eval::{self, EvalContext, EvalReport, LookaheadPoint, Method};
use plan2vec_core::exec::Execution;
use plan2vec_core::graph::{self, build_graph, TransitionGraph};
use plan2vec_core::io::{self, ArtifactMeta, SCHEMA_VERSION};
use plan2vec_core::local_metric::{self, heldout_accuracy, split_rollouts, LocalMetric};
use plan2vec_core::maze::{self, generate_rollouts, MazeLayout, TrajectoryDataset};
use plan2vec_core::tensor::checkpoint::MODEL_FILE;
use plan2vec_core::trainer::{export_embedding, train_plan2vec, GlobalMetric};
use serde::Serialize;
use serde_json::json;

use crate::config::{file_hash, RunConfig, Stage, CONFIG_FILE};
use crate::error::{CliError, CliResult};
use crate::plot;

pub const RUN_LOG: &str = "run.jsonl";
pub const DATASET_DIR: &str = "dataset";
pub const LOCAL_DIR: &str = "local_metric";
pub const GRAPH_DIR: &str = "graph";
pub const PLAN2VEC_DIR: &str = "plan2vec";
pub const DIAGNOSTICS_DIR: &str = "diagnostics";
pub const PLOTS_DIR: &str = "plots";
pub const LOCAL_METRICS: &str = "local_metric_metrics.jsonl";
pub const PLAN2VEC_METRICS: &str = "plan2vec_metrics.jsonl";
pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const LOOKAHEAD_CSV: &str = "lookahead_curve.csv";
pub const COST_CSV: &str = "planning_cost.csv";
pub const COST_SUMMARY: &str = "planning_cost_summary.json";
pub const LOCAL_SCATTER_CSV: &str = "local_score_scatter.csv";
pub const EMBEDDING_SCATTER_CSV: &str = "embedding_scatter.csv";
pub const SPEARMAN_CSV: &str = "spearman_pairs.csv";

/// One stage invocation, bound to a resolved config and run directory.
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub exec: Execution,
}

#[derive(Serialize)]
struct StageRecord<'a> {
    stage: &'a str,
    config_hash: String,
    duration_s: f64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

/// Header lines that make a CSV self-describing.
fn csv_header(hash: &str, columns: &str) -> String {
    format!("# schema_version={SCHEMA_VERSION}\n# config_hash={hash}\n{columns}\n")
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(io::write_atomic(path, text.as_bytes())?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("rows serialize"));
        text.push('\n');
    }
    write_text(path, &text)
}

impl Run {
    pub fn new(config: RunConfig) -> Self {
        let dir = config.out_dir();
        Run {
            config,
            dir,
            exec: Execution::Parallel,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn meta(&self, stage: Stage) -> ArtifactMeta {
        ArtifactMeta::new(self.config.stage_hash(stage))
    }

    /// Saves the resolved config before any stage runs.
    pub fn save_config(&self) -> CliResult<()> {
        let mut value = serde_json::to_value(&self.config).expect("config serializes");
        value["config_hash"] = json!(self.config.config_hash());
        // the directory is implied by where the file lives
        value.as_object_mut().expect("object").remove("out_dir");
        let mut text = serde_json::to_string_pretty(&value).expect("json");
        text.push('\n');
        write_text(&self.path(CONFIG_FILE), &text)
    }

    /// Loads an input artifact, checking it exists and was produced by the
    /// expected stage hash.
    fn load<T>(
        &self,
        stage: Stage,
        producer: Stage,
        dir: &str,
        header: &str,
        load: impl FnOnce(&Path) -> plan2vec_core::Result<(T, ArtifactMeta)>,
    ) -> CliResult<T> {
        let dir = self.path(dir);
        let header = dir.join(header);
        let expected = self.config.stage_hash(producer);
        if !header.exists() {
            return Err(CliError::MissingInput {
                stage: stage.name(),
                producer: producer.name(),
                path: header,
                expected,
            });
        }
        let (value, meta) = load(&dir)?;
        if meta.config_hash != expected {
            return Err(CliError::StaleInput {
                stage: stage.name(),
                producer: producer.name(),
                path: header,
                found: meta.config_hash,
                expected,
            });
        }
        Ok(value)
    }

    fn dataset(&self, stage: Stage) -> CliResult<TrajectoryDataset> {
        self.load(stage, Stage::GenData, DATASET_DIR, maze::MANIFEST_FILE, TrajectoryDataset::load)
    }

    fn local_metric(&self, stage: Stage) -> CliResult<LocalMetric> {
        self.load(stage, Stage::TrainLocal, LOCAL_DIR, MODEL_FILE, LocalMetric::load)
    }

    fn graph(&self, stage: Stage) -> CliResult<TransitionGraph> {
        self.load(stage, Stage::BuildGraph, GRAPH_DIR, graph::GRAPH_FILE, TransitionGraph::load)
    }

    fn global_metric(&self, stage: Stage) -> CliResult<GlobalMetric> {
        self.load(stage, Stage::TrainPlan2vec, PLAN2VEC_DIR, MODEL_FILE, GlobalMetric::load)
    }

    /// Runs one stage and appends its record to `run.jsonl`.
    pub fn run_stage(&self, stage: Stage) -> CliResult<()> {
        let started = Instant::now();
        let outcome = match stage {
            Stage::GenData => self.gen_data(),
            Stage::TrainLocal => self.train_local(),
            Stage::BuildGraph => self.build_graph(),
            Stage::TrainPlan2vec => self.train_plan2vec(),
            Stage::ExportEmbedding => self.export_embedding(),
            Stage::Evaluate => self.evaluate(),
            Stage::PlanCost => self.plan_cost(),
            Stage::Plot => self.plot_all(),
        }?;
        let mut inputs = BTreeMap::new();
        for p in &outcome.inputs {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            inputs.insert(self.relative(p), file_hash(&bytes));
        }
        let record = StageRecord {
            stage: stage.name(),
            config_hash: self.config.stage_hash(stage),
            duration_s: started.elapsed().as_secs_f64(),
            inputs,
            outputs: outcome.outputs.iter().map(|p| self.relative(p)).collect(),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        append_line(&self.path(RUN_LOG), &line)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.dir).unwrap_or(p).display().to_string()
    }

    fn dataset_files(&self) -> Vec<PathBuf> {
        [maze::MANIFEST_FILE, maze::ROLLOUTS_FILE, maze::OBSERVATIONS_FILE, maze::POSITIONS_FILE]
            .iter()
            .map(|f| self.path(DATASET_DIR).join(f))
            .collect()
    }

    fn model_files(&self, dir: &str) -> Vec<PathBuf> {
        [MODEL_FILE, plan2vec_core::tensor::checkpoint::WEIGHTS_FILE]
            .iter()
            .map(|f| self.path(dir).join(f))
            .collect()
    }

    fn graph_files(&self) -> Vec<PathBuf> {
        [graph::GRAPH_FILE, graph::EDGES_FILE].iter().map(|f| self.path(GRAPH_DIR).join(f)).collect()
    }

    fn gen_data(&self) -> CliResult<Outcome> {
        let layout = MazeLayout::new(self.config.layout);
        let ds = generate_rollouts(&layout, &self.config.rollout_config(), self.exec)?;
        ds.save(&self.path(DATASET_DIR), &self.meta(Stage::GenData))?;
        Ok(Outcome {
            inputs: vec![],
            outputs: self.dataset_files(),
        })
    }

    fn train_local(&self) -> CliResult<Outcome> {
        let ds = self.dataset(Stage::TrainLocal)?;
        let cfg = self.config.local_config()?;
        let (metric, report) = local_metric::train_local_metric(&ds, &cfg)?;
        metric.save(&self.path(LOCAL_DIR), self.meta(Stage::TrainLocal))?;
        write_jsonl(&self.path(LOCAL_METRICS), &report.epochs)?;
        let summary = json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config.stage_hash(Stage::TrainLocal),
            "heldout_accuracy": report.heldout_accuracy,
            "threshold": cfg.threshold,
            "class_means": report.class_means,
            "heldout_rollouts": report.heldout_rollouts,
        });
        io::write_json(&self.path(LOCAL_DIR).join("report.json"), &summary)?;
        let mut outputs = self.model_files(LOCAL_DIR);
        outputs.push(self.path(LOCAL_DIR).join("report.json"));
        outputs.push(self.path(LOCAL_METRICS));
        Ok(Outcome {
            inputs: self.dataset_files(),
            outputs,
        })
    }

    fn build_graph(&self) -> CliResult<Outcome> {
        let ds = self.dataset(Stage::BuildGraph)?;
        let metric = self.local_metric(Stage::BuildGraph)?;
        let scorer = metric.scorer(&ds, self.exec)?;
        let g = build_graph(&ds, &scorer, self.config.d0, self.exec)?;
        g.save(&self.path(GRAPH_DIR), &self.meta(Stage::BuildGraph))?;
        let mut inputs = self.dataset_files();
        inputs.extend(self.model_files(LOCAL_DIR));
        Ok(Outcome {
            inputs,
            outputs: self.graph_files(),
        })
    }

    fn train_plan2vec(&self) -> CliResult<Outcome> {
        let g = self.graph(Stage::TrainPlan2vec)?;
        let ds = self.dataset(Stage::TrainPlan2vec)?;
        let (metric, report) = train_plan2vec(&g, &ds, &self.config.train_config(), self.exec)?;
        metric.save(&self.path(PLAN2VEC_DIR), self.meta(Stage::TrainPlan2vec))?;
        write_jsonl(&self.path(PLAN2VEC_METRICS), &report.log)?;
        let summary = json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config.stage_hash(Stage::TrainPlan2vec),
            "mode": report.mode,
            "target_scale": report.target_scale,
            "reachable_fraction": report.reachable_fraction,
            "final_spearman_probe": report.final_spearman,
        });
        io::write_json(&self.path(PLAN2VEC_DIR).join("report.json"), &summary)?;
        let mut inputs = self.graph_files();
        inputs.extend(self.dataset_files());
        let mut outputs = self.model_files(PLAN2VEC_DIR);
        outputs.push(self.path(PLAN2VEC_DIR).join("report.json"));
        outputs.push(self.path(PLAN2VEC_METRICS));
        Ok(Outcome { inputs, outputs })
    }

    fn export_embedding(&self) -> CliResult<Outcome> {
        let metric = self.global_metric(Stage::ExportEmbedding)?;
        let ds = self.dataset(Stage::ExportEmbedding)?;
        let rows = export_embedding(&metric, &ds, self.exec)?;
        let dim = metric.latent_dim();
        let columns: Vec<String> = std::iter::once("id".to_string())
            .chain((0..dim).map(|i| format!("z{i}")))
            .chain(["gt_x".to_string(), "gt_y".to_string()])
            .collect();
        let mut text = csv_header(&self.config.stage_hash(Stage::ExportEmbedding), &columns.join(","));
        for (id, z, gt) in rows {
            write!(text, "{id}").expect("string write");
            for v in z {
                write!(text, ",{v}").expect("string write");
            }
            writeln!(text, ",{},{}", gt[0], gt[1]).expect("string write");
        }
        let path = self.path(EMBEDDING_CSV);
        write_text(&path, &text)?;
        let mut inputs = self.model_files(PLAN2VEC_DIR);
        inputs.extend(self.dataset_files());
        Ok(Outcome {
            inputs,
            outputs: vec![path],
        })
    }

    fn evaluate(&self) -> CliResult<Outcome> {
        let cfg = &self.config;
        let ds = self.dataset(Stage::Evaluate)?;
        let g = self.graph(Stage::Evaluate)?;
        let local = self.local_metric(Stage::Evaluate)?;
        let global = self.global_metric(Stage::Evaluate)?;
        let emb = global.embed_all(&ds, self.exec)?;
        let scorer = local.scorer(&ds, self.exec)?;
        let tasks = eval::sample_tasks(&g, &ds, &cfg.task_config(), self.exec)?;
        let ctx = EvalContext {
            graph: &g,
            dataset: &ds,
            global: Some(&emb),
            local: Some(&scorer),
            seed: cfg.seed,
        };
        let success = eval::run_success_eval(&ctx, &cfg.eval_methods, &tasks, cfg.eval_lookahead, cfg.eval_frontier_cap, self.exec)?;
        let mut curves: Vec<(Method, Vec<LookaheadPoint>)> = Vec::new();
        for &m in &cfg.eval_sweep_methods {
            curves.push((m, eval::run_lookahead_sweep(&ctx, m, &cfg.eval_k_values, &tasks, self.exec)?));
        }
        // same split the local metric was trained with
        let (_, held) = split_rollouts(&ds, cfg.local_holdout_fraction, cfg.seed)?;
        let accuracy = heldout_accuracy(&local, &ds, &held);
        let diag = eval::run_embedding_diagnostics(&emb, &scorer, &ds, &g, Some(accuracy), cfg.diagnostics_pairs, cfg.seed, self.exec);
        let hash = cfg.stage_hash(Stage::Evaluate);

        let report = EvalDocument {
            schema_version: SCHEMA_VERSION,
            config_hash: hash.clone(),
            layout: cfg.layout.name(),
            success: &success,
            lookahead: curves.iter().map(|(m, c)| (m.name(), c)).collect(),
            spearman_latent_vs_graph: diag.spearman,
            spearman_pairs: diag.spearman_pairs,
            local_heldout_accuracy: accuracy,
            local_threshold: local.threshold(),
        };
        let report_path = self.path(EVAL_REPORT);
        io::write_json(&report_path, &report)?;

        let mut curve = csv_header(&hash, "method,k,successes,tasks,success_rate,standard_error");
        for (m, points) in &curves {
            for p in points.iter() {
                writeln!(curve, "{},{},{},{},{},{}", m.name(), p.k, p.successes, p.tasks, p.success_rate, p.standard_error).expect("string write");
            }
        }
        let curve_path = self.path(LOOKAHEAD_CSV);
        write_text(&curve_path, &curve)?;

        let dd = self.path(DIAGNOSTICS_DIR);
        let mut scatter = csv_header(&hash, "i,j,gt_distance,local_score");
        for (i, j, d, s) in &diag.local_scatter {
            writeln!(scatter, "{i},{j},{d},{s}").expect("string write");
        }
        write_text(&dd.join(LOCAL_SCATTER_CSV), &scatter)?;
        let mut embed = csv_header(&hash, "id,z0,z1,gt_x,gt_y");
        for id in 0..ds.len() {
            let z = emb.row(id);
            let p = ds.position(id);
            writeln!(embed, "{id},{},{},{},{}", z[0], z.get(1).copied().unwrap_or(0.0), p[0], p[1]).expect("string write");
        }
        write_text(&dd.join(EMBEDDING_SCATTER_CSV), &embed)?;
        let pairs = eval::sample_reachable_pairs(&g, cfg.diagnostics_pairs, cfg.seed, self.exec);
        let mut sp = csv_header(&hash, "source,goal,graph_distance,latent_distance");
        for (s, t, d) in &pairs {
            writeln!(sp, "{s},{t},{d},{}", emb.distance(*s, *t)).expect("string write");
        }
        write_text(&dd.join(SPEARMAN_CSV), &sp)?;

        let mut inputs = self.dataset_files();
        inputs.extend(self.graph_files());
        inputs.extend(self.model_files(LOCAL_DIR));
        inputs.extend(self.model_files(PLAN2VEC_DIR));
        Ok(Outcome {
            inputs,
            outputs: vec![
                report_path,
                curve_path,
                dd.join(LOCAL_SCATTER_CSV),
                dd.join(EMBEDDING_SCATTER_CSV),
                dd.join(SPEARMAN_CSV),
            ],
        })
    }

    fn plan_cost(&self) -> CliResult<Outcome> {
        let cfg = &self.config;
        let ds = self.dataset(Stage::PlanCost)?;
        let g = self.graph(Stage::PlanCost)?;
        let global = self.global_metric(Stage::PlanCost)?;
        let emb = global.embed_all(&ds, self.exec)?;
        let queries = eval::sample_cost_queries(&g, &cfg.cost_config());
        if queries.is_empty() {
            return Err(CliError::Config("no planning-cost queries match cost_plan_lengths on this graph".into()));
        }
        let rows = eval::run_planning_cost(&g, &ds, &emb, global.target_scale(), &queries, cfg.cost_step_limit, self.exec);
        let hash = cfg.stage_hash(Stage::PlanCost);
        let mut text = csv_header(&hash, "query,planner,plan_length,cost,expansions,peak_frontier,suboptimality_ratio,success");
        for r in &rows {
            writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                r.query,
                r.planner.name(),
                r.plan_length,
                r.cost,
                r.expansions,
                r.peak_frontier,
                r.suboptimality_ratio,
                r.success
            )
            .expect("string write");
        }
        let csv_path = self.path(COST_CSV);
        write_text(&csv_path, &text)?;
        let summary = json!({
            "schema_version": SCHEMA_VERSION,
            "config_hash": hash,
            "planners": eval::summarize_cost(&rows),
        });
        let summary_path = self.path(COST_SUMMARY);
        io::write_json(&summary_path, &summary)?;
        let mut inputs = self.dataset_files();
        inputs.extend(self.graph_files());
        inputs.extend(self.model_files(PLAN2VEC_DIR));
        Ok(Outcome {
            inputs,
            outputs: vec![csv_path, summary_path],
        })
    }

    /// Renders every known CSV in the run directory into `plots/`.
    fn plot_all(&self) -> CliResult<Outcome> {
        let sources = [
            self.path(EMBEDDING_CSV),
            self.path(LOOKAHEAD_CSV),
            self.path(COST_CSV),
            self.path(DIAGNOSTICS_DIR).join(LOCAL_SCATTER_CSV),
            self.path(DIAGNOSTICS_DIR).join(SPEARMAN_CSV),
        ];
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for src in sources.iter().filter(|p| p.exists()) {
            let stem = src.file_stem().expect("file name").to_string_lossy().to_string();
            let out = self.path(PLOTS_DIR).join(format!("{stem}.svg"));
            plot::render_file(src, &out)?;
            inputs.push(src.clone());
            outputs.push(out);
        }
        if inputs.is_empty() {
            return Err(CliError::Plot(format!("no CSV artifacts to plot in {}", self.dir.display())));
        }
        Ok(Outcome { inputs, outputs })
    }
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    schema_version: u32,
    config_hash: String,
    layout: &'static str,
    success: &'a EvalReport,
    lookahead: BTreeMap<&'static str, &'a Vec<LookaheadPoint>>,
    spearman_latent_vs_graph: f64,
    spearman_pairs: usize,
    local_heldout_accuracy: f64,
    local_threshold: f32,
}

fn append_line(path: &Path, line: &str) -> CliResult<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    // one write per record, so a crash cannot leave half a line
    f.write_all(line.as_bytes()).map_err(|e| CliError::io(path, e))
}
