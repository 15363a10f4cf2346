//! Benchmark evaluation, report files and the training-simulator driver
//! behind the command-line tool.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_corpus_dir, CorpusError};
use crate::embedding::EmbeddingProvider;
use crate::orchestrator::{run_batch, EpisodeConfig, OrchestratorError, Trajectory};
use crate::policy::{PolicyClient, PROMPT_TEMPLATE_VERSION};
use crate::retrieval::{RetrievalMode, Retriever, RetrieverConfig};
use crate::reward::{em_reward, f1_score, Stage};
use crate::trainer::{train_two_stage, SimEnv, TrainConfig, TrainError, TrainReport};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedDataset {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("malformed report at line {line}: {message}")]
    MalformedReport { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("question `{question_id}`: {source}")]
    Episode {
        question_id: String,
        #[source]
        source: OrchestratorError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    #[serde(rename = "id")]
    pub question_id: String,
    pub question: String,
    #[serde(rename = "golden_answers")]
    pub gold_answers: Vec<String>,
}

/// Reads a line-delimited `{"id", "question", "golden_answers"}` file.
/// Blank lines are skipped; ids must be unique and gold lists non-empty.
pub fn load_dataset(path: &Path) -> Result<Vec<BenchmarkRecord>, EvalError> {
    let file = File::open(path).map_err(io_error(path))?;
    let malformed = |line: usize, message: String| EvalError::MalformedDataset {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BenchmarkRecord =
            serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
        if record.gold_answers.is_empty() {
            return Err(malformed(i + 1, "golden_answers is empty".into()));
        }
        if !seen.insert(record.question_id.clone()) {
            return Err(malformed(i + 1, format!("duplicate id `{}`", record.question_id)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Dataset name used in reports: the file stem.
pub fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub version: u32,
    /// Unix seconds; absent in deterministic reports.
    pub generated_at: Option<u64>,
    pub prompt_template: String,
    pub budget: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub dataset: String,
    pub question_id: String,
    pub prediction: Option<String>,
    pub em: u8,
    pub f1: f64,
    pub retrieval_turns: usize,
    pub steps_used: usize,
    /// Sum of unit costs of executed searches.
    pub cost: f64,
    pub wall_seconds: f64,
    pub mode_histogram: BTreeMap<RetrievalMode, usize>,
}

impl QuestionRow {
    pub fn from_trajectory(dataset: &str, record: &BenchmarkRecord, t: &Trajectory) -> Self {
        let mut mode_histogram: BTreeMap<RetrievalMode, usize> =
            RetrievalMode::ALL.iter().map(|m| (*m, 0)).collect();
        for m in t.executed_modes() {
            *mode_histogram.entry(m).or_default() += 1;
        }
        let prediction = t.final_answer.clone();
        let answer = prediction.as_deref();
        Self {
            dataset: dataset.to_string(),
            question_id: record.question_id.clone(),
            em: answer.map_or(0, |a| em_reward(a, &record.gold_answers)),
            f1: answer.map_or(0.0, |a| f1_score(a, &record.gold_answers)),
            prediction,
            retrieval_turns: t.retrieval_turns,
            steps_used: t.steps_used,
            cost: t.total_retrieval_cost.unit_cost,
            wall_seconds: t.total_retrieval_cost.wall_seconds,
            mode_histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregate {
    pub dataset: String,
    pub questions: usize,
    pub mean_em: f64,
    pub mean_f1: f64,
    pub mean_turns: f64,
    pub mean_cost: f64,
    /// Share of executed searches per mode; all zero without searches.
    pub mode_fractions: BTreeMap<RetrievalMode, f64>,
}

/// Aggregates rows per dataset, datasets in first-appearance order.
pub fn aggregate_rows(rows: &[QuestionRow]) -> Vec<DatasetAggregate> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.dataset.as_str()) {
            order.push(&r.dataset);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let subset: Vec<&QuestionRow> = rows.iter().filter(|r| r.dataset == name).collect();
            let n = subset.len() as f64;
            let mean = |f: &dyn Fn(&QuestionRow) -> f64| subset.iter().map(|r| f(r)).sum::<f64>() / n;
            let mut counts: BTreeMap<RetrievalMode, usize> =
                RetrievalMode::ALL.iter().map(|m| (*m, 0)).collect();
            for r in &subset {
                for (m, c) in &r.mode_histogram {
                    *counts.entry(*m).or_default() += c;
                }
            }
            let searches: usize = counts.values().sum();
            let mode_fractions = counts
                .into_iter()
                .map(|(m, c)| {
                    let f = if searches == 0 { 0.0 } else { c as f64 / searches as f64 };
                    (m, f)
                })
                .collect();
            DatasetAggregate {
                dataset: name.to_string(),
                questions: subset.len(),
                mean_em: mean(&|r| f64::from(r.em)),
                mean_f1: mean(&|r| r.f1),
                mean_turns: mean(&|r| r.retrieval_turns as f64),
                mean_cost: mean(&|r| r.cost),
                mode_fractions,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine {
    Header(ReportHeader),
    Question(QuestionRow),
    Aggregate(DatasetAggregate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub rows: Vec<QuestionRow>,
    pub aggregates: Vec<DatasetAggregate>,
}

impl EvalReport {
    pub fn new(header: ReportHeader, rows: Vec<QuestionRow>) -> Self {
        let aggregates = aggregate_rows(&rows);
        Self {
            header,
            rows,
            aggregates,
        }
    }

    /// Header line, one line per question, then one aggregate line per dataset.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut line = |l: ReportLine| -> io::Result<()> {
            serde_json::to_writer(&mut out, &l)?;
            out.write_all(b"\n")
        };
        line(ReportLine::Header(self.header.clone()))?;
        for r in &self.rows {
            line(ReportLine::Question(r.clone()))?;
        }
        for a in &self.aggregates {
            line(ReportLine::Aggregate(a.clone()))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let file = File::create(path).map_err(io_error(path))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w).map_err(io_error(path))?;
        w.flush().map_err(io_error(path))
    }

    /// Parses a report and checks that stored aggregates match the rows.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut header = None;
        let mut rows = Vec::new();
        let mut stored = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine = serde_json::from_str(line).map_err(|e| EvalError::MalformedReport {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                ReportLine::Header(h) if header.is_none() && rows.is_empty() && stored.is_empty() => {
                    header = Some(h)
                }
                ReportLine::Header(_) => {
                    return Err(EvalError::MalformedReport {
                        line: i + 1,
                        message: "header must be the first line and appear once".into(),
                    })
                }
                ReportLine::Question(r) => rows.push(r),
                ReportLine::Aggregate(a) => stored.push(a),
            }
        }
        let header = header.ok_or(EvalError::MalformedReport {
            line: 1,
            message: "missing header".into(),
        })?;
        let report = Self::new(header, rows);
        if !stored.is_empty() && !aggregates_match(&stored, &report.aggregates, 1e-12) {
            return Err(EvalError::MalformedReport {
                line: 0,
                message: "aggregate lines disagree with question rows".into(),
            });
        }
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        Self::parse(&text)
    }
}

fn aggregates_match(a: &[DatasetAggregate], b: &[DatasetAggregate], tol: f64) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= tol;
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.dataset == y.dataset
                && x.questions == y.questions
                && close(x.mean_em, y.mean_em)
                && close(x.mean_f1, y.mean_f1)
                && close(x.mean_turns, y.mean_turns)
                && close(x.mean_cost, y.mean_cost)
                && x.mode_fractions.len() == y.mode_fractions.len()
                && x
                    .mode_fractions
                    .iter()
                    .zip(&y.mode_fractions)
                    .all(|((m, f), (n, g))| m == n && close(*f, *g))
        })
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub corpus_dir: PathBuf,
    pub dataset_path: PathBuf,
    pub episode: EpisodeConfig,
    pub retriever: RetrieverConfig,
    pub parallelism: usize,
    /// Omit the timestamp and zero all wall-clock timings.
    pub deterministic: bool,
}

/// Runs every question of one dataset through the orchestrator.
pub fn evaluate_records(
    dataset: &str,
    records: &[BenchmarkRecord],
    policy: &dyn PolicyClient,
    retriever: &Retriever,
    episode: &EpisodeConfig,
    parallelism: usize,
) -> Result<Vec<QuestionRow>, EvalError> {
    let questions: Vec<String> = records.iter().map(|r| r.question.clone()).collect();
    let results = run_batch(&questions, policy, retriever, episode, parallelism);
    records
        .iter()
        .zip(results)
        .map(|(record, result)| {
            let t = result.map_err(|source| EvalError::Episode {
                question_id: record.question_id.clone(),
                source,
            })?;
            Ok(QuestionRow::from_trajectory(dataset, record, &t))
        })
        .collect()
}

pub fn run_benchmark(
    config: &BenchmarkConfig,
    policy: &dyn PolicyClient,
    embedder: Arc<dyn EmbeddingProvider>,
) -> Result<EvalReport, EvalError> {
    let records = load_dataset(&config.dataset_path)?;
    let store = Arc::new(load_corpus_dir(&config.corpus_dir)?);
    let retriever = Retriever::new(store, embedder, config.retriever.clone());
    let name = dataset_name(&config.dataset_path);
    let mut rows = evaluate_records(
        &name,
        &records,
        policy,
        &retriever,
        &config.episode,
        config.parallelism,
    )?;
    let generated_at = if config.deterministic {
        for r in &mut rows {
            r.wall_seconds = 0.0;
        }
        None
    } else {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs())
    };
    let header = ReportHeader {
        version: REPORT_VERSION,
        generated_at,
        prompt_template: PROMPT_TEMPLATE_VERSION.to_string(),
        budget: config.episode.budget,
        top_k: config.episode.top_k,
    };
    Ok(EvalReport::new(header, rows))
}

const SUMMARY_COLUMNS: [&str; 9] = [
    "dataset", "questions", "em", "f1", "turns", "cost", "passage", "graph", "hybrid",
];

fn summary_cells(a: &DatasetAggregate) -> Vec<String> {
    let frac = |m| a.mode_fractions.get(&m).copied().unwrap_or(0.0);
    vec![
        a.dataset.clone(),
        a.questions.to_string(),
        format!("{:.4}", a.mean_em),
        format!("{:.4}", a.mean_f1),
        format!("{:.4}", a.mean_turns),
        format!("{:.4}", a.mean_cost),
        format!("{:.4}", frac(RetrievalMode::Passage)),
        format!("{:.4}", frac(RetrievalMode::Graph)),
        format!("{:.4}", frac(RetrievalMode::Hybrid)),
    ]
}

/// Plain-text table with one row per dataset.
pub fn render_summary_table(aggregates: &[DatasetAggregate]) -> String {
    let rows: Vec<Vec<String>> = aggregates.iter().map(summary_cells).collect();
    let widths: Vec<usize> = SUMMARY_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, h)| rows.iter().map(|r| r[i].len()).chain([h.len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut emit = |cells: &[String]| {
        let line: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    };
    emit(&SUMMARY_COLUMNS.map(String::from));
    for r in &rows {
        emit(r);
    }
    out
}

/// Per-question series for one dataset, tab-separated with a header.
pub fn render_series_tsv(rows: &[QuestionRow], dataset: &str) -> String {
    let mut out = String::from("question_id\tretrieval_turns\tf1\tem\tcost\n");
    for r in rows.iter().filter(|r| r.dataset == dataset) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.question_id, r.retrieval_turns, r.f1, r.em, r.cost
        );
    }
    out
}

pub fn render_summary_tsv(aggregates: &[DatasetAggregate]) -> String {
    let mut out = SUMMARY_COLUMNS.join("\t");
    out.push('\n');
    for a in aggregates {
        let frac = |m| a.mode_fractions.get(&m).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            a.dataset,
            a.questions,
            a.mean_em,
            a.mean_f1,
            a.mean_turns,
            a.mean_cost,
            frac(RetrievalMode::Passage),
            frac(RetrievalMode::Graph),
            frac(RetrievalMode::Hybrid)
        );
    }
    out
}

/// File-system safe version of a dataset name.
fn file_stem_for(dataset: &str) -> String {
    dataset
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Loads a report, returns its table, and writes `summary.tsv` plus one
/// `series_{dataset}.tsv` per dataset into `out_dir` when given.
pub fn report_summary(report_path: &Path, out_dir: Option<&Path>) -> Result<String, EvalError> {
    let report = EvalReport::load(report_path)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        let write = |name: String, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io_error(&path))
        };
        write("summary.tsv".into(), render_summary_tsv(&report.aggregates))?;
        for a in &report.aggregates {
            write(
                format!("series_{}.tsv", file_stem_for(&a.dataset)),
                render_series_tsv(&report.rows, &a.dataset),
            )?;
        }
    }
    Ok(render_summary_table(&report.aggregates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrainConfig {
    pub env: SimEnv,
    pub train: TrainConfig,
    /// Last stage to run: 1 trains stage 1 only, 2 runs both.
    pub final_stage: Stage,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub seeds: u64,
}

impl Default for SimTrainConfig {
    fn default() -> Self {
        Self {
            env: SimEnv::default(),
            train: TrainConfig::default(),
            final_stage: Stage::Two,
            stage1_steps: 20,
            stage2_steps: 20,
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub stage1_accuracy: f64,
    pub stage1_mean_turns: f64,
    pub stage1_mean_cost: f64,
    pub stage2_accuracy: Option<f64>,
    pub stage2_mean_turns: Option<f64>,
    pub stage2_mean_cost: Option<f64>,
    /// `(stage-1 end cost - stage-2 end cost) / stage-1 end cost`.
    pub cost_reduction: Option<f64>,
    pub accuracy_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub seeds: Vec<SeedSummary>,
    pub median_cost_reduction: Option<f64>,
    pub median_accuracy_delta: Option<f64>,
    pub median_turns_before: Option<f64>,
    pub median_turns_after: Option<f64>,
}

/// Median of the values; `None` when empty.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

fn summarize_seed(seed: u64, report: &TrainReport) -> SeedSummary {
    let s1 = report
        .last_update(Stage::One)
        .expect("stage 1 always has at least one update");
    let s2 = report.last_update(Stage::Two);
    SeedSummary {
        seed,
        baseline_accuracy: report.baseline.accuracy,
        stage1_accuracy: s1.accuracy,
        stage1_mean_turns: s1.mean_turns,
        stage1_mean_cost: s1.mean_cost,
        stage2_accuracy: s2.map(|u| u.accuracy),
        stage2_mean_turns: s2.map(|u| u.mean_turns),
        stage2_mean_cost: s2.map(|u| u.mean_cost),
        cost_reduction: s2.map(|u| {
            if s1.mean_cost > 0.0 {
                (s1.mean_cost - u.mean_cost) / s1.mean_cost
            } else {
                0.0
            }
        }),
        accuracy_delta: s2.map(|u| u.accuracy - s1.accuracy),
    }
}

/// Trains seeds `0..config.seeds`, writing `seed_{n}.jsonl` per seed and
/// `summary.json` into `out_dir`.
pub fn sim_train_cmd(config: &SimTrainConfig, out_dir: &Path) -> Result<SimSummary, EvalError> {
    fs::create_dir_all(out_dir).map_err(io_error(out_dir))?;
    let stage2_steps = match config.final_stage {
        Stage::One => 0,
        Stage::Two => config.stage2_steps,
    };
    let mut seeds = Vec::new();
    for seed in 0..config.seeds {
        let (_, report) = train_two_stage(&config.env, &config.train, config.stage1_steps, stage2_steps, seed)?;
        let path = out_dir.join(format!("seed_{seed}.jsonl"));
        let file = File::create(&path).map_err(io_error(&path))?;
        let mut w = BufWriter::new(file);
        report.write_jsonl(&mut w).map_err(io_error(&path))?;
        w.flush().map_err(io_error(&path))?;
        seeds.push(summarize_seed(seed, &report));
    }
    let summary = SimSummary {
        stage1_steps: config.stage1_steps,
        stage2_steps,
        median_cost_reduction: median(seeds.iter().filter_map(|s| s.cost_reduction)),
        median_accuracy_delta: median(seeds.iter().filter_map(|s| s.accuracy_delta)),
        median_turns_before: median(seeds.iter().filter(|s| s.stage2_mean_turns.is_some()).map(|s| s.stage1_mean_turns)),
        median_turns_after: median(seeds.iter().filter_map(|s| s.stage2_mean_turns)),
        seeds,
    };
    let path = out_dir.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, body + "\n").map_err(io_error(&path))?;
    Ok(summary)
}
