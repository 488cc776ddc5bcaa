//! Command-line surface. Every command writes its outputs atomically and
//! returns the text it prints.
//!
//! Exit codes: 0 success, 1 runtime failure (adapter or I/O), 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer, Serialize};

use crate::adapters::{
    AdapterError, Answerer, EndpointsConfig, Role, SentinelTts, TextProxyAsr, Transcriber,
    WireClient,
};
use crate::error::Error;
use crate::eval::{ablation_suite, evaluate, render_ablation, render_table, EvalReport};
use crate::kb::{load_kb, mix_seed, KnowledgeBase, KnowledgeSource};
use crate::linking::{
    build_entity_index, link, transcribe, EncoderChoice, LinkTraceRecord, DEFAULT_TOP_K,
};
use crate::pipeline::{Backends, LinkingMode, MockOracleAnswerer, Pipeline, PipelineConfig};
use crate::retrieval::{
    calibrate_threshold, default_grid, mean_f1, retrieve, score_pool, DevCase, RetrievalPolicy,
    RetrievalTrace,
};
use crate::synth::dataset::{read_manifest, to_jsonl, write_atomic, write_manifest, KbSummary};
use crate::synth::{
    emit_dataset, gen_r_aqa, generate, load_dataset, load_samples, synth_audio, AudioSource,
    Equivalence, Sample, SynthConfig, SynthManifest, TemplateTable,
};
use crate::Task;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEV_SPLIT_SALT: u64 = 0x6465_7673_706c_6974;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        CliError::Core(Error::Adapter(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Core(Error::Adapter(_) | Error::Io { .. }) => EXIT_RUNTIME,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSel {
    One(Task),
    All,
}

impl TaskSel {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskSel::One(t) => vec![t],
            TaskSel::All => Task::ALL.to_vec(),
        }
    }
}

impl FromStr for TaskSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(TaskSel::All);
        }
        s.parse().map(TaskSel::One)
    }
}

/// `--threshold` value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdArg {
    Fixed(f64),
    Calibrate,
    Gold,
}

impl FromStr for ThresholdArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "calibrate" => Ok(ThresholdArg::Calibrate),
            other => match other.parse::<RetrievalPolicy>()? {
                RetrievalPolicy::Threshold(t) => Ok(ThresholdArg::Fixed(t)),
                RetrievalPolicy::Gold => Ok(ThresholdArg::Gold),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Local,
    Remote,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "local" | "mock" | "tfidf" => Ok(Backend::Local),
            "remote" => Ok(Backend::Remote),
            _ => Err(format!("unknown backend {s:?} (expected local or remote)")),
        }
    }
}

fn parsed<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: fmt::Display,
{
    Option::<String>::deserialize(d)?
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .transpose()
}

/// Flags shared by every command. The same keys may appear in a TOML run
/// config; flags win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// Triplet knowledge base (TSV or JSON lines)
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Dataset file or synthesis output directory
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output file or directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// s, m, r or all
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub task: Option<TaskSel>,
    /// name, partial=<f>[:<seed>] or full
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub knowledge: Option<KnowledgeSource>,
    /// Leave knowledge out of prompts
    #[arg(long)]
    pub no_knowledge: bool,
    /// predicted or oracle
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub linking: Option<LinkingMode>,
    /// A value in [-1, 1], "calibrate" or "gold"
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub threshold: Option<ThresholdArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Read text-proxy audio references instead of calling a recognizer
    #[arg(long)]
    pub text_proxy: bool,
    /// Character noise applied to text-proxy transcripts
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// exact or decade
    #[arg(long)]
    pub equivalence: Option<String>,
    /// Extra question templates (TOML)
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Synthesis settings (TOML)
    #[arg(long)]
    pub synth_config: Option<PathBuf>,
    /// local (mock oracle) or remote
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub answerer: Option<Backend>,
    /// local (TF-IDF) or remote
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub encoder: Option<Backend>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Adapter endpoint config (TOML)
    #[arg(long, env = "AUDIOPEDIA_ENDPOINTS")]
    pub endpoints: Option<PathBuf>,
}

impl RunArgs {
    /// Fills unset flags from `file`.
    pub fn merged(self, file: RunArgs) -> RunArgs {
        RunArgs {
            kb: self.kb.or(file.kb),
            dataset: self.dataset.or(file.dataset),
            out: self.out.or(file.out),
            task: self.task.or(file.task),
            knowledge: self.knowledge.or(file.knowledge),
            no_knowledge: self.no_knowledge || file.no_knowledge,
            linking: self.linking.or(file.linking),
            threshold: self.threshold.or(file.threshold),
            seed: self.seed.or(file.seed),
            text_proxy: self.text_proxy || file.text_proxy,
            noise_rate: self.noise_rate.or(file.noise_rate),
            equivalence: self.equivalence.or(file.equivalence),
            templates: self.templates.or(file.templates),
            synth_config: self.synth_config.or(file.synth_config),
            answerer: self.answerer.or(file.answerer),
            encoder: self.encoder.or(file.encoder),
            max_in_flight: self.max_in_flight.or(file.max_in_flight),
            endpoints: self.endpoints.or(file.endpoints),
        }
    }

    fn kb_path(&self) -> CliResult<&Path> {
        self.kb.as_deref().ok_or_else(|| usage("--kb is required"))
    }

    fn out_path(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| usage("--out is required"))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "audiopedia",
    version,
    about = "Knowledge-grounded audio QA toolkit"
)]
pub struct Cli {
    /// Run config (TOML) supplying defaults for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a knowledge base and print its statistics
    Ingest(RunArgs),
    /// Generate benchmark datasets and a manifest
    Synth(RunArgs),
    /// Attach audio references to a synthesized dataset
    Tts(TtsArgs),
    /// Link dataset inputs to entities and report linking accuracy
    Link(RunArgs),
    /// Run threshold retrieval over r-AQA pools
    Retrieve(RunArgs),
    /// Run the answering pipeline and score it
    Eval(RunArgs),
    /// Compare knowledge sources for linking and answering
    Ablate(AblateArgs),
    /// Render tables from saved reports
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TtsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Use the built-in sentinel synthesizer
    #[arg(long)]
    pub sentinel: bool,
    /// Directory for sentinel WAV files
    #[arg(long)]
    pub wav_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Knowledge sources, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = default_sources())]
    pub sources: Vec<KnowledgeSource>,
    /// Skip the oracle-linking row
    #[arg(long)]
    pub no_oracle: bool,
}

fn default_sources() -> Vec<KnowledgeSource> {
    vec![
        KnowledgeSource::NameOnly,
        KnowledgeSource::Partial {
            fraction: 0.2,
            seed: 0,
        },
        KnowledgeSource::Full,
    ]
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// report.json / ablation.json files or directories holding them
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

fn load_run_config(path: Option<&Path>) -> CliResult<RunArgs> {
    let Some(path) = path else {
        return Ok(RunArgs::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

fn endpoints(args: &RunArgs) -> CliResult<EndpointsConfig> {
    let mut cfg = match &args.endpoints {
        Some(p) => EndpointsConfig::load(p)?,
        None => EndpointsConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    cfg.validate()?;
    Ok(cfg)
}

fn client(args: &RunArgs, role: Role) -> CliResult<WireClient> {
    let cfg = endpoints(args)?;
    let ep = cfg.get(role).ok_or_else(|| {
        usage(format!(
            "no {role} endpoint configured (use --endpoints or AUDIOPEDIA_{}_URL)",
            role.as_str().to_uppercase()
        ))
    })?;
    Ok(WireClient::new(ep.clone())?)
}

fn asr(args: &RunArgs) -> CliResult<Box<dyn Transcriber>> {
    if args.text_proxy {
        let rate = args.noise_rate.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&rate) {
            return Err(usage(format!("--noise-rate {rate} outside [0, 1]")));
        }
        return Ok(Box::new(TextProxyAsr::new(rate, args.seed())));
    }
    if args.noise_rate.is_some() {
        return Err(usage("--noise-rate needs --text-proxy"));
    }
    Ok(Box::new(client(args, Role::Asr)?))
}

fn encoder(args: &RunArgs) -> CliResult<EncoderChoice> {
    Ok(match args.encoder.unwrap_or_default() {
        Backend::Local => EncoderChoice::TfIdf,
        Backend::Remote => EncoderChoice::External(Arc::new(client(args, Role::Encode)?)),
    })
}

fn equivalence(args: &RunArgs, manifest: Option<&SynthManifest>) -> CliResult<Equivalence> {
    match &args.equivalence {
        Some(name) => Equivalence::from_name(name).ok_or_else(|| {
            usage(format!(
                "unknown equivalence {name:?} (expected exact or decade)"
            ))
        }),
        None => Ok(manifest.map(|m| m.equivalence.clone()).unwrap_or_default()),
    }
}

fn synth_config(args: &RunArgs) -> CliResult<SynthConfig> {
    let mut cfg = match &args.synth_config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.equivalence.is_some() {
        cfg.yes_equivalence = equivalence(args, None)?;
    }
    if let Some(p) = &args.templates {
        cfg.templates = cfg.templates.merged(TemplateTable::load(p)?);
    }
    Ok(cfg)
}

fn load_kb_arg(args: &RunArgs) -> CliResult<KnowledgeBase> {
    Ok(load_kb(args.kb_path()?)?.0)
}

fn load_data(args: &RunArgs, default: TaskSel) -> CliResult<(Vec<Sample>, Option<SynthManifest>)> {
    let path = args
        .dataset
        .as_deref()
        .ok_or_else(|| usage("--dataset is required"))?;
    let manifest = if path.is_dir() {
        Some(read_manifest(path)?)
    } else {
        None
    };
    let tasks = args.task.unwrap_or(default).tasks();
    let samples: Vec<Sample> = load_samples(path)?
        .into_iter()
        .filter(|s| tasks.contains(&s.task))
        .collect();
    if samples.is_empty() {
        return Err(CliError::Core(Error::EmptyDataset));
    }
    Ok((samples, manifest))
}

pub fn cmd_ingest(args: &RunArgs) -> CliResult<String> {
    let (kb, stats) = load_kb(args.kb_path()?)?;
    if let Some(out) = &args.out {
        write_json(out, &kb)?;
    }
    Ok(format!(
        "rows {}\nentities {}\ntriplets {}\nduplicates dropped {}\n",
        stats.rows, stats.entities, stats.triplets, stats.duplicates_dropped
    ))
}

pub fn cmd_synth(args: &RunArgs) -> CliResult<String> {
    let kb = load_kb_arg(args)?;
    if args.seed.is_none() {
        return Err(usage("--seed is required for synth"));
    }
    let out = args.out_path()?;
    let config = synth_config(args)?;
    let mut datasets = Vec::new();
    let mut text = String::new();
    for task in args.task.unwrap_or(TaskSel::All).tasks() {
        let mut samples = generate(&kb, &config, task)?;
        if args.text_proxy {
            synth_audio(&mut samples, Some(AudioSource::TextProxy))?;
        }
        let m = emit_dataset(&samples, &out.join(format!("{task}.jsonl")))?;
        text += &format!(
            "{}: {} samples, {} unique answers ({})\n",
            task.title(),
            m.samples,
            m.unique_answers,
            m.answer_type
        );
        datasets.push(m);
    }
    write_manifest(
        out,
        &SynthManifest {
            seed: config.seed,
            equivalence: config.yes_equivalence.clone(),
            kb: KbSummary {
                entities: kb.len(),
                triplets: kb.triplet_count(),
            },
            datasets,
        },
    )?;
    Ok(text)
}

pub fn cmd_tts(args: &TtsArgs) -> CliResult<String> {
    let run = &args.run;
    let dir = run
        .dataset
        .as_deref()
        .ok_or_else(|| usage("--dataset (a synthesis directory) is required"))?;
    let mut manifest = read_manifest(dir)?;
    let out = run.out.as_deref().unwrap_or(dir);
    let sentinel = SentinelTts {
        out_dir: args.wav_dir.clone(),
    };
    let remote;
    let source = if run.text_proxy {
        Some(AudioSource::TextProxy)
    } else if args.sentinel {
        Some(AudioSource::Speech(&sentinel))
    } else if endpoints(run)?.get(Role::Tts).is_some() {
        remote = client(run, Role::Tts)?;
        Some(AudioSource::Speech(&remote))
    } else {
        None
    };
    let mut failures = Vec::new();
    let mut synthesized = 0;
    for d in manifest.datasets.iter_mut() {
        let mut samples = load_dataset(&dir.join(&d.file))?;
        let report = synth_audio(&mut samples, source)?;
        synthesized += report.synthesized;
        failures.extend(report.failures);
        *d = emit_dataset(&samples, &out.join(&d.file))?;
    }
    write_manifest(out, &manifest)?;
    if !failures.is_empty() {
        write_atomic(&out.join("audio_failures.jsonl"), &to_jsonl(&failures))?;
        return Err(CliError::Runtime(format!(
            "{} of {} inputs failed; see audio_failures.jsonl",
            failures.len(),
            failures.len() + synthesized
        )));
    }
    Ok(format!("synthesized {synthesized} inputs\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub knowledge_source: KnowledgeSource,
    pub samples: usize,
    pub ael_accuracy: f64,
}

pub fn cmd_link(args: &RunArgs) -> CliResult<String> {
    let kb = load_kb_arg(args)?;
    let (samples, _) = load_data(args, TaskSel::All)?;
    let out = args.out_path()?;
    let asr = asr(args)?;
    let source = args.knowledge.unwrap_or(KnowledgeSource::Full);
    let index = build_entity_index(&kb, source, &encoder(args)?)?;
    let mut trace = Vec::new();
    let (mut hits, mut scored) = (0usize, 0usize);
    for s in &samples {
        let transcripts: Vec<String> = (0..s.inputs.len())
            .map(|i| transcribe(&s.audio_ref_or_proxy(i), asr.as_ref()))
            .collect::<Result<_, _>>()?;
        let groups: Vec<(usize, String)> = match s.task {
            Task::SAqa => vec![(0, transcripts.join(" "))],
            _ => transcripts.into_iter().enumerate().collect(),
        };
        let mut all_correct = true;
        for (i, text) in groups {
            let result = link(&text, &index)?;
            let gold = &s.inputs[i].gold_entity_name;
            all_correct &= kb.lookup(gold) == Some(result.chosen);
            trace.push(LinkTraceRecord::new(
                &s.id,
                i,
                &result,
                Some(gold),
                &index,
                DEFAULT_TOP_K,
            ));
        }
        if s.task != Task::RAqa {
            scored += 1;
            hits += all_correct as usize;
        }
    }
    let summary = LinkSummary {
        knowledge_source: source,
        samples: scored,
        ael_accuracy: if scored == 0 {
            0.0
        } else {
            hits as f64 / scored as f64
        },
    };
    write_atomic(&out.join("link_trace.jsonl"), &to_jsonl(&trace))?;
    write_json(&out.join("link_summary.json"), &summary)?;
    Ok(format!(
        "{}: AEL accuracy {:.3} over {} samples\n",
        source.label(),
        summary.ael_accuracy,
        summary.samples
    ))
}

/// Threshold maximizing mean F1 on a freshly generated r-AQA dev split.
fn calibrate(
    args: &RunArgs,
    kb: &KnowledgeBase,
    asr: &dyn Transcriber,
    encoder: &EncoderChoice,
) -> CliResult<f64> {
    let mut cfg = synth_config(args)?;
    cfg.seed = mix_seed(args.seed(), DEV_SPLIT_SALT);
    let dev = gen_r_aqa(kb, &cfg)?;
    let mut cases = Vec::with_capacity(dev.len());
    for s in &dev {
        let transcripts: Vec<String> = if args.text_proxy {
            (0..s.inputs.len())
                .map(|i| transcribe(&s.audio_ref_or_proxy(i), asr))
                .collect::<Result<_, _>>()?
        } else {
            s.inputs.iter().map(|i| i.sentence.clone()).collect()
        };
        cases.push(DevCase {
            scores: score_pool(&s.question, &transcripts, encoder)?,
            gold: s.gold_relevant(),
        });
    }
    Ok(calibrate_threshold(&cases, &default_grid())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub threshold: f64,
    pub calibrated: bool,
    pub samples: usize,
    pub mean_f1: f64,
}

pub fn cmd_retrieve(args: &RunArgs) -> CliResult<String> {
    let (samples, _) = load_data(args, TaskSel::One(Task::RAqa))?;
    let out = args.out_path()?;
    let asr = asr(args)?;
    let encoder = encoder(args)?;
    let (threshold, calibrated) = match args.threshold.unwrap_or(ThresholdArg::Calibrate) {
        ThresholdArg::Fixed(t) => (t, false),
        ThresholdArg::Calibrate => (
            calibrate(args, &load_kb_arg(args)?, asr.as_ref(), &encoder)?,
            true,
        ),
        ThresholdArg::Gold => return Err(usage("retrieve needs a numeric threshold or calibrate")),
    };
    let mut traces = Vec::new();
    let mut cases = Vec::new();
    for s in &samples {
        let transcripts: Vec<String> = (0..s.inputs.len())
            .map(|i| transcribe(&s.audio_ref_or_proxy(i), asr.as_ref()))
            .collect::<Result<_, _>>()?;
        let r = retrieve(&s.question, &transcripts, &encoder, threshold)?;
        traces.push(RetrievalTrace::new(&s.id, &r, &s.gold_relevant(), false));
        cases.push(DevCase {
            scores: r.scores,
            gold: s.gold_relevant(),
        });
    }
    let summary = RetrievalSummary {
        threshold,
        calibrated,
        samples: samples.len(),
        mean_f1: mean_f1(&cases, threshold)?,
    };
    write_atomic(&out.join("retrieval.jsonl"), &to_jsonl(&traces))?;
    write_json(&out.join("retrieval_summary.json"), &summary)?;
    Ok(format!(
        "threshold {threshold}{}: mean F1 {:.3} over {} samples\n",
        if calibrated { " (calibrated)" } else { "" },
        summary.mean_f1,
        summary.samples
    ))
}

fn answerer(
    args: &RunArgs,
    kb: &KnowledgeBase,
    manifest: Option<&SynthManifest>,
) -> CliResult<(String, Box<dyn Answerer>)> {
    Ok(match args.answerer.unwrap_or_default() {
        Backend::Local => (
            "mock-oracle".to_string(),
            Box::new(MockOracleAnswerer::from_kb(
                kb,
                equivalence(args, manifest)?,
            )),
        ),
        Backend::Remote => ("remote".to_string(), Box::new(client(args, Role::Answer)?)),
    })
}

fn pipeline_config(
    args: &RunArgs,
    samples: &[Sample],
    kb: &KnowledgeBase,
    asr: &dyn Transcriber,
    encoder: &EncoderChoice,
) -> CliResult<PipelineConfig> {
    let has_pools = samples.iter().any(|s| s.task == Task::RAqa);
    let retrieval = match args.threshold {
        Some(ThresholdArg::Fixed(t)) => RetrievalPolicy::Threshold(t),
        Some(ThresholdArg::Gold) => RetrievalPolicy::Gold,
        Some(ThresholdArg::Calibrate) | None if has_pools => {
            RetrievalPolicy::Threshold(calibrate(args, kb, asr, encoder)?)
        }
        _ => RetrievalPolicy::default(),
    };
    let defaults = PipelineConfig::default();
    Ok(PipelineConfig {
        knowledge_enabled: !args.no_knowledge,
        knowledge_source: args.knowledge.unwrap_or(defaults.knowledge_source),
        linking_mode: args.linking.unwrap_or_default(),
        retrieval,
        max_in_flight: args.max_in_flight.unwrap_or(defaults.max_in_flight),
        ..defaults
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: EvalReport,
}

/// Outputs are kept, but any failed sample makes the run a runtime failure.
fn failed_samples<'a>(
    table: &str,
    reports: impl Iterator<Item = &'a EvalReport>,
) -> CliResult<String> {
    let failed: usize = reports.flat_map(|r| &r.tasks).map(|t| t.failures).sum();
    if failed > 0 {
        print!("{table}");
        return Err(CliError::Runtime(format!(
            "{failed} samples failed; see the error fields in report rows"
        )));
    }
    Ok(table.to_string())
}

pub fn cmd_eval(args: &RunArgs) -> CliResult<String> {
    let kb = load_kb_arg(args)?;
    let (samples, manifest) = load_data(args, TaskSel::All)?;
    let out = args.out_path()?;
    let asr = asr(args)?;
    let encoder = encoder(args)?;
    let (label, answerer) = answerer(args, &kb, manifest.as_ref())?;
    let config = pipeline_config(args, &samples, &kb, asr.as_ref(), &encoder)?;
    let index = match config.linking_mode {
        LinkingMode::Predicted => Some(build_entity_index(&kb, config.knowledge_source, &encoder)?),
        LinkingMode::Oracle => None,
    };
    let pipeline = Pipeline {
        kb: &kb,
        index: index.as_ref(),
        config: &config,
        backends: Backends {
            asr: asr.as_ref(),
            answerer: answerer.as_ref(),
            retrieval_encoder: &encoder,
        },
    };
    let evaluation = evaluate(&samples, &pipeline)?;
    let records: Vec<_> = evaluation.records.iter().flatten().cloned().collect();
    let traces: Vec<RetrievalTrace> = samples
        .iter()
        .zip(&evaluation.records)
        .filter_map(|(s, r)| {
            let r = r.as_ref()?;
            let retrieval = r.retrieval.as_ref()?;
            Some(RetrievalTrace::new(
                &s.id,
                retrieval,
                &s.gold_relevant(),
                config.retrieval == RetrievalPolicy::Gold,
            ))
        })
        .collect();
    let report = LabeledReport {
        label,
        report: evaluation.report,
    };
    let table = render_table(&[(report.label.clone(), report.report.clone())]);
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("answers.jsonl"), &to_jsonl(&records))?;
    if !traces.is_empty() {
        write_atomic(&out.join("retrieval.jsonl"), &to_jsonl(&traces))?;
    }
    write_atomic(&out.join("table.txt"), table.as_bytes())?;
    failed_samples(&table, std::iter::once(&report.report))
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<String> {
    let run = &args.run;
    let kb = load_kb_arg(run)?;
    let (samples, manifest) = load_data(run, TaskSel::One(Task::SAqa))?;
    let out = run.out_path()?;
    let asr = asr(run)?;
    let encoder = encoder(run)?;
    let (_, answerer) = answerer(run, &kb, manifest.as_ref())?;
    let base = pipeline_config(run, &samples, &kb, asr.as_ref(), &encoder)?;
    let sources: Vec<KnowledgeSource> = args
        .sources
        .iter()
        .map(|s| match (s, run.seed) {
            (KnowledgeSource::Partial { .. }, Some(seed)) => s.with_seed(seed),
            _ => *s,
        })
        .collect();
    let backends = Backends {
        asr: asr.as_ref(),
        answerer: answerer.as_ref(),
        retrieval_encoder: &encoder,
    };
    let reports = ablation_suite(
        &samples,
        &kb,
        &sources,
        &base,
        backends,
        &encoder,
        !args.no_oracle,
    )?;
    let labeled: Vec<LabeledReport> = reports
        .iter()
        .map(|(label, report)| LabeledReport {
            label: label.clone(),
            report: report.clone(),
        })
        .collect();
    let table = render_ablation(&reports);
    write_json(&out.join("ablation.json"), &labeled)?;
    write_atomic(&out.join("ablation.txt"), table.as_bytes())?;
    failed_samples(&table, reports.iter().map(|(_, r)| r))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| {
        CliError::Core(Error::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })
    })
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<String> {
    let mut evals = Vec::new();
    let mut text = String::new();
    for path in &args.paths {
        let (path, ablation) = if path.is_dir() {
            let ab = path.join("ablation.json");
            if ab.exists() {
                (ab, true)
            } else {
                (path.join("report.json"), false)
            }
        } else {
            let ab = path.file_name().is_some_and(|f| f == "ablation.json");
            (path.clone(), ab)
        };
        if ablation {
            let rows: Vec<LabeledReport> = read_json(&path)?;
            let rows: Vec<(String, EvalReport)> =
                rows.into_iter().map(|r| (r.label, r.report)).collect();
            text += &render_ablation(&rows);
            text.push('\n');
        } else {
            let r: LabeledReport = read_json(&path)?;
            evals.push((r.label, r.report));
        }
    }
    if !evals.is_empty() {
        text += &render_table(&evals);
    }
    Ok(text)
}

pub fn execute(cli: Cli) -> CliResult<String> {
    let file = load_run_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a.merged(file)),
        Command::Synth(a) => cmd_synth(&a.merged(file)),
        Command::Tts(mut a) => {
            a.run = a.run.merged(file);
            cmd_tts(&a)
        }
        Command::Link(a) => cmd_link(&a.merged(file)),
        Command::Retrieve(a) => cmd_retrieve(&a.merged(file)),
        Command::Eval(a) => cmd_eval(&a.merged(file)),
        Command::Ablate(mut a) => {
            a.run = a.run.merged(file);
            cmd_ablate(&a)
        }
        Command::Report(a) => cmd_report(&a),
    }
}

/// Parses `argv`, runs the command, prints its output and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
