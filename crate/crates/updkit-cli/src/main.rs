//! Command-line front end for the updkit toolkit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use updkit::adapter::{Generator, GeneratorConfig, MockGenerator, MockTable, RemoteGenerator};
use updkit::bench::{
    check_partition_disjoint, load_benchmark, BenchSuite, JudgeSource, JudgmentRecord,
    Stage1Prediction, Stage1Source, Stage2Source, UnitsFrom,
};
use updkit::datagen::{
    build_sft_dataset, parse_dataset_jsonl, parse_pairs, write_dataset_jsonl, DatasetConfig,
    TemplateTeacher,
};
use updkit::graph::{check_phi, parse_graph, serialize_graph};
use updkit::kb::{
    load_knowledge_base, validate_knowledge_base, validate_predicates, KnowledgeBase,
    MechanismPredicate,
};
use updkit::metrics::{approx_nged, cspc, iov, GedCosts, UnitSelection};
use updkit::synth::{synthesize, Proposer, ProposerKind, RationaleMode, SynthConfig};

/// Constraint-aware synthesis, validation, and scoring for unit-level
/// refinery process diagrams.
#[derive(Parser)]
#[command(name = "updkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-base operations.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Process-graph operations.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Synthesize a topology for a unit selection.
    Synth(Box<SynthArgs>),
    /// Build a rationale-augmented training dataset.
    Datagen(Box<DatagenArgs>),
    /// Benchmark runners.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Score a predicted graph against a ground-truth graph.
    Score(ScoreArgs),
}

#[derive(Subcommand)]
enum KbCommand {
    /// Validate a knowledge-base file; exits 1 on violations.
    Validate { kb: PathBuf },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Check a graph against the compatibility constraint and I/O rules;
    /// exits 1 on violations.
    Check {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run stage 1 (unit selection and reasoning quality).
    Stage1(Box<Stage1Args>),
    /// Run stage 2 (diagram synthesis fidelity).
    Stage2(Box<Stage2Args>),
    /// Check the zero-overlap policy between a training dataset and the
    /// benchmark; exits 1 when collisions exist.
    Disjoint {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        train: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProposerArg {
    Heuristic,
    Mock,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RationaleModeArg {
    None,
    Reasoning,
    KeyTopology,
    All,
}

impl From<RationaleModeArg> for RationaleMode {
    fn from(mode: RationaleModeArg) -> Self {
        match mode {
            RationaleModeArg::None => RationaleMode::None,
            RationaleModeArg::Reasoning => RationaleMode::Reasoning,
            RationaleModeArg::KeyTopology => RationaleMode::KeyTopology,
            RationaleModeArg::All => RationaleMode::All,
        }
    }
}

/// Flags shared by every command that can talk to a generator.
#[derive(Args)]
struct GeneratorArgs {
    /// Mock-table JSON file (for mock generators).
    #[arg(long)]
    mock_table: Option<PathBuf>,
    /// Remote generator endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    auth_env: Option<String>,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    /// Retry count for transport failures.
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Maximum concurrent in-flight requests.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Dump request/response pairs as JSON lines on stderr.
    #[arg(long)]
    log_llm: bool,
}

impl GeneratorArgs {
    fn mock(&self) -> Result<MockGenerator> {
        let path = self
            .mock_table
            .as_ref()
            .ok_or_else(|| anyhow!("--mock-table is required for the mock generator"))?;
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let table: MockTable = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(MockGenerator::new(table))
    }

    fn remote(&self) -> Result<RemoteGenerator> {
        let endpoint = self
            .endpoint
            .as_ref()
            .ok_or_else(|| anyhow!("--endpoint is required for the remote generator"))?;
        let mut config = GeneratorConfig::new(endpoint.clone());
        config.auth_env = self.auth_env.clone();
        config.timeout_secs = self.timeout;
        config.retries = self.retries;
        config.max_in_flight = self.max_in_flight;
        Ok(RemoteGenerator::new(config).with_exchange_logging(self.log_llm))
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Unit list: a file containing one name per line, or an inline
    /// comma-separated list.
    #[arg(long)]
    units: String,
    #[arg(long, value_enum, default_value_t = ProposerArg::Heuristic)]
    proposer: ProposerArg,
    #[arg(long, default_value_t = 3)]
    context_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    max_repair_iters: usize,
    #[arg(long, value_enum, default_value_t = RationaleModeArg::None)]
    rationale_mode: RationaleModeArg,
    /// Stage-1 rationale text file forwarded under the rationale modes.
    #[arg(long)]
    rationale_file: Option<PathBuf>,
    /// Output graph JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Repair-trace JSON path.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Args)]
struct DatagenArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    predicates: PathBuf,
    #[arg(long, value_enum, default_value_t = TeacherArg::Template)]
    teacher: TeacherArg,
    #[arg(long, default_value_t = 0.10)]
    negative_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    max_attempts: usize,
    /// Dataset output path (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Stats JSON output path (stderr when omitted).
    #[arg(long)]
    stats: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TeacherArg {
    Template,
    Mock,
    Remote,
}

#[derive(Args)]
struct Stage1Args {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum, default_value_t = SelectorArg::Gt)]
    selector: SelectorArg,
    /// Predictions file for `--selector file`: JSON map task_id →
    /// {units, rationale}.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Predicates file for the rule judge.
    #[arg(long)]
    predicates: Option<PathBuf>,
    /// Judgments file (JSON list); replaces the rule judge.
    #[arg(long)]
    judgments: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SelectorArg {
    Gt,
    File,
    Mock,
    Remote,
}

#[derive(Args)]
struct Stage2Args {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Stage2SourceArg::Synth)]
    source: Stage2SourceArg,
    /// Condition synthesis on ground-truth unit sets instead of stage-1
    /// predictions.
    #[arg(long)]
    use_gt_units: bool,
    /// Stage-1 predictions file (JSON map task_id → {units, rationale}).
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProposerArg::Heuristic)]
    proposer: ProposerArg,
    #[arg(long, value_enum, default_value_t = RationaleModeArg::None)]
    rationale_mode: RationaleModeArg,
    #[arg(long, default_value_t = 3)]
    context_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage2SourceArg {
    Gt,
    Synth,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    gt_graph: PathBuf,
    #[arg(long)]
    pred_graph: PathBuf,
    /// Score critical-path coverage against the KB's rules.
    #[arg(long)]
    kb_rules: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Write to stdout, exiting quietly when the reader has gone away
/// (e.g. piping into `head`).
fn print_out(text: &str) {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing stdout: {e}");
        std::process::exit(1);
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print_out(text),
    }
    Ok(())
}

fn load_predicates(path: Option<&Path>, kb: &KnowledgeBase) -> Result<Vec<MechanismPredicate>> {
    let Some(path) = path else {
        return Ok(Vec::new());
    };
    let predicates: Vec<MechanismPredicate> = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let violations = validate_predicates(&predicates, kb);
    if !violations.is_empty() {
        bail!("invalid predicates in {}: {}", path.display(), violations[0]);
    }
    Ok(predicates)
}

fn load_predictions(path: Option<&Path>) -> Result<BTreeMap<String, Stage1Prediction>> {
    let path = path.ok_or_else(|| anyhow!("--predictions is required for this mode"))?;
    let map: BTreeMap<String, Stage1Prediction> = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(map)
}

fn parse_units_arg(raw: &str, kb: &KnowledgeBase) -> Result<UnitSelection> {
    let names: Vec<String> = if Path::new(raw).is_file() {
        read_to_string(Path::new(raw))?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect()
    } else {
        raw.split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    };
    UnitSelection::resolve(names.iter().map(String::as_str), kb)
        .map_err(|e| anyhow!("resolving units: {e}"))
}

fn run_kb_validate(path: &Path) -> Result<u8> {
    let text = read_to_string(path)?;
    match KnowledgeBase::from_json_str(&text) {
        Ok(kb) => {
            let violations = validate_knowledge_base(&kb);
            if violations.is_empty() {
                print_out(&format!(
                    "ok: {} materials, {} units, {} motifs, {} critical-path rules\n",
                    kb.materials.len(),
                    kb.units.len(),
                    kb.motifs.len(),
                    kb.critical_paths.len()
                ));
                Ok(0)
            } else {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                Ok(1)
            }
        }
        Err(e) => {
            eprintln!("invalid: {e}");
            Ok(1)
        }
    }
}

fn run_graph_check(kb_path: &Path, graph_path: &Path, format: Format) -> Result<u8> {
    let kb = load_knowledge_base(kb_path)?;
    let graph = match parse_graph(&read_to_string(graph_path)?, &kb) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("parse error: {e}");
            return Ok(1);
        }
    };
    let phi = check_phi(&graph, &kb)?;
    let validity = updkit::graph::unit_io_validity(&graph, &kb)?;
    let invalid_nodes: Vec<&String> =
        validity.iter().filter(|(_, ok)| !**ok).map(|(id, _)| id).collect();
    match format {
        Format::Json => {
            let payload = serde_json::json!({
                "phi": phi,
                "io_validity": validity,
            });
            print_out(&format!("{}\n", serde_json::to_string_pretty(&payload)?));
        }
        Format::Table => {
            let mut text = format!(
                "edges checked: {}, constraint {}\n",
                phi.checked_edges,
                if phi.satisfied { "satisfied" } else { "violated" }
            );
            for v in &phi.violations {
                text.push_str(&format!(
                    "  violation: {} -> {} ({}): {}\n",
                    v.from,
                    v.to,
                    v.material.as_deref().unwrap_or("unlabeled"),
                    v.reason
                ));
            }
            if !invalid_nodes.is_empty() {
                text.push_str("nodes failing I/O rules:\n");
                for n in &invalid_nodes {
                    text.push_str(&format!("  {n}\n"));
                }
            }
            print_out(&text);
        }
    }
    Ok(u8::from(!phi.satisfied || !invalid_nodes.is_empty()))
}

fn run_synth(args: &SynthArgs) -> Result<u8> {
    let kb = load_knowledge_base(&args.kb)?;
    let units = parse_units_arg(&args.units, &kb)?;
    let cfg = SynthConfig {
        context_n: args.context_n,
        max_repair_iters: args.max_repair_iters,
        seed: args.seed,
        proposer: match args.proposer {
            ProposerArg::Heuristic => ProposerKind::Heuristic,
            ProposerArg::Mock => ProposerKind::Mock,
            ProposerArg::Remote => ProposerKind::Remote,
        },
        rationale_mode: args.rationale_mode.into(),
    };
    let rationale = match &args.rationale_file {
        Some(path) => Some(read_to_string(path)?),
        None => None,
    };
    let mock;
    let remote;
    let proposer = match args.proposer {
        ProposerArg::Heuristic => Proposer::Heuristic,
        ProposerArg::Mock => {
            mock = args.generator.mock()?;
            Proposer::External(&mock)
        }
        ProposerArg::Remote => {
            remote = args.generator.remote()?;
            Proposer::External(&remote)
        }
    };
    let (graph, trace) = synthesize(&units, &kb, &cfg, &proposer, rationale.as_deref())?;
    emit(&serialize_graph(&graph), args.out.as_deref())?;
    if let Some(path) = &args.trace {
        std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(&trace)?))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "synthesized {} node(s), {} edge(s); converged: {}; dropped proposals: {}",
        graph.nodes().len(),
        graph.edges().len(),
        trace.converged,
        trace.dropped_proposals
    );
    Ok(0)
}

fn run_datagen(args: &DatagenArgs) -> Result<u8> {
    let kb = load_knowledge_base(&args.kb)?;
    let pairs = parse_pairs(&read_to_string(&args.pairs)?, &kb)?;
    let predicates = load_predicates(Some(&args.predicates), &kb)?;
    let cfg = DatasetConfig {
        negative_fraction: args.negative_fraction,
        seed: args.seed,
        max_attempts: args.max_attempts,
    };
    let template;
    let mock;
    let remote;
    let teacher: &dyn Generator = match args.teacher {
        TeacherArg::Template => {
            template = TemplateTeacher::new(kb.clone());
            &template
        }
        TeacherArg::Mock => {
            mock = args.generator.mock()?;
            &mock
        }
        TeacherArg::Remote => {
            remote = args.generator.remote()?;
            &remote
        }
    };
    let (dataset, stats) = build_sft_dataset(&pairs, &kb, &predicates, teacher, &cfg);
    std::fs::write(&args.out, write_dataset_jsonl(&dataset))
        .with_context(|| format!("writing {}", args.out.display()))?;
    let stats_json = format!("{}\n", serde_json::to_string_pretty(&stats)?);
    match &args.stats {
        Some(path) => std::fs::write(path, &stats_json)
            .with_context(|| format!("writing {}", path.display()))?,
        None => eprint!("{stats_json}"),
    }
    eprintln!(
        "dataset: {} record(s) ({} positive, {} negative), {} rejected",
        dataset.len(),
        stats.positives,
        stats.negatives,
        stats.rejected
    );
    Ok(0)
}

fn load_suite(dir: &Path) -> Result<BenchSuite> {
    load_benchmark(dir).with_context(|| format!("loading benchmark from {}", dir.display()))
}

fn run_stage1_cmd(args: &Stage1Args) -> Result<u8> {
    let suite = load_suite(&args.dir)?;
    let mock;
    let remote;
    let source = match args.selector {
        SelectorArg::Gt => Stage1Source::GroundTruth,
        SelectorArg::File => Stage1Source::File(load_predictions(args.predictions.as_deref())?),
        SelectorArg::Mock => {
            mock = args.generator.mock()?;
            Stage1Source::Generator(&mock)
        }
        SelectorArg::Remote => {
            remote = args.generator.remote()?;
            Stage1Source::Generator(&remote)
        }
    };
    let judge = match &args.judgments {
        Some(path) => {
            let records: Vec<JudgmentRecord> = serde_json::from_str(&read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            JudgeSource::File(records)
        }
        None => JudgeSource::Rule(load_predicates(args.predicates.as_deref(), &suite.kb)?),
    };
    let table = updkit::bench::run_stage1(&suite, &source, &judge, args.jobs);
    let text = match args.format {
        Format::Table => table.render_text(),
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&table)?),
    };
    emit(&text, args.out.as_deref())?;
    Ok(0)
}

fn run_stage2_cmd(args: &Stage2Args) -> Result<u8> {
    let suite = load_suite(&args.dir)?;
    let units_from = if args.use_gt_units || args.predictions.is_none() {
        UnitsFrom::GroundTruth
    } else {
        UnitsFrom::Predictions(load_predictions(args.predictions.as_deref())?)
    };
    let mock;
    let remote;
    let source = match args.source {
        Stage2SourceArg::Gt => Stage2Source::GroundTruth,
        Stage2SourceArg::Synth => {
            let cfg = SynthConfig {
                context_n: args.context_n,
                seed: args.seed,
                rationale_mode: args.rationale_mode.into(),
                proposer: match args.proposer {
                    ProposerArg::Heuristic => ProposerKind::Heuristic,
                    ProposerArg::Mock => ProposerKind::Mock,
                    ProposerArg::Remote => ProposerKind::Remote,
                },
                ..SynthConfig::default()
            };
            let generator: Option<&dyn Generator> = match args.proposer {
                ProposerArg::Heuristic => None,
                ProposerArg::Mock => {
                    mock = args.generator.mock()?;
                    Some(&mock)
                }
                ProposerArg::Remote => {
                    remote = args.generator.remote()?;
                    Some(&remote)
                }
            };
            Stage2Source::Synthesize { cfg, generator }
        }
    };
    let table = updkit::bench::run_stage2(&suite, &units_from, &source, args.jobs);
    let text = match args.format {
        Format::Table => table.render_text(),
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&table)?),
    };
    emit(&text, args.out.as_deref())?;
    Ok(0)
}

fn run_disjoint(dir: &Path, train: &Path) -> Result<u8> {
    let suite = load_suite(dir)?;
    let dataset = parse_dataset_jsonl(&read_to_string(train)?)?;
    let report = check_partition_disjoint(&dataset, &suite);
    print_out(&format!("{}\n", serde_json::to_string_pretty(&report)?));
    Ok(u8::from(!report.disjoint))
}

fn run_score(args: &ScoreArgs) -> Result<u8> {
    let kb = load_knowledge_base(&args.kb)?;
    let gt = parse_graph(&read_to_string(&args.gt_graph)?, &kb)?;
    let pred = parse_graph(&read_to_string(&args.pred_graph)?, &kb)?;
    let costs = GedCosts::default();
    let nged = approx_nged(&pred, &gt, &costs);
    let rules = if args.kb_rules { kb.critical_paths.clone() } else { Vec::new() };
    let cspc_score = cspc(&pred, &rules, &kb)?;
    let iov_score = iov(&pred, &kb)?;
    let text = match args.format {
        Format::Json => format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::json!({
                "nged": nged,
                "cspc": cspc_score,
                "iov": iov_score,
                "rules_scored": rules.len(),
            }))?
        ),
        Format::Table => format!(
            "nGED  {nged:.4}\nCSPC  {cspc_score:.4} ({} rule(s))\nIOV   {iov_score:.4}\n",
            rules.len()
        ),
    };
    emit(&text, args.out.as_deref())?;
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Kb { command } => match command {
            KbCommand::Validate { kb } => run_kb_validate(&kb),
        },
        Command::Graph { command } => match command {
            GraphCommand::Check { kb, graph, format } => run_graph_check(&kb, &graph, format),
        },
        Command::Synth(args) => run_synth(&args),
        Command::Datagen(args) => run_datagen(&args),
        Command::Bench { command } => match command {
            BenchCommand::Stage1(args) => run_stage1_cmd(&args),
            BenchCommand::Stage2(args) => run_stage2_cmd(&args),
            BenchCommand::Disjoint { dir, train } => run_disjoint(&dir, &train),
        },
        Command::Score(args) => run_score(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
