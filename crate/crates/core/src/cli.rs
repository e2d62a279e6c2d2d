use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{
    FileConfig, ModelsSection, PolicySection, RunSection, SweepSection, TafSection,
};
use crate::error::{Error, Result};
use crate::harness::{run_corpus, sentence_lagging, DocumentCorpus, RunConfig};
use crate::metrics::{self, metrics_csv, Granularity, MetricsRow, QualityLatencyPoint};
use crate::stream::{tokenize, Trajectory};
use crate::sweep::{metrics_row, pareto_frontier, run_sweep, SweepGrid};
use crate::synthetic::{generate, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(
    name = "simulstream",
    version,
    about = "Simultaneous translation policy simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one configuration over a corpus.
    Simulate(SimulateArgs),
    /// Run a grid of configurations and write quality-latency rows.
    Sweep(SweepArgs),
    /// Generate a synthetic lookahead corpus.
    GenSynthetic(GenArgs),
    /// Recompute metrics for existing trajectories.
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// waitk, la, hold, ralcp, taf, waitk+taf, la+taf or ralcp+taf.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long = "K")]
    pub wait_k: Option<usize>,
    #[arg(long = "N")]
    pub stride_n: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub segment_size: Option<usize>,

    #[arg(long)]
    pub tau: Option<f64>,
    /// Continuations per step.
    #[arg(long = "n")]
    pub continuations: Option<usize>,
    /// Continuation length.
    #[arg(long = "l")]
    pub continuation_len: Option<usize>,
    /// Top-k for continuation sampling.
    #[arg(long = "k")]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub beam_per_continuation: Option<usize>,
    #[arg(long)]
    pub taf_seed: Option<u64>,
    #[arg(long)]
    pub document_context: bool,
    #[arg(long)]
    pub temperature: Option<f64>,

    #[arg(long)]
    pub translator: Option<String>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lm: Option<String>,
    #[arg(long)]
    pub lm_corpus: Option<PathBuf>,
    #[arg(long)]
    pub lm_order: Option<usize>,
    #[arg(long)]
    pub lm_alpha: Option<f64>,
    #[arg(long)]
    pub bridge_url: Option<String>,

    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub docids: Option<PathBuf>,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub granularity: Option<Granularity>,
    #[arg(long)]
    pub max_target_factor: Option<f64>,
    /// Global seed (falls back to SIMULSTREAM_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl CommonArgs {
    fn as_overlay(&self) -> FileConfig {
        FileConfig {
            models: ModelsSection {
                translator: self.translator.clone(),
                lexicon: self.lexicon.clone(),
                delta: self.delta,
                epsilon: self.epsilon,
                lm: self.lm.clone(),
                lm_corpus: self.lm_corpus.clone(),
                lm_order: self.lm_order,
                lm_alpha: self.lm_alpha,
                bridge_url: self.bridge_url.clone(),
            },
            policy: PolicySection {
                name: self.policy.clone(),
                k: self.wait_k,
                n: self.stride_n,
                gamma: self.gamma,
                beam_width: self.beam_width,
                segment_size: self.segment_size,
            },
            taf: TafSection {
                n: self.continuations,
                l: self.continuation_len,
                k: self.top_k,
                tau: self.tau,
                beam_per_continuation: self.beam_per_continuation,
                seed: self.taf_seed,
                document_context: self.document_context.then_some(true),
                temperature: self.temperature,
            },
            run: RunSection {
                source: self.source.clone(),
                reference: self.reference.clone(),
                docids: self.docids.clone(),
                trajectories: self.trajectories.clone(),
                metrics: self.metrics.clone(),
                granularity: self.granularity,
                max_target_factor: self.max_target_factor,
                seed: self.seed,
                jobs: self.jobs,
            },
            sweep: SweepSection::default(),
        }
    }

    /// Config file (if any) with flags laid over it.
    pub fn resolve(&self) -> Result<FileConfig> {
        let base = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(base.overlay(&self.as_overlay()))
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Grid axis such as `tau=0.5,0.6,0.7` (repeatable). Axes: tau, K, N,
    /// gamma, n, l, k, segment_size.
    #[arg(long = "grid")]
    pub grid: Vec<String>,
    #[arg(long)]
    pub max_points: Option<usize>,
    /// Pareto frontier CSV (default: next to the metrics file).
    #[arg(long)]
    pub pareto: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub vocab: usize,
    #[arg(long, default_value_t = 200)]
    pub sentences: usize,
    #[arg(long, default_value_t = 10)]
    pub min_len: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2)]
    pub delta: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub lm_sentences: usize,
    #[arg(long, default_value_t = 10)]
    pub doc_size: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

fn parse_list<T: std::str::FromStr>(axis: &str, values: &str) -> Result<Vec<T>> {
    values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for grid axis {axis}")))
        })
        .collect()
}

/// Parses repeated `--grid name=v1,v2` flags into sweep settings.
pub fn parse_grid(specs: &[String]) -> Result<SweepSection> {
    let mut s = SweepSection::default();
    for spec in specs {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis {spec:?} is not name=values")))?;
        let name = name.trim();
        match name {
            "tau" => s.tau = Some(parse_list(name, values)?),
            "K" => s.k_wait = Some(parse_list(name, values)?),
            "N" => s.n_stride = Some(parse_list(name, values)?),
            "gamma" => s.gamma = Some(parse_list(name, values)?),
            "n" => s.n = Some(parse_list(name, values)?),
            "l" => s.l = Some(parse_list(name, values)?),
            "k" => s.k = Some(parse_list(name, values)?),
            "segment_size" => s.segment_size = Some(parse_list(name, values)?),
            other => return Err(Error::Config(format!("unknown grid axis {other:?}"))),
        }
    }
    Ok(s)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_corpus(file: &FileConfig) -> Result<DocumentCorpus> {
    let source = required(&file.run.source, "source")?;
    let reference = required(&file.run.reference, "reference")?;
    DocumentCorpus::load(source, reference, file.run.docids.as_deref())
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?
            .install(f),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let file = args.common.resolve()?;
    let run = file.run_config()?;
    let corpus = load_corpus(&file)?;
    let models = file.build_models(run.needs_lm())?;
    let out = with_jobs(file.run.jobs, || run_corpus(&corpus, &models, &run))?;
    if let Some(path) = &file.run.trajectories {
        write_file(path, &out.trajectories_jsonl())?;
    }
    emit(
        file.run.metrics.as_deref(),
        &metrics_csv(&[metrics_row(&run, &out.point)])?,
    )
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut file = args.common.resolve()?;
    let flags = SweepSection {
        max_points: args.max_points,
        pareto: args.pareto.clone(),
        ..parse_grid(&args.grid)?
    };
    file = file.overlay(&FileConfig {
        sweep: flags,
        ..Default::default()
    });
    let base = file.run_config()?;
    let points = SweepGrid::from_section(&file.sweep).expand(&base)?;
    let corpus = load_corpus(&file)?;
    let models = file.build_models(points.iter().any(RunConfig::needs_lm))?;
    let jobs = file.run.jobs.unwrap_or(1);
    let result = run_sweep(&corpus, &models, &points, jobs)?;
    let rows = result.rows();
    if let Some(path) = &file.run.trajectories {
        write_file(path, &result.trajectories_jsonl())?;
    }
    emit(file.run.metrics.as_deref(), &metrics_csv(&rows)?)?;
    let pareto = file.sweep.pareto.clone().or_else(|| {
        file.run
            .metrics
            .as_ref()
            .map(|m| m.with_extension("pareto.csv"))
    });
    if let Some(path) = pareto {
        write_file(&path, &metrics_csv(&pareto_frontier(&rows))?)?;
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => FileConfig::default().seed()?,
    };
    let spec = SyntheticSpec {
        vocab_size: args.vocab,
        sentences: args.sentences,
        min_len: args.min_len,
        max_len: args.max_len,
        delta: args.delta,
        seed,
        lm_sentences: args.lm_sentences,
        doc_size: args.doc_size,
    };
    let files = generate(&spec)?.write(&args.out)?;
    eprintln!(
        "wrote {}, {}, {}, {}, {}",
        files.source.display(),
        files.reference.display(),
        files.docids.display(),
        files.lexicon.display(),
        files.lm_corpus.display()
    );
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let file = args.common.resolve()?;
    let run = file.run_config()?;
    let corpus = load_corpus(&file)?;
    let path = required(&file.run.trajectories, "trajectories")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut trajs = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            Trajectory::from_json_line(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    trajs.sort_by_key(|t| t.sentence_id);
    if trajs.len() != corpus.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!(
                "{} trajectories for {} sentences",
                trajs.len(),
                corpus.len()
            ),
        });
    }
    let mut hyps = Vec::new();
    let (mut laal, mut al) = (0.0, 0.0);
    for (i, (t, rec)) in trajs.iter().zip(corpus.sentences()).enumerate() {
        if t.sentence_id != i as u64 {
            return Err(Error::Inconsistent(format!(
                "missing trajectory for sentence {i}"
            )));
        }
        t.verify_replay(&tokenize(&rec.source))?;
        let (l, a) = sentence_lagging(t, &rec.source, &rec.reference, run.granularity)?;
        laal += l;
        al += a;
        hyps.push(metrics::hypothesis_text(&t.final_hypothesis));
    }
    let refs: Vec<String> = corpus
        .sentences()
        .iter()
        .map(|s| s.reference.clone())
        .collect();
    let n = trajs.len() as f64;
    let point = QualityLatencyPoint {
        config_id: run.config_id(),
        bleu: metrics::corpus_bleu(&hyps, &refs, run.granularity)?,
        laal: laal / n,
        al: al / n,
    };
    let row: MetricsRow = metrics_row(&run, &point);
    emit(file.run.metrics.as_deref(), &metrics_csv(&[row])?)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Score(a) => cmd_score(a),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else if err.is_io() {
        3
    } else {
        1
    }
}

/// Parses the process arguments, runs the command and maps errors to exit
/// codes (2 configuration, 3 I/O, 1 anything else).
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
