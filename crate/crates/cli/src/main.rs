mod manifest;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::{fmt, fs};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dt_core::simulator::{run_scripted, script_from_rows};
use dt_core::{fixtures, telemetry, transcript, Condition, Corpus, Episode};
use dt_learn::campaign::{self, RunStatus, Table};
use dt_learn::train::load_policy;
use dt_learn::{DialogueEnv, RunSpec, Variant};

use manifest::{FileConfig, FileDigest, RunManifest};

#[derive(Parser)]
#[command(name = "dt", version, about = "Dialogue telemetry: progress and stalling signals for structured interviews")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-turn telemetry for a transcript and report stall windows.
    Monitor {
        /// Transcript in JSON Lines.
        transcript: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one episode from a scripted transcript or a trained policy.
    Simulate {
        /// Transcript whose strategy/category pairs are replayed as actions.
        #[arg(long, conflicts_with = "policy")]
        script: Option<PathBuf>,
        /// policy.bin from a training run; acts greedily.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, value_parser = parse_condition)]
        condition: Option<Condition>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a condition x variant campaign and write comparison tables.
    Train {
        /// Restrict to one condition; both by default.
        #[arg(long, value_parser = parse_condition)]
        condition: Option<Condition>,
        /// Comma-separated subset of baseline,full_dt,dt_no_si_penalty.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        timesteps: Option<usize>,
        /// Worker threads; defaults to the number of logical cores.
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Load and validate a corpus file.
    ValidateCorpus {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Corpus JSON; the shipped SAR fixture by default.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSON config with optional telemetry, episode and learner sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}

/// Failure with an exit code: 2 for missing inputs, 1 otherwise.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Failure { code: 2, message: format!("no such file: {}", path.display()) }.into());
    }
    Ok(())
}

fn color_enabled() -> bool {
    std::env::var_os("DT_NO_COLOR").is_none() && std::io::stdout().is_terminal()
}

struct Loaded {
    corpus: Arc<Corpus>,
    corpus_digest: FileDigest,
    config: FileConfig,
}

fn load_common(common: &Common) -> Result<Loaded> {
    let corpus_path = common.corpus.clone().unwrap_or_else(fixtures::corpus_path);
    require_file(&corpus_path)?;
    let mut config = match &common.config {
        Some(p) => {
            require_file(p)?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    let corpus = Corpus::load(&corpus_path).with_context(|| format!("invalid corpus {}", corpus_path.display()))?;
    config.telemetry = config.telemetry.resolved(corpus.provider().kind());
    config.telemetry.validate(corpus.schema())?;
    if let Some(seed) = common.seed {
        config.learner.seed = seed;
        config.episode.seed = seed;
    }
    config.episode.validate()?;
    config.learner.validate()?;
    Ok(Loaded { corpus: Arc::new(corpus), corpus_digest: FileDigest::of(&corpus_path)?, config })
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_monitor(transcript_path: &Path, common: &Common) -> Result<()> {
    require_file(transcript_path)?;
    let l = load_common(common)?;
    let out = out_dir(common, "runs/monitor");
    let mut m = RunManifest::new("monitor", l.config.episode.seed, l.corpus_digest, l.config.clone());
    m.inputs.insert("transcript".into(), FileDigest::of(transcript_path)?);
    m.write(&out)?;

    let rows = transcript::read_jsonl_path(transcript_path).with_context(|| format!("invalid transcript {}", transcript_path.display()))?;
    let records = transcript::to_records(&rows, l.corpus.schema(), l.corpus.provider())?;
    let report = telemetry::monitor(&records, l.corpus.schema(), &l.config.telemetry)?;

    let mut csv = Vec::new();
    telemetry::write_frames_csv(&mut csv, l.corpus.schema(), &report.frames)?;
    write(&out.join("frames.csv"), csv)?;
    let text = report.window_report(l.corpus.schema());
    write(&out.join("windows.txt"), format!("{text}\n"))?;
    let summary = serde_json::json!({
        "turns": report.frames.len(),
        "flagged_turns": report.flagged_turns(),
        "mean_si": round6(report.mean_si()),
        "stall_windows": report.windows.iter().map(|w| serde_json::json!({
            "start": w.start,
            "end": w.end,
            "peak_si": round6(w.peak_si),
            "peak_turn": w.peak_turn,
            "categories": w.categories.iter().map(|&c| l.corpus.schema().name(c)).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;

    let color = color_enabled();
    let flagged = format!("{}/{} turns flagged, mean SI {:.3}", report.flagged_turns(), report.frames.len(), report.mean_si());
    if color && report.flagged_turns() > 0 {
        println!("\x1b[33m{flagged}\x1b[0m");
    } else {
        println!("{flagged}");
    }
    println!("{text}");
    Ok(())
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn cmd_simulate(script: Option<&Path>, policy: Option<&Path>, condition: Option<Condition>, common: &Common) -> Result<()> {
    let (input_name, input) = match (script, policy) {
        (Some(s), None) => ("script", s),
        (None, Some(p)) => ("policy", p),
        _ => bail!("give exactly one of --script or --policy"),
    };
    require_file(input)?;
    let mut l = load_common(common)?;
    if let Some(c) = condition {
        l.config.episode.condition = c;
    }
    let out = out_dir(common, "runs/simulate");
    let mut m = RunManifest::new("simulate", l.config.episode.seed, l.corpus_digest, l.config.clone());
    m.inputs.insert(input_name.into(), FileDigest::of(input)?);
    m.write(&out)?;

    let trace = if let Some(script) = script {
        let rows = transcript::read_jsonl_path(script).with_context(|| format!("invalid script {}", script.display()))?;
        let actions = script_from_rows(&l.corpus, &rows)?;
        run_scripted(l.corpus.clone(), l.config.telemetry.clone(), l.config.episode.clone(), &actions)?
    } else {
        let net = load_policy(input)?;
        let m_cats = l.corpus.schema().len();
        let variant = if net.obs_dim() == m_cats + 1 {
            Variant::Baseline
        } else if net.obs_dim() == 2 * m_cats + 2 {
            Variant::FullDt
        } else {
            bail!("policy expects {} observations, corpus schema gives {} or {}", net.obs_dim(), m_cats + 1, 2 * m_cats + 2);
        };
        if net.num_actions() != l.corpus.num_actions() {
            bail!("policy has {} actions, corpus has {}", net.num_actions(), l.corpus.num_actions());
        }
        let reward = l.config.learner.reward_spec(variant)?;
        let mut env = DialogueEnv::new(l.corpus.clone(), l.config.telemetry.clone(), l.config.episode.clone(), variant, reward)?;
        let mut obs = Vec::new();
        loop {
            env.observe(&mut obs)?;
            if env.step(net.greedy(&obs))?.done {
                break;
            }
        }
        let ep: Episode = env.into_episode();
        ep.into_trace()
    };
    trace.write_to(&out, &l.corpus)?;
    let t = &trace.totals;
    println!(
        "{} turns, termination {}, total knowledge {:.3}, complete categories {}, mean SI {:.3}, flagged turns {}",
        t.turns,
        trace.termination.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
        t.total_knowledge,
        t.complete_categories,
        t.mean_si,
        trace.flagged_turns()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    condition: Option<Condition>,
    variants: Option<&[String]>,
    runs: Option<usize>,
    timesteps: Option<usize>,
    jobs: Option<usize>,
    common: &Common,
) -> Result<ExitCode> {
    let mut l = load_common(common)?;
    if let Some(r) = runs {
        l.config.learner.runs = r;
    }
    if let Some(t) = timesteps {
        l.config.learner.total_timesteps = t;
    }
    l.config.learner.validate()?;
    let conditions = match condition {
        Some(c) => vec![c],
        None => vec![Condition::A, Condition::B],
    };
    let variants: Vec<Variant> = match variants {
        Some(vs) => vs.iter().map(|v| v.parse()).collect::<Result<_, _>>()?,
        None => Variant::ALL.to_vec(),
    };
    let matrix: Vec<(Condition, Variant)> = conditions.iter().flat_map(|&c| variants.iter().map(move |&v| (c, v))).collect();
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));

    let out = out_dir(common, "runs/default");
    let mut m = RunManifest::new("train", l.config.learner.seed, l.corpus_digest, l.config.clone());
    m.settings.insert("conditions".into(), serde_json::json!(conditions.iter().map(|c| c.to_string()).collect::<Vec<_>>()));
    m.settings.insert("variants".into(), serde_json::json!(variants.iter().map(|v| v.as_str()).collect::<Vec<_>>()));
    if RunManifest::path_in(&out).exists() {
        let old = RunManifest::read(&out)?;
        if old != m {
            bail!("{} holds a different campaign; choose another --out", out.display());
        }
    } else {
        m.write(&out)?;
    }

    let learner = l.config.learner.clone();
    let mut done = Vec::new();
    let mut corrupt = Vec::new();
    let mut todo = Vec::new();
    for &(c, v) in &matrix {
        let mut episode = l.config.episode.clone();
        episode.condition = c;
        let spec = RunSpec { corpus: l.corpus.clone(), telemetry: l.config.telemetry.clone(), episode, variant: v, learner: learner.clone() };
        for k in 0..learner.runs {
            let dir = campaign::run_dir(&out, c, v, k);
            match campaign::inspect_run(&dir, c, v, k) {
                RunStatus::Complete(s, e) => done.push((s, e)),
                RunStatus::Corrupt(why) => corrupt.push(format!("{}: {why}", dir.display())),
                RunStatus::Missing => todo.push((spec.clone(), k)),
            }
        }
    }
    if !done.is_empty() {
        eprintln!("resuming: {} complete runs found", done.len());
    }
    let out_ref = &out;
    let results = campaign::train_streaming(&todo, jobs, |r| {
        let s = &r.summary;
        campaign::save_run(&campaign::run_dir(out_ref, s.condition, s.variant, s.run), r)
    });
    let mut failed = Vec::new();
    for ((spec, k), r) in todo.iter().zip(results) {
        match r {
            Ok(x) => done.push(x),
            Err(e) => failed.push(format!("{} run {k}: {e}", campaign::cell_name(spec.condition(), spec.variant))),
        }
    }

    let summaries: Vec<_> = done.iter().map(|(s, _)| s.clone()).collect();
    let table = Table::build(&matrix, &summaries);
    write(&out.join("table.csv"), table.to_csv())?;
    write(&out.join("table.txt"), table.to_text(false))?;
    for &(c, v) in &matrix {
        let mut cell: Vec<&(dt_learn::RunSummary, Vec<dt_learn::EpisodeStats>)> =
            done.iter().filter(|(s, _)| s.condition == c && s.variant == v).collect();
        cell.sort_by_key(|(s, _)| s.run);
        let curves: Vec<&[dt_learn::EpisodeStats]> = cell.iter().map(|(_, e)| e.as_slice()).collect();
        let dir = out.join(campaign::cell_name(c, v));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("window_curves.csv"), campaign::curves_report(&curves, learner.smoothing_sigma))?;
    }
    print!("{}", table.to_text(color_enabled()));

    for c in &corrupt {
        eprintln!("corrupt run skipped: {c}");
    }
    for f in &failed {
        eprintln!("run failed: {f}");
    }
    Ok(if corrupt.is_empty() && failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_validate(corpus: Option<&Path>) -> Result<()> {
    let path = corpus.map(Path::to_path_buf).unwrap_or_else(fixtures::corpus_path);
    require_file(&path)?;
    let c = Corpus::load(&path).with_context(|| format!("invalid corpus {}", path.display()))?;
    println!(
        "{}: ok; {} categories, {} strategies, {} actions, {} responses, {:?} embeddings ({} dims)",
        path.display(),
        c.schema().len(),
        c.strategies().len(),
        c.num_actions(),
        c.num_responses(),
        c.provider().kind(),
        c.provider().dimension()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Monitor { transcript, common } => cmd_monitor(transcript, common).map(|_| ExitCode::SUCCESS),
        Command::Simulate { script, policy, condition, common } => {
            cmd_simulate(script.as_deref(), policy.as_deref(), *condition, common).map(|_| ExitCode::SUCCESS)
        }
        Command::Train { condition, variants, runs, timesteps, jobs, common } => {
            cmd_train(*condition, variants.as_deref(), *runs, *timesteps, *jobs, common)
        }
        Command::ValidateCorpus { corpus } => cmd_validate(corpus.as_deref()).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let code = e.downcast_ref::<Failure>().map(|f| f.code).unwrap_or(1);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_files_map_to_exit_code_two() {
        let e = require_file(Path::new("/definitely/not/here.jsonl")).unwrap_err();
        let f = e.downcast_ref::<Failure>().unwrap();
        assert_eq!(f.code, 2);
        assert!(f.message.contains("/definitely/not/here.jsonl"));
    }
}
