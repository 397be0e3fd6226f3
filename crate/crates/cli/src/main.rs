use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use spatialkg::dataset::{self, read_json, report_csv, report_table, write_json, SubsetFilter, TrainingItem};
use spatialkg::eval;
use spatialkg::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "spatialkg", version, about = "Spatial knowledge graph guided multimodal data synthesis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for stage-internal parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Use the catalog and procedural backends regardless of the config.
    #[arg(long, global = true)]
    offline: bool,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// All stages, resuming finished ones.
    Run,
    GenScenes(StageArgs),
    BuildSkg(StageArgs),
    Solve(StageArgs),
    Render(StageArgs),
    Filter(StageArgs),
    Qa(StageArgs),
    Emit(StageArgs),
    /// Object and relation distributions of the built graphs.
    Stats {
        #[arg(long, default_value_t = 15)]
        top: usize,
    },
    /// Seeded ablation subset of an emitted training set.
    Sample {
        #[arg(long)]
        size: usize,
        /// directional-only, distance-only, entities-ge:N or entities-lt:N
        #[arg(long)]
        filter: Option<String>,
        /// Training file; defaults to <out>/dataset/train.json.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Scores a JSON-lines answer file against a holdout.
    Score {
        #[arg(long)]
        answers: PathBuf,
        /// Defaults to <out>/dataset/holdout.json.
        #[arg(long)]
        holdout: Option<PathBuf>,
        /// Defaults to eval_report.json next to the answers.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StageArgs {
    /// Re-run even when a matching manifest exists.
    #[arg(long)]
    force: bool,
}

fn config(g: &Global) -> Result<PipelineConfig, PipelineError> {
    let mut c = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(o) = &g.out {
        c.out_dir = o.clone();
    }
    if g.offline {
        c.force_offline();
    }
    Ok(c)
}

fn out_dir(g: &Global) -> anyhow::Result<PathBuf> {
    Ok(config(g)?.out_dir)
}

fn stage_of(cmd: &Command) -> Option<(Stage, bool)> {
    let (s, a) = match cmd {
        Command::GenScenes(a) => (Stage::GenScenes, a),
        Command::BuildSkg(a) => (Stage::BuildSkg, a),
        Command::Solve(a) => (Stage::Solve, a),
        Command::Render(a) => (Stage::Render, a),
        Command::Filter(a) => (Stage::Filter, a),
        Command::Qa(a) => (Stage::Qa, a),
        Command::Emit(a) => (Stage::Emit, a),
        _ => return None,
    };
    Some((s, a.force))
}

fn pipeline_command(g: &Global, cmd: &Command) -> Result<i32, PipelineError> {
    let p = Pipeline::new(config(g)?)?;
    if let Some((stage, force)) = stage_of(cmd) {
        let r = p.run_stage(stage, force)?;
        print_report(&r);
        return Ok(0);
    }
    match cmd {
        Command::Run => {
            let summary = p.run()?;
            for r in &summary.reports {
                print_report(r);
            }
            if !summary.complete {
                eprintln!("{} items left pending; emission incomplete", summary.pending);
            }
            Ok(summary.exit_code())
        }
        Command::Stats { top } => {
            let report = dataset::report(&p.skgs()?)?;
            print!("{}", report_table(&report, *top));
            let dir = p.out_dir().join("reports");
            write_text(&dir.join("objects.csv"), &report_csv(&report.top_objects(*top)))?;
            write_text(&dir.join("relations.csv"), &report_csv(&report.top_relations(*top)))?;
            write_json(&dir.join("distribution.json"), &report)?;
            Ok(0)
        }
        _ => unreachable!("handled elsewhere"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path.parent().expect("nested path"))
        .and_then(|_| std::fs::write(path, text))
        .map_err(|e| {
            PipelineError::Dataset(dataset::DatasetError::WriteFailure { path: path.into(), reason: e.to_string() })
        })
}

fn print_report(r: &spatialkg::pipeline::StageReport) {
    let counts: Vec<String> = r.manifest.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "{:<11} {:<8} items={} failures={} {}",
        r.stage.name(),
        if r.resumed { "resumed" } else { "ran" },
        r.manifest.items,
        r.manifest.failures.len(),
        counts.join(" ")
    );
}

fn sample(g: &Global, size: usize, filter: Option<&str>, input: Option<&Path>, output: &Path) -> anyhow::Result<()> {
    let input = match input {
        Some(p) => p.to_path_buf(),
        None => out_dir(g)?.join("dataset").join(dataset::TRAIN_FILE),
    };
    let items: Vec<TrainingItem> = read_json(&input)?;
    let filter = filter.map(str::parse::<SubsetFilter>).transpose()?;
    let subset = dataset::sample_subset(&items, size, g.seed.unwrap_or(0), filter)?;
    write_json(output, &subset)?;
    println!("{} of {} items -> {}", subset.len(), items.len(), output.display());
    Ok(())
}

fn score(g: &Global, answers: &Path, holdout: Option<&Path>, report: Option<&Path>) -> anyhow::Result<()> {
    let holdout = match holdout {
        Some(p) => p.to_path_buf(),
        None => out_dir(g)?.join("dataset").join(dataset::HOLDOUT_FILE),
    };
    let items: Vec<dataset::HoldoutItem> =
        read_json(&holdout).with_context(|| format!("reading holdout {}", holdout.display()))?;
    let rows = eval::read_answers(answers)?;
    let r = eval::score(&rows, &items)?;
    print!("{}", r.table());
    let path = report.map_or_else(|| answers.with_file_name("eval_report.json"), Path::to_path_buf);
    write_json(&path, &r)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let code = spatialkg::par::with_workers(g.workers, || match &cli.command {
        Command::Sample { size, filter, input, output } => {
            sample(g, *size, filter.as_deref(), input.as_deref(), output).map(|_| 0).unwrap_or_else(|e| {
                eprintln!("error: {e:#}");
                1
            })
        }
        Command::Score { answers, holdout, report } => {
            score(g, answers, holdout.as_deref(), report.as_deref()).map(|_| 0).unwrap_or_else(|e| {
                eprintln!("error: {e:#}");
                1
            })
        }
        cmd => pipeline_command(g, cmd).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            e.exit_code()
        }),
    });
    ExitCode::from(code as u8)
}
