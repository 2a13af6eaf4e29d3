use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hatemm::config::PipelineConfig;
use hatemm::evaluate::{render_report, Artifact, ReportFormat};
use hatemm::pipeline::{Pipeline, RunOptions, Stage};
use hatemm::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PROVIDER: u8 = 3;

/// Hate speech and hate-target detection for text-embedded images.
#[derive(Debug, Parser)]
#[command(name = "hatemm", version)]
struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "hatemm.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute a stage and everything downstream of it (`all` for every stage).
    #[arg(long, global = true, value_name = "STAGE")]
    force: Vec<String>,
    /// Print which stages would run without running them.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the manifest and print the label distribution.
    Ingest,
    /// Extract text from images that lack it.
    Ocr,
    /// Back-translate the training split.
    Augment,
    /// Train every configured model.
    Train,
    /// Predict eval and test splits with every model.
    Predict,
    /// Label eval and test splits with the LLM.
    Llm,
    /// Fuse model predictions by voting.
    Ensemble,
    /// Score every model and write the report.
    Evaluate,
    /// Run every stage.
    RunAll,
    /// Re-render the last report.
    Report {
        /// text, json or plot.
        #[arg(long, default_value = "text")]
        format: String,
        /// Directory for plot images (defaults to the report directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnknownFormat(_) => EXIT_USAGE,
        e if e.is_provider() => EXIT_PROVIDER,
        _ => EXIT_DATA,
    }
}

fn target(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Ingest => Stage::Ingest,
        Command::Ocr => Stage::Ocr,
        Command::Augment => Stage::Augment,
        Command::Train => Stage::Train,
        Command::Predict => Stage::Predict,
        Command::Llm => Stage::Llm,
        Command::Ensemble => Stage::Ensemble,
        Command::Evaluate | Command::RunAll => Stage::Evaluate,
        Command::Report { .. } => return None,
    })
}

fn parse_force(values: &[String]) -> Result<BTreeSet<Stage>, Error> {
    let mut out = BTreeSet::new();
    for v in values {
        if v.eq_ignore_ascii_case("all") {
            out.extend(Stage::ALL);
        } else {
            out.insert(v.parse()?);
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let options = RunOptions {
        force: parse_force(&cli.force)?,
        dry_run: cli.dry_run,
    };
    let pipeline = Pipeline::new(config);
    let mut stdout = std::io::stdout().lock();
    let io = |e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    };

    let Some(stage) = target(&cli.command) else {
        let Command::Report { format, out } = &cli.command else {
            unreachable!()
        };
        let format: ReportFormat = format.parse()?;
        let table = pipeline.load_table()?;
        match render_report(&table, format)? {
            Artifact::Text(s) | Artifact::Json(s) => writeln!(stdout, "{s}").map_err(io)?,
            Artifact::Images(images) => {
                let dir = out
                    .clone()
                    .unwrap_or_else(|| pipeline.layout().reports.join("heatmaps"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                for (name, png) in images {
                    let path = dir.join(name);
                    std::fs::write(&path, png).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    writeln!(stdout, "wrote {}", path.display()).map_err(io)?;
                }
            }
        }
        return Ok(());
    };

    let summary = pipeline.run(stage, &options)?;
    for report in &summary.stages {
        writeln!(stdout, "{:<9} {}", report.stage.as_str(), report.status).map_err(io)?;
        for note in &report.notes {
            for line in note.lines() {
                writeln!(stdout, "    {line}").map_err(io)?;
            }
        }
    }
    if let Some(table) = &summary.table {
        if let Artifact::Text(t) = render_report(table, ReportFormat::TextTable)? {
            writeln!(stdout, "\n{t}").map_err(io)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // Output piped into something like `head` that exited early.
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
