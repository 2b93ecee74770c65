use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cadre_core::config::{parse_config, ExperimentConfig};
use cadre_core::federation::{self, AggregatedRun, RunOptions};
use cadre_core::io::{self as table_io, Format};
use cadre_core::pollution::{pollute, PollutionKind, PollutionSpec};
use cadre_core::readiness::ModuleRegistry;
use cadre_core::report::{DrReport, REPORT_HTML, REPORT_JSON};
use cadre_core::{DatasetMeta, Error};

/// Prints a line, ignoring a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    };
}

const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

#[derive(Parser)]
#[command(
    name = "cadre",
    version,
    about = "Data-readiness checks for federated clients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the server and wait for every configured client.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        /// Address to listen on.
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: String,
    },
    /// Run one client against a server.
    Client {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        client_id: String,
        #[arg(long, default_value = DEFAULT_LISTEN)]
        server: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the server and all clients in one process.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Apply a pollution recipe to a data file.
    Pollute {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// YAML file holding one recipe, e.g. `{type: duplicate_rows, fraction: 0.2}`.
        #[arg(short, long)]
        recipe: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long)]
        sensitive_feature: Option<String>,
        #[arg(long, value_delimiter = ',')]
        quasi_identifiers: Vec<String>,
    },
    /// Rebuild report.html from report.json.
    Render {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Parse and validate an experiment configuration.
    ValidateConfig {
        #[arg(short, long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `seeds.global`.
    #[arg(long)]
    seed: Option<u64>,
    /// Report timestamp, for reproducible output.
    #[arg(long)]
    timestamp: Option<String>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::RuleSyntax { .. } | Error::UnknownModule(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(path)?;
    cfg.apply_overrides(seed);
    Ok(cfg)
}

fn finish(
    run: &AggregatedRun,
    cfg: &ExperimentConfig,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    run.write(&dir)?;
    let v = run.report.verdicts;
    say!(
        "{}: {} ready, {} flagged, {} degenerate, {} absent client(s)",
        run.experiment_id(),
        v.ready,
        v.flagged,
        v.degenerate,
        v.absent_clients
    );
    say!("wrote {}", dir.join(REPORT_JSON).display());
    say!("wrote {}", dir.join(REPORT_HTML).display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let registry = ModuleRegistry::builtin();
    match cli.command {
        Command::Serve { run, listen } => {
            let cfg = load_config(&run.config, run.seed)?;
            eprintln!(
                "listening on {listen} for {} client(s)",
                cfg.client_ids().len()
            );
            let opts = RunOptions {
                generated_at: run.timestamp,
            };
            let result = federation::serve(&cfg, &listen, &opts)?;
            finish(&result, &cfg, run.out)
        }
        Command::Simulate { run } => {
            let cfg = load_config(&run.config, run.seed)?;
            let opts = RunOptions {
                generated_at: run.timestamp,
            };
            let result = federation::run_in_process(&cfg, &registry, &opts)?;
            finish(&result, &cfg, run.out)
        }
        Command::Client {
            config,
            client_id,
            server,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            cfg.client(&client_id)?;
            let done = federation::run_client(
                &client_id,
                || cfg.client_table(&client_id),
                &server,
                &registry,
            )?;
            for o in &done.outcomes {
                say!("{}: {}", o.summary.module_id, o.summary.final_status);
            }
            Ok(())
        }
        Command::Pollute {
            input,
            output,
            recipe,
            seed,
            label_column,
            sensitive_feature,
            quasi_identifiers,
        } => {
            let text = fs::read_to_string(&recipe).map_err(Error::from)?;
            let kind: PollutionKind = serde_yaml::from_str(&text).map_err(|e| Failure {
                code: 1,
                message: format!("{}: {e}", recipe.display()),
            })?;
            kind.validate()?;
            let mut meta = DatasetMeta::new("");
            meta.label_column = label_column;
            meta.sensitive_feature = sensitive_feature;
            meta.quasi_identifiers = quasi_identifiers;
            let sidecar = table_io::sidecar_path(&input);
            let schema = sidecar
                .exists()
                .then(|| table_io::read_schema(&sidecar))
                .transpose()?;
            let table =
                table_io::load_table(&input, Format::from_path(&input), meta, schema.as_ref())?;
            let polluted = pollute(
                &table,
                &PollutionSpec {
                    kind,
                    rng_seed: seed,
                },
            )?;
            table_io::save_table(&polluted, &output)?;
            say!("wrote {} ({} rows)", output.display(), polluted.n_rows());
            Ok(())
        }
        Command::Render { input, output } => {
            let text = fs::read_to_string(&input).map_err(Error::from)?;
            let report = DrReport::from_json(&text)?;
            fs::write(&output, report.html()).map_err(Error::from)?;
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg = parse_config(&config)?;
            say!(
                "{}: ok ({} client(s), {} module(s))",
                config.display(),
                cfg.client_ids().len(),
                cfg.cadre_modules.len()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
