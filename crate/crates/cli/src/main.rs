use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vlnlab::expcli::{load_config, pipeline_verbs, run_command, ExpError, RunOptions, Verb};

/// Experiment runner: gen-worlds, gen-syfis, pretrain-translator,
/// train-agent, evaluate, translate, report, or pipeline (all of them in
/// order for the selected ablation).
#[derive(Parser, Debug)]
#[command(name = "vlnlab", version)]
struct Cli {
    verb: String,

    /// JSON run config; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set agent.lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// no-translator, no-sig, no-dsl or no-ss. Repeatable.
    #[arg(long)]
    ablation: Vec<String>,

    /// Output directory (config key `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Record id for `translate`.
    #[arg(long)]
    record: Option<String>,
}

fn run(cli: Cli) -> Result<(), ExpError> {
    let mut overrides = Vec::new();
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ExpError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        let quoted = serde_json::Value::String(out.display().to_string()).to_string();
        overrides.push(("output_dir".into(), quoted));
    }
    for name in &cli.ablation {
        let key = match name.as_str() {
            "no-translator" => "ablation.no_translator",
            "no-sig" => "ablation.no_sig",
            "no-dsl" => "ablation.no_dsl",
            "no-ss" => "ablation.no_ss",
            other => {
                return Err(ExpError::Usage(format!(
                    "unknown ablation `{other}`, expected no-translator, no-sig, no-dsl or no-ss"
                )))
            }
        };
        overrides.push((key.into(), "true".into()));
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    let verbs = if cli.verb == "pipeline" {
        pipeline_verbs(&cfg)
    } else {
        vec![cli.verb.parse::<Verb>()?]
    };
    let opts = RunOptions { record: cli.record };
    for verb in verbs {
        let manifest = run_command(verb, &cfg, &opts)?;
        println!("{} ok {}", verb.name(), manifest.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(if matches!(e.category(), "config" | "usage") {
                2
            } else {
                1
            })
        }
    }
}
