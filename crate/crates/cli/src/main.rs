//! `sivsim`: run SiV⁻ simulation scenarios from presets or config files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use siv_core::config::{ConfigText, PRESETS};
use siv_core::output::{manifest, write_files};
use siv_core::{scenario, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "sivsim", version, about = "Simulate optical spin experiments on SiV- centres in diamond")]
struct Args {
    /// Config file of `section.key = value` lines; a manifest.txt works too.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Start from a named preset (applied before --config).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Override one key, e.g. `--set env.temperature=8K`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "sivsim-out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    /// Shot-noise seed; overrides run.seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Skip plot.svg.
    #[arg(long)]
    no_plot: bool,

    /// List presets and exit.
    #[arg(long)]
    list_presets: bool,

    /// List every config key with its default and exit.
    #[arg(long)]
    list_keys: bool,
}

fn load(args: &Args) -> Result<ConfigText, Error> {
    let mut c = match &args.preset {
        Some(p) => ConfigText::preset(p)?,
        None => ConfigText::defaults(),
    };
    let mut base = PathBuf::from(".");
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
        c.apply_text(&text).map_err(|e| match e {
            Error::Parse { line, column, message } => {
                Error::Parse { line, column, message: format!("{}: {message}", path.display()) }
            }
            e => e,
        })?;
        base = path.parent().map(Path::to_path_buf).unwrap_or(base);
    }
    c.inline_files(&base)?;
    for o in &args.overrides {
        c.apply_override(o)?;
    }
    // Overridden references resolve against the working directory.
    c.inline_files(Path::new("."))?;
    if let Some(seed) = args.seed {
        c.set("run.seed", &seed.to_string())?;
    }
    Ok(c)
}

fn execute(args: &Args) -> Result<(), Error> {
    let text = load(args)?;
    let cfg = text.resolve()?;
    let start = Instant::now();
    let outcome = scenario::run(&cfg)?;
    let elapsed = start.elapsed();

    let mut files = outcome.files(!args.no_plot);
    let m = manifest(&text.to_text(), &files);
    files.push(("manifest.txt".to_string(), m));
    write_files(&args.out, &files)?;

    println!("scenario {} finished in {:.2?}", cfg.scenario_name(), elapsed);
    for (k, v) in &outcome.summary {
        println!("  {k} = {v:e}");
    }
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list_presets {
        for p in PRESETS {
            println!("{p}");
        }
        return ExitCode::SUCCESS;
    }
    if args.list_keys {
        for k in siv_core::config::KEYS {
            println!("{} = {}    # {}", k.key, k.default, k.help);
        }
        return ExitCode::SUCCESS;
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    match pool.install(|| execute(&args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL })
        }
    }
}
