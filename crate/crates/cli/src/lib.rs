//! `crv` command line: benchmark generation, cascade runs, oracle labels,
//! attack sweeps and report rendering.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use crv_core::cascade::{attack_dataset, exact_margins, oracle_labels, parse_stages, Timing};
use crv_core::harness::{emit_report, write_atomic, ReportFormat};
use crv_core::model::{load_dataset, load_network};
use crv_core::{crv_verify, generate_benchmark, CascadeConfig, CascadeReport, CrvError, GenConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "crv", version, about = "Cascading certified-robustness verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded network and dataset.
    Gen(GenArgs),
    /// Run a verifier cascade and write a report.
    Verify(VerifyArgs),
    /// Label inputs with exact worst-case margins.
    Oracle(OracleArgs),
    /// Run PGD on every input.
    Attack(AttackArgs),
    /// Render a saved report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// TOML generator config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    target_mix: Option<f64>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    data_out: PathBuf,
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// One or more radii, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// TOML cascade config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stages, e.g. `lin,sr(sdp:1,sdp:2,sdp:3)`.
    #[arg(long)]
    cascade: Option<String>,
    /// Enable level skipping inside SR groups.
    #[arg(long)]
    fsr: bool,
    #[arg(long)]
    threshold: Option<f64>,
    /// `wall` or `cost-units`.
    #[arg(long)]
    timing: Option<String>,
    /// Also run PGD for the upper end of the robust-accuracy interval.
    #[arg(long)]
    attack: bool,
    /// Check results against the exact oracle (small hidden layers only).
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
    /// json, csv or md-table.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "md-table")]
    format: String,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn exit_code(err: &CrvError) -> i32 {
    match err {
        CrvError::Io { .. } => EXIT_IO,
        CrvError::Numeric(_) | CrvError::Soundness(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Verify(a) => verify(a),
        Command::Oracle(a) => oracle(a),
        Command::Attack(a) => attack(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn read_text(path: &Path) -> crv_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| CrvError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn gen(a: GenArgs) -> crv_core::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str::<GenConfig>(&read_text(p)?).map_err(|e| CrvError::Config(e.to_string()))?,
        None => GenConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.d = a.d.unwrap_or(cfg.d);
    cfg.m = a.m.unwrap_or(cfg.m);
    cfg.classes = a.classes.unwrap_or(cfg.classes);
    cfg.size = a.size.unwrap_or(cfg.size);
    cfg.weight_scale = a.scale.unwrap_or(cfg.weight_scale);
    if let Some(e) = a.eps {
        cfg.epsilons = e;
    }
    if a.target_mix.is_some() {
        cfg.target_mix = a.target_mix;
    }
    let (net, data, summary) = generate_benchmark(&cfg)?;
    net.save(&a.model_out)?;
    data.save_csv(&a.data_out)?;
    if let Some(f) = summary.robust_fraction {
        eprintln!(
            "robust fraction at eps={}: {f:.3} (target reached: {})",
            cfg.epsilons[0], summary.mix_reached
        );
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> crv_core::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => CascadeConfig::load(p)?,
        None => CascadeConfig::default(),
    };
    if let Some(c) = &a.cascade {
        cfg.stages = parse_stages(c)?;
    }
    cfg.fsr.enabled |= a.fsr;
    if let Some(t) = a.threshold {
        cfg.fsr.threshold = t;
    }
    if let Some(t) = &a.timing {
        cfg.timing = match t.as_str() {
            "wall" => Timing::Wall,
            "cost-units" => Timing::CostUnits,
            other => return Err(CrvError::Config(format!("unknown timing `{other}` (wall, cost-units)"))),
        };
    }
    cfg.run_attack |= a.attack;
    cfg.validate()?;
    let format: ReportFormat = a.format.parse()?;

    let net = load_network(&a.inputs.model)?;
    let data = load_dataset(&a.inputs.data)?;
    let mut runs = Vec::new();
    for &eps in &a.inputs.eps {
        let mut run = crv_verify(&net, &data, eps, &cfg)?;
        if a.oracle {
            run.apply_oracle(&oracle_labels(&net, &data, eps)?)?;
        }
        log::info!("eps={eps}: RA={:.4} TVC={:.4}", run.metrics.ra, run.metrics.tvc);
        runs.push(run);
    }
    let report = CascadeReport::new(&cfg, &net, &data, runs);
    write_atomic(&a.out, emit_report(&report, format).as_bytes())
}

fn oracle(a: OracleArgs) -> crv_core::Result<()> {
    let net = load_network(&a.inputs.model)?;
    let data = load_dataset(&a.inputs.data)?;
    let mut out = String::from("epsilon,index,label,robust,worst_class,worst_margin\n");
    for &eps in &a.inputs.eps {
        for (i, m) in exact_margins(&net, &data, eps)?.into_iter().enumerate() {
            let label = data.points[i].1;
            match m {
                None => out.push_str(&format!("{eps},{i},{label},false,,\n")),
                Some(margins) => {
                    let (c, l) = margins
                        .iter()
                        .copied()
                        .fold(
                            (usize::MAX, f64::NEG_INFINITY),
                            |acc, (c, l)| if l > acc.1 { (c, l) } else { acc },
                        );
                    out.push_str(&format!("{eps},{i},{label},{},{c},{l:?}\n", l < 0.0));
                }
            }
        }
    }
    write_atomic(&a.out, out.as_bytes())
}

fn attack(a: AttackArgs) -> crv_core::Result<()> {
    let net = load_network(&a.inputs.model)?;
    let data = load_dataset(&a.inputs.data)?;
    let cfg = crv_core::AttackConfig {
        steps: a.steps,
        restarts: a.restarts,
        seed: a.seed,
        ..Default::default()
    };
    let mut out = String::from("epsilon,index,label,attack_success\n");
    for &eps in &a.inputs.eps {
        let hits = attack_dataset(&net, &data, eps, &cfg)?;
        for (i, (_, y)) in data.points.iter().enumerate() {
            out.push_str(&format!("{eps},{i},{y},{}\n", hits.binary_search(&i).is_ok()));
        }
        eprintln!(
            "eps={eps}: attack success rate {:.4}",
            hits.len() as f64 / data.len().max(1) as f64
        );
    }
    write_atomic(&a.out, out.as_bytes())
}

fn report(a: ReportArgs) -> crv_core::Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let rep = CascadeReport::from_json(&read_text(&a.input)?)?;
    let text = emit_report(&rep, format);
    match a.out {
        Some(p) => write_atomic(&p, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CrvError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}
