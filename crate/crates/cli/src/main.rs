use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use e91sim::commands::{cmd_gfactor, cmd_lhv_threshold, cmd_run, cmd_sweep};
use e91sim::config::{parse_formats, ConfigDocument, Format};
use e91sim::report::{write_bundle, Bundle, CommandReport};
use e91sim::Error;

/// Ekert key distribution simulator with a spatial detection factor.
#[derive(Parser)]
#[command(name = "e91sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute g by closed form, quadrature and Monte Carlo.
    Gfactor(Common),
    /// Find the largest forgeable scale of the singlet correlations.
    LhvThreshold(Common),
    /// Run one protocol session.
    Run(Common),
    /// Run one session per grid point.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.directory` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated output formats: json, csv.
    #[arg(long)]
    format: Option<String>,
}

fn summary(report: &CommandReport) -> String {
    match report {
        CommandReport::Gfactor(r) => {
            let mut s = String::new();
            if let Some(a) = &r.analytic {
                s += &format!("analytic     g = {:.9}\n", a.value);
            }
            s += &format!(
                "quadrature   g = {:.9} (order {}, delta {:.2e})\n",
                r.quadrature.value, r.quadrature.order, r.quadrature.delta
            );
            s += &format!(
                "monte carlo  g = {:.9} ± {:.2e} ({} samples)\n",
                r.monte_carlo.value, r.monte_carlo.std_error, r.monte_carlo.samples_or_order
            );
            s += &format!(
                "agreement: {}\ndetectability: {:?} (threshold {:.6})",
                if r.agreement.agree { "yes" } else { "NO" },
                r.detectability,
                r.threshold
            );
            s
        }
        CommandReport::LhvThreshold(r) => r
            .entries
            .iter()
            .map(|e| {
                let rate = e
                    .rate_constraint
                    .map(|v| format!(", rate {v}"))
                    .unwrap_or_default();
                let bound = e
                    .certificate
                    .as_ref()
                    .map(|c| {
                        format!(
                            ", certificate bound {:.6} on {} pairs",
                            c.bound,
                            e.binding_pairs.len()
                        )
                    })
                    .unwrap_or_default();
                format!(
                    "{:?}{rate}: max forgeable scale {:.9}{bound}",
                    e.alphabet, e.search.scale
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
        CommandReport::Run(r) => {
            let mut s = format!("g = {:.6} ({:?})\n", r.g.g, r.detectability);
            if let Some(c) = &r.chsh {
                s += &format!("S = {:.4} ± {:.4} ({:?})\n", c.s, c.std_error, c.analysis);
            }
            if let Some(k) = &r.key {
                s += &format!(
                    "key: {} bits, qber {:.4}, eve knowledge {:.3}\n",
                    k.length, k.qber, k.eve_knowledge_fraction
                );
            }
            for w in &r.warnings {
                s += &format!("warning: {w}\n");
            }
            s += &format!("decision: {:?}", r.decision);
            s
        }
        CommandReport::Sweep(r) => {
            let ok = r.rows.iter().filter(|row| row.error.is_none()).count();
            format!("{:?} sweep: {ok}/{} rows succeeded", r.variable, r.rows.len())
        }
    }
}

fn execute(command: Command) -> Result<(Bundle, PathBuf, Vec<Format>), Error> {
    let (run, common): (fn(&ConfigDocument) -> e91sim::Result<Bundle>, Common) = match command {
        Command::Gfactor(c) => (cmd_gfactor, c),
        Command::LhvThreshold(c) => (cmd_lhv_threshold, c),
        Command::Run(c) => (cmd_run, c),
        Command::Sweep(c) => (cmd_sweep, c),
    };
    let mut doc = ConfigDocument::load(&common.config)?;
    if let Some(seed) = common.seed {
        doc.seed = seed;
    }
    let formats = match &common.format {
        Some(f) => parse_formats(f)?,
        None => doc.output.formats.clone(),
    };
    let out = common.out.clone().unwrap_or_else(|| doc.output.directory.clone());
    Ok((run(&doc)?, out, formats))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match execute(cli.command) {
        Ok((bundle, out, formats)) => match write_bundle(&bundle, &out, &formats) {
            Ok(files) => {
                println!("{}", summary(&bundle.report));
                for f in files {
                    println!("wrote {}", f.display());
                }
                bundle.exit_code
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
