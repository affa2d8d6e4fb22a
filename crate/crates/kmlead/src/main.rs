use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kmlead::config::{
    env_seed, resolve_seed, ArmRef, PairingMode, PipelineConfig, ProjectionConfig, Seeds, SimilarityConfig,
    SynthesisConfig,
};
use kmlead::error::{Error, Result, EXIT_OK};
use kmlead::pipeline::{
    analysis_grid, cluster_stage, load_baseline, load_bundle, project, reconstruct_all,
    synthesize_class, write_class_outputs, write_cluster_outputs, write_projection,
};
use kmlead::{demo, service};
use kmlead_core::io::{read_ipd, read_predictive, read_risk_tables, read_xy, render_ipd, write_file};
use kmlead_core::report::ValidationReport;
use kmlead_core::similarity::{default_covariates, Aggregation, ProfileChoice};
use kmlead_core::synthesis::Priors;
use kmlead_core::validate::{validate_bundle, validate_curve, validate_risk_table};
use tracing::info;

#[derive(Parser)]
#[command(name = "kmlead", version, about = "Digitized survival curves to predictive OS projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Average,
    Maximum,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Aggregation> {
        match self {
            ModeArg::Average => vec![Aggregation::Average],
            ModeArg::Maximum => vec![Aggregation::Maximum],
            ModeArg::Both => vec![Aggregation::Average, Aggregation::Maximum],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check curve and risk-table files; exits 2 on any error finding.
    Validate {
        #[arg(long)]
        xy: Option<PathBuf>,
        #[arg(long)]
        risk: Option<PathBuf>,
        /// Directory holding xy.csv and risk_table.csv.
        #[arg(long, conflicts_with_all = ["xy", "risk"])]
        dir: Option<PathBuf>,
    },
    /// Reconstruct individual patient data for every curve.
    Reconstruct {
        #[arg(long)]
        xy: PathBuf,
        #[arg(long)]
        risk: PathBuf,
        #[arg(long, default_value = "ipd.csv")]
        out: PathBuf,
    },
    /// Baseline dissimilarity and k-medoids clustering of trials.
    Cluster {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Number of clusters; chosen by silhouette when absent.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        covariates: Option<Vec<String>>,
        /// Represent a multi-arm trial by one arm, as STUDY/ARM.
        #[arg(long = "arm")]
        arms: Vec<ArmRef>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit the hierarchical model to one class of arms and draw predictive curves.
    Synthesize {
        #[arg(long)]
        ipd: PathBuf,
        /// Risk tables that fix the analysis grid.
        #[arg(long)]
        risk: PathBuf,
        /// Arms of the class as STUDY/ARM; all arms in the IPD file by default.
        #[arg(long = "arm")]
        arms: Vec<ArmRef>,
        /// Extend the grid to at least this many months.
        #[arg(long, default_value_t = 0.0)]
        horizon: f64,
        #[arg(long, default_value_t = 4)]
        chains: usize,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long, default_value_t = 10_000)]
        burn_in: usize,
        #[arg(long, default_value_t = 5)]
        thin: usize,
        #[arg(long, default_value_t = 4000)]
        draws: usize,
        /// Keep the fit even when split-Rhat exceeds the limit.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare two predictive ensembles: OS table, medians, benefit probability.
    Project {
        /// Reference class as NAME=predictive.csv.
        #[arg(long)]
        a: String,
        /// Comparator class as NAME=predictive.csv; differences are b - a.
        #[arg(long)]
        b: String,
        #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
        margin: f64,
        #[arg(long, value_delimiter = ',', default_value = "12,24,36,48,60")]
        times: Vec<f64>,
        #[arg(long, value_enum, default_value = "index")]
        pairing: PairingMode,
        /// Published curves to overlay in fan.csv.
        #[arg(long)]
        xy: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run every stage from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic inputs and a matching demo.toml.
    Demo {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
        /// Seed for the simulated trials.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Serve the digitization API.
    Serve {
        #[arg(long, default_value = "workspace")]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn seed(flag: Option<u64>, config: u64) -> Result<u64> {
    resolve_seed(flag, env_seed().as_deref(), config)
}

fn validate(xy: Option<PathBuf>, risk: Option<PathBuf>, dir: Option<PathBuf>) -> Result<()> {
    let (xy, risk) = match dir {
        Some(d) => (Some(d.join("xy.csv")), Some(d.join("risk_table.csv"))),
        None => (xy, risk),
    };
    let report = match (xy, risk) {
        (Some(x), Some(r)) => validate_bundle(&read_xy(&x)?, &read_risk_tables(&r)?),
        (Some(x), None) => read_xy(&x)?.iter().fold(ValidationReport::new(), |mut acc, c| {
            acc.merge(validate_curve(c));
            acc
        }),
        (None, Some(r)) => read_risk_tables(&r)?.iter().fold(ValidationReport::new(), |mut acc, t| {
            acc.merge(validate_risk_table(t));
            acc
        }),
        (None, None) => return Err(Error::Usage("give --xy, --risk or --dir".into())),
    };
    print!("{report}");
    if report.has_errors() {
        return Err(Error::Invalid(report));
    }
    Ok(())
}

fn cluster(
    baseline: &Path,
    mode: ModeArg,
    k: Option<usize>,
    covariates: Option<Vec<String>>,
    arms: Vec<ArmRef>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = SimilarityConfig {
        covariates: covariates.unwrap_or_else(default_covariates),
        modes: mode.modes(),
        k,
        profiles: arms
            .into_iter()
            .map(|a| (a.study, ProfileChoice::Arm(a.arm)))
            .collect::<BTreeMap<_, _>>(),
    };
    let baselines = load_baseline(baseline)?;
    let stage = cluster_stage(&baselines, &cfg, Seeds::derive(seed, 0).clustering)?;
    write_cluster_outputs(out, &stage)?;
    for r in &stage.reports {
        let groups: Vec<String> = r
            .result
            .clusters
            .iter()
            .map(|c| format!("{{{}}}", c.members.join(", ")))
            .collect();
        println!("{}: {}", r.mode, groups.join(" "));
    }
    Ok(())
}

fn split_named(s: &str) -> Result<(&str, PathBuf)> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name, PathBuf::from(path))),
        _ => Err(Error::Usage(format!("expected NAME=PATH, got {s:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { xy, risk, dir } => validate(xy, risk, dir),
        Command::Reconstruct { xy, risk, out } => {
            let (bundle, _) = load_bundle(&xy, &risk)?;
            let ipd = reconstruct_all(&bundle)?;
            write_file(&out, &render_ipd(&ipd))?;
            info!("{} arms written to {}", ipd.len(), out.display());
            Ok(())
        }
        Command::Cluster {
            baseline,
            mode,
            k,
            covariates,
            arms,
            seed: flag,
            out,
        } => cluster(&baseline, mode, k, covariates, arms, seed(flag, 1)?, &out),
        Command::Synthesize {
            ipd,
            risk,
            arms,
            horizon,
            chains,
            iters,
            burn_in,
            thin,
            draws,
            force,
            seed: flag,
            out,
        } => {
            let all = read_ipd(&ipd)?;
            let chosen: Vec<_> = if arms.is_empty() {
                all
            } else {
                arms.iter()
                    .map(|a| {
                        all.iter()
                            .find(|r| r.study.render() == a.study && r.arm_label == a.arm)
                            .cloned()
                            .ok_or_else(|| Error::Usage(format!("no IPD for {a}")))
                    })
                    .collect::<Result<_>>()?
            };
            let tables = read_risk_tables(&risk)?;
            let grid = analysis_grid(&tables, &chosen, horizon)?;
            let cfg = SynthesisConfig {
                target: String::new(),
                chains,
                iters,
                burn_in,
                thin,
                force,
                n_total: None,
                draws,
                priors: Priors::default(),
            };
            let seeds = Seeds::derive(seed(flag, 1)?, 1);
            let fit = synthesize_class("class", &chosen, &grid, &cfg, seeds.classes[0])?;
            write_class_outputs(&out, &fit, None)?;
            println!(
                "c* = {:.3}, lambda* = {:.5}, kappa* = {:.4}",
                fit.fit.c_star, fit.fit.lambda_star, fit.fit.kappa_star
            );
            Ok(())
        }
        Command::Project {
            a,
            b,
            margin,
            times,
            pairing,
            xy,
            seed: flag,
            out,
        } => {
            let (name_a, path_a) = split_named(&a)?;
            let (name_b, path_b) = split_named(&b)?;
            let ens_a = read_predictive(&path_a)?;
            let ens_b = read_predictive(&path_b)?;
            let published = match xy {
                Some(p) => read_xy(&p)?,
                None => Vec::new(),
            };
            let cfg = ProjectionConfig { margin, times, pairing };
            let seeds = Seeds::derive(seed(flag, 1)?, 0);
            let stage = project((name_a, &ens_a), (name_b, &ens_b), &cfg, seeds.pairing)?;
            write_projection(&out, &stage, &[(name_a, &ens_a), (name_b, &ens_b)], &published)?;
            print_projection(&stage.comparison);
            Ok(())
        }
        Command::Pipeline { config, seed: flag, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let seed = seed(flag, cfg.seed)?;
            let summary = kmlead::pipeline::run_pipeline(&cfg, seed)?;
            println!(
                "target cluster: {}; P(delta median >= {}) = {:.4}; outputs in {}",
                summary.target_cluster.join(", "),
                summary.margin,
                summary.prob_benefit,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Demo { out, seed } => {
            let path = demo::write_demo(&out, seed)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Serve { dir, addr } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Usage(e.to_string()))?;
            Ok(rt.block_on(service::serve(dir, addr))?)
        }
    }
}

fn print_projection(c: &kmlead_core::projection::ArmComparison) {
    match &c.delta_median {
        Some(d) => println!("median difference ({} - {}): {d}", c.label_b, c.label_a),
        None => println!("median difference: not estimable"),
    }
    println!(
        "P(delta median >= {}) = {:.4} ({} pairs excluded)",
        c.margin, c.prob_benefit, c.excluded_pairs
    );
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "kmlead=info".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(r) = e.report() {
                eprint!("{r}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
