use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netar::dgp::{simulate, CopulaSpec, SimConfig};
use netar::lintest::lm_test;
use netar::model::{Domain, Family, ModelSpec};
use netar::netgraph::{gen_er, gen_sbm, load_edges, write_edges, Network};
use netar::nuisance::{default_grid, lm_profile, profile_test, Aggregate, GammaGrid, PValueMethod};
use netar::panel::{load_panel_csv, Panel};
use netar::qmle::{ols_fit_linear, qmle_fit, FitOptions};
use netar::studio::{emit_report, run_mc_study, write_qq, ReportFormat, StudyConfig};

#[derive(Parser)]
#[command(name = "netar", version, about = "Network autoregressions: simulate, fit and test linearity")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Network generation
    Net {
        #[command(subcommand)]
        cmd: NetCmd,
    },
    /// Simulate a panel
    Sim(SimArgs),
    /// Fit the linear model by QMLE (count) or least squares (continuous)
    Fit(FitArgs),
    /// Linearity tests
    Test {
        #[command(subcommand)]
        cmd: TestCmd,
    },
    /// Monte Carlo studies
    Mc {
        #[command(subcommand)]
        cmd: McCmd,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NetModel {
    Sbm,
    Er,
}

#[derive(Subcommand)]
enum NetCmd {
    Gen {
        #[arg(long, value_enum)]
        model: NetModel,
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        /// Edge probability for ER (default: the package default for N)
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        seed: u64,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    /// Poisson network autoregression (counts)
    Pnar,
    /// Gaussian network autoregression (continuous)
    Nar,
}

impl FamilyArg {
    fn domain(self) -> Domain {
        match self {
            FamilyArg::Pnar => Domain::Count,
            FamilyArg::Nar => Domain::Continuous,
        }
    }
}

#[derive(Args)]
struct Inputs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    panel: PathBuf,
}

impl Inputs {
    fn load(&self) -> netar::Result<(Panel, Network)> {
        let panel = load_panel_csv(&self.panel, self.family.domain())?;
        let net = load_edges(&self.net, Some(panel.n()))?;
        Ok((panel, net))
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// linear | drift:gamma=G | stnar:alpha=A,gamma=G | tnar:a0=..,a1=..,a2=..,gamma=G
    #[arg(long, default_value = "linear")]
    spec: String,
    /// b0,b1,b2
    #[arg(long)]
    theta: String,
    #[arg(long)]
    net: PathBuf,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 300)]
    burn_in: usize,
    #[arg(long, default_value = "indep")]
    copula: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    seed: u64,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value = "linear")]
    spec: String,
    /// Starting values b0,b1,b2
    #[arg(long)]
    theta0: Option<String>,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alt {
    Drift,
    Stnar,
    Tnar,
}

impl Alt {
    fn family(self) -> Family {
        match self {
            Alt::Drift => Family::InterceptDrift,
            Alt::Stnar => Family::Stnar,
            Alt::Tnar => Family::Tnar,
        }
    }
}

#[derive(Subcommand)]
enum TestCmd {
    /// Chi-square quasi-score test against the intercept-drift model
    Score {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value = "drift")]
        alt: Alt,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Sup/average score test over a nuisance grid
    Sup {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum)]
        alt: Alt,
        /// lo:hi:n or auto
        #[arg(long, default_value = "auto")]
        grid: String,
        #[arg(long, default_value = "davies")]
        method: String,
        #[arg(long, default_value_t = 499)]
        boot_reps: usize,
        #[arg(long, default_value = "sup")]
        agg: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum McCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// .csv or .json, chosen by extension
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        #[arg(long)]
        qq_out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn parse_beta(text: &str) -> netar::Result<[f64; 3]> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| netar::Error::Parse(format!("theta: {e}")))?;
    <[f64; 3]>::try_from(v).map_err(|v| netar::Error::Parse(format!("theta needs 3 values, got {}", v.len())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> netar::Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn run(cli: Cli) -> netar::Result<()> {
    match cli.cmd {
        Cmd::Net { cmd: NetCmd::Gen { model, nodes, blocks, p, seed, out } } => {
            let net = match model {
                NetModel::Sbm => gen_sbm(nodes, blocks, seed)?,
                NetModel::Er => gen_er(nodes, p, seed)?,
            };
            for w in net.warnings() {
                log::warn!("{w}");
            }
            write_edges(&net, &out)?;
        }
        Cmd::Sim(a) => {
            let domain = a.family.domain();
            let net = load_edges(&a.net, None)?;
            let spec = ModelSpec::parse(&a.spec, domain, parse_beta(&a.theta)?)?;
            let cop: CopulaSpec = a.copula.parse()?;
            let cfg = SimConfig::new(a.t, a.seed).burn_in(a.burn_in).sigma(a.sigma);
            simulate(&spec, &net, &cop, &cfg)?.write_csv(&a.out)?;
        }
        Cmd::Fit(a) => {
            let (panel, net) = a.inputs.load()?;
            let spec = ModelSpec::parse(&a.spec, panel.domain(), [1.0, 0.2, 0.2])?;
            if spec.family() != Family::Linear {
                return Err(netar::Error::Unsupported("only the linear model is fitted".into()));
            }
            let fit = match (panel.domain(), &a.theta0) {
                (Domain::Continuous, None) => ols_fit_linear(&panel, &net)?,
                (_, theta0) => {
                    let start = theta0.as_deref().map(parse_beta).transpose()?.map(|b| b.to_vec());
                    qmle_fit(&panel, &net, &spec, start.as_deref(), &FitOptions::default())?
                }
            };
            write_json(&a.out, &fit.to_json())?;
        }
        Cmd::Test { cmd: TestCmd::Score { inputs, alt, out } } => {
            let (panel, net) = inputs.load()?;
            write_json(&out, &lm_test(&panel, &net, alt.family())?.to_json())?;
        }
        Cmd::Test { cmd: TestCmd::Sup { inputs, alt, grid, method, boot_reps, agg, seed, out } } => {
            let (panel, net) = inputs.load()?;
            let family = alt.family();
            let grid = if grid.eq_ignore_ascii_case("auto") {
                default_grid(family, Some(&panel), Some(&net))?
            } else {
                GammaGrid::parse_range(&grid)?
            };
            let method: PValueMethod = method.parse()?;
            let agg: Aggregate = agg.parse()?;
            let profile = lm_profile(&panel, &net, family, &grid)?;
            let result = profile_test(&profile, method, agg, boot_reps, seed)?;
            write_json(&out, &profile.to_json(&result))?;
        }
        Cmd::Mc { cmd: McCmd::Run { config, out, qq_out, threads } } => {
            let cfg = StudyConfig::from_json_file(&config)?;
            let study = || -> netar::Result<()> {
                let result = run_mc_study(&cfg)?;
                emit_report(&result, &out, ReportFormat::from_path(&out))?;
                if let Some(q) = &qq_out {
                    write_qq(&result, BufWriter::new(File::create(q)?))?;
                }
                Ok(())
            };
            match threads {
                Some(k) => rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| netar::Error::InvalidArgument(e.to_string()))?
                    .install(study)?,
                None => study()?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
