//! Monte Carlo harness: size/power studies over scenarios, with
//! reproducible seeding and CSV/JSON reports.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dgp::{simulate_count, simulate_gaussian_cached, CopulaSpec, Init, SimConfig, StationaryLaw};
use crate::error::{Error, Result};
use crate::lintest::lm_test_with_fit;
use crate::model::{Domain, Family, ModelSpec};
use crate::netgraph::{gen_er, gen_sbm, Network};
use crate::nuisance::{default_grid, lm_profile_with_fit, profile_test, Aggregate, GammaGrid, PValueMethod};
use crate::panel::Panel;
use crate::qmle::fit_linear;
use crate::rng::{derive_seed, mix_seed};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Random network model of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum NetworkModel {
    Sbm { k: usize },
    Er {
        #[serde(default)]
        p: Option<f64>,
    },
}

impl NetworkModel {
    pub fn generate(&self, n: usize, seed: u64) -> Result<Network> {
        match *self {
            NetworkModel::Sbm { k } => gen_sbm(n, k, seed),
            NetworkModel::Er { p } => gen_er(n, p, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Chi2,
    Davies,
    Bootstrap,
}

fn default_levels() -> Vec<f64> {
    vec![0.10, 0.05, 0.01]
}

fn default_j() -> usize {
    299
}

fn default_burn_in() -> usize {
    300
}

fn default_sigma() -> f64 {
    1.0
}

fn default_copula() -> String {
    "indep".into()
}

fn default_grid_text() -> String {
    "auto".into()
}

/// One Monte Carlo cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub network: NetworkModel,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// Data-generating family (`linear` for size studies).
    pub family: Family,
    pub domain: Domain,
    /// Linear parameters `b0, b1, b2`.
    pub theta: [f64; 3],
    /// Nonlinear parameters of the data-generating family, in model order.
    #[serde(default)]
    pub theta2: Vec<f64>,
    #[serde(default = "default_copula")]
    pub copula: String,
    #[serde(rename = "S")]
    pub s: usize,
    pub test: TestKind,
    /// Tested alternative; defaults to drift (chi2), stnar (davies) or
    /// tnar (bootstrap).
    #[serde(default)]
    pub alternative: Option<Family>,
    /// `auto` or `lo:hi:n`.
    #[serde(default = "default_grid_text")]
    pub grid: String,
    #[serde(rename = "J", default = "default_j")]
    pub j: usize,
    #[serde(default)]
    pub agg: Aggregate,
    pub base_seed: u64,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub redraw_network: bool,
}

impl Scenario {
    pub fn alternative(&self) -> Family {
        self.alternative.unwrap_or(match self.test {
            TestKind::Chi2 => Family::InterceptDrift,
            TestKind::Davies => Family::Stnar,
            TestKind::Bootstrap => Family::Tnar,
        })
    }

    pub fn dgp_spec(&self) -> Result<ModelSpec> {
        let mut theta = self.theta.to_vec();
        theta.extend_from_slice(&self.theta2);
        ModelSpec::new(self.family, self.domain, theta)
    }

    pub fn copula_spec(&self) -> Result<CopulaSpec> {
        CopulaSpec::from_str(&self.copula)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s < 1 {
            return Err(Error::InvalidArgument(format!("scenario {}: S must be >= 1", self.id)));
        }
        if self.levels.is_empty()
            || self.levels.iter().any(|&l| !(l > 0.0 && l < 1.0))
            || self.levels.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: levels must lie in (0,1) and be sorted descending",
                self.id
            )));
        }
        if self.t < 3 {
            return Err(Error::InvalidArgument(format!("scenario {}: T must be >= 3", self.id)));
        }
        self.dgp_spec()?;
        self.copula_spec()?;
        let alt = self.alternative();
        match (self.test, alt) {
            (TestKind::Chi2, Family::InterceptDrift) => {}
            (TestKind::Davies, Family::Stnar) => {}
            (TestKind::Bootstrap, Family::Stnar | Family::Tnar) => {}
            (test, alt) => {
                return Err(Error::InvalidArgument(format!(
                    "scenario {}: test {test:?} cannot target the {alt} alternative",
                    self.id
                )))
            }
        }
        if self.test != TestKind::Chi2 && self.grid != "auto" {
            GammaGrid::parse_range(&self.grid)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<Scenario>,
}

impl StudyConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub scenario: String,
    pub level: f64,
    pub rejection_rate: f64,
    pub mc_se: f64,
    /// Successful replications entering the rate.
    pub replications: usize,
    pub failures: usize,
    pub elapsed_s: f64,
}

/// Everything produced for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub rows: Vec<StudyRow>,
    /// Test statistic of each successful replication, in replication order.
    pub statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub failures: usize,
    pub network_seed: u64,
    /// Grid used by the first successful replication (nuisance tests).
    pub grid: Option<Vec<f64>>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub scenarios: Vec<ScenarioOutcome>,
}

impl StudyOutput {
    pub fn rows(&self) -> Vec<StudyRow> {
        self.scenarios.iter().flat_map(|s| s.rows.clone()).collect()
    }
}

/// Seed tag for the per-scenario network.
const NETWORK_STREAM: u64 = 0x6E65_7477_6F72_6B00;
/// Seed tag for bootstrap multipliers within a replication.
const BOOT_STREAM: u64 = 1;

/// Outcome of one replication: test statistic and p-value.
#[derive(Debug, Clone, Copy)]
pub struct Replication {
    pub statistic: f64,
    pub p_value: f64,
}

struct Prepared {
    spec: ModelSpec,
    copula: CopulaSpec,
    net: Network,
    law: Option<StationaryLaw>,
    explicit_grid: Option<GammaGrid>,
}

fn simulate_panel(sc: &Scenario, prep: &Prepared, net: &Network, law: Option<&StationaryLaw>, seed: u64) -> Result<Panel> {
    let cfg = SimConfig { t: sc.t, burn_in: sc.burn_in, seed, sigma: sc.sigma, init: Init::Auto };
    match sc.domain {
        Domain::Count => simulate_count(&prep.spec, net, &prep.copula, &cfg),
        Domain::Continuous => simulate_gaussian_cached(&prep.spec, net, &cfg, law),
    }
}

/// Fits the null and applies the scenario's test to one panel.
pub fn test_panel(sc: &Scenario, panel: &Panel, net: &Network, grid: Option<&GammaGrid>, boot_seed: u64) -> Result<(Replication, Option<Vec<f64>>)> {
    let fit = fit_linear(panel, net)?;
    if !fit.converged {
        return Err(Error::NotConverged { iterations: fit.iterations });
    }
    let alt = sc.alternative();
    match sc.test {
        TestKind::Chi2 => {
            let r = lm_test_with_fit(panel, net, alt, fit)?;
            Ok((Replication { statistic: r.statistic, p_value: r.p_value }, None))
        }
        TestKind::Davies | TestKind::Bootstrap => {
            let owned;
            let grid = match grid {
                Some(g) => g,
                None => {
                    owned = default_grid(alt, Some(panel), Some(net))?;
                    &owned
                }
            };
            let profile = lm_profile_with_fit(panel, net, alt, grid, &fit)?;
            let (method, agg) = match sc.test {
                TestKind::Davies => (PValueMethod::Davies, Aggregate::Sup),
                _ => (PValueMethod::Bootstrap, sc.agg),
            };
            let res = profile_test(&profile, method, agg, sc.j, boot_seed)?;
            let statistic = match agg {
                Aggregate::Sup => res.g_sup,
                Aggregate::Ave => res.g_ave,
            };
            let p = res.p_value().expect("p-value requested");
            Ok((Replication { statistic, p_value: p }, Some(profile.grid.values)))
        }
    }
}

fn prepare(sc: &Scenario, index: usize) -> Result<(Prepared, u64)> {
    sc.validate()?;
    let spec = sc.dgp_spec()?;
    let copula = sc.copula_spec()?;
    let network_seed = derive_seed(derive_seed(sc.base_seed, index as u64), NETWORK_STREAM);
    let net = sc.network.generate(sc.n, network_seed)?;
    let law = if sc.domain == Domain::Continuous && !sc.redraw_network {
        Some(StationaryLaw::new(spec.beta(), &net, sc.sigma)?)
    } else {
        None
    };
    let explicit_grid = if sc.test != TestKind::Chi2 && sc.grid != "auto" {
        Some(GammaGrid::parse_range(&sc.grid)?)
    } else {
        None
    };
    Ok((Prepared { spec, copula, net, law, explicit_grid }, network_seed))
}

fn run_replication(sc: &Scenario, index: usize, prep: &Prepared, r: usize) -> Result<(Replication, Option<Vec<f64>>)> {
    let seed = mix_seed(sc.base_seed, index as u64, r as u64);
    let boot_seed = derive_seed(seed, BOOT_STREAM);
    if sc.redraw_network {
        let net = sc.network.generate(sc.n, derive_seed(seed, NETWORK_STREAM))?;
        let law = if sc.domain == Domain::Continuous {
            Some(StationaryLaw::new(prep.spec.beta(), &net, sc.sigma)?)
        } else {
            None
        };
        let panel = simulate_panel(sc, prep, &net, law.as_ref(), seed)?;
        test_panel(sc, &panel, &net, prep.explicit_grid.as_ref(), boot_seed)
    } else {
        let panel = simulate_panel(sc, prep, &prep.net, prep.law.as_ref(), seed)?;
        test_panel(sc, &panel, &prep.net, prep.explicit_grid.as_ref(), boot_seed)
    }
}

/// Runs one scenario (index `index` within its study).
pub fn run_scenario(sc: &Scenario, index: usize) -> Result<ScenarioOutcome> {
    let start = Instant::now();
    let (prep, network_seed) = prepare(sc, index)?;
    let results: Vec<Result<(Replication, Option<Vec<f64>>)>> =
        (0..sc.s).into_par_iter().map(|r| run_replication(sc, index, &prep, r)).collect();
    let mut statistics = Vec::with_capacity(sc.s);
    let mut p_values = Vec::with_capacity(sc.s);
    let mut failures = 0;
    let mut grid = None;
    for res in results {
        match res {
            Ok((rep, g)) => {
                statistics.push(rep.statistic);
                p_values.push(rep.p_value);
                if grid.is_none() {
                    grid = g;
                }
            }
            Err(e) => {
                log::warn!("scenario {}: replication failed: {e}", sc.id);
                failures += 1;
            }
        }
    }
    if failures as f64 > 0.01 * sc.s as f64 {
        return Err(Error::InvalidArgument(format!(
            "scenario {} aborted: {failures} of {} replications failed",
            sc.id, sc.s
        )));
    }
    let elapsed_s = start.elapsed().as_secs_f64();
    let ok = p_values.len();
    let rows = sc
        .levels
        .iter()
        .map(|&level| {
            let rejected = p_values.iter().filter(|&&p| p <= level).count();
            let rate = rejected as f64 / ok as f64;
            StudyRow {
                scenario: sc.id.clone(),
                level,
                rejection_rate: rate,
                mc_se: (rate * (1.0 - rate) / ok as f64).sqrt(),
                replications: ok,
                failures,
                elapsed_s,
            }
        })
        .collect();
    Ok(ScenarioOutcome { scenario: sc.clone(), rows, statistics, p_values, failures, network_seed, grid, elapsed_s })
}

/// Runs every scenario in order. A scenario whose failure share exceeds 1%
/// aborts the study with an error naming it.
pub fn run_mc_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    let scenarios = cfg
        .scenarios
        .iter()
        .enumerate()
        .map(|(k, sc)| run_scenario(sc, k))
        .collect::<Result<_>>()?;
    Ok(StudyOutput { scenarios })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Picks the format from a file extension (`.json`, anything else CSV).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

fn grid_text(o: &ScenarioOutcome) -> String {
    match &o.grid {
        Some(g) => g.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" "),
        None => String::new(),
    }
}

/// JSON form of a study, without timings when `with_timing` is false.
pub fn report_json(out: &StudyOutput, with_timing: bool) -> serde_json::Value {
    let scenarios: Vec<_> = out
        .scenarios
        .iter()
        .map(|o| {
            let rows: Vec<_> = o
                .rows
                .iter()
                .map(|r| {
                    let mut v = json!({
                        "level": r.level,
                        "rejection_rate": r.rejection_rate,
                        "mc_se": r.mc_se,
                        "replications": r.replications,
                        "failures": r.failures,
                    });
                    if with_timing {
                        v["elapsed_s"] = json!(r.elapsed_s);
                    }
                    v
                })
                .collect();
            json!({
                "id": o.scenario.id,
                "config": o.scenario,
                "base_seed": o.scenario.base_seed,
                "network_seed": o.network_seed,
                "test": o.scenario.test,
                "alternative": o.scenario.alternative(),
                "J": if o.scenario.test == TestKind::Bootstrap { Some(o.scenario.j) } else { None },
                "grid": o.grid,
                "rows": rows,
            })
        })
        .collect();
    json!({ "tool": "netar", "version": VERSION, "scenarios": scenarios })
}

const CSV_HEADER: [&str; 12] = [
    "scenario", "level", "rejection_rate", "mc_se", "replications", "failures", "test", "base_seed", "J", "grid",
    "version", "elapsed_s",
];

pub fn write_csv_report<W: std::io::Write>(out: &StudyOutput, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for o in &out.scenarios {
        let j = if o.scenario.test == TestKind::Bootstrap { o.scenario.j.to_string() } else { String::new() };
        let test = serde_json::to_value(o.scenario.test)?.as_str().unwrap_or_default().to_string();
        for r in &o.rows {
            wr.write_record([
                r.scenario.clone(),
                format!("{}", r.level),
                format!("{}", r.rejection_rate),
                format!("{}", r.mc_se),
                r.replications.to_string(),
                r.failures.to_string(),
                test.clone(),
                o.scenario.base_seed.to_string(),
                j.clone(),
                grid_text(o),
                VERSION.to_string(),
                format!("{:.3}", r.elapsed_s),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Writes the study table to `path` as JSON or CSV.
pub fn emit_report(out: &StudyOutput, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report_json(out, true))?;
        }
        ReportFormat::Csv => write_csv_report(out, file)?,
    }
    Ok(())
}

/// Writes the per-replication statistics (`scenario,replication,statistic,p_value`)
/// for QQ analysis.
pub fn write_qq<W: std::io::Write>(out: &StudyOutput, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scenario", "replication", "statistic", "p_value"])?;
    for o in &out.scenarios {
        for (k, (s, p)) in o.statistics.iter().zip(&o.p_values).enumerate() {
            wr.write_record([o.scenario.id.clone(), k.to_string(), format!("{s:?}"), format!("{p:?}")])?;
        }
    }
    wr.flush()?;
    Ok(())
}
