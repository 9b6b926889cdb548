use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use netmis_core::estim::{effects, naive_ols, single_proxy_effects, EffectEstimate};
use netmis_core::harness::{self, Estimator, ExperimentConfig, McSummary};
use netmis_core::ident::OneTypeMode;
use netmis_core::kde::bandwidth;
use netmis_core::spe::{self, PointIdent};
use netmis_core::{simulate, DepNeighborhoods, Error, LinearCasf, ProxyId, Sample, SimDataset};

#[derive(Parser)]
#[command(name = "netmis", version, about = "Treatment and spillover effects with misclassified networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one dataset and print its network statistics.
    Simulate {
        #[command(flatten)]
        design: DesignArgs,
        /// Dataset CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the latent degree law and misclassification matrices.
    Identify {
        #[command(flatten)]
        design: DesignArgs,
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the CASF on a dataset and report effects.
    Estimate {
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Estimators to run, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "spe")]
        estimators: Vec<Estimator>,
        /// Effect labels such as tau_s(1,0,3), separated by spaces or repeated flags.
        #[arg(long, num_args = 1..)]
        queries: Option<Vec<String>>,
        /// Effects CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parameter CSV path for the fitted θ of each estimator, suffixed by estimator.
        #[arg(long)]
        fit_out: Option<PathBuf>,
    },
    /// Replicate simulate-then-estimate and summarize bias, sd, mse and coverage.
    Montecarlo {
        #[command(flatten)]
        design: DesignArgs,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<Estimator>>,
        #[arg(long, num_args = 1..)]
        queries: Option<Vec<String>>,
        /// Summary CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-replication estimates CSV.
        #[arg(long)]
        replications_out: Option<PathBuf>,
    },
}

/// Simulation design. Flags override values from `--config`.
#[derive(Args)]
struct DesignArgs {
    /// Flat TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rdeg: Option<f64>,
    /// Share of units misreporting, both proxies.
    #[arg(long)]
    pomega: Option<f64>,
    /// Per-link false-negative probability, both proxies.
    #[arg(long)]
    pu: Option<f64>,
    /// False-positive scale of proxy 1 (per-pair probability pv/N).
    #[arg(long)]
    pv: Option<f64>,
    /// Proxy 2 override of --pomega.
    #[arg(long)]
    pomega2: Option<f64>,
    /// Proxy 2 override of --pu.
    #[arg(long)]
    pu2: Option<f64>,
    /// False-positive scale of proxy 2.
    #[arg(long)]
    pv2: Option<f64>,
    #[arg(long)]
    copula_rho: Option<f64>,
}

#[derive(Args)]
struct MethodArgs {
    /// Error type the one-type proxy is free of.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<OneTypeMode>,
    /// Proxy (1 or 2) with one type of error.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    one_type_proxy: Option<u8>,
    #[arg(long)]
    bandwidth_exp: Option<f64>,
    /// Smallest unit count for a degree to enter the support window.
    #[arg(long)]
    min_count: Option<usize>,
    /// Skip the first-stage correction in the variance.
    #[arg(long)]
    no_delta: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV; identify simulates from the design flags when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Covariate columns smoothed by kernel instead of exact matching.
    #[arg(long, value_delimiter = ',')]
    continuous: Vec<String>,
}

fn parse_mode(s: &str) -> Result<OneTypeMode, String> {
    OneTypeMode::parse(s).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl DesignArgs {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).map_err(|e| match e {
                Error::Io(m) => Failure::Runtime(anyhow::anyhow!("reading {}: {m}", p.display())),
                e => e.into(),
            })?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(n, seed, rdeg, pv, copula_rho);
        if let Some(v) = self.pomega {
            c.pomega = v;
            c.pomega2 = v;
        }
        if let Some(v) = self.pu {
            c.pu = v;
            c.pu2 = v;
        }
        set!(pomega2, pu2, pv2);
        Ok(c)
    }
}

impl MethodArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        if self.mode.is_some() {
            c.mode = self.mode;
        }
        if let Some(p) = self.one_type_proxy {
            c.one_type_proxy = p;
        }
        if let Some(b) = self.bandwidth_exp {
            c.bandwidth_exp = b;
        }
        if let Some(m) = self.min_count {
            c.min_count = m;
        }
        if self.no_delta {
            c.delta = false;
        }
    }
}

/// Writes to `path`, or stdout when absent.
fn sink(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_data(data: &DataArgs) -> Result<(Sample, DepNeighborhoods), Failure> {
    let path = data.data.as_ref().ok_or_else(|| Failure::Usage("--data is required".into()))?;
    let (sample, nbrs) = if data.continuous.is_empty() {
        harness::ingest_csv(path, None)
    } else {
        let headers = harness::io::read_headers(path)?;
        harness::ingest_csv(path, Some(&harness::CsvSchema::infer(&headers, &data.continuous)))
    }
    .with_context(|| format!("reading {}", path.display()))?;
    let n = sample.len();
    Ok((sample, nbrs.unwrap_or_else(|| DepNeighborhoods::singletons(n))))
}

fn stats_block(ds: &SimDataset) -> String {
    let s = harness::DatasetStats::of(ds);
    let mut out = format!("avg_degree {:.4}\nmax_degree {}\n", s.avg_degree, s.max_degree);
    for p in 0..2 {
        out += &format!(
            "proxy{} false_negative {} false_positive {} ratio {:.4}\n",
            p + 1,
            s.false_negative[p],
            s.false_positive[p],
            s.ratio[p]
        );
    }
    out
}

fn cmd_simulate(design: &DesignArgs, out: &Option<PathBuf>) -> Result<(), Failure> {
    let c = design.load()?;
    let ds = simulate(&c.sim_config(c.seed))?;
    harness::write_sample(&ds.to_sample(), sink(out)?)?;
    let stats = stats_block(&ds);
    if out.is_some() {
        print!("{stats}");
    } else {
        eprint!("{stats}");
    }
    Ok(())
}

fn matrix_lines(m: &netmis_core::ident::StochasticMatrix, lo: usize) -> String {
    let mut s = String::new();
    for r in 0..m.k() {
        let row: Vec<String> = (0..m.k()).map(|c| format!("{:.4}", m.get(r, c))).collect();
        s += &format!("  {:>3} | {}\n", lo + r, row.join(" "));
    }
    s
}

fn point_report(p: &PointIdent) -> String {
    let lo = p.lo;
    let mut s = format!("z = {:?}\nwindow = {}..{} ({} units)\n", p.z, lo, lo + p.k, p.members.len());
    let latent: Vec<String> = p.comps.latent_degree.iter().map(|v| format!("{v:.4}")).collect();
    s += &format!("latent_degree = [{}]\n", latent.join(", "));
    let eig: Vec<String> = p.comps.eigenvalues.iter().map(|v| format!("{v:.4}")).collect();
    s += &format!("eigenvalues = [{}]\n", eig.join(", "));
    s += "primary | latent (rows: observed degree, columns: latent degree)\n";
    s += &matrix_lines(&p.comps.primary_given_latent, lo);
    s += "instrument | latent\n";
    s += &matrix_lines(&p.comps.instrument_given_latent, lo);
    s += &format!("triangularity upper {:.3e} lower {:.3e}\n", p.triangularity.0, p.triangularity.1);
    let q = &p.comps.quality;
    s += &format!(
        "quality cond {:.3e} max_imag {:.3e} clipped_matrix {:.3e} clipped_latent {:.3e} outside {:.4}\n",
        q.cond, q.max_imag, q.clipped_matrix, q.clipped_latent, p.outside
    );
    for (l, k, why) in &p.fallbacks {
        s += &format!("rejected window {}..{}: {why}\n", l, l + k);
    }
    s
}

fn cmd_identify(
    design: &DesignArgs,
    method: &MethodArgs,
    data: &DataArgs,
    out: &Option<PathBuf>,
) -> Result<(), Failure> {
    let mut c = design.load()?;
    method.apply(&mut c);
    let cfg = c.spe_config().ok_or_else(|| Failure::Usage("identify needs --mode (nfn or nfp)".into()))?;
    let sample = if data.data.is_some() { load_data(data)?.0 } else { simulate(&c.sim_config(c.seed))?.to_sample() };
    let points = spe::identify(&sample, &cfg)?;
    let mut w = sink(out)?;
    for p in &points {
        writeln!(w, "{}", point_report(p))?;
    }
    Ok(())
}

fn cmd_estimate(
    method: &MethodArgs,
    data: &DataArgs,
    estimators: &[Estimator],
    queries: &Option<Vec<String>>,
    out: &Option<PathBuf>,
    fit_out: &Option<PathBuf>,
) -> Result<(), Failure> {
    let mut c = ExperimentConfig { estimators: estimators.to_vec(), ..Default::default() };
    method.apply(&mut c);
    if let Some(q) = queries {
        c.queries = q.clone();
    }
    c.validate()?;
    let (sample, nbrs) = load_data(data)?;
    let queries = c.parsed_queries()?;
    let model = LinearCasf::exposure_design();
    let mut rows: Vec<(Estimator, EffectEstimate)> = Vec::new();
    for &e in estimators {
        let fit = match e {
            Estimator::Spe => Some(spe::estimate(&sample, &model, &nbrs, &c.spe_config().expect("validated"))?.fit),
            Estimator::Naive1 => Some(naive_ols(&sample, ProxyId::First, &model, &nbrs)?),
            Estimator::Naive2 => Some(naive_ols(&sample, ProxyId::Second, &model, &nbrs)?),
            Estimator::SingleProxy => None,
        };
        let est = match &fit {
            Some(f) => effects(f, &model, &queries),
            None => single_proxy_effects(&sample, ProxyId::First, &queries, bandwidth(sample.len(), c.bandwidth_exp))?,
        };
        if let (Some(f), Some(p)) = (&fit, fit_out) {
            let mut name = p.clone().into_os_string();
            name.push(format!(".{}", e.tag()));
            harness::export_fit(f, &PathBuf::from(name))?;
        }
        rows.extend(est.into_iter().map(|x| (e, x)));
    }
    let mut w = sink(out)?;
    writeln!(w, "estimator,effect,estimate,std_error")?;
    for (e, x) in rows {
        writeln!(w, "{},{},{},{}", e.tag(), x.query.label(), x.value, x.std_error)?;
    }
    Ok(())
}

fn summary_table(s: &McSummary) -> String {
    let mut t = format!("{:<13} {:<15} {:>8} {:>8} {:>8} {:>6}\n", "estimator", "effect", "bias", "sd", "mse", "cr");
    for r in &s.rows {
        t += &format!(
            "{:<13} {:<15} {:>8.3} {:>8.3} {:>8.3} {:>6.3}\n",
            r.estimator.tag(),
            r.effect,
            r.bias,
            r.sd,
            r.mse,
            r.coverage
        );
    }
    let ex = s.exclusions();
    t += &format!("excluded {} of {}\n", ex.len(), s.replications.len());
    for (rep, why) in ex {
        t += &format!("  rep {rep}: {why}\n");
    }
    t
}

#[allow(clippy::too_many_arguments)]
fn cmd_montecarlo(
    design: &DesignArgs,
    method: &MethodArgs,
    reps: Option<usize>,
    estimators: &Option<Vec<Estimator>>,
    queries: &Option<Vec<String>>,
    out: &Option<PathBuf>,
    replications_out: &Option<PathBuf>,
) -> Result<(), Failure> {
    let mut c = design.load()?;
    method.apply(&mut c);
    if let Some(r) = reps {
        c.reps = r;
    }
    if let Some(e) = estimators {
        c.estimators = e.clone();
    }
    if let Some(q) = queries {
        c.queries = q.clone();
    }
    if out.is_some() {
        c.out = out.clone();
    }
    c.validate()?;
    let summary = harness::run_montecarlo(&c)?;
    harness::write_summary(&summary, sink(&c.out)?)?;
    if let Some(p) = replications_out {
        harness::write_replications(&summary, sink(&Some(p.clone()))?)?;
    }
    let table = summary_table(&summary);
    if c.out.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Simulate { design, out } => cmd_simulate(design, out),
        Cmd::Identify { design, method, data, out } => cmd_identify(design, method, data, out),
        Cmd::Estimate { method, data, estimators, queries, out, fit_out } => {
            cmd_estimate(method, data, estimators, queries, out, fit_out)
        }
        Cmd::Montecarlo { design, method, reps, estimators, queries, out, replications_out } => {
            cmd_montecarlo(design, method, *reps, estimators, queries, out, replications_out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
