use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqlimit::document::TuningRecord;
use seqlimit::oc::{fmt_num, parse_grid};
use seqlimit::plans::{PlanSpec, Schedule, TiePolicy, Zone};
use seqlimit::sim::{self, Runner};
use seqlimit::twoprop::{certify_all, Bounder, CertifyOptions, Link, TwoPropSpec, Verdict};
use seqlimit::{
    oc_curve, tune_two_prop, tune_zeta, Error, LimitFamily, Model, PlanDocument, PlanKind, Result,
    RiskRequirement, SprtSpec,
};

#[derive(Parser)]
#[command(name = "seqlimit", version, about = "Confidence-limit sequential and multistage tests")]
struct Cli {
    /// Worker threads (default: SEQLIMIT_THREADS, then RAYON_NUM_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a plan and write its document.
    Design(DesignArgs),
    /// Exact operating characteristic over a parameter grid, as CSV.
    Oc(OcArgs),
    /// Largest zeta meeting the risk requirement; writes the tuned document.
    Tune(TuneArgs),
    /// Branch-and-bound risk certificate for a two-proportion plan.
    Certify(CertifyArgs),
    /// Monte Carlo evaluation of one plan or SPRT.
    Simulate(SimulateArgs),
    /// Monte Carlo comparison on common random numbers.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    OneSided,
    Multi,
    TwoProp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Bernoulli,
    Poisson,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Bernoulli => Model::Bernoulli,
            ModelArg::Poisson => Model::Poisson,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LimitsArg {
    Exact,
    Chernoff,
    Approx,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    FullySequential,
    Geometric,
    Arithmetic,
    Fixed,
}

#[derive(Args)]
struct DesignArgs {
    /// Plan kind; inferred from the zones when omitted.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, value_enum, default_value = "bernoulli")]
    model: ModelArg,
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta1: Option<f64>,
    /// Indifference zones as `lo:hi,lo:hi,...`.
    #[arg(long, allow_hyphen_values = true)]
    zones: Option<String>,
    /// One value, or one per zone.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    beta: Vec<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    limits: LimitsArg,
    /// Weight of the normal-approximation limits.
    #[arg(long, default_value_t = 1.0)]
    approx_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    zeta: f64,
    #[arg(long)]
    tie: Option<String>,
    #[arg(long, value_enum, default_value = "geometric")]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 5)]
    stages: usize,
    /// Stage sizes for the fixed schedule (`N_x` for two-proportion plans).
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<u64>,
    #[arg(long)]
    max_sample_size: Option<u64>,
    /// Two-proportion plans: `N_y = ceil(factor * N_x)`.
    #[arg(long)]
    link_factor: Option<f64>,
    /// Risk bounds per hypothesis stored in the document.
    #[arg(long, value_delimiter = ',')]
    deltas: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OcArgs {
    #[arg(long)]
    plan: PathBuf,
    /// `lo:hi:step` (for two-proportion plans, the grid of `p_x`).
    #[arg(long)]
    grid: String,
    /// Grid of `p_y` for two-proportion plans (default: same as `--grid`).
    #[arg(long)]
    grid_y: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct CertArgs {
    /// Truncation mass per stage and arm.
    #[arg(long, default_value_t = 1e-4)]
    eta: f64,
    /// Smallest rectangle width the certifier splits.
    #[arg(long, default_value_t = 1e-4)]
    cert_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    budget: usize,
}

impl From<CertArgs> for CertifyOptions {
    fn from(a: CertArgs) -> Self {
        CertifyOptions { eta: a.eta, tol: a.cert_tol, budget: a.budget }
    }
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Relative width of the final zeta bracket.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Risk bounds per hypothesis (default: the document's, then nominal).
    #[arg(long, value_delimiter = ',')]
    deltas: Vec<f64>,
    #[command(flatten)]
    cert: CertArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Certify one hypothesis only.
    #[arg(long)]
    hypothesis: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    deltas: Vec<f64>,
    #[command(flatten)]
    cert: CertArgs,
    /// CSV of every examined rectangle.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SprtArgs {
    /// Use Wald's SPRT instead of a plan document.
    #[arg(long)]
    sprt: bool,
    #[arg(long, value_enum, default_value = "bernoulli")]
    model: ModelArg,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Forced decision after this many samples.
    #[arg(long)]
    cap: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, required_unless_present = "sprt")]
    plan: Option<PathBuf>,
    #[command(flatten)]
    sprt: SprtArgs,
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Plan documents (repeatable).
    #[arg(long, required = true)]
    plan: Vec<PathBuf>,
    /// Add Wald's SPRT for the first plan's hypotheses and nominal risks.
    #[arg(long)]
    sprt: bool,
    #[arg(long)]
    sprt_cap: Option<u64>,
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

fn emit(out: &Option<PathBuf>, text: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text)?,
    }
    Ok(())
}

fn parse_zones(args: &DesignArgs) -> Result<Vec<Zone>> {
    if let Some(text) = &args.zones {
        return text
            .split(',')
            .map(|z| {
                let (a, b) = z.split_once(':').ok_or_else(|| usage(format!("zone '{z}' is not lo:hi")))?;
                let p = |s: &str| s.trim().parse::<f64>().map_err(|_| usage(format!("bad number '{s}'")));
                Ok(Zone::new(p(a)?, p(b)?))
            })
            .collect();
    }
    match (args.theta0, args.theta1) {
        (Some(a), Some(b)) => Ok(vec![Zone::new(a, b)]),
        _ => Err(usage("give --theta0 and --theta1, or --zones")),
    }
}

fn per_zone(values: &[f64], zones: usize, name: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; zones]),
        n if n == zones => Ok(values.to_vec()),
        n => Err(usage(format!("--{name} has {n} values for {zones} zones"))),
    }
}

fn schedule(args: &DesignArgs) -> Result<Schedule> {
    Ok(match args.schedule {
        ScheduleArg::FullySequential => Schedule::FullySequential,
        ScheduleArg::Geometric => Schedule::Geometric { stages: args.stages },
        ScheduleArg::Arithmetic => Schedule::Arithmetic { stages: args.stages },
        ScheduleArg::Fixed if args.sizes.is_empty() => return Err(usage("--schedule fixed needs --sizes")),
        ScheduleArg::Fixed => Schedule::Fixed { sizes: args.sizes.clone() },
    })
}

fn optional(v: &[f64]) -> Option<Vec<f64>> {
    (!v.is_empty()).then(|| v.to_vec())
}

fn design(args: &DesignArgs) -> Result<u8> {
    let zones = parse_zones(args)?;
    let alphas = per_zone(&args.alpha, zones.len(), "alpha")?;
    let betas = per_zone(&args.beta, zones.len(), "beta")?;
    let kind = args.kind.unwrap_or(if zones.len() > 1 { KindArg::Multi } else { KindArg::OneSided });
    let doc = match kind {
        KindArg::TwoProp => {
            let mut spec = TwoPropSpec::new(zones, alphas, betas)
                .with_zeta(args.zeta)
                .with_schedule(schedule(args)?);
            if let Some(f) = args.link_factor {
                spec = spec.with_link(Link::Scale { factor: f });
            }
            if let Some(cap) = args.max_sample_size {
                spec = spec.with_max_nx(cap);
            }
            PlanDocument::from_two_prop(spec.build()?, "design")
        }
        KindArg::OneSided | KindArg::Multi => {
            if matches!(kind, KindArg::OneSided) && zones.len() != 1 {
                return Err(usage("one-sided plans take exactly one zone"));
            }
            let family = match args.limits {
                LimitsArg::Exact => LimitFamily::Exact,
                LimitsArg::Chernoff => LimitFamily::Chernoff,
                LimitsArg::Approx => LimitFamily::Approx { w: args.approx_weight },
            };
            let mut spec = PlanSpec::multi(args.model.into(), zones, alphas, betas)
                .with_family(family)
                .with_zeta(args.zeta)
                .with_schedule(schedule(args)?);
            if let Some(t) = &args.tie {
                spec = spec.with_tie(t.parse::<TiePolicy>()?);
            }
            if let Some(cap) = args.max_sample_size {
                spec = spec.with_max_sample_size(cap);
            }
            PlanDocument::from_plan(spec.build()?, "design")
        }
    };
    let doc = doc.with_deltas(optional(&args.deltas));
    doc.validate()?;
    emit(&args.out, doc.to_json()?.as_bytes())?;
    Ok(0)
}

fn oc(args: &OcArgs) -> Result<u8> {
    let doc = PlanDocument::load(&args.plan)?;
    let grid = parse_grid(&args.grid)?;
    let mut buf = Vec::new();
    match (&doc.plan, &doc.two_prop_plan) {
        (Some(plan), _) => oc_curve(plan, &grid)?.write_csv(&mut buf)?,
        (_, Some(plan)) => {
            let grid_y = match &args.grid_y {
                Some(g) => parse_grid(g)?,
                None => grid.clone(),
            };
            let b = Bounder::new(plan)?;
            let mut header = vec!["px".to_string(), "py".to_string()];
            header.extend((0..plan.m()).map(|i| format!("accept_prob_{i}")));
            header.extend(["asn_x".to_string(), "asn_y".to_string()]);
            header.extend((1..=plan.s()).map(|l| format!("stage_prob_{l}")));
            writeln!(buf, "{}", header.join(","))?;
            for &px in &grid {
                for &py in &grid_y {
                    let p = b.oc_point(px, py)?;
                    let mut row = vec![fmt_num(px), fmt_num(py)];
                    row.extend(p.accept.iter().map(|&v| fmt_num(v)));
                    row.extend([fmt_num(p.asn_x), fmt_num(p.asn_y)]);
                    row.extend(p.stage_probs.iter().map(|&v| fmt_num(v)));
                    writeln!(buf, "{}", row.join(","))?;
                }
            }
        }
        _ => unreachable!("validated document"),
    }
    emit(&args.out, &buf)?;
    Ok(0)
}

fn deltas_for(doc: &PlanDocument, flag: &[f64]) -> Option<Vec<f64>> {
    optional(flag).or_else(|| doc.deltas.clone())
}

fn tune(args: &TuneArgs) -> Result<u8> {
    let doc = PlanDocument::load(&args.plan)?;
    let deltas = deltas_for(&doc, &args.deltas);
    let mut tuned = match (&doc.plan, &doc.two_prop_plan) {
        (Some(plan), _) => {
            let req = match &deltas {
                Some(d) => RiskRequirement { deltas: d.clone() },
                None => RiskRequirement::nominal(&plan.spec),
            };
            let r = tune_zeta(&plan.spec, &req, args.tol)?;
            let mut out = PlanDocument::from_plan(r.report.0, "tune");
            out.provenance.tuning = Some(record(args.tol, r.zeta, r.iterations, r.bracket, r.trace, r.warnings));
            out
        }
        (_, Some(plan)) => {
            let d = deltas.clone().unwrap_or_else(|| plan.spec.nominal_deltas());
            let r = tune_two_prop(&plan.spec, &d, args.tol, &args.cert.into())?;
            let mut out = PlanDocument::from_two_prop(r.report.0, "tune");
            out.provenance.tuning = Some(record(args.tol, r.zeta, r.iterations, r.bracket, r.trace, r.warnings));
            out
        }
        _ => unreachable!("validated document"),
    };
    tuned.deltas = deltas;
    if let Some(t) = &tuned.provenance.tuning {
        for w in &t.warnings {
            eprintln!("warning: {w}");
        }
    }
    emit(&args.out, tuned.to_json()?.as_bytes())?;
    Ok(0)
}

fn record(
    tol: f64,
    zeta: f64,
    iterations: usize,
    bracket: (f64, f64),
    trace: Vec<seqlimit::tuning::TuneStep>,
    warnings: Vec<String>,
) -> TuningRecord {
    TuningRecord { tol, zeta, iterations, bracket, trace, warnings }
}

fn certify(args: &CertifyArgs) -> Result<u8> {
    let doc = PlanDocument::load(&args.plan)?;
    let plan = match (&doc.kind, &doc.two_prop_plan) {
        (PlanKind::TwoProp, Some(p)) => p,
        _ => return Err(Error::Unsupported("certify needs a two-prop plan; use oc or tune for others".into())),
    };
    let deltas = deltas_for(&doc, &args.deltas).unwrap_or_else(|| plan.spec.nominal_deltas());
    let mut certs = certify_all(plan, &deltas, &args.cert.into())?;
    if let Some(i) = args.hypothesis {
        if i >= certs.len() {
            return Err(usage(format!("hypothesis {i} out of range")));
        }
        certs = vec![certs.swap_remove(i)];
    }
    let mut summary = String::new();
    for c in &certs {
        summary.push_str(&format!(
            "hypothesis {}: {} (delta {}, max upper bound {}, {} rectangles{})\n",
            c.hypothesis,
            serde_json::to_value(c.verdict).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            fmt_num(c.delta),
            fmt_num(c.max_upper),
            c.explored,
            c.witness_value.map_or(String::new(), |v| format!(", witness risk {}", fmt_num(v)))
        ));
    }
    print!("{summary}");
    if let Some(path) = &args.out {
        let mut buf = Vec::new();
        for (n, c) in certs.iter().enumerate() {
            let mut one = Vec::new();
            c.write_csv(&mut one)?;
            let text = String::from_utf8(one).map_err(|e| usage(e.to_string()))?;
            for (k, line) in text.lines().enumerate() {
                if k == 0 {
                    if n == 0 {
                        writeln!(buf, "hypothesis,{line}")?;
                    }
                } else {
                    writeln!(buf, "{},{line}", c.hypothesis)?;
                }
            }
        }
        std::fs::write(path, buf)?;
    }
    Ok(if certs.iter().all(|c| c.verdict == Verdict::Proved) { 0 } else { 1 })
}

fn sprt_from_flags(a: &SprtArgs) -> Result<SprtSpec> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| usage(format!("--sprt needs --{name}")));
    let s = SprtSpec::new(
        a.model.into(),
        need(a.theta0, "theta0")?,
        need(a.theta1, "theta1")?,
        need(a.alpha, "alpha")?,
        need(a.beta, "beta")?,
    )?;
    Ok(match a.cap {
        Some(c) => s.with_cap(c),
        None => s,
    })
}

fn load_plan(path: &PathBuf) -> Result<seqlimit::MultiHypPlan> {
    PlanDocument::load(path)?
        .plan
        .ok_or_else(|| Error::Unsupported("simulation supports one-sided and multi-hypothesis plans".into()))
}

fn simulate(args: &SimulateArgs) -> Result<u8> {
    let grid = parse_grid(&args.grid)?;
    let report = match (&args.plan, args.sprt.sprt) {
        (Some(_), true) => return Err(usage("give either --plan or --sprt")),
        (Some(p), false) => sim::simulate_grid(&load_plan(p)?, &grid, args.trials, args.seed)?,
        (None, _) => sim::simulate_grid(&sprt_from_flags(&args.sprt)?, &grid, args.trials, args.seed)?,
    };
    let mut buf = Vec::new();
    sim::write_csv(&[report], &mut buf)?;
    emit(&args.out, &buf)?;
    Ok(0)
}

fn compare(args: &CompareArgs) -> Result<u8> {
    let grid = parse_grid(&args.grid)?;
    let plans = args.plan.iter().map(load_plan).collect::<Result<Vec<_>>>()?;
    let sprt = if args.sprt {
        let spec = &plans[0].spec;
        if spec.m() != 2 {
            return Err(usage("--sprt needs a two-hypothesis first plan"));
        }
        let s = SprtSpec::new(spec.model, spec.zones[0].lower, spec.zones[0].upper, spec.alphas[0], spec.betas[0])?;
        Some(match args.sprt_cap {
            Some(c) => s.with_cap(c),
            None => s,
        })
    } else {
        None
    };
    let mut runners: Vec<&dyn Runner> = plans.iter().map(|p| p as &dyn Runner).collect();
    if let Some(s) = &sprt {
        runners.push(s);
    }
    let reports = sim::compare(&runners, &grid, args.trials, args.seed)?;
    let mut buf = Vec::new();
    sim::write_csv(&reports, &mut buf)?;
    emit(&args.out, &buf)?;
    Ok(0)
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let from_env = std::env::var("SEQLIMIT_THREADS").ok();
    let n = match (flag, from_env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(v.trim().parse().map_err(|_| usage(format!("SEQLIMIT_THREADS='{v}' is not a count")))?),
        (None, None) => None,
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Design(a) => design(a),
        Command::Oc(a) => oc(a),
        Command::Tune(a) => tune(a),
        Command::Certify(a) => certify(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Infeasible(_)) { 1 } else { 2 })
        }
    }
}
