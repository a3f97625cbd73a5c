//! `retail-flow` command-line front end.
//!
//! Stages run in order inside one run directory (`runs/<digest>`) created by
//! `ingest`; each stage checks the digests of its predecessor's outputs and
//! writes a manifest under `manifests/`.

mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use retail_flow::behaviors::{compare_levels, default_contrasts, proxy_table, write_proxy_json, write_proxy_table};
use retail_flow::calendar::TradingCalendar;
use retail_flow::config::PipelineConfig;
use retail_flow::grouping::{group_daily_panel, group_panel};
use retail_flow::ingest::{
    read_clean, read_exclusions, read_metadata, read_snapshots, read_ticks, read_venues, read_aliases, write_clean,
    write_ledger, CLEAN_SERIES_FILE, CLEAN_TICKS_FILE, SECURITIES_FILE,
};
use retail_flow::panel::{
    build_daily_panel, build_panel, read_daily_panel, read_panel, security_infos, summary_table, write_daily_panel,
    write_panel,
};
use retail_flow::pipeline::RawInputs;
use retail_flow::regression::{
    read_fits_json, run_daily, run_spec_suite, write_fit_summary, write_fit_table, write_fits_json, Dependent,
    FitResult, RegressionData, SubgroupDef,
};
use retail_flow::report::{by_group, by_lag, write_rows};
use retail_flow::synth::{generate_panel, recovery, DgpConfig, Truth};
use retail_flow::volatility::{standardize_daily_panel, standardize_panel, write_vol_records};

use manifest::{file_digest, text_digest, verified, StageRun};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] retail_flow::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("refusing to run: {0}")]
    Stale(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "retail-flow", version, about = "Retail position-opening panels: ingest, standardize, regress, report")]
struct Cli {
    /// Worker threads for intra-stage parallelism (default: all cores).
    #[arg(long, global = true, env = "RETAIL_FLOW_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic data set with known effects in the ingest input formats.
    Synth(SynthArgs),
    /// Delay-correct and filter raw snapshots and trades into a new run directory.
    Ingest(IngestArgs),
    /// Build the intraday/overnight panel of position openings and returns.
    Panel(RunArgs),
    /// Estimate volatilities, standardize returns and assign return groups.
    Vol(RunArgs),
    /// Build, standardize and group the close-to-close daily panel.
    Daily(RunArgs),
    /// Fit the six lag specifications of one subgroup split.
    Regress(SpecArgs),
    /// Behavior proxies and level contrasts of a fitted suite.
    Behaviors(SpecArgs),
    /// Summary tables and figure data files.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for the generated inputs.
    #[arg(long)]
    out: PathBuf,
    /// Generator configuration (TOML); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stocks: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory holding snapshots.csv, ticks.csv, securities.csv and optionally
    /// splits.csv, market_caps.csv and pipeline.toml.
    #[arg(long)]
    input_dir: Option<PathBuf>,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    ticks: Option<PathBuf>,
    #[arg(long)]
    securities: Option<PathBuf>,
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    caps: Option<PathBuf>,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reporting delay in minutes; overrides the configuration.
    #[arg(long, value_parser = parse_delay)]
    delay: Option<i64>,
    /// Parent of the run directories.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run directory printed by `ingest`.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SubgroupArg {
    None,
    Kind,
    Covid,
    Size,
    Sector,
}

impl SubgroupArg {
    fn def(self) -> SubgroupDef {
        match self {
            SubgroupArg::None => SubgroupDef::None,
            SubgroupArg::Kind => SubgroupDef::Kind,
            SubgroupArg::Covid => SubgroupDef::Covid,
            SubgroupArg::Size => SubgroupDef::Size,
            SubgroupArg::Sector => SubgroupDef::Sector,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DependentArg {
    Dn,
    #[value(name = "dn_detrended")]
    DnDetrended,
}

impl DependentArg {
    fn dependent(self) -> Dependent {
        match self {
            DependentArg::Dn => Dependent::DeltaN,
            DependentArg::DnDetrended => Dependent::DeltaNDetrended,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FrequencyArg {
    Hf,
    Daily,
}

#[derive(Args, Debug, Clone)]
struct SpecArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    subgroup: SubgroupArg,
    #[arg(long, value_enum, default_value = "dn")]
    dependent: DependentArg,
    #[arg(long, value_enum, default_value = "hf")]
    frequency: FrequencyArg,
    /// Expected reporting delay of the run; refused if the run used another.
    #[arg(long, value_parser = parse_delay)]
    delay: Option<i64>,
}

impl SpecArgs {
    fn name(&self) -> String {
        let f = match self.frequency {
            FrequencyArg::Hf => "hf",
            FrequencyArg::Daily => "daily",
        };
        let d = match self.dependent {
            DependentArg::Dn => "dn",
            DependentArg::DnDetrended => "dn_detrended",
        };
        format!("{f}-{d}-{}", self.subgroup.def().name())
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum FigureArg {
    /// Full-sample coefficients by return group and by lag.
    Main,
    Kind,
    Covid,
    Size,
    Sector,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "main")]
    figure: FigureArg,
    #[arg(long, value_enum, default_value = "dn")]
    dependent: DependentArg,
    #[arg(long, value_enum, default_value = "hf")]
    frequency: FrequencyArg,
    /// Truth manifest of a synthetic data set; adds a recovery table.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn parse_delay(s: &str) -> std::result::Result<i64, String> {
    let v: i64 = s.parse().map_err(|_| format!("`{s}` is not a number of minutes"))?;
    retail_flow::ingest::validate_delay(v).map_err(|e| e.to_string())?;
    Ok(v)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Panel(a) => panel(&a.run),
        Command::Vol(a) => vol(&a.run),
        Command::Daily(a) => daily(&a.run),
        Command::Regress(a) => regress(&a),
        Command::Behaviors(a) => behaviors(&a),
        Command::Report(a) => report(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn skip_note(stage: &str) {
    println!("{stage}: up to date");
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => DgpConfig::from_file(p)?,
        None => DgpConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.stocks {
        cfg.n_stocks = n;
    }
    if let Some(n) = a.days {
        cfg.n_days = n;
    }
    cfg.validate()?;
    let files = generate_panel(&cfg, &a.out)?;
    std::fs::write(a.out.join("dgp.toml"), cfg.to_text()).map_err(|e| CliError::io(&a.out, e))?;
    println!("{}", a.out.display());
    eprintln!("truth manifest: {}", files.truth.display());
    Ok(())
}

const RUN_CONFIG: &str = "config.toml";
const CLEAN_DIR: &str = "clean";

fn ingest(a: IngestArgs) -> Result<()> {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        explicit.clone().or_else(|| a.input_dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists()))
    };
    let need = |p: Option<PathBuf>, what: &str| {
        p.ok_or_else(|| CliError::Stale(format!("no {what} file; pass --{what} or --input-dir")))
    };
    let snapshots = need(pick(&a.snapshots, "snapshots.csv"), "snapshots")?;
    let ticks = need(pick(&a.ticks, "ticks.csv"), "ticks")?;
    let securities = need(pick(&a.securities, "securities.csv"), "securities")?;
    let splits = pick(&a.splits, "splits.csv");
    let caps = pick(&a.caps, "market_caps.csv");
    let config_path = a.config.clone().or_else(|| pick(&None, "pipeline.toml"));
    let mut cfg = match &config_path {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = a.delay {
        cfg.delay_minutes = d;
    }
    cfg.validate()?;

    let mut roles: Vec<(&str, PathBuf)> = vec![("snapshots", snapshots.clone()), ("ticks", ticks.clone()), ("securities", securities.clone())];
    roles.extend(splits.clone().map(|p| ("splits", p)));
    roles.extend(caps.clone().map(|p| ("market_caps", p)));
    for (role, p) in [("exclusions", &cfg.exclusions), ("aliases", &cfg.aliases), ("venues", &cfg.venues), ("calendar", &cfg.calendar)] {
        if let Some(p) = p {
            roles.push((role, p.clone()));
        }
    }
    let config_text = cfg.to_text();
    let mut identity = format!("retail-flow run\nversion {VERSION}\n{config_text}\n");
    let mut digests = BTreeMap::new();
    for (role, p) in &roles {
        let d = file_digest(p)?;
        identity.push_str(&format!("{role} {d}\n"));
        digests.insert(*role, d);
    }
    let run = a.runs_dir.join(&text_digest(&identity)[..16]);
    mkdir(&run)?;

    let mut stage = StageRun::new(&run, "ingest");
    stage.param("config", text_digest(&config_text));
    for (role, p) in &roles {
        stage.input_file(role, p)?;
    }
    if stage.up_to_date()? {
        skip_note("ingest");
        println!("{}", run.display());
        return Ok(());
    }

    let aliases = match &cfg.aliases {
        Some(p) => read_aliases(p)?,
        None => BTreeMap::new(),
    };
    let (snaps, mut rejected) = read_snapshots(&snapshots, &aliases)?;
    let (trades, rej) = read_ticks(&ticks, &aliases)?;
    rejected.extend(rej);
    let meta = read_metadata(&securities, splits.as_deref(), caps.as_deref(), &aliases)?;
    let venues = match &cfg.venues {
        Some(p) => read_venues(p)?,
        None => Default::default(),
    };
    let exclusions = match &cfg.exclusions {
        Some(p) => read_exclusions(p)?,
        None => Vec::new(),
    };
    let cal = calendar(&cfg)?;
    let raw = RawInputs { snapshots: snaps, ticks: trades, meta, venues, exclusions };
    let (clean, mut ledger) = retail_flow::pipeline::ingest(raw, &cfg, &cal)?;
    ledger.rejected.extend(rejected);

    let clean_dir = run.join(CLEAN_DIR);
    mkdir(&clean_dir)?;
    write_clean(&clean_dir, &clean)?;
    let cfg_path = run.join(RUN_CONFIG);
    std::fs::write(&cfg_path, &config_text).map_err(|e| CliError::io(&cfg_path, e))?;
    let ledger_path = run.join("filter_ledger.csv");
    write_ledger(&ledger_path, &ledger)?;
    let outputs = vec![
        cfg_path,
        clean_dir.join(CLEAN_SERIES_FILE),
        clean_dir.join(CLEAN_TICKS_FILE),
        clean_dir.join(SECURITIES_FILE),
        ledger_path,
    ];
    let details = json!({ "ledger": ledger, "input_digests": digests });
    stage.finish(&outputs, details)?;
    for s in &ledger.steps {
        eprintln!("{:>2} {:<45} {:>10} obs {:>6} stocks", s.step, s.name, s.observations, s.securities);
    }
    println!("{}", run.display());
    Ok(())
}

fn calendar(cfg: &PipelineConfig) -> Result<TradingCalendar> {
    Ok(match &cfg.calendar {
        Some(p) => TradingCalendar::from_file(p)?,
        None => TradingCalendar::bundled(),
    })
}

fn run_config(run: &Path) -> Result<PipelineConfig> {
    Ok(PipelineConfig::from_file(&run.join(RUN_CONFIG))?)
}

const RAW_PANEL: &str = "panel_raw.rfc";
const STD_PANEL: &str = "panel.rfc";
const DAILY_PANEL: &str = "daily_panel.rfc";

fn panel(run: &Path) -> Result<()> {
    let up = verified(run, "ingest", "ingest")?;
    let mut stage = StageRun::new(run, "panel");
    stage.upstream(&up);
    if stage.up_to_date()? {
        skip_note("panel");
        return Ok(());
    }
    let cfg = run_config(run)?;
    let clean = read_clean(&run.join(CLEAN_DIR))?;
    let (p, market, stats) = build_panel(&clean, &cfg)?;
    let path = run.join(RAW_PANEL);
    write_panel(&p, &market, &path)?;
    let summary = run.join("panel_summary.csv");
    write_rows(&summary_table(&p, |r| r.delta_n, 1e4), &summary)?;
    stage.finish(&[path, summary], json!({ "rows": p.rows.len(), "build": {
        "unmatchable_observations": stats.unmatchable_observations,
        "spacing_violations": stats.spacing_violations,
    }}))?;
    println!("panel: {} rows", p.rows.len());
    Ok(())
}

fn vol(run: &Path) -> Result<()> {
    let ing = verified(run, "ingest", "ingest")?;
    let pan = verified(run, "panel", "panel")?;
    let mut stage = StageRun::new(run, "vol");
    stage.upstream(&ing).upstream(&pan);
    if stage.up_to_date()? {
        skip_note("vol");
        return Ok(());
    }
    let cfg = run_config(run)?;
    let cal = calendar(&cfg)?;
    let clean = read_clean(&run.join(CLEAN_DIR))?;
    let (mut p, mut market) = read_panel(&run.join(RAW_PANEL), security_infos(&clean))?;
    let vo = standardize_panel(&mut p, &mut market, &clean.ticks, &clean.market_ticker, &cal)?;
    let cutoffs = group_panel(&mut p)?;
    let path = run.join(STD_PANEL);
    write_panel(&p, &market, &path)?;
    let records = run.join("volatility.csv");
    write_vol_records(&vo.records, &records)?;
    let returns = run.join("return_summary.csv");
    write_rows(&summary_table(&p, |r| r.std_return, 1.0), &returns)?;
    stage.finish(
        &[path, records, returns],
        json!({ "rows": p.rows.len(), "cutoffs": cutoffs, "dropped_rows": vo.dropped_rows, "failed_fits": vo.failed_fits }),
    )?;
    println!("vol: {} rows, cutoffs {:?}", p.rows.len(), cutoffs);
    Ok(())
}

fn daily(run: &Path) -> Result<()> {
    let ing = verified(run, "ingest", "ingest")?;
    let mut stage = StageRun::new(run, "daily");
    stage.upstream(&ing);
    if stage.up_to_date()? {
        skip_note("daily");
        return Ok(());
    }
    let cfg = run_config(run)?;
    let clean = read_clean(&run.join(CLEAN_DIR))?;
    let (mut p, mut market) = build_daily_panel(&clean, &cfg)?;
    let vo = standardize_daily_panel(&mut p, &mut market)?;
    let cutoffs = group_daily_panel(&mut p)?;
    let path = run.join(DAILY_PANEL);
    write_daily_panel(&p, &market, &path)?;
    stage.finish(&[path], json!({ "rows": p.rows.len(), "cutoffs": cutoffs, "dropped_rows": vo.dropped_rows }))?;
    println!("daily: {} rows", p.rows.len());
    Ok(())
}

fn spec_dir(run: &Path, stage: &str, spec: &SpecArgs) -> PathBuf {
    run.join(stage).join(spec.name())
}

fn check_delay(run: &Path, spec: &SpecArgs) -> Result<()> {
    if let Some(d) = spec.delay {
        let cfg = run_config(run)?;
        if cfg.delay_minutes != d {
            return Err(CliError::Stale(format!(
                "{} was ingested with a {}-minute delay, not {d}; ingest again with --delay {d}",
                run.display(),
                cfg.delay_minutes
            )));
        }
    }
    Ok(())
}

fn regress(spec: &SpecArgs) -> Result<()> {
    let run = spec.run.as_path();
    check_delay(run, spec)?;
    let stage_name = format!("regress-{}", spec.name());
    let (upstream, panel_file) = match spec.frequency {
        FrequencyArg::Hf => (verified(run, "vol", "vol")?, STD_PANEL),
        FrequencyArg::Daily => (verified(run, "daily", "daily")?, DAILY_PANEL),
    };
    let ing = verified(run, "ingest", "ingest")?;
    let cfg = run_config(run)?;
    let mut stage = StageRun::new(run, &stage_name);
    stage.upstream(&ing).upstream(&upstream).param("spec", spec.name()).param("delay", cfg.delay_minutes);
    if stage.up_to_date()? {
        skip_note(&stage_name);
        return Ok(());
    }
    let clean = read_clean(&run.join(CLEAN_DIR))?;
    let securities = security_infos(&clean);
    let def = spec.subgroup.def();
    let fits = match spec.frequency {
        FrequencyArg::Hf => {
            let (p, market) = read_panel(&run.join(panel_file), securities)?;
            let data = RegressionData::from_panel(&p, &market, spec.dependent.dependent())?;
            run_spec_suite(&data, def, cfg.small_sample_correction)?
        }
        FrequencyArg::Daily => {
            if spec.dependent.dependent() != Dependent::DeltaN {
                return Err(retail_flow::Error::Config("the daily panel has no detrended dependent variable".into()).into());
            }
            let (p, market) = read_daily_panel(&run.join(panel_file), securities)?;
            let data = RegressionData::from_daily(&p, &market)?;
            run_daily(&data, def, cfg.small_sample_correction)?
        }
    };
    let dir = spec_dir(run, "regress", spec);
    mkdir(&dir)?;
    let outputs = [dir.join("fits.json"), dir.join("coefficients.csv"), dir.join("summary.csv")];
    write_fits_json(&fits, &outputs[0])?;
    write_fit_table(&fits, &outputs[1])?;
    write_fit_summary(&fits, &outputs[2])?;
    stage.finish(&outputs, json!({ "n_obs": fits.first().map(|f| f.n_obs) }))?;
    println!("{}", outputs[1].display());
    Ok(())
}

/// Fits of a regress stage whose manifest was already verified.
fn load_fits(run: &Path, spec: &SpecArgs) -> Result<Vec<FitResult>> {
    Ok(read_fits_json(&spec_dir(run, "regress", spec).join("fits.json"))?)
}

fn behaviors(spec: &SpecArgs) -> Result<()> {
    let run = spec.run.as_path();
    check_delay(run, spec)?;
    let regress_stage = format!("regress-{}", spec.name());
    let up = verified(run, &regress_stage, &format!("regress --subgroup {}", spec.subgroup.def().name()))?;
    let stage_name = format!("behaviors-{}", spec.name());
    let mut stage = StageRun::new(run, &stage_name);
    stage.upstream(&up);
    if stage.up_to_date()? {
        skip_note(&stage_name);
        return Ok(());
    }
    let fits = load_fits(run, spec)?;
    let dir = spec_dir(run, "behaviors", spec);
    mkdir(&dir)?;
    let proxies = proxy_table(&fits)?;
    let mut outputs = vec![dir.join("proxies.csv"), dir.join("proxies.json")];
    write_proxy_table(&proxies, &outputs[0])?;
    write_proxy_json(&proxies, &outputs[1])?;
    let levels = &fits[0].levels;
    if levels.len() > 1 {
        let contrasts = compare_levels(&fits, &default_contrasts(spec.subgroup.def().name(), levels))?;
        let path = dir.join("contrasts.csv");
        write_proxy_table(&contrasts, &path)?;
        outputs.push(path);
    }
    stage.finish(&outputs, json!({ "proxies": proxies.len() }))?;
    println!("{}", outputs[0].display());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let run = a.run.as_path();
    let subgroup = match a.figure {
        FigureArg::Main => SubgroupArg::None,
        FigureArg::Kind => SubgroupArg::Kind,
        FigureArg::Covid => SubgroupArg::Covid,
        FigureArg::Size => SubgroupArg::Size,
        FigureArg::Sector => SubgroupArg::Sector,
    };
    let spec = SpecArgs { run: a.run.clone(), subgroup, dependent: a.dependent, frequency: a.frequency, delay: None };
    let up = verified(run, &format!("regress-{}", spec.name()), &format!("regress --subgroup {}", subgroup.def().name()))?;
    let fig = format!("{:?}", a.figure).to_lowercase();
    let stage_name = format!("report-{}-{fig}", spec.name());
    let mut stage = StageRun::new(run, &stage_name);
    stage.upstream(&up);
    if let Some(t) = &a.truth {
        stage.input_file("truth", t)?;
    }
    if stage.up_to_date()? {
        skip_note(&stage_name);
        return Ok(());
    }
    let fits = load_fits(run, &spec)?;
    let dir = run.join("report");
    mkdir(&dir)?;
    let prefix = format!("figure_{fig}_{}", spec.name());
    let mut outputs = vec![dir.join(format!("{prefix}_by_group.csv")), dir.join(format!("{prefix}_by_lag.csv"))];
    write_rows(&by_group(&fits)?, &outputs[0])?;
    write_rows(&by_lag(&fits)?, &outputs[1])?;
    if let Some(t) = &a.truth {
        let truth = Truth::read(t)?;
        let rows = recovery(&truth, &fits)?;
        let path = dir.join(format!("recovery_{}.csv", spec.name()));
        write_rows(&rows, &path)?;
        let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
        let rejected = rows.iter().filter(|r| r.z.abs() > 1.96).count();
        eprintln!("recovery: {} coefficients, max |z| {worst:.2}, {rejected} beyond 1.96", rows.len());
        outputs.push(path);
    }
    stage.finish(&outputs, json!({}))?;
    for p in &outputs {
        println!("{}", p.display());
    }
    Ok(())
}
