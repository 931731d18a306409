use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pracsim::config;
use pracsim::counter_store::write_counters;
use pracsim::engine::{compare_on, simulate, SimConfig, SimReport};
use pracsim::metrics;
use pracsim::oracle::{self, verify};
use pracsim::trace::{self, TraceFormat};
use pracsim::{CacheKind, Design, SimError};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "pracsim", version, about = "Trace-driven simulator for coalesced activation-counter updates")]
struct Cli {
    /// Report errors on stderr as JSON objects with a machine-readable code.
    #[arg(long, global = true)]
    machine: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace (`.bin` extension selects the binary format).
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one policy and write its report.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Simulate several policies on one trace, normalized to Chronus.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Comma-separated `design[+cache]` list; defaults to every design.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
    },
    /// Compute trace statistics without simulating any policy.
    Analyze {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check a batch log (`--log`) against its trace with the reference
    /// oracle; `--dump-counters` additionally checks the final counter state.
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
        /// Report of the logged run; its counter_acts is checked against the log.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Configuration sources, lowest precedence first: defaults, `--config`,
/// `--set`, then the named flags. Each named flag maps to exactly one key.
#[derive(Args)]
struct ConfigArgs {
    /// Flat dotted-key config file (TOML).
    #[arg(long = "config", value_name = "PATH")]
    file: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the fully resolved config and exit.
    #[arg(long)]
    dump_config: bool,

    /// seed
    #[arg(long)]
    seed: Option<String>,
    /// geometry.banks
    #[arg(long)]
    geometry_banks: Option<String>,
    /// geometry.counter_rows
    #[arg(long)]
    counter_rows: Option<String>,
    /// geometry.counters_per_row
    #[arg(long)]
    counters_per_row: Option<String>,
    /// trace.path
    #[arg(long)]
    trace: Option<String>,
    /// trace.generator
    #[arg(long)]
    generator: Option<String>,
    /// trace.length
    #[arg(long)]
    length: Option<String>,
    /// trace.bank
    #[arg(long)]
    bank: Option<String>,
    /// trace.banks
    #[arg(long)]
    banks: Option<String>,
    /// trace.footprint
    #[arg(long)]
    footprint: Option<String>,
    /// trace.start_row
    #[arg(long)]
    start_row: Option<String>,
    /// trace.zipf_exponent
    #[arg(long)]
    zipf_exponent: Option<String>,
    /// trace.hot_rows
    #[arg(long)]
    hot_rows: Option<String>,
    /// trace.hot_fraction
    #[arg(long)]
    hot_fraction: Option<String>,
    /// trace.target_row
    #[arg(long)]
    target_row: Option<String>,
    /// trace.gap
    #[arg(long)]
    gap: Option<String>,
    /// buffer.design
    #[arg(long)]
    policy: Option<String>,
    /// buffer.capacity
    #[arg(long)]
    capacity: Option<String>,
    /// buffer.m_batch
    #[arg(long)]
    m_batch: Option<String>,
    /// buffer.k_limit
    #[arg(long)]
    k_limit: Option<String>,
    /// buffer.k_trigger
    #[arg(long)]
    k_trigger: Option<String>,
    /// cache.kind
    #[arg(long)]
    cache: Option<String>,
    /// cache.entries
    #[arg(long)]
    cache_entries: Option<String>,
    /// cache.sketch_width
    #[arg(long)]
    sketch_width: Option<String>,
    /// cache.halving_period
    #[arg(long)]
    halving_period: Option<String>,
    /// mitigation.enabled
    #[arg(long)]
    mitigation: Option<String>,
    /// mitigation.n_bo
    #[arg(long)]
    n_bo: Option<String>,
    /// mitigation.rfms_per_alert
    #[arg(long)]
    rfms_per_alert: Option<String>,
    /// mitigation.proactive_interval (0 disables)
    #[arg(long)]
    proactive_interval: Option<String>,
    /// energy.e_act
    #[arg(long)]
    e_act: Option<String>,
    /// energy.e_col
    #[arg(long)]
    e_col: Option<String>,
    /// energy.counter_act_factor
    #[arg(long)]
    counter_act_factor: Option<String>,
    /// energy.e_extra_rmw
    #[arg(long)]
    e_extra_rmw: Option<String>,
    /// metrics.enabled
    #[arg(long)]
    metrics: Option<String>,
    /// metrics.window
    #[arg(long)]
    window: Option<String>,
    /// metrics.window_mode
    #[arg(long)]
    window_mode: Option<String>,
    /// debug.batch_log: write the batch log of a run here
    #[arg(long)]
    log: Option<String>,
    /// debug.counter_dump: write the final nonzero counters here
    #[arg(long)]
    dump_counters: Option<String>,
}

impl ConfigArgs {
    fn flags(&self) -> [(&'static str, &Option<String>); 38] {
        [
            ("seed", &self.seed),
            ("geometry.banks", &self.geometry_banks),
            ("geometry.counter_rows", &self.counter_rows),
            ("geometry.counters_per_row", &self.counters_per_row),
            ("trace.path", &self.trace),
            ("trace.generator", &self.generator),
            ("trace.length", &self.length),
            ("trace.bank", &self.bank),
            ("trace.banks", &self.banks),
            ("trace.footprint", &self.footprint),
            ("trace.start_row", &self.start_row),
            ("trace.zipf_exponent", &self.zipf_exponent),
            ("trace.hot_rows", &self.hot_rows),
            ("trace.hot_fraction", &self.hot_fraction),
            ("trace.target_row", &self.target_row),
            ("trace.gap", &self.gap),
            ("buffer.design", &self.policy),
            ("buffer.capacity", &self.capacity),
            ("buffer.m_batch", &self.m_batch),
            ("buffer.k_limit", &self.k_limit),
            ("buffer.k_trigger", &self.k_trigger),
            ("cache.kind", &self.cache),
            ("cache.entries", &self.cache_entries),
            ("cache.sketch_width", &self.sketch_width),
            ("cache.halving_period", &self.halving_period),
            ("mitigation.enabled", &self.mitigation),
            ("mitigation.n_bo", &self.n_bo),
            ("mitigation.rfms_per_alert", &self.rfms_per_alert),
            ("mitigation.proactive_interval", &self.proactive_interval),
            ("energy.e_act", &self.e_act),
            ("energy.e_col", &self.e_col),
            ("energy.counter_act_factor", &self.counter_act_factor),
            ("energy.e_extra_rmw", &self.e_extra_rmw),
            ("metrics.enabled", &self.metrics),
            ("metrics.window", &self.window),
            ("metrics.window_mode", &self.window_mode),
            ("debug.batch_log", &self.log),
            ("debug.counter_dump", &self.dump_counters),
        ]
    }

    fn resolve(&self) -> Result<SimConfig, Failure> {
        let mut c = match &self.file {
            Some(path) => config::load(path).map_err(Failure::usage)?,
            None => SimConfig::default(),
        };
        for pair in &self.set {
            config::set_pair(&mut c, pair).map_err(Failure::usage)?;
        }
        for (key, value) in self.flags() {
            if let Some(v) = value {
                config::set(&mut c, key, v).map_err(Failure::usage)?;
            }
        }
        c.validate().map_err(Failure::usage)?;
        Ok(c)
    }
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
}

impl Failure {
    fn usage(e: SimError) -> Self {
        Self {
            exit: EXIT_USAGE,
            code: e.code(),
            message: e.to_string(),
        }
    }

    fn runtime(e: SimError) -> Self {
        Self {
            exit: EXIT_RUNTIME,
            code: e.code(),
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self {
            exit: EXIT_RUNTIME,
            code: "io",
            message: format!("{}: {e}", path.display()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

fn emit(out: &Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> pracsim::Result<()>) -> CliResult<()> {
    match out {
        Some(path) => {
            let mut f = create(path)?;
            write(&mut f).map_err(Failure::runtime)?;
            f.flush().map_err(|e| Failure::io(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(Failure::runtime)
        }
    }
}

fn text(out: &mut dyn Write, s: &str) -> pracsim::Result<()> {
    writeln!(out, "{s}")?;
    Ok(())
}

fn cmd_gen(c: &SimConfig, out: &Path) -> CliResult<()> {
    let events = trace::generate(&c.trace_spec(), &c.geometry).map_err(Failure::usage)?;
    let mut f = create(out)?;
    trace::write_trace(&events, &mut f, TraceFormat::from_path(out)).map_err(Failure::runtime)?;
    f.flush().map_err(|e| Failure::io(out, e))?;
    eprintln!("wrote {} events to {}", events.len(), out.display());
    Ok(())
}

fn cmd_run(c: &SimConfig, output: &OutputArgs) -> CliResult<()> {
    let events = c.load_events().map_err(Failure::runtime)?;
    let outcome = simulate(c, &events, c.debug.batch_log.is_some()).map_err(Failure::runtime)?;
    if let (Some(path), Some(log)) = (&c.debug.batch_log, &outcome.log) {
        let mut f = create(path)?;
        oracle::write_log(log, &mut f).map_err(Failure::runtime)?;
        f.flush().map_err(|e| Failure::io(path, e))?;
    }
    if let Some(path) = &c.debug.counter_dump {
        let mut f = create(path)?;
        write_counters(&outcome.final_counters, &mut f).map_err(Failure::runtime)?;
        f.flush().map_err(|e| Failure::io(path, e))?;
    }
    let report = outcome.report;
    emit(&output.out, |w| match output.format {
        Format::Json => text(w, &report.to_json()),
        Format::Csv => SimReport::write_csv(std::slice::from_ref(&report), w),
    })
}

fn parse_policy(base: &SimConfig, spec: &str) -> CliResult<SimConfig> {
    let mut c = base.clone();
    let (design, cache) = match spec.split_once('+') {
        Some((d, k)) => (d, Some(k)),
        None => (spec, None),
    };
    c.buffer.design = design.trim().parse::<Design>().map_err(Failure::usage)?;
    c.cache.kind = match cache {
        Some(k) => k.trim().parse::<CacheKind>().map_err(Failure::usage)?,
        None => CacheKind::None,
    };
    c.validate().map_err(Failure::usage)?;
    Ok(c)
}

fn cmd_compare(c: &SimConfig, output: &OutputArgs, policies: &[String]) -> CliResult<()> {
    let configs: Vec<SimConfig> = if policies.is_empty() {
        Design::ALL
            .iter()
            .map(|d| parse_policy(c, d.name()))
            .collect::<CliResult<_>>()?
    } else {
        policies.iter().map(|p| parse_policy(c, p)).collect::<CliResult<_>>()?
    };
    let events = c.load_events().map_err(Failure::runtime)?;
    let cmp = compare_on(&configs, &events).map_err(Failure::runtime)?;
    emit(&output.out, |w| match output.format {
        Format::Json => text(w, &cmp.to_json()),
        Format::Csv => cmp.write_csv(w),
    })
}

fn cmd_analyze(c: &SimConfig, output: &OutputArgs) -> CliResult<()> {
    let events = c.load_events().map_err(Failure::runtime)?;
    let m = metrics::analyze(&events, &c.geometry, c.metrics.window, c.metrics.window_mode);
    emit(&output.out, |w| match output.format {
        Format::Json => text(w, &serde_json::to_string_pretty(&m).expect("metrics serialize")),
        Format::Csv => {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(w, "metric,value")?;
            writeln!(w, "events,{}", m.events)?;
            writeln!(w, "banks_active,{}", m.banks_active)?;
            writeln!(w, "skew_mean,{}", opt(m.skew_mean))?;
            writeln!(w, "window,{}", m.window)?;
            writeln!(w, "window_mode,{}", m.window_mode.name())?;
            writeln!(w, "window_locality,{}", opt(m.window_locality))?;
            writeln!(w, "distinct_rows,{}", m.distinct_rows)?;
            for p in &m.footprint {
                writeln!(w, "footprint_p{},{}", p.percent, p.rows)?;
            }
            for b in &m.skew_per_bank {
                writeln!(w, "skew_bank{},{}", b.bank, b.skew)?;
            }
            Ok(())
        }
    })
}

fn read_counters(path: &Path) -> CliResult<Vec<(pracsim::CounterRef, u8)>> {
    let content = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate().skip(1) {
        let bad = || Failure {
            exit: EXIT_RUNTIME,
            code: "parse",
            message: format!("{}:{}: expected bank,row_id,byte_id,value", path.display(), i + 1),
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let bank = f[0].parse().map_err(|_| bad())?;
        let row = f[1].parse().map_err(|_| bad())?;
        let byte = f[2].parse().map_err(|_| bad())?;
        let value = f[3].parse().map_err(|_| bad())?;
        out.push((pracsim::CounterRef::new(bank, row, byte), value));
    }
    Ok(out)
}

fn cmd_verify(c: &SimConfig, report: &Option<PathBuf>, out: &Option<PathBuf>) -> CliResult<bool> {
    let log = c.debug.batch_log.as_deref().ok_or_else(|| Failure {
        exit: EXIT_USAGE,
        code: "usage",
        message: "verify needs the batch log (--log or debug.batch_log)".into(),
    })?;
    let events = c.load_events().map_err(Failure::runtime)?;
    let records = oracle::read_log(open(log)?).map_err(Failure::runtime)?;
    let mut params = c.verify_params();
    if let Some(path) = report {
        let r: SimReport = serde_json::from_reader(open(path)?).map_err(|e| Failure {
            exit: EXIT_RUNTIME,
            code: "parse",
            message: format!("{}: {e}", path.display()),
        })?;
        params.reported_counter_acts = Some(r.counter_acts);
    }
    if let Some(path) = &c.debug.counter_dump {
        params.final_counters = Some(read_counters(path)?);
    }
    let verdict = verify(&events, &records, &params).map_err(Failure::runtime)?;
    emit(out, |w| text(w, &serde_json::to_string_pretty(&verdict).expect("verdict serializes")))?;
    Ok(verdict.passed())
}

fn execute(command: Command) -> CliResult<u8> {
    let args = match &command {
        Command::Gen { config, .. }
        | Command::Run { config, .. }
        | Command::Compare { config, .. }
        | Command::Analyze { config, .. }
        | Command::Verify { config, .. } => config,
    };
    let c = args.resolve()?;
    if args.dump_config {
        print!("{}", config::dump(&c));
        return Ok(0);
    }
    match &command {
        Command::Gen { out, .. } => cmd_gen(&c, out)?,
        Command::Run { output, .. } => cmd_run(&c, output)?,
        Command::Compare { output, policies, .. } => cmd_compare(&c, output, policies)?,
        Command::Analyze { output, .. } => cmd_analyze(&c, output)?,
        Command::Verify { report, out, .. } => {
            if !cmd_verify(&c, report, out)? {
                return Ok(EXIT_VERIFY);
            }
        }
    }
    Ok(0)
}

fn report_failure(f: &Failure, machine: bool) {
    if machine {
        let obj = serde_json::json!({ "code": f.code, "message": f.message, "exit": f.exit });
        eprintln!("{obj}");
    } else {
        eprintln!("error: {}", f.message);
        if f.exit == EXIT_USAGE {
            eprintln!("config keys: {}", config::KEYS.join(", "));
        }
    }
}

fn main() -> ExitCode {
    let machine = std::env::args().any(|a| a == "--machine");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help / --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if machine {
                let f = Failure {
                    exit: EXIT_USAGE,
                    code: "usage",
                    message: e.kind().to_string(),
                };
                report_failure(&f, true);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            report_failure(&f, cli.machine);
            ExitCode::from(f.exit)
        }
    }
}
