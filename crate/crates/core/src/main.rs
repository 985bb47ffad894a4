use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use viewlet::ast::sql::{parse_script, Catalog, SqlQuery};
use viewlet::compiler::{
    check_statement_order, compile, print_program, CompileOptions, Depth, TriggerProgram,
};
use viewlet::gmr::Gmr;
use viewlet::harness::{
    self, BenchConfig, BenchMode, BenchResult, OrderBookConfig, Parallelism, TpchConfig,
};
use viewlet::optimizer::{OptimizerMode, Statistics};
use viewlet::runtime::{parse_stream, Engine};
use viewlet::value::rat;
use viewlet::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_COMPILE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "viewlet",
    version,
    about = "Compile aggregate SQL queries into trigger programs and run them on update streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the trigger program of a query.
    Compile {
        #[command(flatten)]
        query: QueryArgs,
        /// Write the program to a file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay an event stream through a compiled query.
    Run {
        #[command(flatten)]
        query: QueryArgs,
        /// Event stream: `+|-<TAB>relation<TAB>v1<TAB>...` per line.
        stream: PathBuf,
        /// Print the result after every N events (0: only the initial and final results).
        #[arg(long, default_value_t = 0)]
        snapshot_every: usize,
        /// Print every view in snapshots, not only the result.
        #[arg(long)]
        all_views: bool,
        /// Compare the result with a full re-evaluation after every event.
        #[arg(long)]
        check_oracle: bool,
        /// Initial contents of a relation, `NAME=FILE` in the GMR text format.
        #[arg(long = "load", value_name = "NAME=FILE")]
        loads: Vec<String>,
        /// Testing aid: corrupt the result view after the given event.
        #[arg(long, hide = true)]
        inject_fault: Option<usize>,
    },
    /// Run the depth-comparison benchmark on the workload.
    Bench {
        /// Directory of `*.sql` query files (defaults to the built-in workload).
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Comma-separated modes: depth0, depth1, naive, optimized.
        #[arg(long, default_value = "depth0,depth1,optimized")]
        modes: String,
        /// Comma-separated query names to run (default: all).
        #[arg(long)]
        queries: Option<String>,
        /// Per-cell timeout in seconds.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Events per stream.
        #[arg(long, default_value_t = 20_000)]
        events: usize,
        /// Live orders the TPC-H stream is held near.
        #[arg(long, default_value_t = 1000)]
        active_orders: usize,
        /// Dimension table scale of the TPC-H stream.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Timed replays per cell (median reported).
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Skip the untimed warm-up replay.
        #[arg(long)]
        no_warmup: bool,
        /// Check against the reference evaluator every K events.
        #[arg(long)]
        check_oracle_every: Option<usize>,
        /// Run cells one at a time.
        #[arg(long)]
        sequential: bool,
        /// Directory for the results table and per-cell throughput series.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct QueryArgs {
    /// SQL file with the query; it may also declare relations.
    query: PathBuf,
    /// Additional SQL file with `CREATE STREAM`/`CREATE TABLE` declarations.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Compilation depth: 0, 1 or inf.
    #[arg(long, default_value = "inf")]
    depth: String,
    /// Materialization optimizer: naive, heuristic or cost.
    #[arg(long, default_value = "heuristic")]
    optimizer: String,
    /// Statistics file, required by the cost-based optimizer.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    cache_threshold: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } | Error::Compile(_) | Error::Unsupported(_) | Error::Io(_) => {
                EXIT_COMPILE
            }
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_COMPILE, format!("{}: {}", path.display(), e)))
}

fn load_query(args: &QueryArgs) -> Result<(SqlQuery, Catalog, CompileOptions), Failure> {
    let base = match &args.catalog {
        Some(p) => {
            parse_script(&read(p)?, &Catalog::default())
                .map_err(|e| fail(EXIT_COMPILE, format!("{}: {}", p.display(), e)))?
                .catalog
        }
        None => Catalog::default(),
    };
    let mut script = parse_script(&read(&args.query)?, &base)
        .map_err(|e| fail(EXIT_COMPILE, format!("{}: {}", args.query.display(), e)))?;
    let mut query = script.queries.pop().ok_or_else(|| {
        fail(
            EXIT_COMPILE,
            format!("{}: no query found", args.query.display()),
        )
    })?;
    query.name = "Q".into();
    let depth: Depth = args
        .depth
        .parse()
        .map_err(|e: Error| fail(EXIT_USAGE, e.to_string()))?;
    let optimizer: OptimizerMode = args
        .optimizer
        .parse()
        .map_err(|e: Error| fail(EXIT_USAGE, e.to_string()))?;
    let stats = match &args.stats {
        Some(p) => Some(Statistics::parse(&read(p)?)?.with_columns(&script.catalog)),
        None if optimizer == OptimizerMode::CostBased => {
            return Err(fail(EXIT_USAGE, "the cost-based optimizer needs --stats"));
        }
        None => None,
    };
    let opts = CompileOptions {
        depth,
        optimizer,
        stats,
        cache_threshold: args.cache_threshold,
    };
    Ok((query, script.catalog, opts))
}

fn compile_program(args: &QueryArgs) -> Result<(SqlQuery, TriggerProgram), Failure> {
    let (query, catalog, opts) = load_query(args)?;
    let program = compile(&query, &catalog, &opts)?;
    check_statement_order(&program)?;
    Ok((query, program))
}

fn cmd_compile(query: &QueryArgs, output: Option<&Path>) -> Result<(), Failure> {
    let (_, program) = compile_program(query)?;
    let dump = print_program(&program);
    match output {
        Some(p) => {
            fs::write(p, dump).map_err(|e| fail(EXIT_RUNTIME, format!("{}: {}", p.display(), e)))
        }
        None => {
            print!("{}", dump);
            Ok(())
        }
    }
}

fn snapshot(
    out: &mut impl Write,
    engine: &Engine,
    events: usize,
    all_views: bool,
) -> Result<(), Failure> {
    let names = if all_views {
        engine.view_names()
    } else {
        vec![engine.program().query.clone()]
    };
    let _ = writeln!(out, "# after {} events", events);
    for n in names {
        let g = engine.snapshot(&n)?;
        if all_views {
            let _ = writeln!(out, "{}", n);
        }
        let _ = write!(out, "{}", g.to_text());
    }
    Ok(())
}

struct RunOpts<'a> {
    stream: &'a Path,
    snapshot_every: usize,
    all_views: bool,
    check_oracle: bool,
    loads: &'a [String],
    inject_fault: Option<usize>,
}

fn cmd_run(query: &QueryArgs, o: RunOpts<'_>) -> Result<(), Failure> {
    let (sql, program) = compile_program(query)?;
    let events = parse_stream(&read(o.stream)?, &program.relations)
        .map_err(|e| fail(EXIT_COMPILE, format!("{}: {}", o.stream.display(), e)))?;
    let mut initial: HashMap<String, Gmr> = HashMap::new();
    for spec in o.loads {
        let (name, file) = spec.split_once('=').ok_or_else(|| {
            fail(
                EXIT_USAGE,
                format!("--load expects NAME=FILE, got `{}`", spec),
            )
        })?;
        let decl = program
            .relation(name)
            .ok_or_else(|| fail(EXIT_USAGE, format!("--load: unknown relation `{}`", name)))?;
        let g = Gmr::from_text(decl.column_names(), &read(Path::new(file))?)
            .map_err(|e| fail(EXIT_COMPILE, format!("{}: {}", file, e)))?;
        initial.insert(decl.name.clone(), g);
    }
    let mut engine = Engine::new(program, &initial)?;
    let mut db = initial.clone();
    for r in &engine.program().relations {
        db.entry(r.name.clone())
            .or_insert_with(|| Gmr::new(r.column_names()).expect("distinct columns"));
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    snapshot(&mut out, &engine, 0, o.all_views)?;
    for (i, ev) in events.iter().enumerate() {
        engine.apply(ev)?;
        let n = i + 1;
        if o.inject_fault == Some(n) {
            let q = engine.program().query.clone();
            let arity = engine
                .program()
                .view(&q)
                .map(|v| v.columns().len())
                .unwrap_or(0);
            let key = engine
                .snapshot(&q)?
                .sorted()
                .first()
                .map(|(t, _)| (*t).clone())
                .unwrap_or_else(|| vec![viewlet::value::Value::int(0); arity]);
            engine.corrupt(&q, key, &rat(1))?;
        }
        if o.check_oracle {
            harness::check::apply_to_database(&mut db, ev, ev.tuple.len());
            if let Some(d) = harness::compare(&engine, &sql.expr, &db, n)? {
                let _ = out.flush();
                return Err(fail(
                    EXIT_RUNTIME,
                    format!(
                        "divergence at event {} ({}):\nexpected:\n{}found:\n{}",
                        n,
                        ev,
                        d.expected.to_text(),
                        d.actual.to_text()
                    ),
                ));
            }
        }
        if o.snapshot_every > 0 && n % o.snapshot_every == 0 {
            snapshot(&mut out, &engine, n, o.all_views)?;
        }
    }
    if !events.is_empty() && (o.snapshot_every == 0 || events.len() % o.snapshot_every != 0) {
        snapshot(&mut out, &engine, events.len(), o.all_views)?;
    }
    Ok(())
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

struct BenchOpts<'a> {
    workload: Option<&'a Path>,
    modes: &'a str,
    queries: Option<&'a str>,
    timeout: f64,
    seed: u64,
    events: usize,
    active_orders: usize,
    scale: f64,
    runs: usize,
    warmup: bool,
    check_oracle_every: Option<usize>,
    sequential: bool,
    out: Option<&'a Path>,
}

fn cmd_bench(o: BenchOpts<'_>) -> Result<(), Failure> {
    let mut queries = match o.workload {
        Some(dir) => harness::load_dir(dir)?,
        None => harness::workload(),
    };
    if let Some(list) = o.queries {
        let wanted: Vec<String> = split_list(list).map(str::to_ascii_uppercase).collect();
        if let Some(missing) = wanted
            .iter()
            .find(|w| !queries.iter().any(|q| &q.name == *w))
        {
            return Err(fail(EXIT_USAGE, format!("unknown query `{}`", missing)));
        }
        queries.retain(|q| wanted.contains(&q.name));
    }
    let modes: Vec<BenchMode> = split_list(o.modes)
        .map(str::parse)
        .collect::<Result<_, Error>>()
        .map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    for q in &queries {
        for m in &modes {
            q.compile(*m)
                .map_err(|e| fail(EXIT_COMPILE, format!("{} ({}): {}", q.name, m, e)))?;
        }
    }
    if o.timeout.is_nan() || o.timeout < 0.0 {
        return Err(fail(EXIT_USAGE, "--timeout must be non-negative"));
    }
    let cfg = BenchConfig {
        queries,
        modes,
        seed: o.seed,
        orderbook: OrderBookConfig::default(),
        orderbook_events: o.events,
        tpch: TpchConfig {
            scale: o.scale,
            active_orders: o.active_orders,
            events: o.events,
            ..Default::default()
        },
        timeout: Duration::from_secs_f64(o.timeout),
        oracle_every: o.check_oracle_every,
        runs: o.runs.max(1),
        warmup: o.warmup,
        series_every: (o.events / 50).max(1),
        parallelism: if o.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        },
    };
    let result = harness::run_bench(&cfg);
    let table = result.to_tsv();
    print!("{}", table);
    if let Some(dir) = o.out {
        let io = |e: std::io::Error| fail(EXIT_RUNTIME, format!("{}: {}", dir.display(), e));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("results.tsv"), &table).map_err(io)?;
        for c in &result.cells {
            let name = format!("{}_{}.csv", c.query.to_ascii_lowercase(), c.mode);
            fs::write(dir.join(name), BenchResult::series_csv(c)).map_err(io)?;
        }
    }
    if let Some(c) = result.cells.iter().find(|c| c.divergence.is_some()) {
        return Err(fail(
            EXIT_RUNTIME,
            format!(
                "{} ({}): {}",
                c.query,
                c.mode,
                c.divergence.as_deref().unwrap_or("")
            ),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Compile { query, output } => cmd_compile(query, output.as_deref()),
        Command::Run {
            query,
            stream,
            snapshot_every,
            all_views,
            check_oracle,
            loads,
            inject_fault,
        } => cmd_run(
            query,
            RunOpts {
                stream,
                snapshot_every: *snapshot_every,
                all_views: *all_views,
                check_oracle: *check_oracle,
                loads,
                inject_fault: *inject_fault,
            },
        ),
        Command::Bench {
            workload,
            modes,
            queries,
            timeout,
            seed,
            events,
            active_orders,
            scale,
            runs,
            no_warmup,
            check_oracle_every,
            sequential,
            out,
        } => cmd_bench(BenchOpts {
            workload: workload.as_deref(),
            modes,
            queries: queries.as_deref(),
            timeout: *timeout,
            seed: *seed,
            events: *events,
            active_orders: *active_orders,
            scale: *scale,
            runs: *runs,
            warmup: !*no_warmup,
            check_oracle_every: *check_oracle_every,
            sequential: *sequential,
            out: out.as_deref(),
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
