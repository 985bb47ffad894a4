//! The depth-comparison benchmark: every (query, mode) cell replays the same
//! seeded stream in its own engine.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::runtime::Engine;

use super::check::compare;
use super::gen::{gen_orderbook_with, gen_tpch_stream, OrderBookConfig, Stream, TpchConfig};
use super::oracle::Database;
use super::workload::{BenchMode, Family, WorkloadQuery};

/// How independent cells are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Cells run on the rayon pool; without the `parallel` feature this
    /// falls back to sequential execution.
    Parallel,
}

impl Parallelism {
    pub fn effective(self) -> Parallelism {
        if cfg!(feature = "parallel") {
            self
        } else {
            Parallelism::Sequential
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub queries: Vec<WorkloadQuery>,
    pub modes: Vec<BenchMode>,
    pub seed: u64,
    pub orderbook: OrderBookConfig,
    pub orderbook_events: usize,
    pub tpch: TpchConfig,
    pub timeout: Duration,
    /// Compare against the reference evaluator after every k-th event.
    pub oracle_every: Option<usize>,
    /// Timed replays per cell; the median is reported.
    pub runs: usize,
    /// Run one untimed replay before the timed ones.
    pub warmup: bool,
    /// Spacing of the throughput time series.
    pub series_every: usize,
    pub parallelism: Parallelism,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            queries: super::workload(),
            modes: BenchMode::ALL.to_vec(),
            seed: 42,
            orderbook: OrderBookConfig::default(),
            orderbook_events: 20_000,
            tpch: TpchConfig {
                events: 20_000,
                ..Default::default()
            },
            timeout: Duration::from_secs(60),
            oracle_every: None,
            runs: 1,
            warmup: false,
            series_every: 1000,
            parallelism: Parallelism::Parallel,
        }
    }
}

impl BenchConfig {
    pub fn stream(&self, family: Family) -> Stream {
        match family {
            Family::OrderBook => Stream {
                initial: Database::new(),
                events: gen_orderbook_with(self.seed, self.orderbook_events, &self.orderbook),
            },
            Family::Tpch => gen_tpch_stream(self.seed, &self.tpch),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BenchCell {
    pub query: String,
    pub mode: String,
    pub events: usize,
    pub seconds: f64,
    pub refreshes_per_sec: f64,
    pub peak_entries: usize,
    pub statements: u64,
    pub probes: u64,
    pub timed_out: bool,
    pub error: Option<String>,
    pub divergence: Option<String>,
    /// `(events applied, seconds elapsed)` samples of the reported run.
    pub series: Vec<(usize, f64)>,
}

impl BenchCell {
    /// Events per second between two event counts, interpolated from the
    /// nearest recorded samples at or beyond them.
    pub fn rate_between(&self, from: usize, to: usize) -> Option<f64> {
        let start = if from == 0 {
            (0, 0.0)
        } else {
            *self.series.iter().find(|(n, _)| *n >= from)?
        };
        let end = *self.series.iter().find(|(n, _)| *n >= to)?;
        let dt = end.1 - start.1;
        (end.0 > start.0 && dt > 0.0).then(|| (end.0 - start.0) as f64 / dt)
    }

    pub fn ok(&self) -> bool {
        self.error.is_none() && self.divergence.is_none()
    }
}

#[derive(Clone, Debug, Default)]
pub struct BenchResult {
    pub cells: Vec<BenchCell>,
}

impl BenchResult {
    pub fn cell(&self, query: &str, mode: BenchMode) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.query == query && c.mode == mode.name())
    }

    /// `query mode events seconds refreshes_per_sec peak_entries`, tab separated.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("query\tmode\tevents\tseconds\trefreshes_per_sec\tpeak_entries\n");
        for c in &self.cells {
            let status = if let Some(e) = &c.error {
                format!("\terror: {}", e)
            } else if let Some(d) = &c.divergence {
                format!("\tdivergence: {}", d)
            } else if c.timed_out {
                "\ttimeout".to_string()
            } else {
                String::new()
            };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{:.1}\t{}{}",
                c.query, c.mode, c.events, c.seconds, c.refreshes_per_sec, c.peak_entries, status
            );
        }
        s
    }

    /// `event_index,cumulative_throughput` for one cell.
    pub fn series_csv(cell: &BenchCell) -> String {
        let mut s = String::from("event_index,cumulative_throughput\n");
        for (n, t) in &cell.series {
            let rate = if *t > 0.0 { *n as f64 / t } else { 0.0 };
            let _ = writeln!(s, "{},{:.3}", n, rate);
        }
        s
    }
}

struct Replay {
    events: usize,
    seconds: f64,
    timed_out: bool,
    divergence: Option<String>,
    series: Vec<(usize, f64)>,
    peak_entries: usize,
    statements: u64,
    probes: u64,
}

fn replay(
    q: &WorkloadQuery,
    mode: BenchMode,
    stream: &Stream,
    cfg: &BenchConfig,
) -> Result<Replay> {
    let program = q.compile(mode)?;
    let expr = if cfg.oracle_every.is_some() {
        Some(q.parse()?.expr)
    } else {
        None
    };
    let mut engine = Engine::new(program, &stream.initial)?;
    let mut db = stream.initial.clone();
    for r in &engine.program().relations {
        db.entry(r.name.clone())
            .or_insert_with(|| crate::gmr::Gmr::new(r.column_names()).expect("distinct columns"));
    }
    let mut out = Replay {
        events: 0,
        seconds: 0.0,
        timed_out: false,
        divergence: None,
        series: Vec::new(),
        peak_entries: 0,
        statements: 0,
        probes: 0,
    };
    let every = cfg.series_every.max(1);
    let start = Instant::now();
    for (i, ev) in stream.events.iter().enumerate() {
        engine.apply(ev)?;
        out.events = i + 1;
        if let (Some(k), Some(expr)) = (cfg.oracle_every, &expr) {
            super::check::apply_to_database(&mut db, ev, ev.tuple.len());
            if (i + 1) % k.max(1) == 0 || i + 1 == stream.events.len() {
                if let Some(d) = compare(&engine, expr, &db, i + 1)? {
                    out.divergence = Some(format!("after event {}", d.events_applied));
                    break;
                }
            }
        }
        if (i + 1) % every == 0 || i + 1 == stream.events.len() {
            out.series.push((i + 1, start.elapsed().as_secs_f64()));
        }
        if start.elapsed() > cfg.timeout {
            out.timed_out = true;
            out.series.push((i + 1, start.elapsed().as_secs_f64()));
            break;
        }
    }
    out.seconds = start.elapsed().as_secs_f64();
    let c = engine.counters();
    out.peak_entries = c.peak_entries;
    out.statements = c.statements;
    out.probes = c.probes;
    Ok(out)
}

/// Replay one cell `cfg.runs` times (after an optional warm-up) and report
/// the median run.
pub fn run_cell(
    q: &WorkloadQuery,
    mode: BenchMode,
    stream: &Stream,
    cfg: &BenchConfig,
) -> BenchCell {
    let mut cell = BenchCell {
        query: q.name.clone(),
        mode: mode.name().to_string(),
        ..Default::default()
    };
    let total = cfg.runs.max(1) + usize::from(cfg.warmup);
    let mut runs = Vec::new();
    for r in 0..total {
        match replay(q, mode, stream, cfg) {
            Ok(rep) => {
                let stop = rep.timed_out || rep.divergence.is_some();
                if r >= usize::from(cfg.warmup) || stop {
                    runs.push(rep);
                }
                if stop {
                    break;
                }
            }
            Err(e) => {
                cell.error = Some(e.to_string());
                return cell;
            }
        }
    }
    runs.sort_by(|a, b| a.seconds.total_cmp(&b.seconds));
    let rep = runs.swap_remove(runs.len() / 2);
    cell.events = rep.events;
    cell.seconds = rep.seconds;
    cell.refreshes_per_sec = if rep.seconds > 0.0 {
        rep.events as f64 / rep.seconds
    } else {
        0.0
    };
    cell.peak_entries = rep.peak_entries;
    cell.statements = rep.statements;
    cell.probes = rep.probes;
    cell.timed_out = rep.timed_out;
    cell.divergence = rep.divergence;
    cell.series = rep.series;
    cell
}

/// Run every requested (query, mode) cell. Streams are generated once per
/// workload family and shared by all cells of that family.
pub fn run_bench(cfg: &BenchConfig) -> BenchResult {
    let mut streams: BTreeMap<Family, Stream> = BTreeMap::new();
    for q in &cfg.queries {
        streams
            .entry(q.family)
            .or_insert_with(|| cfg.stream(q.family));
    }
    let jobs: Vec<(&WorkloadQuery, BenchMode)> = cfg
        .queries
        .iter()
        .flat_map(|q| cfg.modes.iter().map(move |m| (q, *m)))
        .collect();
    let run = |(q, m): &(&WorkloadQuery, BenchMode)| run_cell(q, *m, &streams[&q.family], cfg);
    let cells = match cfg.parallelism.effective() {
        Parallelism::Sequential => jobs.iter().map(run).collect(),
        Parallelism::Parallel => parallel_map(&jobs, run),
    };
    BenchResult { cells }
}

#[cfg(feature = "parallel")]
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::find_query;

    fn tiny(parallelism: Parallelism) -> BenchConfig {
        BenchConfig {
            queries: vec![find_query("Q11").unwrap(), find_query("VWAP").unwrap()],
            orderbook: OrderBookConfig::small(),
            orderbook_events: 300,
            tpch: TpchConfig::small(300),
            oracle_every: Some(10),
            series_every: 50,
            parallelism,
            ..Default::default()
        }
    }

    #[test]
    fn sequential_and_parallel_agree_on_counts() {
        let a = run_bench(&tiny(Parallelism::Sequential));
        let b = run_bench(&tiny(Parallelism::Parallel));
        assert_eq!(a.cells.len(), 8);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert!(x.ok(), "{:?}", x);
            assert_eq!(
                (&x.query, &x.mode, x.events, x.statements),
                (&y.query, &y.mode, y.events, y.statements)
            );
            assert_eq!(x.events, 300);
        }
        let tsv = a.to_tsv();
        assert_eq!(tsv.lines().count(), 9);
        assert!(tsv.starts_with("query\tmode\tevents\tseconds\trefreshes_per_sec\tpeak_entries\n"));
        let csv = BenchResult::series_csv(&a.cells[0]);
        assert_eq!(csv.lines().count(), 1 + 6);
    }

    #[test]
    fn timeouts_mark_the_cell() {
        let mut cfg = tiny(Parallelism::Sequential);
        cfg.timeout = Duration::ZERO;
        cfg.oracle_every = None;
        let r = run_bench(&cfg);
        assert!(r.cells.iter().all(|c| c.timed_out && c.events == 1));
        assert!(r.to_tsv().contains("\ttimeout"));
    }
}
