//! Correctness and performance harness: a reference evaluator, synthetic
//! stream generators, the query workload and a benchmark driver.

pub mod oracle;

pub use oracle::{oracle, oracle_in, Database};
pub mod bench;
pub mod check;
pub mod gen;
pub mod workload;

pub use bench::{run_bench, run_cell, BenchCell, BenchConfig, BenchResult, Parallelism};
pub use check::{apply_to_database, compare, replay_checked, Divergence};
pub use gen::{
    family_stream, gen_orderbook_stream, gen_orderbook_with, gen_tpch_stream, OrderBookConfig,
    Stream, TpchConfig,
};
pub use workload::{find_query, load_dir, workload, BenchMode, Family, WorkloadQuery};
