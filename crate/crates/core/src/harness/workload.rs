//! The benchmark workload: order-book and TPC-H-shaped queries, their
//! catalogs, and the compilation modes compared by the benchmark.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::ast::sql::{parse_catalog, parse_sql, Catalog, SqlQuery};
use crate::compiler::{compile, CompileOptions, Depth, TriggerProgram};
use crate::error::{Error, Result};
use crate::optimizer::OptimizerMode;

pub const ORDERBOOK_CATALOG: &str = include_str!("../../workload/orderbook.sql");
pub const TPCH_CATALOG: &str = include_str!("../../workload/tpch.sql");

const QUERIES: [(&str, Family, &str); 12] = [
    (
        "AXF",
        Family::OrderBook,
        include_str!("../../workload/axf.sql"),
    ),
    (
        "BSP",
        Family::OrderBook,
        include_str!("../../workload/bsp.sql"),
    ),
    (
        "BSV",
        Family::OrderBook,
        include_str!("../../workload/bsv.sql"),
    ),
    (
        "MST",
        Family::OrderBook,
        include_str!("../../workload/mst.sql"),
    ),
    (
        "PSP",
        Family::OrderBook,
        include_str!("../../workload/psp.sql"),
    ),
    (
        "VWAP",
        Family::OrderBook,
        include_str!("../../workload/vwap.sql"),
    ),
    ("Q3", Family::Tpch, include_str!("../../workload/q3.sql")),
    ("Q11", Family::Tpch, include_str!("../../workload/q11.sql")),
    ("Q17", Family::Tpch, include_str!("../../workload/q17.sql")),
    ("Q18", Family::Tpch, include_str!("../../workload/q18.sql")),
    ("Q22", Family::Tpch, include_str!("../../workload/q22.sql")),
    (
        "SSB4",
        Family::Tpch,
        include_str!("../../workload/ssb4.sql"),
    ),
];

/// Which schema and stream generator a query runs against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    OrderBook,
    Tpch,
}

impl Family {
    pub fn catalog(self) -> Catalog {
        let src = match self {
            Family::OrderBook => ORDERBOOK_CATALOG,
            Family::Tpch => TPCH_CATALOG,
        };
        parse_catalog(src).expect("built-in catalog parses")
    }
}

#[derive(Clone, Debug)]
pub struct WorkloadQuery {
    pub name: String,
    pub family: Family,
    pub sql: String,
}

impl WorkloadQuery {
    pub fn parse(&self) -> Result<SqlQuery> {
        let mut q = parse_sql(&self.sql, &self.family.catalog())?;
        q.name = "Q".into();
        Ok(q)
    }

    pub fn compile(&self, mode: BenchMode) -> Result<TriggerProgram> {
        compile(&self.parse()?, &self.family.catalog(), &mode.options())
    }
}

/// The built-in twelve-query workload.
pub fn workload() -> Vec<WorkloadQuery> {
    QUERIES
        .iter()
        .map(|(name, family, sql)| WorkloadQuery {
            name: name.to_string(),
            family: *family,
            sql: sql.to_string(),
        })
        .collect()
}

pub fn find_query(name: &str) -> Option<WorkloadQuery> {
    workload()
        .into_iter()
        .find(|q| q.name.eq_ignore_ascii_case(name))
}

/// Load every `*.sql` query file of a directory. Files named after a
/// catalog (`orderbook.sql`, `tpch.sql`) are skipped; each query is
/// assigned the first family whose catalog it parses against.
pub fn load_dir(dir: &Path) -> Result<Vec<WorkloadQuery>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {}", dir.display(), e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sql"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let stem = p
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        if stem == "orderbook" || stem == "tpch" {
            continue;
        }
        let sql = std::fs::read_to_string(&p)
            .map_err(|e| Error::Io(format!("{}: {}", p.display(), e)))?;
        let family = [Family::OrderBook, Family::Tpch]
            .into_iter()
            .find(|f| parse_sql(&sql, &f.catalog()).is_ok())
            .ok_or_else(|| {
                let err = parse_sql(&sql, &Family::Tpch.catalog()).unwrap_err();
                Error::Config(format!("{}: {}", p.display(), err))
            })?;
        out.push(WorkloadQuery {
            name: stem.to_ascii_uppercase(),
            family,
            sql,
        });
    }
    Ok(out)
}

/// The four compilation strategies compared by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchMode {
    /// Re-evaluate the query on every event.
    Depth0,
    /// Classical first-order incremental maintenance.
    Depth1,
    /// Full recursion with every delta materialized as a whole.
    NaiveRecursive,
    /// Full recursion with the heuristic optimizer.
    Optimized,
}

impl BenchMode {
    pub const ALL: [BenchMode; 4] = [
        BenchMode::Depth0,
        BenchMode::Depth1,
        BenchMode::NaiveRecursive,
        BenchMode::Optimized,
    ];

    pub fn options(self) -> CompileOptions {
        match self {
            BenchMode::Depth0 => CompileOptions::new(Depth::Zero, OptimizerMode::Heuristic),
            BenchMode::Depth1 => CompileOptions::new(Depth::One, OptimizerMode::Heuristic),
            BenchMode::NaiveRecursive => {
                CompileOptions::new(Depth::Unbounded, OptimizerMode::Naive)
            }
            BenchMode::Optimized => CompileOptions::new(Depth::Unbounded, OptimizerMode::Heuristic),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Depth0 => "depth0",
            BenchMode::Depth1 => "depth1",
            BenchMode::NaiveRecursive => "naive",
            BenchMode::Optimized => "optimized",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "depth0" | "0" => Ok(BenchMode::Depth0),
            "depth1" | "1" => Ok(BenchMode::Depth1),
            "naive" | "naiverecursive" => Ok(BenchMode::NaiveRecursive),
            "optimized" | "opt" => Ok(BenchMode::Optimized),
            other => Err(Error::Config(format!("unknown bench mode `{}`", other))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_query_compiles_in_every_mode() {
        for q in workload() {
            for m in BenchMode::ALL {
                let p = q
                    .compile(m)
                    .unwrap_or_else(|e| panic!("{} {}: {}", q.name, m, e));
                assert!(p.statement_count() > 0, "{} {}", q.name, m);
            }
        }
    }

    #[test]
    fn directory_loading_matches_builtin() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("workload");
        let loaded = load_dir(&dir).unwrap();
        let names: Vec<String> = loaded.iter().map(|q| q.name.clone()).collect();
        assert_eq!(names.len(), 12);
        for q in workload() {
            let l = loaded.iter().find(|l| l.name == q.name).unwrap();
            assert_eq!(l.family, q.family, "{}", q.name);
        }
    }
}
