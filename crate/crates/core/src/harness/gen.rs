//! Seeded synthetic update streams.
//!
//! The order-book stream inserts and cancels orders on `Bids` and `Asks`.
//! The TPC-H-shaped stream first loads the dimension relations (suppliers,
//! parts, part suppliers, customers) and then interleaves order and lineitem
//! insertions with order deletions that hold the number of live orders near
//! a target.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gmr::{Gmr, Tuple};
use crate::runtime::StreamEvent;
use crate::value::{parse_date, rat, Value};

use super::oracle::Database;

/// A stream together with the static relations it runs against.
#[derive(Clone, Debug, Default)]
pub struct Stream {
    pub initial: Database,
    pub events: Vec<StreamEvent>,
}

#[derive(Clone, Debug)]
pub struct OrderBookConfig {
    pub brokers: i64,
    /// Prices are drawn from `price_min..=price_max` in multiples of `price_step`.
    pub price_min: i64,
    pub price_max: i64,
    pub price_step: i64,
    pub volume_max: i64,
    /// Probability that an event cancels a live order.
    pub delete_ratio: f64,
    /// Once a side holds this many live orders, cancellations become more
    /// likely than insertions.
    pub live_target: Option<usize>,
}

impl Default for OrderBookConfig {
    fn default() -> Self {
        OrderBookConfig {
            brokers: 10,
            price_min: 0,
            price_max: 3000,
            price_step: 25,
            volume_max: 100,
            delete_ratio: 0.3,
            live_target: None,
        }
    }
}

impl OrderBookConfig {
    /// Few brokers and prices, for replay against the reference evaluator.
    pub fn small() -> Self {
        OrderBookConfig {
            brokers: 3,
            price_min: 0,
            price_max: 2400,
            price_step: 300,
            volume_max: 5,
            delete_ratio: 0.3,
            live_target: Some(25),
        }
    }
}

pub fn gen_orderbook_stream(seed: u64, n: usize) -> Vec<StreamEvent> {
    gen_orderbook_with(seed, n, &OrderBookConfig::default())
}

pub fn gen_orderbook_with(seed: u64, n: usize, cfg: &OrderBookConfig) -> Vec<StreamEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: [Vec<Tuple>; 2] = [Vec::new(), Vec::new()];
    let names = ["Bids", "Asks"];
    let steps = ((cfg.price_max - cfg.price_min) / cfg.price_step.max(1)).max(0);
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let side = rng.gen_range(0..2);
        let book = &mut live[side];
        let p_delete = match cfg.live_target {
            Some(t) if book.len() >= t => 0.6,
            _ => cfg.delete_ratio,
        };
        if !book.is_empty() && rng.gen_bool(p_delete) {
            let i = rng.gen_range(0..book.len());
            let tuple = book.swap_remove(i);
            out.push(StreamEvent::delete(names[side], tuple));
        } else {
            let tuple = vec![
                Value::int(t as i64),
                Value::int(t as i64),
                Value::int(rng.gen_range(0..cfg.brokers.max(1))),
                Value::int(cfg.price_min + cfg.price_step * rng.gen_range(0..=steps)),
                Value::int(rng.gen_range(1..=cfg.volume_max.max(1))),
            ];
            book.push(tuple.clone());
            out.push(StreamEvent::insert(names[side], tuple));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct TpchConfig {
    /// Multiplies the dimension table sizes.
    pub scale: f64,
    /// Number of live orders the stream is held near.
    pub active_orders: usize,
    /// Total number of events, dimension loading included.
    pub events: usize,
    /// Share of post-load events that delete an order along with its lineitems.
    pub delete_ratio: f64,
    /// Share of post-load insertions that create an order rather than a lineitem.
    pub order_ratio: f64,
    pub quantity_max: i64,
    pub nations: i64,
}

impl Default for TpchConfig {
    fn default() -> Self {
        TpchConfig {
            scale: 1.0,
            active_orders: 1000,
            events: 50_000,
            delete_ratio: 0.1,
            order_ratio: 0.25,
            quantity_max: 50,
            nations: 25,
        }
    }
}

impl TpchConfig {
    /// Tiny dimension tables and few live orders.
    pub fn small(events: usize) -> Self {
        TpchConfig {
            scale: 0.04,
            active_orders: 12,
            events,
            nations: 5,
            ..Default::default()
        }
    }

    pub fn customers(&self) -> i64 {
        ((150.0 * self.scale).ceil() as i64).max(1)
    }

    pub fn parts(&self) -> i64 {
        ((200.0 * self.scale).ceil() as i64).max(1)
    }

    pub fn suppliers(&self) -> i64 {
        ((10.0 * self.scale).ceil() as i64).max(1)
    }
}

const SEGMENTS: [&str; 5] = [
    "BUILDING",
    "AUTOMOBILE",
    "MACHINERY",
    "HOUSEHOLD",
    "FURNITURE",
];
const PART_TYPES: [&str; 4] = ["BRASS", "COPPER", "NICKEL", "STEEL"];

/// `Nation(nationkey, regionkey)` with five regions.
pub fn nation_table(nations: i64) -> Gmr {
    Gmr::from_entries(
        vec!["nationkey".into(), "regionkey".into()],
        (0..nations).map(|n| (vec![Value::int(n), Value::int(n % 5)], rat(1))),
    )
    .expect("distinct columns")
}

pub fn gen_tpch_stream(seed: u64, cfg: &TpchConfig) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first_day = parse_date("1992-01-01").expect("valid date");
    let last_day = parse_date("1998-12-31").expect("valid date");
    let nations = cfg.nations.max(1);

    let mut dims = Vec::new();
    for s in 0..cfg.suppliers() {
        dims.push(StreamEvent::insert(
            "Supplier",
            vec![Value::int(s), Value::int(rng.gen_range(0..nations))],
        ));
    }
    for p in 0..cfg.parts() {
        let ty = PART_TYPES[rng.gen_range(0..PART_TYPES.len())];
        dims.push(StreamEvent::insert(
            "Part",
            vec![Value::int(p), Value::str(ty)],
        ));
        for k in 0..2.min(cfg.suppliers()) {
            let s = (p + k) % cfg.suppliers();
            dims.push(StreamEvent::insert(
                "Partsupp",
                vec![
                    Value::int(p),
                    Value::int(s),
                    Value::int(rng.gen_range(1..10_000)),
                    Value::int(rng.gen_range(1..1000)),
                ],
            ));
        }
    }
    dims.shuffle(&mut rng);
    let mut customers = Vec::new();
    for c in 0..cfg.customers() {
        customers.push(StreamEvent::insert(
            "Customer",
            vec![
                Value::int(c),
                Value::int(rng.gen_range(0..nations)),
                Value::str(SEGMENTS[rng.gen_range(0..SEGMENTS.len())]),
                Value::int(rng.gen_range(-999..10_000)),
            ],
        ));
    }
    let mut events: Vec<StreamEvent> = dims.into_iter().chain(customers).collect();
    events.truncate(cfg.events);

    // live orders with the lineitems inserted for them
    let mut live: Vec<(Tuple, Vec<Tuple>)> = Vec::new();
    let mut next_order = 0i64;
    while events.len() < cfg.events {
        let deleting = live.len() > cfg.active_orders / 2 && rng.gen_bool(cfg.delete_ratio);
        if deleting {
            let i = rng.gen_range(0..live.len());
            let (order, items) = live.swap_remove(i);
            events.extend(
                items
                    .into_iter()
                    .map(|li| StreamEvent::delete("Lineitem", li)),
            );
            events.push(StreamEvent::delete("Orders", order));
            continue;
        }
        let new_order =
            live.is_empty() || (live.len() < cfg.active_orders && rng.gen_bool(cfg.order_ratio));
        if new_order {
            let day = rng.gen_range(first_day..=last_day - 150);
            let o = vec![
                Value::int(next_order),
                Value::int(rng.gen_range(0..cfg.customers())),
                Value::Date(day),
                Value::int(rng.gen_range(0..3)),
            ];
            next_order += 1;
            live.push((o.clone(), Vec::new()));
            events.push(StreamEvent::insert("Orders", o));
        } else {
            let k = rng.gen_range(0..live.len());
            let o = &live[k].0;
            let Value::Date(day) = o[2] else {
                unreachable!()
            };
            let p = rng.gen_range(0..cfg.parts());
            let s = rng.gen_range(0..cfg.suppliers());
            let li = vec![
                o[0].clone(),
                Value::int(p),
                Value::int(s),
                Value::int(rng.gen_range(1..=cfg.quantity_max.max(1))),
                Value::int(rng.gen_range(100..10_000)),
                Value::Num(crate::value::ratio(rng.gen_range(0..10), 100)),
                Value::Date(day + rng.gen_range(1..=120)),
            ];
            live[k].1.push(li.clone());
            events.push(StreamEvent::insert("Lineitem", li));
        }
    }
    events.truncate(cfg.events);
    let mut initial = HashMap::new();
    initial.insert("Nation".to_string(), nation_table(nations));
    Stream { initial, events }
}

/// The stream a workload family runs against.
pub fn family_stream(family: super::Family, seed: u64, events: usize, small: bool) -> Stream {
    match family {
        super::Family::OrderBook => {
            let cfg = if small {
                OrderBookConfig::small()
            } else {
                OrderBookConfig::default()
            };
            Stream {
                initial: HashMap::new(),
                events: gen_orderbook_with(seed, events, &cfg),
            }
        }
        super::Family::Tpch => {
            let cfg = if small {
                TpchConfig::small(events)
            } else {
                TpchConfig {
                    events,
                    ..Default::default()
                }
            };
            gen_tpch_stream(seed, &cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delta::Sign;
    use crate::harness::Family;
    use crate::runtime::{format_stream, parse_stream};
    use std::collections::HashSet;

    #[test]
    fn orderbook_is_deterministic_and_well_typed() {
        let a = format_stream(&gen_orderbook_stream(7, 500));
        assert_eq!(a, format_stream(&gen_orderbook_stream(7, 500)));
        assert_ne!(a, format_stream(&gen_orderbook_stream(8, 500)));
        let rels: Vec<_> = Family::OrderBook.catalog().in_order().cloned().collect();
        let parsed = parse_stream(&a, &rels).unwrap();
        assert_eq!(parsed.len(), 500);
        assert!(parsed.iter().all(|e| e.tuple.len() == 5));
    }

    #[test]
    fn orderbook_only_cancels_live_orders() {
        let mut live: HashSet<(String, Tuple)> = HashSet::new();
        for e in gen_orderbook_stream(3, 2000) {
            let k = (e.relation.clone(), e.tuple.clone());
            match e.sign {
                Sign::Insert => assert!(live.insert(k)),
                Sign::Delete => assert!(live.remove(&k)),
            }
        }
    }

    #[test]
    fn tpch_orders_stay_near_target() {
        let cfg = TpchConfig {
            scale: 0.1,
            active_orders: 100,
            events: 20_000,
            ..Default::default()
        };
        let s = gen_tpch_stream(11, &cfg);
        assert_eq!(s.events.len(), 20_000);
        let load = cfg.customers() + cfg.parts() * 3 + cfg.suppliers();
        let mut live = 0i64;
        for (i, e) in s.events.iter().enumerate() {
            if e.relation == "Orders" {
                live += if e.sign == Sign::Insert { 1 } else { -1 };
            }
            if i > 2000 + load as usize {
                assert!((50..=150).contains(&live), "{} live orders at {}", live, i);
            }
        }
    }

    #[test]
    fn tpch_lineitems_reference_inserted_orders() {
        let s = gen_tpch_stream(5, &TpchConfig::small(3000));
        let mut seen = HashSet::new();
        for e in &s.events {
            match e.relation.as_str() {
                "Orders" if e.sign == Sign::Insert => {
                    seen.insert(e.tuple[0].clone());
                }
                "Lineitem" => assert!(seen.contains(&e.tuple[0])),
                "Customer" | "Part" | "Supplier" | "Partsupp" => assert_eq!(e.sign, Sign::Insert),
                _ => {}
            }
        }
        let rels: Vec<_> = Family::Tpch.catalog().in_order().cloned().collect();
        assert_eq!(
            parse_stream(&format_stream(&s.events), &rels).unwrap(),
            s.events
        );
        assert_eq!(
            format_stream(&gen_tpch_stream(5, &TpchConfig::small(3000)).events),
            format_stream(&s.events)
        );
    }
}
