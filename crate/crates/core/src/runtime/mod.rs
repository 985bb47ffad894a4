//! Execution of trigger programs.

pub mod engine;
pub mod eval;
pub mod stream;
pub mod view;

pub use engine::{Counters, Engine};
pub use eval::{evaluate, AccessPattern, AtomKind, MapRef, MemorySource, Plan, Source};
pub use stream::{format_stream, parse_event, parse_stream, StreamEvent};
pub use view::ViewMap;
