//! Command-line companion to the core library: map and predicate files,
//! scenario orchestration (the belief/world MDP pair), and the benchmark
//! suites with CSV/JSON reporting.

pub mod bench;
pub mod io;
pub mod scenario;
