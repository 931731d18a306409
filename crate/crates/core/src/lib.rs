//! Trace-driven simulator for batched per-row activation counter updates.
//!
//! A trace of data-row activations is mapped onto per-bank counter rows;
//! each bank's request buffer coalesces counter increments so that one
//! counter-row activation services up to `m_batch` of them, while bounding
//! how stale any counter may become. The [`oracle`] replays a batch log
//! against the trace to check those guarantees independently.

pub mod buffer;
pub mod cache;
pub mod config;
pub mod counter_store;
pub mod energy;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod oracle;
pub mod trace;

pub use buffer::{BufferConfig, Design, KTrigger, RequestBuffer, ServiceBatch, Trigger};
pub use cache::{CacheConfig, CacheKind, CounterCache};
pub use counter_store::{CounterArray, MitigationKind, MitigationPolicy};
pub use energy::{EnergyBreakdown, EnergyLedger, EnergyParams};
pub use engine::{compare, compare_on, run, simulate, Comparison, SimConfig, SimOutcome, SimReport};
pub use error::{Result, SimError};
pub use geometry::{CounterRef, DramGeometry};
pub use metrics::{TraceMetrics, WindowMode};
pub use oracle::{verify, LogRecord, Verdict, VerifyParams};
pub use trace::{ActivationEvent, Generator, TraceSpec};
