//! One simulation: trace -> per-bank cache/buffer/counters -> ledger -> report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{Design, ItemOp, RequestBuffer, ServiceBatch, Trigger};
use crate::cache::{CacheConfig, CacheKind, CacheStats, CounterCache, Fill};
use crate::counter_store::{CounterArray, MitigationKind, MitigationPolicy};
use crate::energy::{EnergyBreakdown, EnergyLedger, EnergyParams};
use crate::error::{Result, SimError};
use crate::geometry::{CounterRef, DramGeometry};
use crate::metrics::{self, TraceMetrics, WindowMode};
use crate::oracle::{LogItem, LogKind, LogRecord, VerifyParams};
use crate::trace::{self, ActivationEvent, TraceSpec};
use crate::buffer::BufferConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub enabled: bool,
    pub window: usize,
    pub window_mode: WindowMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: metrics::DEFAULT_WINDOW,
            window_mode: WindowMode::Tumbling,
        }
    }
}

/// Optional debug outputs written by the CLI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DebugConfig {
    pub batch_log: Option<PathBuf>,
    pub counter_dump: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub geometry: DramGeometry,
    /// Trace file; when unset the trace is generated from `trace`.
    pub trace_path: Option<PathBuf>,
    pub trace: TraceSpec,
    pub buffer: BufferConfig,
    pub cache: CacheConfig,
    pub mitigation: MitigationPolicy,
    pub energy: EnergyParams,
    pub metrics: MetricsConfig,
    pub debug: DebugConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            geometry: DramGeometry::default(),
            trace_path: None,
            trace: TraceSpec::default(),
            buffer: BufferConfig::default(),
            cache: CacheConfig::default(),
            mitigation: MitigationPolicy::default(),
            energy: EnergyParams::default(),
            metrics: MetricsConfig::default(),
            debug: DebugConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.buffer.validate()?;
        self.cache.validate()?;
        self.energy.validate()?;
        if self.cache.enabled() && !self.buffer.design.is_buffered() {
            return Err(SimError::Config("a counter cache needs a buffered design, not chronus".into()));
        }
        if self.mitigation.rfms_per_alert == 0 {
            return Err(SimError::Config("mitigation.rfms_per_alert must be >= 1".into()));
        }
        if self.mitigation.proactive_interval_slots == Some(0) {
            return Err(SimError::Config("mitigation.proactive_interval must be > 0 (or disabled)".into()));
        }
        if self.metrics.window == 0 {
            return Err(SimError::Config("metrics.window must be > 0".into()));
        }
        if self.trace_path.is_none() {
            self.trace.validate(&self.geometry)?;
        }
        Ok(())
    }

    /// Policy label, e.g. `unified_approxmax` or `perrow+lru4way`.
    pub fn policy_id(&self) -> String {
        match self.cache.kind {
            CacheKind::None => self.buffer.design.name().to_string(),
            kind => format!("{}+{}", self.buffer.design.name(), kind.name()),
        }
    }

    /// Alert threshold on stored values: N_BO lowered by the buffering staleness.
    pub fn n_bo_effective(&self) -> Option<u8> {
        self.mitigation.effective_threshold(self.buffer.staleness_bound())
    }

    /// Generator parameters with the run seed applied.
    pub fn trace_spec(&self) -> TraceSpec {
        TraceSpec {
            seed: self.seed,
            ..self.trace.clone()
        }
    }

    pub fn load_events(&self) -> Result<Vec<ActivationEvent>> {
        match &self.trace_path {
            Some(path) => trace::load_trace_file(path, &self.geometry),
            None => trace::generate(&self.trace_spec(), &self.geometry),
        }
    }

    /// Oracle parameters matching this configuration.
    pub fn verify_params(&self) -> VerifyParams {
        VerifyParams::new(self.geometry, self.buffer.m_batch, self.buffer.staleness_bound())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheReport {
    pub accesses: u64,
    pub hits: u64,
    pub hit_rate: f64,
    pub fills: u64,
    pub rejected: u64,
    pub skipped: u64,
    pub dirty_evictions: u64,
    pub writeback_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub policy: String,
    pub design: Design,
    pub cache_kind: CacheKind,
    pub events: u64,
    pub counter_acts: u64,
    /// Counter-row activations relative to Chronus (one per data activation).
    pub normalized_acts: f64,
    pub mean_batch_items: f64,
    pub batches_by_trigger: BTreeMap<String, u64>,
    pub staleness_bound: u32,
    pub n_bo_effective: Option<u8>,
    pub alerts: u64,
    pub mitigations: u64,
    pub proactive_mitigations: u64,
    pub ledger: EnergyLedger,
    pub energy: EnergyBreakdown,
    pub cache: Option<CacheReport>,
    pub metrics: Option<TraceMetrics>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str = "policy,events,counter_acts,normalized_acts,mean_batch_items,\
counter_rmw_bytes,mitigation_acts,alerts,mitigations,energy_overhead,energy_counter_activation,\
energy_extra_rmw,energy_mitigation,cache_hit_rate,skew_mean,window_locality";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.policy,
            self.events,
            self.counter_acts,
            self.normalized_acts,
            self.mean_batch_items,
            self.ledger.counter_rmw_bytes,
            self.ledger.mitigation_acts,
            self.alerts,
            self.mitigations,
            self.energy.overhead,
            self.energy.counter_activation,
            self.energy.extra_rmw,
            self.energy.mitigation,
            opt(self.cache.map(|c| c.hit_rate)),
            opt(self.metrics.as_ref().and_then(|m| m.skew_mean)),
            opt(self.metrics.as_ref().and_then(|m| m.window_locality)),
        )
    }

    pub fn write_csv<W: Write>(reports: &[SimReport], mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in reports {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: SimReport,
    pub log: Option<Vec<LogRecord>>,
    /// Nonzero counters after drain, in counter order.
    pub final_counters: Vec<(CounterRef, u8)>,
}

struct BankState {
    buffer: RequestBuffer,
    cache: Option<CounterCache>,
}

struct Simulation<'a> {
    config: &'a SimConfig,
    store: CounterArray,
    banks: Vec<Option<BankState>>,
    ledger: EnergyLedger,
    triggers: BTreeMap<Trigger, u64>,
    batch_items: u64,
    proactive: u64,
    writeback_hits: u64,
    log: Option<Vec<LogRecord>>,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a SimConfig, record_log: bool) -> Self {
        Self {
            config,
            store: CounterArray::new(config.geometry, config.n_bo_effective()),
            banks: (0..config.geometry.banks).map(|_| None).collect(),
            ledger: EnergyLedger::default(),
            triggers: BTreeMap::new(),
            batch_items: 0,
            proactive: 0,
            writeback_hits: 0,
            log: record_log.then(Vec::new),
        }
    }

    fn bank(&mut self, bank: u32) -> &mut BankState {
        let config = self.config;
        self.banks[bank as usize].get_or_insert_with(|| BankState {
            buffer: RequestBuffer::new(bank, config.geometry.counter_rows_per_bank, config.buffer.clone()),
            cache: config
                .cache
                .enabled()
                .then(|| CounterCache::new(&config.cache, &config.geometry)),
        })
    }

    fn record(&mut self, rec: LogRecord) {
        if let Some(log) = &mut self.log {
            log.push(rec);
        }
    }

    fn step(&mut self, ev: &ActivationEvent) -> Result<()> {
        let c = self.config.geometry.map_row(ev.bank, ev.data_row)?;
        self.ledger.data_acts += 1;
        self.ledger.data_cols += 1;

        let state = self.bank(c.bank);
        let cache_hit = state.cache.as_mut().and_then(|cache| cache.access(c));
        if let Some(value) = cache_hit {
            self.record(LogRecord::single(ev.slot, LogKind::CacheHit, c));
            if self.store.crosses_threshold(value) {
                self.alert(ev.slot, c);
            }
        } else if let Some(wb) = state.buffer.writeback_hit(c) {
            *wb = wb.saturating_add(1);
            let value = *wb;
            self.writeback_hits += 1;
            self.record(LogRecord::single(ev.slot, LogKind::WritebackHit, c));
            if self.store.crosses_threshold(value) {
                self.alert(ev.slot, c);
            }
        } else if let Some(batch) = state.buffer.insert(c) {
            self.service(ev.slot, batch, true)?;
        }

        if let Some(interval) = self.config.mitigation.proactive_interval_slots {
            if self.config.mitigation.enabled && (ev.slot + 1).is_multiple_of(interval) {
                for bank in 0..self.config.geometry.banks {
                    if self.banks[bank as usize].is_some() && self.mitigate_hottest(ev.slot, bank, MitigationKind::Proactive) {
                        self.proactive += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Alert raised by a value held outside the array (cache line or writeback).
    fn alert(&mut self, slot: u64, c: CounterRef) {
        self.store.alert_reset(c);
        self.scrub(c);
        self.record(LogRecord::single(slot, LogKind::Mitigation(MitigationKind::Alert), c));
        self.extra_rfms(slot, c.bank);
    }

    fn extra_rfms(&mut self, slot: u64, bank: u32) {
        for _ in 1..self.config.mitigation.rfms_per_alert {
            self.mitigate_hottest(slot, bank, MitigationKind::Alert);
        }
    }

    // Clears the cached/writeback copies of a counter the array just reset.
    fn scrub(&mut self, c: CounterRef) {
        if let Some(state) = self.banks[c.bank as usize].as_mut() {
            if let Some(cache) = state.cache.as_mut() {
                cache.mitigate(c);
            }
            if state.buffer.writeback_hit(c).is_some() {
                state.buffer.remove(c);
            }
        }
    }

    /// Idealized priority queue: mitigate the bank's largest visible counter.
    fn mitigate_hottest(&mut self, slot: u64, bank: u32, kind: MitigationKind) -> bool {
        let mut best = self.store.argmax(bank);
        if let Some(state) = self.banks[bank as usize].as_ref() {
            let cached = state.cache.iter().flat_map(|c| c.dirty_lines()).map(|l| (l.tag, l.value));
            let buffered = state
                .buffer
                .entries()
                .filter(|e| e.kind == crate::buffer::EntryKind::Writeback)
                .map(|e| (CounterRef::new(bank, e.row_id, e.byte_id), e.wb_value));
            for (c, v) in cached.chain(buffered) {
                let better = match best {
                    None => v > 0,
                    Some((bc, bv)) => v > bv || (v == bv && c < bc),
                };
                if better {
                    best = Some((c, v));
                }
            }
        }
        let Some((c, _)) = best else { return false };
        self.store.mitigate(c);
        self.scrub(c);
        self.record(LogRecord::single(slot, LogKind::Mitigation(kind), c));
        true
    }

    fn service(&mut self, slot: u64, batch: ServiceBatch, fill: bool) -> Result<()> {
        self.ledger.counter_acts += 1;
        self.batch_items += batch.items.len() as u64;
        *self.triggers.entry(batch.trigger).or_insert(0) += 1;
        self.record(LogRecord {
            slot,
            bank: batch.bank,
            row_id: batch.row_id,
            kind: LogKind::Batch(batch.trigger),
            items: batch
                .items
                .iter()
                .map(|i| LogItem {
                    byte_id: i.byte_id,
                    writeback: matches!(i.op, ItemOp::Writeback(_)),
                })
                .collect(),
        });

        let mut fills = Vec::new();
        for item in &batch.items {
            let c = batch.counter(item);
            let outcome = match item.op {
                ItemOp::Increment(n) => {
                    self.ledger.counter_rmw_bytes += n as u64;
                    self.store.apply_rmw(c, n)?
                }
                ItemOp::Writeback(v) => {
                    self.ledger.counter_rmw_bytes += 1;
                    self.store.apply_writeback(c, v)?
                }
            };
            if outcome.alert_value.is_some() {
                self.record(LogRecord::single(slot, LogKind::Mitigation(MitigationKind::Alert), c));
                self.extra_rfms(slot, c.bank);
            }
            if fill && matches!(item.op, ItemOp::Increment(_)) {
                fills.push((c, self.store.get(c)));
            }
        }

        if let Some(BankState {
            buffer,
            cache: Some(cache),
        }) = self.banks[batch.bank as usize].as_mut()
        {
            for (c, value) in fills {
                if let Fill::Evicted { tag, value } = cache.fill_clean(c, value, |v| buffer.can_accept_writeback(v.row_id)) {
                    buffer.insert_writeback(tag, value);
                }
            }
        }
        Ok(())
    }

    fn drain(&mut self, end_slot: u64) -> Result<()> {
        let m = self.config.buffer.m_batch;
        for bank in 0..self.config.geometry.banks as usize {
            let Some(state) = self.banks[bank].as_mut() else { continue };
            let mut batches = state.buffer.drain();
            if let Some(cache) = state.cache.as_mut() {
                let dirty = cache.flush_dirty();
                let mut i = 0;
                while i < dirty.len() {
                    let row = dirty[i].0.row_id;
                    let mut items = Vec::new();
                    while i < dirty.len() && dirty[i].0.row_id == row && items.len() < m {
                        items.push(crate::buffer::BatchItem {
                            byte_id: dirty[i].0.byte_id,
                            op: ItemOp::Writeback(dirty[i].1),
                        });
                        i += 1;
                    }
                    batches.push(ServiceBatch {
                        bank: bank as u32,
                        row_id: row,
                        items,
                        trigger: Trigger::Drain,
                    });
                }
            }
            for batch in batches {
                self.service(end_slot, batch, false)?;
            }
        }
        Ok(())
    }

    fn finish(mut self, events: &[ActivationEvent]) -> Result<SimOutcome> {
        let config = self.config;
        self.ledger.mitigation_acts = self.store.mitigations();
        let energy = self.ledger.breakdown(&config.energy)?;

        let cache = config.cache.enabled().then(|| {
            let mut total = CacheStats::default();
            for state in self.banks.iter().flatten() {
                if let Some(c) = &state.cache {
                    let s = c.stats();
                    total.accesses += s.accesses;
                    total.hits += s.hits;
                    total.fills += s.fills;
                    total.rejected += s.rejected;
                    total.skipped += s.skipped;
                    total.dirty_evictions += s.dirty_evictions;
                }
            }
            CacheReport {
                accesses: total.accesses,
                hits: total.hits,
                hit_rate: if total.accesses > 0 {
                    total.hits as f64 / total.accesses as f64
                } else {
                    0.0
                },
                fills: total.fills,
                rejected: total.rejected,
                skipped: total.skipped,
                dirty_evictions: total.dirty_evictions,
                writeback_hits: self.writeback_hits,
            }
        });
        let metrics = config.metrics.enabled.then(|| {
            metrics::analyze(events, &config.geometry, config.metrics.window, config.metrics.window_mode)
        });

        let acts = self.ledger.counter_acts;
        let report = SimReport {
            schema_version: SCHEMA_VERSION,
            policy: config.policy_id(),
            design: config.buffer.design,
            cache_kind: config.cache.kind,
            events: self.ledger.data_acts,
            counter_acts: acts,
            normalized_acts: acts as f64 / self.ledger.data_acts as f64,
            mean_batch_items: if acts > 0 {
                self.batch_items as f64 / acts as f64
            } else {
                0.0
            },
            batches_by_trigger: self
                .triggers
                .iter()
                .map(|(t, n)| (t.name().to_string(), *n))
                .collect(),
            staleness_bound: config.buffer.staleness_bound(),
            n_bo_effective: config.n_bo_effective(),
            alerts: self.store.alerts(),
            mitigations: self.store.mitigations(),
            proactive_mitigations: self.proactive,
            ledger: self.ledger,
            energy,
            cache,
            metrics,
        };
        Ok(SimOutcome {
            report,
            log: self.log,
            final_counters: self.store.nonzero(),
        })
    }
}

/// Runs one configuration over an already-loaded trace.
pub fn simulate(config: &SimConfig, events: &[ActivationEvent], record_log: bool) -> Result<SimOutcome> {
    config.validate()?;
    if events.is_empty() {
        return Err(SimError::Config("trace has no activations".into()));
    }
    let mut sim = Simulation::new(config, record_log);
    for ev in events {
        sim.step(ev).map_err(|e| SimError::AtSlot {
            slot: ev.slot,
            source: Box::new(e),
        })?;
    }
    sim.drain(events.len() as u64)?;
    sim.finish(events)
}

/// Loads the configured trace and runs it.
pub fn run(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let events = config.load_events()?;
    Ok(simulate(config, &events, false)?.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: String,
    pub counter_acts: u64,
    pub normalized_acts: f64,
    pub energy_overhead: f64,
    pub alerts: u64,
    pub mitigations: u64,
    pub cache_hit_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub events: u64,
    pub chronus_counter_acts: u64,
    pub rows: Vec<CompareRow>,
    pub reports: Vec<SimReport>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "policy,counter_acts,normalized_acts,energy_overhead,alerts,mitigations,cache_hit_rate")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.policy,
                r.counter_acts,
                r.normalized_acts,
                r.energy_overhead,
                r.alerts,
                r.mitigations,
                r.cache_hit_rate.map(|h| h.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Runs several policies over one shared trace, normalizing to a Chronus run
/// (executed implicitly when not listed). Policies run in parallel; row order
/// follows `configs`.
pub fn compare(configs: &[SimConfig]) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| SimError::Config("compare needs at least one configuration".into()))?;
    for c in configs {
        if c.trace_path != first.trace_path || c.trace != first.trace || c.geometry != first.geometry || c.seed != first.seed {
            return Err(SimError::Config(format!(
                "policy {} does not share the comparison trace",
                c.policy_id()
            )));
        }
    }
    let events = first.load_events()?;
    compare_on(configs, &events)
}

/// [`compare`] over an already-loaded trace.
pub fn compare_on(configs: &[SimConfig], events: &[ActivationEvent]) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| SimError::Config("compare needs at least one configuration".into()))?;
    let reports: Vec<SimReport> = configs
        .par_iter()
        .map(|c| simulate(c, events, false).map(|o| o.report))
        .collect::<Result<_>>()?;
    let chronus_acts = match reports.iter().find(|r| r.design == Design::Chronus) {
        Some(r) => r.counter_acts,
        None => {
            let mut chronus = first.clone();
            chronus.buffer.design = Design::Chronus;
            chronus.cache = CacheConfig::default();
            chronus.metrics.enabled = false;
            simulate(&chronus, events, false)?.report.counter_acts
        }
    };
    let rows = reports
        .iter()
        .map(|r| CompareRow {
            policy: r.policy.clone(),
            counter_acts: r.counter_acts,
            normalized_acts: r.counter_acts as f64 / chronus_acts as f64,
            energy_overhead: r.energy.overhead,
            alerts: r.alerts,
            mitigations: r.mitigations,
            cache_hit_rate: r.cache.map(|c| c.hit_rate),
        })
        .collect();
    Ok(Comparison {
        schema_version: SCHEMA_VERSION,
        events: events.len() as u64,
        chronus_counter_acts: chronus_acts,
        rows,
        reports,
    })
}
