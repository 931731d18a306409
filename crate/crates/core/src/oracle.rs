//! Offline reference checker for policy runs.
//!
//! The oracle replays the trace with exact per-counter bookkeeping and
//! checks a policy's event log against it. It never looks at buffer state,
//! only at the log, so it can check logs produced by any implementation.
//!
//! # Log format
//!
//! CSV, one record per line, preceded by the header
//! `slot,bank,row_id,trigger,n_items,byte_ids`:
//!
//! ```text
//! slot,bank,row_id,trigger,n_items,byte_id_1,...,byte_id_n
//! ```
//!
//! `trigger` is one of the batch triggers `m_ready`, `buffer_full`, `k_limit`,
//! `drain`, `immediate`, or one of the non-activating events `cache_hit`,
//! `wb_hit` (increment absorbed by a cache line or buffered writeback),
//! `alert`, `proactive` (a mitigation of the single listed counter).
//! Writeback items in a batch are written as `w<byte_id>`. Drain records
//! carry the slot one past the last trace event.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::buffer::Trigger;
use crate::counter_store::MitigationKind;
use crate::error::{Result, SimError};
use crate::geometry::{CounterRef, DramGeometry};
use crate::trace::ActivationEvent;

pub const LOG_HEADER: &str = "slot,bank,row_id,trigger,n_items,byte_ids";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Batch(Trigger),
    CacheHit,
    WritebackHit,
    Mitigation(MitigationKind),
}

impl LogKind {
    pub fn name(self) -> &'static str {
        match self {
            LogKind::Batch(t) => t.name(),
            LogKind::CacheHit => "cache_hit",
            LogKind::WritebackHit => "wb_hit",
            LogKind::Mitigation(MitigationKind::Alert) => "alert",
            LogKind::Mitigation(MitigationKind::Proactive) => "proactive",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        if let Some(t) = Trigger::ALL.into_iter().find(|t| t.name() == s) {
            return Some(LogKind::Batch(t));
        }
        match s {
            "cache_hit" => Some(LogKind::CacheHit),
            "wb_hit" => Some(LogKind::WritebackHit),
            "alert" => Some(LogKind::Mitigation(MitigationKind::Alert)),
            "proactive" => Some(LogKind::Mitigation(MitigationKind::Proactive)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogItem {
    pub byte_id: u16,
    pub writeback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub slot: u64,
    pub bank: u32,
    pub row_id: u16,
    pub kind: LogKind,
    pub items: Vec<LogItem>,
}

impl LogRecord {
    pub fn single(slot: u64, kind: LogKind, r: CounterRef) -> Self {
        Self {
            slot,
            bank: r.bank,
            row_id: r.row_id,
            kind,
            items: vec![LogItem {
                byte_id: r.byte_id,
                writeback: false,
            }],
        }
    }

    pub fn is_batch(&self) -> bool {
        matches!(self.kind, LogKind::Batch(_))
    }
}

pub fn write_log<W: Write>(records: &[LogRecord], mut out: W) -> Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for rec in records {
        write!(out, "{},{},{},{},{}", rec.slot, rec.bank, rec.row_id, rec.kind.name(), rec.items.len())?;
        for item in &rec.items {
            if item.writeback {
                write!(out, ",w{}", item.byte_id)?;
            } else {
                write!(out, ",{}", item.byte_id)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log<R: BufRead>(source: R) -> Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || (line_no == 1 && body == LOG_HEADER) {
            continue;
        }
        let err = |reason: String| SimError::LogFormat { line: line_no, reason };
        let fields: Vec<&str> = body.split(',').collect();
        if fields.len() < 5 {
            return Err(err(format!("expected at least 5 fields, got {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<u64> {
            fields[i]
                .parse()
                .map_err(|_| err(format!("{name} {:?} is not a decimal integer", fields[i])))
        };
        let slot = num(0, "slot")?;
        let bank = num(1, "bank")? as u32;
        let row_id = u16::try_from(num(2, "row_id")?).map_err(|_| err("row_id too large".into()))?;
        let kind = LogKind::parse(fields[3]).ok_or_else(|| err(format!("unknown trigger {:?}", fields[3])))?;
        let n_items = num(4, "n_items")? as usize;
        if fields.len() - 5 != n_items {
            return Err(err(format!("n_items {} but {} byte ids", n_items, fields.len() - 5)));
        }
        let items = fields[5..]
            .iter()
            .map(|f| {
                let (writeback, digits) = match f.strip_prefix('w') {
                    Some(rest) => (true, rest),
                    None => (false, *f),
                };
                let byte_id = digits.parse().map_err(|_| err(format!("bad byte id {f:?}")))?;
                Ok(LogItem { byte_id, writeback })
            })
            .collect::<Result<Vec<_>>>()?;
        if !matches!(kind, LogKind::Batch(_)) && (items.len() != 1 || items[0].writeback) {
            return Err(err(format!("{} records carry exactly one plain byte id", kind.name())));
        }
        if let Some(prev) = out.last() {
            let prev: &LogRecord = prev;
            if slot < prev.slot {
                return Err(err(format!("slot {slot} after slot {}", prev.slot)));
            }
        }
        out.push(LogRecord {
            slot,
            bank,
            row_id,
            kind,
            items,
        });
    }
    Ok(out)
}

/// What the checked run claims, beyond its log.
#[derive(Debug, Clone)]
pub struct VerifyParams {
    pub geometry: DramGeometry,
    pub m_batch: usize,
    /// Largest allowed number of unapplied activations of any counter after
    /// each activation's shadow.
    pub staleness_bound: u32,
    /// Counter-row activations reported by the run (rule 5), if known.
    pub reported_counter_acts: Option<u64>,
    /// Final nonzero counter state of the run (rule 4), if known.
    pub final_counters: Option<Vec<(CounterRef, u8)>>,
}

impl VerifyParams {
    pub fn new(geometry: DramGeometry, m_batch: usize, staleness_bound: u32) -> Self {
        Self {
            geometry,
            m_batch,
            staleness_bound,
            reported_counter_acts: None,
            final_counters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub slot: u64,
    pub rule: u8,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationCheck {
    pub slot: u64,
    pub counter: CounterRef,
    pub kind: MitigationKind,
    /// Activations of the counter since its previous mitigation.
    pub true_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub violation: Option<Violation>,
    pub batches: u64,
    pub max_staleness: u32,
    pub mitigations: Vec<MitigationCheck>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct CounterTruth {
    unapplied: u32,
    since_reset: u64,
    visible: u8,
    reference: u64,
}

struct Replay<'a> {
    params: &'a VerifyParams,
    counters: HashMap<CounterRef, CounterTruth>,
    batches: u64,
    max_staleness: u32,
    mitigations: Vec<MitigationCheck>,
}

type Check = std::result::Result<(), (u8, String)>;

impl Replay<'_> {
    fn apply(&mut self, rec: &LogRecord, event: Option<&ActivationEvent>, shadow_batches: &mut u32) -> Check {
        let g = &self.params.geometry;
        for item in &rec.items {
            g.check_ref(CounterRef::new(rec.bank, rec.row_id, item.byte_id))
                .map_err(|e| (2, format!("{} record addresses {e}", rec.kind.name())))?;
        }
        match rec.kind {
            LogKind::Batch(trigger) => {
                self.batches += 1;
                if rec.items.is_empty() || rec.items.len() > self.params.m_batch {
                    return Err((2, format!("batch of {} items (M = {})", rec.items.len(), self.params.m_batch)));
                }
                let mut bytes: Vec<u16> = rec.items.iter().map(|i| i.byte_id).collect();
                bytes.sort_unstable();
                if bytes.windows(2).any(|w| w[0] == w[1]) {
                    return Err((2, "batch repeats a byte id".into()));
                }
                match (trigger, event) {
                    (Trigger::Drain, Some(_)) => return Err((3, "drain batch inside the trace body".into())),
                    (Trigger::Drain, None) => {}
                    (_, None) => return Err((3, format!("{} batch after the trace ended", trigger.name()))),
                    (_, Some(ev)) => {
                        *shadow_batches += 1;
                        if *shadow_batches > 1 {
                            return Err((3, "more than one batch in one activation shadow".into()));
                        }
                        if ev.bank != rec.bank {
                            return Err((3, format!("batch for bank {} in the shadow of bank {}", rec.bank, ev.bank)));
                        }
                    }
                }
                for item in &rec.items {
                    let c = CounterRef::new(rec.bank, rec.row_id, item.byte_id);
                    let t = self.counters.entry(c).or_default();
                    if item.writeback {
                        continue;
                    }
                    if t.unapplied == 0 {
                        return Err((4, format!("increment serviced for {c:?} with nothing pending")));
                    }
                    t.visible = (t.visible as u32 + t.unapplied).min(255) as u8;
                    t.unapplied = 0;
                }
            }
            LogKind::CacheHit | LogKind::WritebackHit => {
                let c = CounterRef::new(rec.bank, rec.row_id, rec.items[0].byte_id);
                let Some(ev) = event else {
                    return Err((3, "hit record after the trace ended".into()));
                };
                if g.map_row(ev.bank, ev.data_row).ok() != Some(c) {
                    return Err((3, format!("hit for {c:?} does not match the slot's activation")));
                }
                let t = self.counters.entry(c).or_default();
                if t.unapplied == 0 {
                    return Err((4, "hit record with nothing pending".into()));
                }
                t.unapplied -= 1;
                t.visible = t.visible.saturating_add(1);
            }
            LogKind::Mitigation(kind) => {
                let c = CounterRef::new(rec.bank, rec.row_id, rec.items[0].byte_id);
                let t = self.counters.entry(c).or_default();
                self.mitigations.push(MitigationCheck {
                    slot: rec.slot,
                    counter: c,
                    kind,
                    true_count: t.since_reset,
                });
                t.since_reset = 0;
                t.visible = 0;
            }
        }
        Ok(())
    }
}

/// Replays `trace` against `log`, returning the first violated rule:
///
/// 1. staleness: unapplied activations of any counter stay within the bound,
/// 2. batch legality: 1..=M items, one counter row, distinct bytes,
/// 3. at most one batch per activation shadow, in that activation's bank,
/// 4. every activation is applied exactly once, and after drain the counter
///    state matches the unbuffered reference (when no mitigations occurred),
/// 5. the reported counter-row activation count equals the logged batches.
///
/// Structural problems in the log itself are reported as `Err`.
pub fn verify(trace: &[ActivationEvent], log: &[LogRecord], params: &VerifyParams) -> Result<Verdict> {
    let mut replay = Replay {
        params,
        counters: HashMap::new(),
        batches: 0,
        max_staleness: 0,
        mitigations: Vec::new(),
    };
    let end = trace.len() as u64;
    if let Some(rec) = log.iter().find(|r| r.slot > end) {
        return Err(SimError::LogFormat {
            line: 0,
            reason: format!("record at slot {} beyond trace end {end}", rec.slot),
        });
    }
    if log.windows(2).any(|w| w[1].slot < w[0].slot) {
        return Err(SimError::LogFormat {
            line: 0,
            reason: "records are not in slot order".into(),
        });
    }

    let fail = |replay: Replay, slot: u64, (rule, message): (u8, String)| Verdict {
        violation: Some(Violation { slot, rule, message }),
        batches: replay.batches,
        max_staleness: replay.max_staleness,
        mitigations: replay.mitigations,
    };

    let mut cursor = 0;
    for ev in trace {
        let c = params.geometry.map_row(ev.bank, ev.data_row)?;
        let t = replay.counters.entry(c).or_default();
        t.unapplied += 1;
        t.since_reset += 1;
        t.reference += 1;

        let mut shadow_batches = 0;
        while cursor < log.len() && log[cursor].slot == ev.slot {
            if let Err(v) = replay.apply(&log[cursor], Some(ev), &mut shadow_batches) {
                return Ok(fail(replay, ev.slot, v));
            }
            cursor += 1;
        }
        let lag = replay.counters[&c].unapplied;
        replay.max_staleness = replay.max_staleness.max(lag);
        if lag > params.staleness_bound {
            let msg = format!("{c:?} has {lag} unapplied activations (bound {})", params.staleness_bound);
            return Ok(fail(replay, ev.slot, (1, msg)));
        }
    }
    let mut shadow_batches = 0;
    for rec in &log[cursor..] {
        if let Err(v) = replay.apply(rec, None, &mut shadow_batches) {
            return Ok(fail(replay, end, v));
        }
    }

    let mut pending: Vec<_> = replay.counters.iter().filter(|(_, t)| t.unapplied > 0).map(|(c, _)| *c).collect();
    if !pending.is_empty() {
        pending.sort();
        let msg = format!("{} counters never serviced, first {:?}", pending.len(), pending[0]);
        return Ok(fail(replay, end, (4, msg)));
    }
    if replay.mitigations.is_empty() {
        let mut mismatches: Vec<_> = replay
            .counters
            .iter()
            .filter(|(_, t)| t.visible as u64 != t.reference.min(255))
            .map(|(c, _)| *c)
            .collect();
        if !mismatches.is_empty() {
            mismatches.sort();
            let msg = format!("counter {:?} differs from the unbuffered reference", mismatches[0]);
            return Ok(fail(replay, end, (4, msg)));
        }
    }
    if let Some(finals) = &params.final_counters {
        let mut expected: Vec<(CounterRef, u8)> = replay
            .counters
            .iter()
            .filter(|(_, t)| t.visible != 0)
            .map(|(c, t)| (*c, t.visible))
            .collect();
        expected.sort();
        let mut got = finals.clone();
        got.sort();
        if got != expected {
            let first = expected
                .iter()
                .zip(got.iter())
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {a:?}, run has {b:?}"))
                .unwrap_or_else(|| format!("{} vs {} nonzero counters", expected.len(), got.len()));
            return Ok(fail(replay, end, (4, format!("final counter state mismatch: {first}"))));
        }
    }
    if let Some(reported) = params.reported_counter_acts {
        if reported != replay.batches {
            let msg = format!("reported {reported} counter-row activations, log has {}", replay.batches);
            return Ok(fail(replay, end, (5, msg)));
        }
    }
    Ok(Verdict {
        violation: None,
        batches: replay.batches,
        max_staleness: replay.max_staleness,
        mitigations: replay.mitigations,
    })
}
