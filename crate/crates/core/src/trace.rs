//! Activation traces: text/binary ingestion and synthetic generators.
//!
//! Text format: one activation per line, `bank data_row` in ASCII decimal,
//! separated by whitespace. Lines whose first non-blank character is `#` and
//! blank lines are ignored.
//!
//! Binary format: a flat sequence of 6-byte records, little-endian `u16` bank
//! followed by little-endian `u32` data row. No header.

use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::DramGeometry;

/// One data-row activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationEvent {
    pub slot: u64,
    pub bank: u32,
    pub data_row: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Text,
    Binary,
}

impl TraceFormat {
    /// `.bin` files are binary, everything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => TraceFormat::Binary,
            _ => TraceFormat::Text,
        }
    }
}

const BINARY_RECORD: usize = 6;

pub fn read_trace<R: BufRead>(source: R, geometry: &DramGeometry) -> Result<Vec<ActivationEvent>> {
    let mut events = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut fields = body.split_whitespace();
        let (bank, row) = match (fields.next(), fields.next(), fields.next()) {
            (Some(b), Some(r), None) => (b, r),
            _ => {
                return Err(SimError::Parse {
                    line: line_no,
                    reason: format!("expected `bank data_row`, got {body:?}"),
                })
            }
        };
        let bank: u32 = parse_field(bank, "bank", line_no)?;
        let data_row: u32 = parse_field(row, "data_row", line_no)?;
        check_event(geometry, bank, data_row).map_err(|e| SimError::AtLine {
            line: line_no,
            source: Box::new(e),
        })?;
        events.push(ActivationEvent {
            slot: events.len() as u64,
            bank,
            data_row,
        });
    }
    Ok(events)
}

fn parse_field<T: FromStr>(text: &str, name: &str, line: usize) -> Result<T> {
    text.parse().map_err(|_| SimError::Parse {
        line,
        reason: format!("{name} {text:?} is not a decimal integer"),
    })
}

fn check_event(geometry: &DramGeometry, bank: u32, data_row: u32) -> Result<()> {
    geometry.map_row(bank, data_row).map(|_| ())
}

/// Reads the binary format; `line` in errors is the 1-based record number.
pub fn read_binary_trace<R: Read>(mut source: R, geometry: &DramGeometry) -> Result<Vec<ActivationEvent>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() % BINARY_RECORD != 0 {
        return Err(SimError::Parse {
            line: bytes.len() / BINARY_RECORD + 1,
            reason: format!("truncated record: {} trailing bytes", bytes.len() % BINARY_RECORD),
        });
    }
    bytes
        .chunks_exact(BINARY_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let bank = u16::from_le_bytes([rec[0], rec[1]]) as u32;
            let data_row = u32::from_le_bytes([rec[2], rec[3], rec[4], rec[5]]);
            check_event(geometry, bank, data_row).map_err(|e| SimError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })?;
            Ok(ActivationEvent {
                slot: i as u64,
                bank,
                data_row,
            })
        })
        .collect()
}

pub fn write_trace<W: Write>(events: &[ActivationEvent], mut out: W, format: TraceFormat) -> Result<()> {
    match format {
        TraceFormat::Text => {
            for ev in events {
                writeln!(out, "{} {}", ev.bank, ev.data_row)?;
            }
        }
        TraceFormat::Binary => {
            for ev in events {
                let bank = u16::try_from(ev.bank)
                    .map_err(|_| SimError::range("bank", ev.bank as u64, u16::MAX as u64 + 1))?;
                out.write_all(&bank.to_le_bytes())?;
                out.write_all(&ev.data_row.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_trace_file(path: &Path, geometry: &DramGeometry) -> Result<Vec<ActivationEvent>> {
    let file = std::fs::File::open(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    match TraceFormat::from_path(path) {
        TraceFormat::Text => read_trace(std::io::BufReader::new(file), geometry),
        TraceFormat::Binary => read_binary_trace(std::io::BufReader::new(file), geometry),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Uniform,
    Zipf,
    Sequential,
    Hotset,
    Hammer,
    RoundRobin,
}

impl Generator {
    pub const ALL: [Generator; 6] = [
        Generator::Uniform,
        Generator::Zipf,
        Generator::Sequential,
        Generator::Hotset,
        Generator::Hammer,
        Generator::RoundRobin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::Uniform => "uniform",
            Generator::Zipf => "zipf",
            Generator::Sequential => "sequential",
            Generator::Hotset => "hotset",
            Generator::Hammer => "hammer",
            Generator::RoundRobin => "roundrobin",
        }
    }
}

impl FromStr for Generator {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Generator::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| SimError::TraceParams(format!("unknown generator {s:?}")))
    }
}

/// Parameters for a synthetic trace.
///
/// `uniform`, `zipf` and `hotset` spread events uniformly over banks
/// `bank..bank + banks`; `sequential`, `hammer` and `roundrobin` address
/// `bank` only. Rows are drawn from `0..footprint` (0 means the whole bank).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub generator: Generator,
    pub length: u64,
    pub seed: u64,
    pub bank: u32,
    pub banks: u32,
    pub footprint: u32,
    pub start_row: u32,
    pub zipf_exponent: f64,
    pub hot_rows: u32,
    pub hot_fraction: f64,
    pub target_row: u32,
    pub gap: u32,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            generator: Generator::Zipf,
            length: 10_000,
            seed: 1,
            bank: 0,
            banks: 1,
            footprint: 0,
            start_row: 0,
            zipf_exponent: 1.0,
            hot_rows: 32,
            hot_fraction: 0.9,
            target_row: 0,
            gap: 0,
        }
    }
}

impl TraceSpec {
    pub fn new(generator: Generator, length: u64, seed: u64) -> Self {
        Self {
            generator,
            length,
            seed,
            ..Self::default()
        }
    }

    fn footprint(&self, geometry: &DramGeometry) -> u32 {
        if self.footprint == 0 {
            geometry.rows_per_bank
        } else {
            self.footprint
        }
    }

    pub fn validate(&self, geometry: &DramGeometry) -> Result<()> {
        let bad = |msg: String| Err(SimError::TraceParams(msg));
        if self.length == 0 {
            return bad("length must be > 0".into());
        }
        if self.banks == 0 {
            return bad("banks must be > 0".into());
        }
        if self.bank as u64 + self.banks as u64 > geometry.banks as u64 {
            return bad(format!(
                "banks {}..{} exceed geometry ({} banks)",
                self.bank,
                self.bank as u64 + self.banks as u64,
                geometry.banks
            ));
        }
        let footprint = self.footprint(geometry);
        if footprint > geometry.rows_per_bank {
            return bad(format!("footprint {footprint} exceeds rows_per_bank {}", geometry.rows_per_bank));
        }
        match self.generator {
            Generator::Zipf if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) => {
                bad(format!("zipf exponent must be > 0, got {}", self.zipf_exponent))
            }
            Generator::Hotset if !(self.hot_fraction > 0.0 && self.hot_fraction <= 1.0) => {
                bad(format!("hot fraction must be in (0, 1], got {}", self.hot_fraction))
            }
            Generator::Hotset if self.hot_rows == 0 || self.hot_rows > footprint => {
                bad(format!("hot_rows must be in 1..={footprint}, got {}", self.hot_rows))
            }
            Generator::Sequential if self.start_row >= geometry.rows_per_bank => {
                bad(format!("start row {} out of range", self.start_row))
            }
            Generator::Hammer => {
                if self.target_row >= geometry.rows_per_bank {
                    return bad(format!("target row {} out of range", self.target_row));
                }
                let width = geometry.counters_per_counter_row;
                let target_crow = self.target_row / width;
                let has_filler = footprint > width || (target_crow != 0 && footprint > 0);
                if self.gap > 0 && !has_filler {
                    return bad("footprint leaves no filler rows outside the target's counter row".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Seeded permutation of `0..footprint` used to scatter zipf ranks over rows.
pub fn rank_permutation(seed: u64, footprint: u32) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_2a9f);
    let mut rows: Vec<u32> = (0..footprint).collect();
    rows.shuffle(&mut rng);
    rows
}

pub fn generate(spec: &TraceSpec, geometry: &DramGeometry) -> Result<Vec<ActivationEvent>> {
    spec.validate(geometry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let footprint = spec.footprint(geometry);
    let len = spec.length as usize;
    let mut events = Vec::with_capacity(len);
    let mut push = |bank: u32, data_row: u32| {
        events.push(ActivationEvent {
            slot: events.len() as u64,
            bank,
            data_row,
        })
    };
    let pick_bank = |rng: &mut ChaCha8Rng| spec.bank + rng.random_range(0..spec.banks);

    match spec.generator {
        Generator::Uniform => {
            for _ in 0..len {
                let bank = pick_bank(&mut rng);
                push(bank, rng.random_range(0..footprint));
            }
        }
        Generator::Zipf => {
            let perm = rank_permutation(spec.seed, footprint);
            let zipf = Zipf::new(footprint as f64, spec.zipf_exponent)
                .map_err(|e| SimError::TraceParams(format!("zipf: {e}")))?;
            for _ in 0..len {
                let bank = pick_bank(&mut rng);
                let rank = zipf.sample(&mut rng) as usize;
                push(bank, perm[rank - 1]);
            }
        }
        Generator::Sequential => {
            for i in 0..spec.length {
                let row = (spec.start_row as u64 + i) % geometry.rows_per_bank as u64;
                push(spec.bank, row as u32);
            }
        }
        Generator::Hotset => {
            let hot: Vec<u32> = index::sample(&mut rng, footprint as usize, spec.hot_rows as usize)
                .into_iter()
                .map(|r| r as u32)
                .collect();
            for _ in 0..len {
                let bank = pick_bank(&mut rng);
                let row = if rng.random::<f64>() < spec.hot_fraction {
                    hot[rng.random_range(0..hot.len())]
                } else {
                    rng.random_range(0..footprint)
                };
                push(bank, row);
            }
        }
        Generator::Hammer => {
            let width = geometry.counters_per_counter_row;
            let target_crow = spec.target_row / width;
            let period = spec.gap as u64 + 1;
            for i in 0..spec.length {
                let row = if i % period == 0 {
                    spec.target_row
                } else {
                    // Fillers never share the hammered counter row.
                    loop {
                        let r = rng.random_range(0..footprint);
                        if r / width != target_crow {
                            break r;
                        }
                    }
                };
                push(spec.bank, row);
            }
        }
        Generator::RoundRobin => {
            let crows = geometry.counter_rows_per_bank as u64;
            let width = geometry.counters_per_counter_row as u64;
            for i in 0..spec.length {
                let crow = i % crows;
                let byte = (i / crows) % width;
                push(spec.bank, (crow * width + byte) as u32);
            }
        }
    }
    Ok(events)
}
