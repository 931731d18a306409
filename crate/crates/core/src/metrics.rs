//! Trace characterization: counter-row skew, short-window same-row locality
//! and the data-row activation footprint.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::DramGeometry;
use crate::trace::ActivationEvent;

pub const DEFAULT_WINDOW: usize = 64;
pub const FOOTPRINT_PERCENTILES: [u32; 4] = [25, 50, 75, 90];

/// max/mean over all counter rows of a bank, zero rows included.
/// `None` when the bank saw no accesses.
pub fn skew(counts: &[u64]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.is_empty() {
        return None;
    }
    let max = *counts.iter().max()? as f64;
    let mean = total as f64 / counts.len() as f64;
    Some(max / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    Tumbling,
    Sliding,
}

impl FromStr for WindowMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tumbling" => Ok(WindowMode::Tumbling),
            "sliding" => Ok(WindowMode::Sliding),
            _ => Err(SimError::Config(format!("unknown window mode {s:?}"))),
        }
    }
}

impl WindowMode {
    pub fn name(self) -> &'static str {
        match self {
            WindowMode::Tumbling => "tumbling",
            WindowMode::Sliding => "sliding",
        }
    }
}

/// Sum of per-window maxima and number of windows, so banks can be pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowTally {
    pub max_sum: u64,
    pub windows: u64,
}

impl WindowTally {
    pub fn average(&self) -> Option<f64> {
        (self.windows > 0).then(|| self.max_sum as f64 / self.windows as f64)
    }

    pub fn merge(&mut self, other: WindowTally) {
        self.max_sum += other.max_sum;
        self.windows += other.windows;
    }
}

/// Highest same-row request count per window over one bank's counter-row
/// request stream. Tumbling mode drops a trailing partial window.
pub fn window_tally(stream: &[u16], window: usize, mode: WindowMode) -> WindowTally {
    if window == 0 || stream.len() < window {
        return WindowTally::default();
    }
    match mode {
        WindowMode::Tumbling => {
            let mut counts: HashMap<u16, u64> = HashMap::new();
            let mut tally = WindowTally::default();
            for chunk in stream.chunks_exact(window) {
                counts.clear();
                let mut best = 0;
                for &row in chunk {
                    let c = counts.entry(row).or_insert(0);
                    *c += 1;
                    best = best.max(*c);
                }
                tally.max_sum += best;
                tally.windows += 1;
            }
            tally
        }
        WindowMode::Sliding => {
            let rows = stream.iter().copied().max().unwrap_or(0) as usize + 1;
            let mut count = vec![0usize; rows];
            // how_many[c] = number of rows currently holding count c
            let mut how_many = vec![0usize; window + 2];
            let mut max = 0usize;
            let mut tally = WindowTally::default();
            for (i, &row) in stream.iter().enumerate() {
                let r = row as usize;
                how_many[count[r]] = how_many[count[r]].saturating_sub(1);
                count[r] += 1;
                how_many[count[r]] += 1;
                max = max.max(count[r]);
                if i >= window {
                    let old = stream[i - window] as usize;
                    how_many[count[old]] -= 1;
                    if count[old] == max && how_many[max] == 0 {
                        max -= 1;
                    }
                    count[old] -= 1;
                    how_many[count[old]] += 1;
                }
                if i + 1 >= window {
                    tally.max_sum += max as u64;
                    tally.windows += 1;
                }
            }
            tally
        }
    }
}

/// Average per-window maximum; `None` when the stream is shorter than a window.
pub fn window_locality(stream: &[u16], window: usize, mode: WindowMode) -> Option<f64> {
    window_tally(stream, window, mode).average()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintPoint {
    pub percent: u32,
    pub rows: u64,
}

/// Rows (sorted by descending activations) needed to cover each percentile.
pub fn footprint_percentiles(counts: &[u64], percents: &[u32]) -> Vec<FootprintPoint> {
    let mut sorted: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let total: u128 = sorted.iter().map(|&c| c as u128).sum();
    percents
        .iter()
        .map(|&p| {
            let mut cum: u128 = 0;
            let mut rows = 0u64;
            for &c in &sorted {
                if cum * 100 >= p as u128 * total {
                    break;
                }
                cum += c as u128;
                rows += 1;
            }
            FootprintPoint { percent: p, rows }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSkew {
    pub bank: u32,
    pub skew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub events: u64,
    pub banks_active: u32,
    pub skew_per_bank: Vec<BankSkew>,
    pub skew_mean: Option<f64>,
    pub window: usize,
    pub window_mode: WindowMode,
    pub window_locality: Option<f64>,
    pub distinct_rows: u64,
    pub footprint: Vec<FootprintPoint>,
}

/// Computes every trace statistic in one pass over the events.
pub fn analyze(events: &[ActivationEvent], geometry: &DramGeometry, window: usize, mode: WindowMode) -> TraceMetrics {
    let width = geometry.counters_per_counter_row;
    let crows = geometry.counter_rows_per_bank as usize;
    let mut streams: Vec<Vec<u16>> = vec![Vec::new(); geometry.banks as usize];
    let mut row_counts: HashMap<(u32, u32), u64> = HashMap::new();
    for ev in events {
        streams[ev.bank as usize].push((ev.data_row / width) as u16);
        *row_counts.entry((ev.bank, ev.data_row)).or_insert(0) += 1;
    }

    let mut skew_per_bank = Vec::new();
    let mut tally = WindowTally::default();
    for (bank, stream) in streams.iter().enumerate() {
        if stream.is_empty() {
            continue;
        }
        let mut hist = vec![0u64; crows];
        for &r in stream {
            hist[r as usize] += 1;
        }
        if let Some(s) = skew(&hist) {
            skew_per_bank.push(BankSkew { bank: bank as u32, skew: s });
        }
        tally.merge(window_tally(stream, window, mode));
    }
    let skew_mean = (!skew_per_bank.is_empty())
        .then(|| skew_per_bank.iter().map(|b| b.skew).sum::<f64>() / skew_per_bank.len() as f64);

    let counts: Vec<u64> = row_counts.values().copied().collect();
    TraceMetrics {
        events: events.len() as u64,
        banks_active: skew_per_bank.len() as u32,
        skew_per_bank,
        skew_mean,
        window,
        window_mode: mode,
        window_locality: tally.average(),
        distinct_rows: counts.len() as u64,
        footprint: footprint_percentiles(&counts, &FOOTPRINT_PERCENTILES),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_sliding(stream: &[u16], window: usize) -> Option<f64> {
        if stream.len() < window {
            return None;
        }
        let mut sum = 0u64;
        let n = stream.len() - window + 1;
        for start in 0..n {
            let w = &stream[start..start + window];
            let best = w.iter().map(|r| w.iter().filter(|x| *x == r).count()).max().unwrap();
            sum += best as u64;
        }
        Some(sum as f64 / n as f64)
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&[10; 64]), Some(1.0));
        let mut one = vec![0u64; 64];
        one[17] = 500;
        assert_eq!(skew(&one), Some(64.0));
        assert_eq!(skew(&[2, 1, 1, 0]), Some(2.0));
        assert_eq!(skew(&[0; 64]), None);
    }

    #[test]
    fn window_examples() {
        let single = vec![3u16; 640];
        assert_eq!(window_locality(&single, 64, WindowMode::Tumbling), Some(64.0));
        let rr: Vec<u16> = (0..640).map(|i| (i % 64) as u16).collect();
        assert_eq!(window_locality(&rr, 64, WindowMode::Tumbling), Some(1.0));
        let mut half: Vec<u16> = vec![7; 64];
        half.extend((0..64).map(|i| i as u16));
        assert_eq!(window_locality(&half, 64, WindowMode::Tumbling), Some(32.5));
        assert_eq!(window_locality(&half[..63], 64, WindowMode::Tumbling), None);
    }

    #[test]
    fn sliding_matches_brute_force() {
        let mut x: u64 = 12345;
        let stream: Vec<u16> = (0..300)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 33) % 9) as u16
            })
            .collect();
        for window in [1, 2, 5, 64] {
            assert_eq!(
                window_locality(&stream, window, WindowMode::Sliding),
                brute_sliding(&stream, window),
                "window {window}"
            );
        }
    }

    #[test]
    fn footprint_examples() {
        let pts = footprint_percentiles(&[7], &FOOTPRINT_PERCENTILES);
        assert!(pts.iter().all(|p| p.rows == 1));
        let pts = footprint_percentiles(&[50, 30, 20], &[50, 75]);
        assert_eq!(pts[0].rows, 1);
        assert_eq!(pts[1].rows, 2);
        let uniform = vec![3u64; 101];
        assert_eq!(footprint_percentiles(&uniform, &[50])[0].rows, 51);
    }

    #[test]
    fn analyze_small_trace() {
        let g = DramGeometry::new(2, 4, 4).unwrap();
        let events: Vec<ActivationEvent> = [(0, 0), (0, 1), (0, 4), (0, 5), (1, 15)]
            .iter()
            .enumerate()
            .map(|(i, &(bank, row))| ActivationEvent {
                slot: i as u64,
                bank,
                data_row: row,
            })
            .collect();
        let m = analyze(&events, &g, 2, WindowMode::Tumbling);
        assert_eq!(m.banks_active, 2);
        // bank 0 counter rows [2,2,0,0]: 2 / 1 = 2; bank 1 [0,0,0,1]: 4.
        assert_eq!(m.skew_per_bank[0].skew, 2.0);
        assert_eq!(m.skew_per_bank[1].skew, 4.0);
        assert_eq!(m.skew_mean, Some(3.0));
        assert_eq!(m.window_locality, Some(2.0));
        assert_eq!(m.distinct_rows, 5);
    }
}
