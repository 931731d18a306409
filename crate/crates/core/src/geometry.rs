//! DRAM organization and the data-row to counter-subarray mapping.
//!
//! Counters are laid out contiguously: data row `r` of a bank owns byte
//! `r % counters_per_counter_row` of counter row `r / counters_per_counter_row`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Largest counter-row count addressable by the 6-bit RowID field.
pub const MAX_COUNTER_ROWS: u32 = 64;
/// Largest counter-row width addressable by the 10-bit ByteID field.
pub const MAX_COUNTERS_PER_ROW: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramGeometry {
    pub banks: u32,
    pub rows_per_bank: u32,
    pub counter_rows_per_bank: u32,
    pub counters_per_counter_row: u32,
}

impl Default for DramGeometry {
    fn default() -> Self {
        // 32 banks x 2 ranks, 64K rows per bank.
        Self {
            banks: 64,
            rows_per_bank: 65536,
            counter_rows_per_bank: 64,
            counters_per_counter_row: 1024,
        }
    }
}

impl DramGeometry {
    /// Builds a geometry from the counter layout, deriving `rows_per_bank`.
    pub fn new(banks: u32, counter_rows_per_bank: u32, counters_per_counter_row: u32) -> Result<Self> {
        let geometry = Self {
            banks,
            rows_per_bank: counter_rows_per_bank * counters_per_counter_row,
            counter_rows_per_bank,
            counters_per_counter_row,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if self.banks == 0 || self.counter_rows_per_bank == 0 || self.counters_per_counter_row == 0 {
            return Err(SimError::Config("geometry dimensions must be nonzero".into()));
        }
        if self.counter_rows_per_bank > MAX_COUNTER_ROWS {
            return Err(SimError::Config(format!(
                "counter_rows_per_bank {} exceeds the 6-bit RowID limit {}",
                self.counter_rows_per_bank, MAX_COUNTER_ROWS
            )));
        }
        if self.counters_per_counter_row > MAX_COUNTERS_PER_ROW {
            return Err(SimError::Config(format!(
                "counters_per_counter_row {} exceeds the 10-bit ByteID limit {}",
                self.counters_per_counter_row, MAX_COUNTERS_PER_ROW
            )));
        }
        if self.rows_per_bank != self.counter_rows_per_bank * self.counters_per_counter_row {
            return Err(SimError::Config(format!(
                "rows_per_bank {} != counter_rows_per_bank x counters_per_counter_row ({} x {})",
                self.rows_per_bank, self.counter_rows_per_bank, self.counters_per_counter_row
            )));
        }
        Ok(())
    }

    pub fn check_bank(&self, bank: u32) -> Result<()> {
        if bank >= self.banks {
            return Err(SimError::range("bank", bank as u64, self.banks as u64));
        }
        Ok(())
    }

    pub fn map_row(&self, bank: u32, data_row: u32) -> Result<CounterRef> {
        self.check_bank(bank)?;
        if data_row >= self.rows_per_bank {
            return Err(SimError::range("data row", data_row as u64, self.rows_per_bank as u64));
        }
        Ok(CounterRef {
            bank,
            row_id: (data_row / self.counters_per_counter_row) as u16,
            byte_id: (data_row % self.counters_per_counter_row) as u16,
        })
    }

    /// Counters per bank, i.e. the length of a flattened counter grid.
    pub fn counters_per_bank(&self) -> usize {
        self.rows_per_bank as usize
    }

    pub fn check_ref(&self, r: CounterRef) -> Result<()> {
        self.check_bank(r.bank)?;
        if r.row_id as u32 >= self.counter_rows_per_bank {
            return Err(SimError::range("counter row", r.row_id as u64, self.counter_rows_per_bank as u64));
        }
        if r.byte_id as u32 >= self.counters_per_counter_row {
            return Err(SimError::range("byte id", r.byte_id as u64, self.counters_per_counter_row as u64));
        }
        Ok(())
    }
}

/// One 1-byte activation counter: bank, counter row (RowID) and byte (ByteID).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CounterRef {
    pub bank: u32,
    pub row_id: u16,
    pub byte_id: u16,
}

impl CounterRef {
    pub fn new(bank: u32, row_id: u16, byte_id: u16) -> Self {
        Self { bank, row_id, byte_id }
    }

    /// Index of this counter within its bank's flattened grid (equals the data row).
    pub fn flat_index(&self, geometry: &DramGeometry) -> usize {
        self.row_id as usize * geometry.counters_per_counter_row as usize + self.byte_id as usize
    }

    pub fn from_flat(bank: u32, index: usize, geometry: &DramGeometry) -> Self {
        let width = geometry.counters_per_counter_row as usize;
        Self {
            bank,
            row_id: (index / width) as u16,
            byte_id: (index % width) as u16,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn map_row_examples() {
        let g = DramGeometry::default();
        assert_eq!(g.map_row(0, 0).unwrap(), CounterRef::new(0, 0, 0));
        assert_eq!(g.map_row(3, 1024).unwrap(), CounterRef::new(3, 1, 0));
        assert_eq!(g.map_row(0, 65535).unwrap(), CounterRef::new(0, 63, 1023));
    }

    #[test]
    fn map_row_is_bijective_over_a_bank() {
        let g = DramGeometry::default();
        let mut seen = HashSet::new();
        for row in 0..g.rows_per_bank {
            let r = g.map_row(5, row).unwrap();
            assert!((r.row_id as u32) < g.counter_rows_per_bank);
            assert!((r.byte_id as u32) < g.counters_per_counter_row);
            assert_eq!(r.flat_index(&g), row as usize);
            assert!(seen.insert((r.row_id, r.byte_id)));
        }
        assert_eq!(seen.len(), 65536);
    }

    #[test]
    fn shared_counter_row_iff_same_quotient() {
        let g = DramGeometry::new(1, 4, 8).unwrap();
        for a in 0..g.rows_per_bank {
            for b in 0..g.rows_per_bank {
                let same = g.map_row(0, a).unwrap().row_id == g.map_row(0, b).unwrap().row_id;
                assert_eq!(same, a / 8 == b / 8);
            }
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        let g = DramGeometry::default();
        assert!(matches!(g.map_row(64, 0), Err(SimError::Range { what: "bank", .. })));
        assert!(matches!(g.map_row(0, 65536), Err(SimError::Range { what: "data row", .. })));
    }

    #[test]
    fn invalid_geometry() {
        assert!(DramGeometry::new(1, 65, 1024).is_err());
        assert!(DramGeometry::new(1, 64, 2048).is_err());
        let bad = DramGeometry { rows_per_bank: 100, ..DramGeometry::default() };
        assert!(bad.validate().is_err());
    }
}
