use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

/// Per-second read and write allowances of the task database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbCapacity {
    pub reads_per_second: u32,
    pub writes_per_second: u32,
}

impl Default for DbCapacity {
    fn default() -> Self {
        DbCapacity { reads_per_second: 100, writes_per_second: 400 }
    }
}

impl DbCapacity {
    pub fn new(reads_per_second: u32, writes_per_second: u32) -> Option<Self> {
        (reads_per_second > 0 && writes_per_second > 0).then_some(DbCapacity { reads_per_second, writes_per_second })
    }

    /// Large enough never to bind in practice.
    pub fn generous() -> Self {
        DbCapacity { reads_per_second: 1_000_000, writes_per_second: 1_000_000 }
    }

    /// Steady-state task rate allowed by the database when each task costs
    /// `reads` reads and `writes` writes.
    pub fn ceiling(&self, reads: u32, writes: u32) -> f64 {
        let r = if reads == 0 { f64::INFINITY } else { self.reads_per_second as f64 / reads as f64 };
        let w = if writes == 0 { f64::INFINITY } else { self.writes_per_second as f64 / writes as f64 };
        r.min(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbOp {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbStats {
    pub reads: u64,
    pub writes: u64,
    /// Operations that had to wait for a later one-second window.
    pub delayed: u64,
}

/// Windowed rate limiter. An operation that does not fit in the current
/// one-second window is pushed to the start of the next window with room.
#[derive(Debug, Clone)]
pub struct TaskDb {
    capacity: DbCapacity,
    windows: BTreeMap<i64, (u32, u32)>,
    stats: DbStats,
}

impl TaskDb {
    pub fn new(capacity: DbCapacity) -> Self {
        TaskDb { capacity, windows: BTreeMap::new(), stats: DbStats::default() }
    }

    pub fn capacity(&self) -> DbCapacity {
        self.capacity
    }

    pub fn stats(&self) -> DbStats {
        self.stats
    }

    /// Consumes one operation issued at `now`; returns when it takes effect.
    pub fn reserve(&mut self, op: DbOp, now: SimTime) -> SimTime {
        let first = now.0.div_euclid(1000);
        // windows well in the past can no longer receive operations
        if let Some((&oldest, _)) = self.windows.iter().next() {
            if oldest < first - 60 {
                self.windows = self.windows.split_off(&(first - 60));
            }
        }
        let mut s = first;
        loop {
            let slot = self.windows.entry(s).or_insert((0, 0));
            let (used, cap) = match op {
                DbOp::Read => (&mut slot.0, self.capacity.reads_per_second),
                DbOp::Write => (&mut slot.1, self.capacity.writes_per_second),
            };
            if *used < cap {
                *used += 1;
                break;
            }
            s += 1;
        }
        match op {
            DbOp::Read => self.stats.reads += 1,
            DbOp::Write => self.stats.writes += 1,
        }
        if s > first {
            self.stats.delayed += 1;
            SimTime(s * 1000)
        } else {
            now
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overflow_moves_to_next_second() {
        let mut db = TaskDb::new(DbCapacity::new(2, 3).unwrap());
        let t = SimTime(10_250);
        assert_eq!(db.reserve(DbOp::Read, t), t);
        assert_eq!(db.reserve(DbOp::Read, t), t);
        assert_eq!(db.reserve(DbOp::Read, t), SimTime(11_000));
        assert_eq!(db.reserve(DbOp::Read, t), SimTime(11_000));
        assert_eq!(db.reserve(DbOp::Read, t), SimTime(12_000));
        // writes have their own allowance
        assert_eq!(db.reserve(DbOp::Write, t), t);
        assert_eq!(db.stats(), DbStats { reads: 5, writes: 1, delayed: 3 });
    }

    #[test]
    fn ceiling_is_min_over_resources() {
        let c = DbCapacity::default();
        assert_eq!(c.ceiling(1, 2), 100.0);
        assert_eq!(c.ceiling(1, 8), 50.0);
        assert!(DbCapacity::new(0, 1).is_none());
    }
}
