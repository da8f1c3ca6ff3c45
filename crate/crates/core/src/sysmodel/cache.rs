//! Set-associative last-level cache with true LRU replacement.

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TouchStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone)]
pub struct LastLevelCache {
    sets: usize,
    ways: usize,
    line_bytes: u64,
    /// `sets * ways` line tags; `u64::MAX` marks an empty way.
    tags: Vec<u64>,
    /// Last-use stamp per way.
    stamps: Vec<u64>,
    clock: u64,
}

impl LastLevelCache {
    /// `capacity` and `line_bytes` in bytes. Panics unless capacity is a
    /// whole number of `ways * line_bytes` sets.
    pub fn new(capacity: u64, line_bytes: u64, ways: usize) -> Self {
        assert!(line_bytes > 0 && ways > 0);
        assert_eq!(capacity % (line_bytes * ways as u64), 0, "capacity must divide into whole sets");
        let sets = (capacity / (line_bytes * ways as u64)) as usize;
        assert!(sets > 0);
        LastLevelCache {
            sets,
            ways,
            line_bytes,
            tags: vec![u64::MAX; sets * ways],
            stamps: vec![0; sets * ways],
            clock: 0,
        }
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    /// Looks up the line containing `addr`, allocating it on a miss.
    pub fn access(&mut self, addr: u64) -> bool {
        let line = addr / self.line_bytes;
        let set = (line % self.sets as u64) as usize;
        let base = set * self.ways;
        self.clock += 1;
        let ways = &mut self.tags[base..base + self.ways];
        if let Some(way) = ways.iter().position(|&t| t == line) {
            self.stamps[base + way] = self.clock;
            return true;
        }
        let stamps = &self.stamps[base..base + self.ways];
        // empty ways carry stamp 0, so they are picked first
        let victim = (0..self.ways).min_by_key(|&w| stamps[w]).unwrap();
        self.tags[base + victim] = line;
        self.stamps[base + victim] = self.clock;
        false
    }

    pub fn contains(&self, addr: u64) -> bool {
        let line = addr / self.line_bytes;
        let set = (line % self.sets as u64) as usize;
        self.tags[set * self.ways..(set + 1) * self.ways].contains(&line)
    }

    /// Touches every line overlapping `[addr, addr + bytes)`.
    pub fn touch(&mut self, addr: u64, bytes: u64) -> TouchStats {
        let mut stats = TouchStats::default();
        if bytes == 0 {
            return stats;
        }
        let first = addr / self.line_bytes;
        let last = (addr + bytes - 1) / self.line_bytes;
        for line in first..=last {
            if self.access(line * self.line_bytes) {
                stats.hits += 1;
            } else {
                stats.misses += 1;
            }
        }
        stats
    }
}
