//! Fully-associative LRU translation cache in front of the SMMU.

#[derive(Debug, Clone)]
pub struct Tlb {
    capacity: usize,
    /// Most recently used last.
    pages: Vec<u64>,
}

impl Tlb {
    pub fn new(capacity: usize) -> Self {
        Tlb { capacity, pages: Vec::with_capacity(capacity) }
    }

    /// Returns true on a hit. A miss installs the page, evicting the LRU entry.
    pub fn lookup(&mut self, page: u64) -> bool {
        if let Some(pos) = self.pages.iter().rposition(|&p| p == page) {
            let p = self.pages.remove(pos);
            self.pages.push(p);
            return true;
        }
        if self.capacity == 0 {
            return false;
        }
        if self.pages.len() == self.capacity {
            self.pages.remove(0);
        }
        self.pages.push(page);
        false
    }
}
