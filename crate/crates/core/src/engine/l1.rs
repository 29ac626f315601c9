/// Set-associative LRU tag store over line addresses. Write-through,
/// no write-allocate: only read fills insert lines.
#[derive(Clone, Debug)]
pub struct L1Cache {
    sets: Vec<Vec<(u64, u64)>>,
    ways: usize,
    tick: u64,
}

impl L1Cache {
    pub fn new(sets: usize, ways: usize) -> Self {
        L1Cache {
            sets: vec![Vec::with_capacity(ways); sets],
            ways,
            tick: 0,
        }
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.sets.len() as u64) as usize
    }

    pub fn contains(&self, line: u64) -> bool {
        self.sets[self.set_of(line)].iter().any(|&(t, _)| t == line)
    }

    /// Lookup that refreshes recency on a hit.
    pub fn access(&mut self, line: u64) -> bool {
        self.tick += 1;
        let tick = self.tick;
        let s = self.set_of(line);
        match self.sets[s].iter_mut().find(|(t, _)| *t == line) {
            Some(e) => {
                e.1 = tick;
                true
            }
            None => false,
        }
    }

    pub fn fill(&mut self, line: u64) {
        self.tick += 1;
        let tick = self.tick;
        let ways = self.ways;
        let s = self.set_of(line);
        let set = &mut self.sets[s];
        if let Some(e) = set.iter_mut().find(|(t, _)| *t == line) {
            e.1 = tick;
            return;
        }
        if set.len() == ways {
            let lru = (0..set.len()).min_by_key(|&i| set[i].1).expect("full set");
            set.swap_remove(lru);
        }
        set.push((line, tick));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_least_recent() {
        let mut c = L1Cache::new(1, 2);
        c.fill(1);
        c.fill(2);
        assert!(c.access(1));
        c.fill(3);
        assert!(c.contains(1));
        assert!(!c.contains(2));
        assert!(c.contains(3));
    }

    #[test]
    fn sets_are_independent() {
        let mut c = L1Cache::new(2, 1);
        c.fill(0);
        c.fill(1);
        assert!(c.contains(0) && c.contains(1));
        c.fill(2);
        assert!(!c.contains(0) && c.contains(1));
    }
}
