//! Fixed-size bit set used for reachability closures.

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        BitSet {
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn union_with(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64)
                .filter(move |b| bits & (1 << b) != 0)
                .map(move |b| w * 64 + b)
        })
    }
}

/// Transitive closure: `reach[v]` holds every vertex reachable from `v` by a
/// non-empty path. `order` must be a topological order of `succ`.
pub(crate) fn closure(succ: &[Vec<usize>], order: &[usize]) -> Vec<BitSet> {
    let n = succ.len();
    let mut reach = vec![BitSet::new(n); n];
    for &v in order.iter().rev() {
        let mut acc = BitSet::new(n);
        for &s in &succ[v] {
            acc.insert(s);
            acc.union_with(&reach[s]);
        }
        reach[v] = acc;
    }
    reach
}
