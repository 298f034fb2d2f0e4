//! Fixed-length bitsets packed into 64-bit words.
//!
//! Bits past `len` in the last word are always zero, so word-wise equality,
//! union and popcount need no trailing-bit correction.

use std::fmt;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitSet {
    len: usize,
    words: Vec<u64>,
}

const WORD: usize = u64::BITS as usize;

impl BitSet {
    pub fn empty(len: usize) -> Self {
        BitSet { len, words: vec![0; len.div_ceil(WORD)] }
    }

    pub fn full(len: usize) -> Self {
        let mut set = BitSet { len, words: vec![u64::MAX; len.div_ceil(WORD)] };
        set.clear_tail();
        set
    }

    /// Rebuilds a set from raw words; the tail beyond `len` is cleared.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Option<Self> {
        if words.len() != len.div_ceil(WORD) {
            return None;
        }
        words.shrink_to_fit();
        let mut set = BitSet { len, words };
        set.clear_tail();
        Some(set)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut set = BitSet::empty(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                set.insert(i);
            }
        }
        set
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / WORD] &= !(1 << (i % WORD));
    }

    pub fn set(&mut self, i: usize, value: bool) {
        if value {
            self.insert(i)
        } else {
            self.remove(i)
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn none(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    fn check_len(&self, other: &BitSet) {
        assert_eq!(self.len, other.len, "bitset length mismatch");
    }

    pub fn union_with(&mut self, other: &BitSet) {
        self.check_len(other);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersect_with(&mut self, other: &BitSet) {
        self.check_len(other);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
    }

    pub fn difference_with(&mut self, other: &BitSet) {
        self.check_len(other);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn complement(&self) -> BitSet {
        let mut out = BitSet { len: self.len, words: self.words.iter().map(|w| !w).collect() };
        out.clear_tail();
        out
    }

    pub fn is_subset(&self, other: &BitSet) -> bool {
        self.check_len(other);
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + bit)
            })
        })
    }
}

impl fmt::Debug for BitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            let s: String = (0..self.len).map(|i| if self.contains(i) { '1' } else { '0' }).collect();
            write!(f, "BitSet({s})")
        } else {
            write!(f, "BitSet({}/{} set)", self.count_ones(), self.len)
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn bits(s: &str) -> BitSet {
        BitSet::from_bools(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn full_clears_tail() {
        let set = BitSet::full(70);
        assert_eq!(set.count_ones(), 70);
        assert_eq!(set.words()[1], (1 << 6) - 1);
        assert!(set.complement().none());
    }

    #[test]
    fn union_of_overlapping() {
        let mut a = bits("110");
        a.union_with(&bits("011"));
        assert_eq!(a, bits("111"));
        assert_eq!(a.count_ones(), 3);
    }

    proptest! {
        #[test]
        fn set_ops_match_bool_vectors(
            a in proptest::collection::vec(any::<bool>(), 0..200),
            seed in any::<u64>(),
        ) {
            let b: Vec<bool> = a.iter().enumerate()
                .map(|(i, _)| (seed.rotate_left(i as u32 % 64) ^ i as u64) & 1 == 1)
                .collect();
            let (sa, sb) = (BitSet::from_bools(&a), BitSet::from_bools(&b));
            let mut u = sa.clone();
            u.union_with(&sb);
            let mut n = sa.clone();
            n.intersect_with(&sb);
            let mut d = sa.clone();
            d.difference_with(&sb);
            for i in 0..a.len() {
                prop_assert_eq!(u.contains(i), a[i] || b[i]);
                prop_assert_eq!(n.contains(i), a[i] && b[i]);
                prop_assert_eq!(d.contains(i), a[i] && !b[i]);
            }
            prop_assert_eq!(sa.ones().collect::<Vec<_>>(),
                (0..a.len()).filter(|&i| a[i]).collect::<Vec<_>>());
            prop_assert!(n.is_subset(&u));
        }
    }
}
