//! Floating-point operation tallies.
//!
//! One fused multiply-add (or a lone multiply or add) counts as one `fma`;
//! one division or reciprocal counts as one `div`. Kernels return their tally
//! by value, so there is no global counter to reset or share.

use std::iter::Sum;
use std::ops::{Add, AddAssign};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct FlopCount {
    pub fma: u64,
    pub div: u64,
}

impl FlopCount {
    pub const ZERO: FlopCount = FlopCount { fma: 0, div: 0 };

    pub fn new(fma: u64, div: u64) -> Self {
        Self { fma, div }
    }

    pub fn total(&self) -> u64 {
        self.fma + self.div
    }
}

impl Add for FlopCount {
    type Output = FlopCount;

    fn add(self, rhs: FlopCount) -> FlopCount {
        FlopCount {
            fma: self.fma + rhs.fma,
            div: self.div + rhs.div,
        }
    }
}

impl AddAssign for FlopCount {
    fn add_assign(&mut self, rhs: FlopCount) {
        self.fma += rhs.fma;
        self.div += rhs.div;
    }
}

impl Sum for FlopCount {
    fn sum<I: Iterator<Item = FlopCount>>(iter: I) -> Self {
        iter.fold(FlopCount::ZERO, Add::add)
    }
}

impl std::fmt::Display for FlopCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} flops ({} fma, {} div)", self.total(), self.fma, self.div)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_sums_both_units() {
        let a = FlopCount::new(5, 2);
        let b = FlopCount::new(1, 1);
        assert_eq!((a + b).total(), 9);
        let s: FlopCount = [a, b, FlopCount::ZERO].into_iter().sum();
        assert_eq!(s, FlopCount::new(6, 3));
    }
}
