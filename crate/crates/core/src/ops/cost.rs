use serde::{Deserialize, Serialize};

/// Work performed by one or more inferences.
///
/// `macs` counts multiply-accumulates in convolution and dense kernels;
/// `elems` counts every other per-element operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounter {
    pub macs: u64,
    pub elems: u64,
}

impl CostCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn add_elems(&mut self, n: u64) {
        self.elems += n;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

impl std::ops::Add for CostCounter {
    type Output = CostCounter;

    fn add(self, rhs: Self) -> Self {
        CostCounter {
            macs: self.macs + rhs.macs,
            elems: self.elems + rhs.elems,
        }
    }
}

impl std::ops::AddAssign for CostCounter {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for CostCounter {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}
