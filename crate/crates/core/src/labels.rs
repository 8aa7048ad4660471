use std::fmt;

use crate::error::{Error, Result};

/// Label occurrence counts `lambda_i` over `n` zero-based classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMultiset {
    counts: Vec<usize>,
}

impl LabelMultiset {
    pub fn empty(n_classes: usize) -> Self {
        Self {
            counts: vec![0; n_classes],
        }
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        Self { counts }
    }

    pub fn from_labels(n_classes: usize, labels: &[usize]) -> Result<Self> {
        let mut set = Self::empty(n_classes);
        for &label in labels {
            set.push(label)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, label: usize) -> Result<()> {
        let n_classes = self.counts.len();
        let slot = self
            .counts
            .get_mut(label)
            .ok_or(Error::LabelOutOfRange { label, n_classes })?;
        *slot += 1;
        Ok(())
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn count(&self, label: usize) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.count(label) > 0
    }

    /// Multiset union with another count vector over the same classes.
    pub fn merge(&mut self, other: &LabelMultiset) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::InvalidArgument(format!(
                "class counts differ: {} vs {}",
                self.n_classes(),
                other.n_classes()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Expands to a sorted label sequence.
    pub fn to_labels(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(label, &c)| std::iter::repeat_n(label, c))
            .collect()
    }
}

impl fmt::Display for LabelMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        let mut first = true;
        for (label, &c) in self.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{label}:{c}")?;
            first = false;
        }
        write!(f, "}}")
    }
}
