//! Class transition statistics between the two dates of a mask pair.
//!
//! A pixel has changed iff its class differs between T1 and T2. No
//! morphological cleaning is applied, so fragmented regions stay fragmented.

use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, MaskPair};
use crate::{Error, Result};

/// `counts[i][j]` = number of pixels with class `i` at T1 and `j` at T2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    total: u64,
}

impl TransitionMatrix {
    /// Builds a matrix from a row-major `k*k` count table.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {num_classes}x{num_classes} matrix",
                counts.len()
            )));
        }
        let total = counts.iter().sum();
        Ok(Self {
            num_classes,
            counts,
            total,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.num_classes + to]
    }

    pub fn row(&self, from: usize) -> &[u64] {
        &self.counts[from * self.num_classes..(from + 1) * self.num_classes]
    }
}

/// Per-class areas and gross change derived from a [`TransitionMatrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassChangeSummary {
    pub area_t1: Vec<u64>,
    pub area_t2: Vec<u64>,
    /// Pixels entering the class.
    pub gained: Vec<u64>,
    /// Pixels leaving the class.
    pub lost: Vec<u64>,
    /// `gained + lost`.
    pub changed: Vec<u64>,
}

impl ClassChangeSummary {
    /// Net area change `area_t2 - area_t1`.
    pub fn net(&self, class: usize) -> i64 {
        self.area_t2[class] as i64 - self.area_t1[class] as i64
    }
}

/// Which side of a transition a changed-pixel mask selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeRole {
    /// Pixels that leave the class: `t1 == k && t2 != k`.
    Source,
    /// Pixels that enter the class: `t2 == k && t1 != k`.
    Target,
    Either,
}

pub fn transition_matrix(pair: &MaskPair) -> Result<TransitionMatrix> {
    let (t1, t2) = (&pair.t1, &pair.t2);
    if t1.width() != t2.width() || t1.height() != t2.height() {
        return Err(Error::DimensionMismatch(format!(
            "pair {}: t1 is {}x{}, t2 is {}x{}",
            pair.pair_id,
            t1.width(),
            t1.height(),
            t2.width(),
            t2.height()
        )));
    }
    let k = pair.num_classes();
    let mut counts = vec![0u64; k * k];
    for (&a, &b) in t1.labels().iter().zip(t2.labels()) {
        counts[usize::from(a) * k + usize::from(b)] += 1;
    }
    TransitionMatrix::from_counts(k, counts)
}

pub fn summarize(tm: &TransitionMatrix) -> ClassChangeSummary {
    let k = tm.num_classes;
    let mut s = ClassChangeSummary {
        area_t1: vec![0; k],
        area_t2: vec![0; k],
        gained: vec![0; k],
        lost: vec![0; k],
        changed: vec![0; k],
    };
    for i in 0..k {
        for j in 0..k {
            let c = tm.get(i, j);
            s.area_t1[i] += c;
            s.area_t2[j] += c;
            if i != j {
                s.lost[i] += c;
                s.gained[j] += c;
            }
        }
    }
    for c in 0..k {
        s.changed[c] = s.gained[c] + s.lost[c];
    }
    s
}

fn check_class(pair: &MaskPair, class: usize) -> Result<()> {
    if class >= pair.num_classes() {
        return Err(Error::ClassIdOutOfRange {
            id: class,
            num_classes: pair.num_classes(),
        });
    }
    Ok(())
}

/// Row-major bit grid of the pixels selected by `role` for `class`.
pub fn changed_bits(pair: &MaskPair, class: usize, role: ChangeRole) -> Result<Vec<bool>> {
    check_class(pair, class)?;
    let k = class as u8;
    Ok(pair
        .t1
        .labels()
        .iter()
        .zip(pair.t2.labels())
        .map(|(&a, &b)| match role {
            ChangeRole::Source => a == k && b != k,
            ChangeRole::Target => b == k && a != k,
            ChangeRole::Either => (a == k) != (b == k),
        })
        .collect())
}

pub fn changed_mask(pair: &MaskPair, class: usize, role: ChangeRole) -> Result<BinaryMask> {
    let bits = changed_bits(pair, class, role)?;
    BinaryMask::from_bits(&bits, pair.width(), pair.height())
}

/// Pixels that move from class `from` at T1 to class `to` at T2.
pub fn transition_mask(pair: &MaskPair, from: usize, to: usize) -> Result<BinaryMask> {
    check_class(pair, from)?;
    check_class(pair, to)?;
    if from == to {
        return Err(Error::SameClass(from));
    }
    let (i, j) = (from as u8, to as u8);
    let bits: Vec<bool> = pair
        .t1
        .labels()
        .iter()
        .zip(pair.t2.labels())
        .map(|(&a, &b)| a == i && b == j)
        .collect();
    BinaryMask::from_bits(&bits, pair.width(), pair.height())
}
