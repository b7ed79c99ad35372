//! Torus (balanced) and sign (even) invariance: zero masks and block partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{MultiIndex, Poly, TermKey};
use crate::pop::{Field, Pop};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryKind {
    Balanced,
    Even,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub kind: SymmetryKind,
}

impl SymmetryReport {
    pub fn none() -> Self {
        SymmetryReport { kind: SymmetryKind::None }
    }

    /// Whether the moment `y_{α,β}` is forced to zero.
    pub fn is_zero(&self, key: &TermKey) -> bool {
        match self.kind {
            SymmetryKind::Balanced => key.alpha.degree() != key.beta.degree(),
            SymmetryKind::Even => (key.alpha.degree() + key.beta.degree()) % 2 == 1,
            SymmetryKind::None => false,
        }
    }

    /// Block label of a basis monomial.
    pub fn grade(&self, alpha: &MultiIndex) -> u32 {
        match self.kind {
            SymmetryKind::Balanced => alpha.degree(),
            SymmetryKind::Even => alpha.degree() % 2,
            SymmetryKind::None => 0,
        }
    }
}

fn all_terms<'a>(pop: &'a Pop) -> impl Iterator<Item = &'a TermKey> {
    let polys: Vec<&'a Poly> = std::iter::once(&pop.objective)
        .chain(pop.squares.iter().map(|s| &s.poly))
        .chain(pop.constraints.iter().map(|c| &c.poly))
        .chain(pop.constraints.iter().filter_map(|c| c.modulus.as_ref().map(|m| &m.h)))
        .collect();
    polys.into_iter().flat_map(|p| p.terms.keys())
}

pub fn detect_invariance(pop: &Pop) -> SymmetryReport {
    let kind = match pop.field {
        Field::Complex => {
            if all_terms(pop).all(|k| k.alpha.degree() == k.beta.degree()) {
                SymmetryKind::Balanced
            } else {
                SymmetryKind::None
            }
        }
        Field::Real => {
            if all_terms(pop).all(|k| k.degree() % 2 == 0) {
                SymmetryKind::Even
            } else {
                SymmetryKind::None
            }
        }
    };
    SymmetryReport { kind }
}

/// Forced-zero pairs of a moment matrix over `basis`, and its block partition
/// (indices into `basis`, ordered by grade).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPartition {
    pub zero_pairs: Vec<(usize, usize)>,
    pub blocks: Vec<Vec<usize>>,
}

pub fn zero_mask(report: &SymmetryReport, basis: &[MultiIndex], _d: u32) -> Result<MaskPartition> {
    if report.kind == SymmetryKind::None {
        return Err(Error::NotApplicable);
    }
    let mut zero_pairs = vec![];
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let key = match report.kind {
                SymmetryKind::Even => TermKey::new(a.add(b), MultiIndex::zero(a.len())),
                _ => TermKey::new(a.clone(), b.clone()),
            };
            if report.is_zero(&key) {
                zero_pairs.push((i, j));
            }
        }
    }
    let mut grades: Vec<u32> = basis.iter().map(|a| report.grade(a)).collect();
    grades.sort();
    grades.dedup();
    let blocks = grades
        .iter()
        .map(|&g| (0..basis.len()).filter(|&i| report.grade(&basis[i]) == g).collect())
        .collect();
    Ok(MaskPartition { zero_pairs, blocks })
}
