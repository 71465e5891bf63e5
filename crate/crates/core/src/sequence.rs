//! Per-timestep class distributions of the recognition head and the
//! alphabet that maps classes to characters.
//!
//! Class 0 is the CTC blank; class `i + 1` is the `i`-th alphabet character.

use std::collections::HashMap;

use thiserror::Error;

/// Rows of a valid [`ProbSeq`] must sum to 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("probability sequence needs at least one class")]
    NoClasses,
    #[error("data length {len} is not a multiple of the class count {classes}")]
    Ragged { len: usize, classes: usize },
    #[error("row {row} is not a distribution (sum {sum}, min {min})")]
    NotADistribution { row: usize, sum: f64, min: f64 },
    #[error("character {0:?} is not in the alphabet")]
    UnknownChar(char),
    #[error("alphabet contains {0:?} twice")]
    DuplicateChar(char),
    #[error("expected {expected} classes (alphabet + blank), got {got}")]
    ClassMismatch { expected: usize, got: usize },
}

/// `T x C` matrix of class probabilities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeq {
    classes: usize,
    data: Vec<f64>,
}

impl ProbSeq {
    /// Validates that every row is a probability distribution.
    pub fn new(classes: usize, data: Vec<f64>) -> Result<Self, SequenceError> {
        let seq = Self::new_unchecked(classes, data)?;
        for (row, r) in seq.rows().enumerate() {
            let sum: f64 = r.iter().sum();
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if (sum - 1.0).abs() > ROW_SUM_TOL || min < 0.0 || max > 1.0 || !sum.is_finite() {
                return Err(SequenceError::NotADistribution { row, sum, min });
            }
        }
        Ok(seq)
    }

    /// Only checks the shape. Used where entries are treated as free
    /// variables, e.g. when differentiating a loss with respect to them.
    pub fn new_unchecked(classes: usize, data: Vec<f64>) -> Result<Self, SequenceError> {
        if classes == 0 {
            return Err(SequenceError::NoClasses);
        }
        if !data.len().is_multiple_of(classes) {
            return Err(SequenceError::Ragged {
                len: data.len(),
                classes,
            });
        }
        Ok(Self { classes, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SequenceError> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(SequenceError::Ragged {
                len: rows.iter().map(Vec::len).sum(),
                classes,
            });
        }
        Self::new(classes, rows.concat())
    }

    /// Sequence whose rows are one-hot on the given classes.
    pub fn one_hot(classes: usize, path: &[usize]) -> Result<Self, SequenceError> {
        let mut data = vec![0.0; classes * path.len()];
        for (t, &k) in path.iter().enumerate() {
            if k >= classes {
                return Err(SequenceError::ClassMismatch {
                    expected: classes,
                    got: k + 1,
                });
            }
            data[t * classes + k] = 1.0;
        }
        Self::new(classes, data)
    }

    /// Sequence length `T`.
    pub fn len(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..(t + 1) * self.classes]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Character set `S`; class indices are offset by one for the blank.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alphabet {
    chars: Vec<char>,
    lookup: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new(chars: &str) -> Result<Self, SequenceError> {
        let mut lookup = HashMap::new();
        let mut list = Vec::new();
        for c in chars.chars() {
            if lookup.insert(c, list.len() + 1).is_some() {
                return Err(SequenceError::DuplicateChar(c));
            }
            list.push(c);
        }
        Ok(Self {
            chars: list,
            lookup,
        })
    }

    /// Number of characters, excluding the blank.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// `|S| + 1`.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn class_of(&self, c: char) -> Option<usize> {
        self.lookup.get(&c).copied()
    }

    /// Character of a non-blank class.
    pub fn char_of(&self, class: usize) -> Option<char> {
        class
            .checked_sub(1)
            .and_then(|i| self.chars.get(i))
            .copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, SequenceError> {
        text.chars()
            .map(|c| self.class_of(c).ok_or(SequenceError::UnknownChar(c)))
            .collect()
    }
}
