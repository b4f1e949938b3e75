//! Observed ILF outputs: the only evidence a WIS task ever sees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{IlfSpec, LabelId};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("row {row} has {got} entries, expected {expected}")]
    RaggedRow { row: usize, expected: usize, got: usize },
    #[error("matrix declares {got} ILF columns, specs declare {expected}")]
    ColumnCount { expected: usize, got: usize },
    #[error("column {column} id {got} does not match spec ilf_id {expected}")]
    ColumnId { column: usize, expected: usize, got: usize },
    #[error("row {row}, ILF {ilf_id}: label {label} is outside the declared output space")]
    LabelOutsideSpace { row: usize, ilf_id: usize, label: LabelId },
    #[error("row {row}, ILF {ilf_id}: abstention from an ILF declared can_abstain=false")]
    UnexpectedAbstain { row: usize, ilf_id: usize },
}

/// m data points by n ILFs of seen-label votes; `None` is an abstention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlfOutputMatrix {
    ilf_ids: Vec<usize>,
    rows: Vec<Vec<Option<LabelId>>>,
}

impl IlfOutputMatrix {
    pub fn new(ilf_ids: Vec<usize>, rows: Vec<Vec<Option<LabelId>>>) -> Result<Self, DataError> {
        let n = ilf_ids.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(DataError::RaggedRow { row: i, expected: n, got: row.len() });
            }
        }
        Ok(IlfOutputMatrix { ilf_ids, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_ilfs(&self) -> usize {
        self.ilf_ids.len()
    }

    pub fn ilf_ids(&self) -> &[usize] {
        &self.ilf_ids
    }

    pub fn row(&self, i: usize) -> &[Option<LabelId>] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<LabelId>]> {
        self.rows.iter().map(|r| r.as_slice())
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Option<LabelId>> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    /// Checks every entry against the declared output spaces, including the
    /// abstention permission, with columns matched to specs by position.
    pub fn validate(&self, specs: &[IlfSpec]) -> Result<(), DataError> {
        if specs.len() != self.ilf_ids.len() {
            return Err(DataError::ColumnCount { expected: specs.len(), got: self.ilf_ids.len() });
        }
        for (j, spec) in specs.iter().enumerate() {
            if spec.ilf_id != self.ilf_ids[j] {
                return Err(DataError::ColumnId {
                    column: j,
                    expected: spec.ilf_id,
                    got: self.ilf_ids[j],
                });
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                match cell {
                    Some(label) => {
                        if specs[j].output_space.binary_search(label).is_err() {
                            return Err(DataError::LabelOutsideSpace {
                                row: i,
                                ilf_id: specs[j].ilf_id,
                                label: *label,
                            });
                        }
                    }
                    None => {
                        if !specs[j].can_abstain {
                            return Err(DataError::UnexpectedAbstain {
                                row: i,
                                ilf_id: specs[j].ilf_id,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_rows() {
        let err = IlfOutputMatrix::new(vec![0, 1], vec![vec![None]]).unwrap_err();
        assert_eq!(err, DataError::RaggedRow { row: 0, expected: 2, got: 1 });
    }

    #[test]
    fn validate_catches_out_of_space_votes_and_bad_abstains() {
        let specs = vec![
            IlfSpec::new(0, vec![LabelId(4), LabelId(5)], true),
            IlfSpec::new(1, vec![LabelId(6)], false),
        ];
        let ok = IlfOutputMatrix::new(
            vec![0, 1],
            vec![vec![Some(LabelId(4)), Some(LabelId(6))], vec![None, Some(LabelId(6))]],
        )
        .unwrap();
        assert!(ok.validate(&specs).is_ok());

        let stray = IlfOutputMatrix::new(vec![0, 1], vec![vec![Some(LabelId(6)), Some(LabelId(6))]])
            .unwrap();
        assert!(matches!(stray.validate(&specs), Err(DataError::LabelOutsideSpace { .. })));

        let abstain = IlfOutputMatrix::new(vec![0, 1], vec![vec![None, None]]).unwrap();
        assert!(matches!(abstain.validate(&specs), Err(DataError::UnexpectedAbstain { .. })));
    }
}
