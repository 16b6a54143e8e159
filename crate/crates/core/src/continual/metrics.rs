use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower-triangular accuracy table: `rows[j][i]` is the percentage on task
/// `i` after learning task `j`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub tasks: usize,
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self {
            tasks: rows.len(),
            rows,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let j = self.rows.len();
        if j >= self.tasks || row.len() != j + 1 {
            return Err(Error::ShapeMismatch(format!("row {j} has {} entries", row.len())));
        }
        if row.iter().any(|a| !(0.0..=100.0).contains(a)) {
            return Err(Error::ShapeMismatch(format!("row {j} has entries outside [0, 100]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut check = Self::new(self.tasks);
        for r in &self.rows {
            check.push_row(r.clone())?;
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.tasks > 0 && self.rows.len() == self.tasks
    }

    pub fn get(&self, j: usize, i: usize) -> Option<f64> {
        self.rows.get(j).and_then(|r| r.get(i)).copied()
    }

    /// AP after each task, `mean(rows[j])`.
    pub fn trajectory(&self) -> Vec<f64> {
        self.rows.iter().map(|r| mean(r)).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean of the final row.
pub fn compute_ap(a: &AccuracyMatrix) -> Result<f64> {
    if !a.is_complete() {
        return Err(Error::IncompleteMatrix);
    }
    Ok(mean(&a.rows[a.tasks - 1]))
}

/// Mean over old tasks of best earlier accuracy minus final accuracy.
pub fn compute_ft(a: &AccuracyMatrix) -> Result<f64> {
    if !a.is_complete() {
        return Err(Error::IncompleteMatrix);
    }
    let t = a.tasks;
    if t < 2 {
        return Err(Error::SingleTask);
    }
    let last = &a.rows[t - 1];
    let total: f64 = (0..t - 1)
        .map(|i| {
            let best = a.rows[i..t - 1].iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
            best - last[i]
        })
        .sum();
    Ok(total / (t - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let a = AccuracyMatrix::from_rows(vec![vec![90.0], vec![70.0, 80.0]]).unwrap();
        assert_eq!(compute_ft(&a).unwrap(), 20.0);
        assert_eq!(compute_ap(&a).unwrap(), 75.0);
        let one = AccuracyMatrix::from_rows(vec![vec![42.0]]).unwrap();
        assert_eq!(compute_ap(&one).unwrap(), 42.0);
        assert!(matches!(compute_ft(&one), Err(Error::SingleTask)));
        let b = AccuracyMatrix::from_rows(vec![vec![50.0], vec![60.0, 60.0], vec![40.0, 50.0, 60.0]]).unwrap();
        assert_eq!(compute_ap(&b).unwrap(), 50.0);
    }

    #[test]
    fn improvement_is_negative() {
        let a = AccuracyMatrix::from_rows(vec![vec![50.0], vec![70.0, 80.0]]).unwrap();
        assert_eq!(compute_ft(&a).unwrap(), -20.0);
    }

    #[test]
    fn incomplete() {
        let mut a = AccuracyMatrix::new(3);
        a.push_row(vec![1.0]).unwrap();
        assert!(matches!(compute_ap(&a), Err(Error::IncompleteMatrix)));
        assert!(a.push_row(vec![1.0]).is_err());
        assert!(a.push_row(vec![1.0, 101.0]).is_err());
    }
}
