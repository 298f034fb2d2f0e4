//! Accuracy bookkeeping for incremental evaluation.
//!
//! `R[t2][t1]` is the accuracy on task `t1` after learning tasks `1..=t2`,
//! stored as a fraction. Tasks are 1-based in the public API.

use crate::error::{Error, Result};

/// Lower-triangular accuracy record, filled one row per learned task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalMatrix {
    rows: Vec<Vec<f64>>,
}

impl EvalMatrix {
    pub fn new() -> Self {
        EvalMatrix::default()
    }

    /// Builds from complete rows; row `t` must hold `t` entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = EvalMatrix::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task: accuracies on tasks `1..=T`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::State(format!("row {} needs {} entries, got {}", self.rows.len() + 1, self.rows.len() + 1, row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `R[t2][t1]`, 1-based.
    pub fn get(&self, t2: usize, t1: usize) -> Option<f64> {
        self.rows.get(t2.checked_sub(1)?)?.get(t1.checked_sub(1)?).copied()
    }

    fn row(&self, t: usize) -> Result<&[f64]> {
        if t == 0 || t > self.rows.len() {
            return Err(Error::State(format!("row {t} not filled ({} rows)", self.rows.len())));
        }
        Ok(&self.rows[t - 1])
    }

    /// Rows as percent, empty cells above the diagonal.
    pub fn to_csv_percent(&self) -> String {
        let t = self.rows.len();
        let mut out = String::from("after_task");
        for j in 1..=t {
            out.push_str(&format!(",task{j}"));
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for j in 0..t {
                out.push(',');
                if let Some(v) = r.get(j) {
                    out.push_str(&format!("{:.4}", 100.0 * v));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Mean accuracy over all tasks after learning task `t`.
pub fn acc(r: &EvalMatrix, t: usize) -> Result<f64> {
    let row = r.row(t)?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// `(1/(t-1)) sum_{i<t} (R[i][i] - R[t][i])`; positive means forgetting.
pub fn bwt(r: &EvalMatrix, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::State("backward transfer needs at least two tasks".into()));
    }
    let last = r.row(t)?;
    let mut sum = 0.0;
    for i in 1..t {
        sum += r.row(i)?[i - 1] - last[i - 1];
    }
    Ok(sum / (t - 1) as f64)
}

/// Mean of `acc(r, i)` over `i = 1..=t`.
pub fn aia(r: &EvalMatrix, t: usize) -> Result<f64> {
    Ok(acc_history(r, t)?.iter().sum::<f64>() / t as f64)
}

pub fn acc_history(r: &EvalMatrix, t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::State("no tasks".into()));
    }
    (1..=t).map(|i| acc(r, i)).collect()
}

/// Sample mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let r = EvalMatrix::from_rows(vec![vec![0.9], vec![0.8, 0.7]]).unwrap();
        assert_eq!(acc(&r, 1).unwrap(), 0.9);
        assert!((acc(&r, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!((bwt(&r, 2).unwrap() - 0.1).abs() < 1e-15);
        assert!((aia(&r, 2).unwrap() - 0.825).abs() < 1e-15);
        let r = EvalMatrix::from_rows(vec![vec![0.8], vec![0.9, 0.5]]).unwrap();
        assert!((bwt(&r, 2).unwrap() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn bwt_needs_two_tasks() {
        let r = EvalMatrix::from_rows(vec![vec![0.9]]).unwrap();
        assert!(bwt(&r, 1).is_err());
        assert!(acc(&r, 2).is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut r = EvalMatrix::new();
        assert!(r.push_row(vec![0.5, 0.5]).is_err());
        assert!(r.push_row(vec![1.5]).is_err());
    }

    #[test]
    fn csv_is_lower_triangular() {
        let r = EvalMatrix::from_rows(vec![vec![1.0], vec![0.5, 0.25]]).unwrap();
        assert_eq!(r.to_csv_percent(), "after_task,task1,task2\n1,100.0000,\n2,50.0000,25.0000\n");
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
