use crate::error::{Error, Result};
use crate::forest::{Forest, Samples};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub class_id: u16,
    pub total: usize,
    pub correct: usize,
}

impl ClassScore {
    /// `None` when the class has no test rows.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    pub fn misdiagnosis_rate(&self) -> Option<f64> {
        self.accuracy().map(|a| 1.0 - a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_class: Vec<ClassScore>,
    pub overall: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn score(&self, class_id: u16) -> Option<&ClassScore> {
        self.per_class.iter().find(|s| s.class_id == class_id)
    }

    /// Lowest per-class accuracy among classes present in the test set.
    pub fn min_class_accuracy(&self) -> Option<f64> {
        self.per_class
            .iter()
            .filter_map(ClassScore::accuracy)
            .reduce(f64::min)
    }
}

pub fn evaluate(forest: &Forest, test: &Samples) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Degenerate("evaluation on an empty test set".into()));
    }
    let k = forest.classes().len();
    if test.n_classes() != k || test.dim() != forest.feature_mode().dim() {
        return Err(Error::Config("test samples do not match the forest".into()));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (x, y) in test.iter() {
        confusion[y as usize][forest.predict_id(x) as usize] += 1;
    }
    Ok(from_confusion(confusion))
}

pub(crate) fn from_confusion(confusion: Vec<Vec<usize>>) -> Evaluation {
    let per_class: Vec<ClassScore> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| ClassScore {
            class_id: c as u16,
            total: row.iter().sum(),
            correct: row[c],
        })
        .collect();
    let total: usize = per_class.iter().map(|s| s.total).sum();
    let correct: usize = per_class.iter().map(|s| s.correct).sum();
    Evaluation {
        overall: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        per_class,
        confusion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_wrong() {
        let perfect = from_confusion(vec![vec![4, 0], vec![0, 6]]);
        assert_eq!(perfect.overall, 1.0);
        for s in &perfect.per_class {
            assert_eq!(s.accuracy(), Some(1.0));
            assert_eq!(s.misdiagnosis_rate(), Some(0.0));
        }
        let wrong = from_confusion(vec![vec![0, 4], vec![6, 0]]);
        assert_eq!(wrong.overall, 0.0);
        assert!(wrong
            .per_class
            .iter()
            .all(|s| s.accuracy() == Some(0.0) && s.misdiagnosis_rate() == Some(1.0)));
    }

    #[test]
    fn half_right() {
        let e = from_confusion(vec![vec![2, 2], vec![3, 3]]);
        assert_eq!(e.overall, 0.5);
        assert!(e
            .per_class
            .iter()
            .all(|s| s.accuracy() == Some(0.5) && s.misdiagnosis_rate() == Some(0.5)));
    }

    #[test]
    fn absent_class_is_not_zero() {
        let e = from_confusion(vec![vec![3, 1, 0], vec![0, 0, 0], vec![0, 0, 2]]);
        assert_eq!(e.per_class[1].accuracy(), None);
        assert_eq!(e.min_class_accuracy(), Some(0.75));
    }
}
