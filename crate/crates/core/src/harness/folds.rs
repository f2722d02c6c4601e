use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub test: String,
    pub val: String,
    pub train: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub sessions: Vec<String>,
    pub folds: Vec<Fold>,
}

/// Fold `i` tests session `i`, validates on session `(i+1) mod n` and trains on the rest.
pub fn make_loso_folds(sessions: &[String]) -> Result<FoldPlan> {
    let n = sessions.len();
    if n < 3 {
        return Err(HarnessError::TooFewSessions(n));
    }
    let mut seen = BTreeSet::new();
    for s in sessions {
        if !seen.insert(s) {
            return Err(HarnessError::DuplicateSession(s.clone()));
        }
    }
    let folds = (0..n)
        .map(|i| {
            let v = (i + 1) % n;
            Fold {
                index: i,
                test: sessions[i].clone(),
                val: sessions[v].clone(),
                train: (0..n).filter(|&j| j != i && j != v).map(|j| sessions[j].clone()).collect(),
            }
        })
        .collect();
    Ok(FoldPlan { sessions: sessions.to_vec(), folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("S{i}")).collect()
    }

    #[test]
    fn five_sessions() {
        let plan = make_loso_folds(&ids(5)).unwrap();
        assert_eq!(plan.folds.len(), 5);
        assert_eq!(plan.folds[0].test, "S1");
        assert_eq!(plan.folds[0].val, "S2");
        assert_eq!(plan.folds[0].train, ["S3", "S4", "S5"]);
        assert_eq!(plan.folds[4].val, "S1");
        assert_eq!(plan.folds[4].train, ["S2", "S3", "S4"]);
    }

    #[test]
    fn minimal_and_rejected() {
        let plan = make_loso_folds(&ids(3)).unwrap();
        assert!(plan.folds.iter().all(|f| f.train.len() == 1));
        assert!(matches!(make_loso_folds(&ids(2)), Err(HarnessError::TooFewSessions(2))));
        let dup = vec!["A".to_string(), "B".into(), "A".into()];
        assert!(matches!(make_loso_folds(&dup), Err(HarnessError::DuplicateSession(_))));
    }
}
