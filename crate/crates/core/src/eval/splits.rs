//! Cross-validation split plans.
//!
//! Slice-wise: per-subject shuffle of all slices into 10 near-equal folds;
//! slices from one trial may land on both sides of a fold. Trial-wise:
//! grouped 5-fold over trials with label stratification, so no trial ever
//! contributes slices to both train and test of the same fold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::content_hash;
use crate::error::{Error, Result};

pub const SLICEWISE_FOLDS: usize = 10;
pub const TRIALWISE_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    SliceWise,
    TrialWise,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "slice" => Ok(SplitMode::SliceWise),
            "trial" => Ok(SplitMode::TrialWise),
            other => Err(Error::invalid(format!(
                "unknown mode \"{other}\" (slice, trial)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitMode::SliceWise => "slice",
            SplitMode::TrialWise => "trial",
        }
    }
}

/// One fold: disjoint train/test sets of global slice row ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// A full cross-validation plan for one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn hash(&self) -> String {
        content_hash(self)
    }
}

/// Shuffles `rows` and deals them into 10 near-equal folds (sizes differ by
/// at most one); every row is tested exactly once.
pub fn slicewise_folds(rows: &[usize], seed: u64) -> Result<SplitPlan> {
    if rows.len() < SLICEWISE_FOLDS {
        return Err(Error::invalid(format!(
            "slice-wise folds need at least {SLICEWISE_FOLDS} slices, got {}",
            rows.len()
        )));
    }
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let base = n / SLICEWISE_FOLDS;
    let extra = n % SLICEWISE_FOLDS;
    let mut folds = Vec::with_capacity(SLICEWISE_FOLDS);
    let mut start = 0usize;
    for f in 0..SLICEWISE_FOLDS {
        let size = base + usize::from(f < extra);
        let test: Vec<usize> = shuffled[start..start + size].to_vec();
        let train: Vec<usize> = shuffled[..start]
            .iter()
            .chain(&shuffled[start + size..])
            .copied()
            .collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(SplitPlan {
        mode: SplitMode::SliceWise,
        seed,
        folds,
    })
}

/// One trial's slices with its label, the unit of grouped splitting.
#[derive(Debug, Clone)]
pub struct TrialGroup {
    pub trial_index: u32,
    pub label: u8,
    pub rows: Vec<usize>,
}

/// Grouped 5-fold over trials: trials are shuffled within each label group
/// and dealt round-robin (with a running fold counter across groups, so
/// every fold is covered); each trial is tested exactly once and no trial
/// straddles a fold's train/test boundary.
pub fn trialwise_folds(trials: &[TrialGroup], seed: u64) -> Result<SplitPlan> {
    if trials.len() < TRIALWISE_FOLDS {
        return Err(Error::invalid(format!(
            "trial-wise folds need at least {TRIALWISE_FOLDS} trials, got {}",
            trials.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, t) in trials.iter().enumerate() {
        by_label[usize::from(t.label == 1)].push(i);
    }
    let mut fold_trials: Vec<Vec<usize>> = vec![Vec::new(); TRIALWISE_FOLDS];
    let mut counter = 0usize;
    for group in by_label.iter_mut() {
        group.shuffle(&mut rng);
        for &trial in group.iter() {
            fold_trials[counter % TRIALWISE_FOLDS].push(trial);
            counter += 1;
        }
    }
    let mut folds = Vec::with_capacity(TRIALWISE_FOLDS);
    for f in 0..TRIALWISE_FOLDS {
        let mut test = Vec::new();
        let mut train = Vec::new();
        for (i, t) in trials.iter().enumerate() {
            if fold_trials[f].contains(&i) {
                test.extend_from_slice(&t.rows);
            } else {
                train.extend_from_slice(&t.rows);
            }
        }
        folds.push(Fold { train, test });
    }
    Ok(SplitPlan {
        mode: SplitMode::TrialWise,
        seed,
        folds,
    })
}

/// Counts leakage violations: trials contributing rows to both train and
/// test of the same fold. `trial_of` maps a global row id to its trial key.
pub fn leakage_violations(plan: &SplitPlan, trial_of: impl Fn(usize) -> (String, u32)) -> usize {
    let mut violations = 0;
    for fold in &plan.folds {
        let test_trials: std::collections::HashSet<(String, u32)> =
            fold.test.iter().map(|&r| trial_of(r)).collect();
        let train_trials: std::collections::HashSet<(String, u32)> =
            fold.train.iter().map(|&r| trial_of(r)).collect();
        violations += test_trials.intersection(&train_trials).count();
    }
    violations
}

/// True when the folds' test sets exactly partition `rows`.
pub fn is_exact_partition(plan: &SplitPlan, rows: &[usize]) -> bool {
    let mut tested: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
    tested.sort_unstable();
    let mut expected = rows.to_vec();
    expected.sort_unstable();
    tested == expected
        && plan.folds.iter().all(|f| {
            let train: std::collections::HashSet<_> = f.train.iter().collect();
            f.test.iter().all(|r| !train.contains(r))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slicewise_1800_gives_ten_folds_of_180() {
        let rows: Vec<usize> = (0..1800).collect();
        let plan = slicewise_folds(&rows, 0).unwrap();
        assert_eq!(plan.folds.len(), 10);
        for f in &plan.folds {
            assert_eq!(f.test.len(), 180);
            assert_eq!(f.train.len(), 1620);
        }
        assert!(is_exact_partition(&plan, &rows));
    }

    #[test]
    fn slicewise_fold_sizes_differ_by_at_most_one() {
        let rows: Vec<usize> = (0..103).collect();
        let plan = slicewise_folds(&rows, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        let min = sizes.iter().min().unwrap();
        let max = sizes.iter().max().unwrap();
        assert!(max - min <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(is_exact_partition(&plan, &rows));
    }

    #[test]
    fn slicewise_same_seed_identical_plan() {
        let rows: Vec<usize> = (0..50).collect();
        let a = slicewise_folds(&rows, 7).unwrap();
        let b = slicewise_folds(&rows, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let c = slicewise_folds(&rows, 8).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn slicewise_too_few_rejected() {
        let rows: Vec<usize> = (0..9).collect();
        assert!(slicewise_folds(&rows, 0).is_err());
    }

    fn make_trials(n: usize, slices_per_trial: usize) -> Vec<TrialGroup> {
        (0..n)
            .map(|t| TrialGroup {
                trial_index: t as u32,
                label: (t % 2) as u8,
                rows: (t * slices_per_trial..(t + 1) * slices_per_trial).collect(),
            })
            .collect()
    }

    #[test]
    fn trialwise_30_trials_gives_5_folds_of_6() {
        let trials = make_trials(30, 10);
        let plan = trialwise_folds(&trials, 3).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            assert_eq!(f.test.len(), 6 * 10);
            assert_eq!(f.train.len(), 24 * 10);
        }
        let all_rows: Vec<usize> = (0..300).collect();
        assert!(is_exact_partition(&plan, &all_rows));
    }

    #[test]
    fn trialwise_no_leakage() {
        let trials = make_trials(12, 5);
        let plan = trialwise_folds(&trials, 9).unwrap();
        let trial_of = |row: usize| ("s".to_string(), (row / 5) as u32);
        assert_eq!(leakage_violations(&plan, trial_of), 0);
    }

    #[test]
    fn trialwise_stratified_when_feasible() {
        // 10 trials of each label: every fold's test set holds both labels
        let trials = make_trials(20, 3);
        for seed in 0..10 {
            let plan = trialwise_folds(&trials, seed).unwrap();
            for fold in &plan.folds {
                let labels: std::collections::HashSet<u8> = fold
                    .test
                    .iter()
                    .map(|&r| trials[r / 3].label)
                    .collect();
                assert_eq!(labels.len(), 2, "seed {seed} fold lacks a label");
            }
        }
    }

    #[test]
    fn trialwise_too_few_rejected() {
        let trials = make_trials(4, 5);
        assert!(trialwise_folds(&trials, 0).is_err());
    }
}
