//! The experiment runner: per-subject cross-validation with any model,
//! aggregated across subjects and seeds, plus the paired SP/noSP ablation.
//!
//! Work units (seed x subject x fold) are independent and run in parallel;
//! per-unit seeds derive from the root seed and the unit coordinates, so
//! results are bitwise reproducible regardless of scheduling.

use rayon::prelude::*;

use crate::config::{content_hash, derive_seed, RunConfig};
use crate::error::{Error, Result};
use crate::eval::metrics::{accuracy, auc, f1, roc_curve};
use crate::eval::splits::{
    slicewise_folds, trialwise_folds, SplitMode, SplitPlan, TrialGroup,
};
use crate::eval::{
    deviation_notes, mean_std, AblationReport, Aggregate, CVReport, FoldMetrics, SeedRun,
    SubjectDelta, SubjectResult,
};
use crate::features::FeatureTable;
use crate::models::{fit, ModelKind, TrainSet};

/// Builds the split plan for one subject under the derived plan seed.
pub fn subject_plan(
    table: &FeatureTable,
    subject_id: &str,
    mode: SplitMode,
    root_seed: u64,
    subject_idx: usize,
) -> Result<SplitPlan> {
    let plan_seed = derive_seed(root_seed, "folds", &[subject_idx as u64, mode as u64]);
    let rows = table.rows_for_subject(subject_id);
    match mode {
        SplitMode::SliceWise => slicewise_folds(&rows, plan_seed),
        SplitMode::TrialWise => {
            let mut groups: Vec<TrialGroup> = Vec::new();
            for &row in &rows {
                let s = &table.slices[row];
                match groups.iter_mut().find(|g| g.trial_index == s.trial_index) {
                    Some(g) => g.rows.push(row),
                    None => groups.push(TrialGroup {
                        trial_index: s.trial_index,
                        label: s.label,
                        rows: vec![row],
                    }),
                }
            }
            trialwise_folds(&groups, plan_seed)
        }
    }
}

struct FoldOutcome {
    metrics: FoldMetrics,
    scores: Vec<f64>,
    labels: Vec<u8>,
}

fn run_fold(
    table: &FeatureTable,
    kind: ModelKind,
    config: &RunConfig,
    plan: &SplitPlan,
    fold_idx: usize,
    fit_seed: u64,
) -> Result<FoldOutcome> {
    let fold = &plan.folds[fold_idx];
    let rows: Vec<&[f64]> = fold
        .train
        .iter()
        .map(|&r| table.slices[r].features.as_slice())
        .collect();
    let labels: Vec<u8> = fold.train.iter().map(|&r| table.slices[r].label).collect();
    let train = TrainSet::new(rows, labels)?;
    let model = fit(kind, config, &table.channel_names, &train, fit_seed)?;

    let mut preds = Vec::with_capacity(fold.test.len());
    let mut scores = Vec::with_capacity(fold.test.len());
    let mut test_labels = Vec::with_capacity(fold.test.len());
    for &r in &fold.test {
        let p = model.predict(&table.slices[r].features)?;
        preds.push(p.label);
        scores.push(p.score);
        test_labels.push(table.slices[r].label);
    }
    let fold_auc = roc_curve(&scores, &test_labels).ok().map(|roc| auc(&roc));
    Ok(FoldOutcome {
        metrics: FoldMetrics {
            fold: fold_idx,
            n_test: fold.test.len(),
            accuracy: accuracy(&preds, &test_labels)?,
            f1: f1(&preds, &test_labels)?,
            auc: fold_auc,
        },
        scores,
        labels: test_labels,
    })
}

/// Runs the full protocol: per subject and seed, builds folds, trains, and
/// scores; aggregates with an unweighted mean and population standard
/// deviation across subjects.
pub fn run_experiment(
    table: &FeatureTable,
    kind: ModelKind,
    mode: SplitMode,
    seeds: &[u64],
    config: &RunConfig,
) -> Result<CVReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("need at least one seed"));
    }
    let subjects = table.subjects();
    if subjects.is_empty() {
        return Err(Error::invalid("feature table has no subjects"));
    }

    // precompute plans per (seed, subject)
    let mut plans: Vec<Vec<SplitPlan>> = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let per_subject = subjects
            .iter()
            .enumerate()
            .map(|(si, id)| subject_plan(table, id, mode, seed, si))
            .collect::<Result<Vec<_>>>()?;
        plans.push(per_subject);
    }

    // flat task list over (seed, subject, fold)
    let mut tasks = Vec::new();
    for (gi, &seed) in seeds.iter().enumerate() {
        for (si, _) in subjects.iter().enumerate() {
            for fi in 0..plans[gi][si].folds.len() {
                tasks.push((gi, si, fi, seed));
            }
        }
    }
    let outcomes: Vec<Result<(usize, usize, usize, FoldOutcome)>> = tasks
        .par_iter()
        .map(|&(gi, si, fi, seed)| {
            let fit_seed = derive_seed(seed, "fit", &[si as u64, fi as u64]);
            let outcome = run_fold(table, kind, config, &plans[gi][si], fi, fit_seed)?;
            Ok((gi, si, fi, outcome))
        })
        .collect();

    let mut per_run: Vec<Vec<Vec<Option<FoldOutcome>>>> = (0..seeds.len())
        .map(|gi| {
            (0..subjects.len())
                .map(|si| (0..plans[gi][si].folds.len()).map(|_| None).collect())
                .collect()
        })
        .collect();
    for r in outcomes {
        let (gi, si, fi, outcome) = r?;
        per_run[gi][si][fi] = Some(outcome);
    }

    let mut runs = Vec::with_capacity(seeds.len());
    for (gi, &seed) in seeds.iter().enumerate() {
        let mut subject_results = Vec::with_capacity(subjects.len());
        for (si, subject_id) in subjects.iter().enumerate() {
            let outcomes: Vec<FoldOutcome> = per_run[gi][si]
                .iter_mut()
                .map(|o| o.take().expect("all folds ran"))
                .collect();
            let folds: Vec<FoldMetrics> = outcomes.iter().map(|o| o.metrics.clone()).collect();
            let acc_mean = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
            let f1_mean = folds.iter().map(|f| f.f1).sum::<f64>() / folds.len() as f64;
            let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
            let auc_mean = if aucs.is_empty() {
                0.5
            } else {
                aucs.iter().sum::<f64>() / aucs.len() as f64
            };
            let pooled_scores: Vec<f64> =
                outcomes.iter().flat_map(|o| o.scores.clone()).collect();
            let pooled_labels: Vec<u8> =
                outcomes.iter().flat_map(|o| o.labels.clone()).collect();
            let pooled_roc = roc_curve(&pooled_scores, &pooled_labels)?;
            let pooled_auc = auc(&pooled_roc);
            subject_results.push(SubjectResult {
                subject_id: subject_id.clone(),
                folds,
                accuracy: acc_mean,
                f1: f1_mean,
                auc: auc_mean,
                pooled_roc,
                pooled_auc,
            });
        }
        runs.push(SeedRun {
            seed,
            subjects: subject_results,
            plan_hash: content_hash(&plans[gi]),
        });
    }

    let aggregate = aggregate_runs(&runs, subjects.len());
    Ok(CVReport {
        model: kind.name().to_string(),
        mode: mode.name().to_string(),
        seeds: seeds.to_vec(),
        config_hash: config.hash(),
        config_summary: serde_json::to_value(config).expect("config serializes"),
        runs,
        aggregate,
        deviations: deviation_notes(),
    })
}

fn aggregate_runs(runs: &[SeedRun], n_subjects: usize) -> Aggregate {
    // subject value = mean over seeds, then mean +- population std across
    // subjects
    let mut acc = Vec::with_capacity(n_subjects);
    let mut f1v = Vec::with_capacity(n_subjects);
    let mut aucv = Vec::with_capacity(n_subjects);
    for si in 0..n_subjects {
        let a: f64 =
            runs.iter().map(|r| r.subjects[si].accuracy).sum::<f64>() / runs.len() as f64;
        let f: f64 = runs.iter().map(|r| r.subjects[si].f1).sum::<f64>() / runs.len() as f64;
        let u: f64 = runs.iter().map(|r| r.subjects[si].auc).sum::<f64>() / runs.len() as f64;
        acc.push(a);
        f1v.push(f);
        aucv.push(u);
    }
    let (accuracy_mean, accuracy_std) = mean_std(&acc);
    let (f1_mean, f1_std) = mean_std(&f1v);
    let (auc_mean, auc_std) = mean_std(&aucv);
    Aggregate {
        n_subjects,
        accuracy_mean,
        accuracy_std,
        f1_mean,
        f1_std,
        auc_mean,
        auc_std,
    }
}

/// Runs the spatial and no-spatial transformer variants under identical
/// folds and seeds and reports paired per-subject deltas.
pub fn ablation_run(
    table: &FeatureTable,
    mode: SplitMode,
    seeds: &[u64],
    config: &RunConfig,
) -> Result<AblationReport> {
    let sp = run_experiment(table, ModelKind::Vit, mode, seeds, config)?;
    let nosp = run_experiment(table, ModelKind::VitNosp, mode, seeds, config)?;
    let plans_match = sp
        .runs
        .iter()
        .zip(&nosp.runs)
        .all(|(a, b)| a.plan_hash == b.plan_hash);
    let subjects = table.subjects();
    let mut paired = Vec::with_capacity(subjects.len());
    for (si, subject_id) in subjects.iter().enumerate() {
        let mean_over =
            |report: &CVReport, f: &dyn Fn(&SubjectResult) -> f64| -> f64 {
                report.runs.iter().map(|r| f(&r.subjects[si])).sum::<f64>()
                    / report.runs.len() as f64
            };
        paired.push(SubjectDelta {
            subject_id: subject_id.clone(),
            accuracy_delta: mean_over(&sp, &|s| s.accuracy) - mean_over(&nosp, &|s| s.accuracy),
            f1_delta: mean_over(&sp, &|s| s.f1) - mean_over(&nosp, &|s| s.f1),
            auc_delta: mean_over(&sp, &|s| s.auc) - mean_over(&nosp, &|s| s.auc),
        });
    }
    Ok(AblationReport {
        sp,
        nosp,
        paired,
        plans_match,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HyperParams;
    use crate::eval::splits::leakage_violations;
    use crate::features::{DeSlice, FEATURE_BANDS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Tiny synthetic feature table: class 1 rows get a mean shift.
    fn table(n_subjects: usize, n_trials: usize, slices_per_trial: usize, shift: f64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut slices = Vec::new();
        for s in 0..n_subjects {
            for t in 0..n_trials {
                let label = (t % 2) as u8;
                for k in 0..slices_per_trial {
                    let mu = if label == 1 { shift } else { 0.0 };
                    slices.push(DeSlice {
                        subject_id: format!("sub{s:02}"),
                        trial_index: t as u32,
                        slice_index: k as u32,
                        label,
                        features: (0..256).map(|_| mu + rng.gen_range(-1.0..1.0)).collect(),
                    });
                }
            }
        }
        FeatureTable {
            channel_names: crate::spatial::build_map().channel_order(),
            bands: FEATURE_BANDS.to_vec(),
            label_weights: [1.0 / 3.0; 3],
            subject_thresholds: Default::default(),
            floored: 0,
            provenance: None,
            slices,
        }
    }

    fn quick_config() -> RunConfig {
        let mut config = RunConfig::default();
        config.vit.model_dim = 8;
        config.vit.n_heads = 2;
        config.vit.n_blocks = 1;
        config.vit.mlp_dim = 16;
        config.hyper = HyperParams {
            max_epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_loss: 1e-4,
        };
        config.baselines.svm_iterations = 200;
        config
    }

    #[test]
    fn separable_features_score_high_with_nb() {
        let table = table(1, 6, 10, 2.0);
        let report = run_experiment(
            &table,
            ModelKind::Nb,
            SplitMode::SliceWise,
            &[0],
            &quick_config(),
        )
        .unwrap();
        assert!(report.aggregate.accuracy_mean > 0.95);
        assert_eq!(report.runs.len(), 1);
        assert_eq!(report.runs[0].subjects.len(), 1);
        assert_eq!(report.runs[0].subjects[0].folds.len(), 10);
    }

    #[test]
    fn trialwise_plans_are_leakage_free() {
        let table = table(2, 10, 4, 0.0);
        for si in 0..2 {
            let plan = subject_plan(&table, &format!("sub{si:02}"), SplitMode::TrialWise, 3, si)
                .unwrap();
            let violations = leakage_violations(&plan, |row| {
                let s = &table.slices[row];
                (s.subject_id.clone(), s.trial_index)
            });
            assert_eq!(violations, 0);
        }
    }

    #[test]
    fn report_reproducible_bitwise() {
        let table = table(1, 6, 6, 1.0);
        let cfg = quick_config();
        let a = run_experiment(&table, ModelKind::Svm, SplitMode::TrialWise, &[1, 2], &cfg)
            .unwrap();
        let b = run_experiment(&table, ModelKind::Svm, SplitMode::TrialWise, &[1, 2], &cfg)
            .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn ablation_plans_hash_equal() {
        let table = table(1, 6, 6, 1.5);
        let report = ablation_run(&table, SplitMode::SliceWise, &[0], &quick_config()).unwrap();
        assert!(report.plans_match);
        assert_eq!(report.paired.len(), 1);
    }
}
