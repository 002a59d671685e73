//! Evaluation and the Chebyshev-vs-standard convolution ablation.

use std::fmt::Write as _;

use crate::config::{ArchKind, RunConfig};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::metrics::{build_report, one_vs_rest_auc, ClassificationReport, ConfusionMatrix, MulticlassAuc};
use crate::nn::Model;
use crate::train::{argmax, predict_dataset, train_loop_with, EpochRecord, TrainConfig};

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub probs: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
    pub auc: MulticlassAuc,
}

pub fn evaluate(model: &Model<f32>, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(invalid("cannot evaluate an empty dataset"));
    }
    if data.classes() != model.spec.classes {
        return Err(invalid(format!(
            "dataset has {} classes but the model predicts {}",
            data.classes(),
            model.spec.classes
        )));
    }
    let probs = predict_dataset(model, data, 64)?;
    let predictions: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let labels = data.labels();
    let confusion = ConfusionMatrix::from_predictions(&labels, &predictions, data.classes())?;
    let report = build_report(&confusion, &data.class_names);
    let auc = one_vs_rest_auc(&probs, &labels, data.classes())?;
    Ok(Evaluation {
        probs,
        predictions,
        confusion,
        report,
        auc,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub seed: u64,
    pub val_accuracy: f64,
    pub parameters: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub chebyshev: Vec<ArmResult>,
    pub standard: Vec<ArmResult>,
}

fn mean(rows: &[ArmResult]) -> f64 {
    rows.iter().map(|r| r.val_accuracy).sum::<f64>() / rows.len() as f64
}

impl AblationReport {
    pub fn chebyshev_mean(&self) -> f64 {
        mean(&self.chebyshev)
    }

    pub fn standard_mean(&self) -> f64 {
        mean(&self.standard)
    }

    /// Header, one row per arm and seed, then one mean row per arm.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,seed,val_accuracy,parameters,best_epoch,epochs_run\n");
        for (arm, rows) in [("chebyshev", &self.chebyshev), ("standard", &self.standard)] {
            for r in rows.iter() {
                let _ = writeln!(
                    out,
                    "{arm},{},{},{},{},{}",
                    r.seed, r.val_accuracy, r.parameters, r.best_epoch, r.epochs_run
                );
            }
        }
        for (arm, rows) in [("chebyshev", &self.chebyshev), ("standard", &self.standard)] {
            let _ = writeln!(out, "{arm},mean,{},{},,", mean(rows), rows[0].parameters);
        }
        out
    }
}

/// Trains both arms for every seed. The seed drives initialisation,
/// shuffling, augmentation and dropout, so the two arms of one seed see the
/// same data in the same order.
pub fn run_ablation(
    cfg: &RunConfig,
    train: &Dataset,
    val: &Dataset,
    seeds: &[u64],
    progress: &mut dyn FnMut(ArchKind, u64, &EpochRecord),
) -> Result<AblationReport> {
    if seeds.len() < 2 {
        return Err(invalid(format!("ablation needs at least 2 seeds, got {}", seeds.len())));
    }
    let mut report = AblationReport {
        chebyshev: Vec::new(),
        standard: Vec::new(),
    };
    for &seed in seeds {
        for kind in [ArchKind::Chebyshev, ArchKind::Standard] {
            let arm_cfg = RunConfig {
                arch_kind: kind,
                train: TrainConfig {
                    seed,
                    ..cfg.train.clone()
                },
                ..cfg.clone()
            };
            let mut model = Model::<f32>::build(&arm_cfg.network_spec(), seed)?;
            let outcome = train_loop_with(&mut model, train, val, &arm_cfg.train, &arm_cfg.augment, &mut |r| {
                progress(kind, seed, r)
            })?;
            let eval = evaluate(&model, val)?;
            let row = ArmResult {
                seed,
                val_accuracy: eval.report.accuracy.unwrap_or(0.0),
                parameters: model.parameter_count(),
                best_epoch: outcome.report.best_epoch,
                epochs_run: outcome.report.epochs.len(),
            };
            match kind {
                ArchKind::Chebyshev => report.chebyshev.push(row),
                ArchKind::Standard => report.standard.push(row),
            }
        }
    }
    Ok(report)
}
