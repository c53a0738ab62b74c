//! CSV and markdown renderings of training and comparison results.
//!
//! Floats in CSV files use Rust's shortest round-trip representation, so
//! identical results always produce identical bytes.

use std::fmt::Write as _;

use crate::eval::RecallReport;
use crate::trainer::{EpochMetrics, RunReport};

/// `mean±std`, both already in percent, to one decimal place.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.1}±{std:.1}")
}

/// Marker for cells whose runs all failed.
pub const NOT_CONVERGED: &str = "n/c";

const DIRECTIONS: [(&str, &str); 2] = [("t2a", "Text-to-Audio"), ("a2t", "Audio-to-Text")];

fn direction_values(r: &RecallReport, dir: &str) -> [f64; 3] {
    match dir {
        "t2a" => r.text_to_audio.as_array(),
        _ => r.audio_to_text.as_array(),
    }
}

/// One row per `(batch size, objective, direction)` with `mean±std`
/// percentages. A leading batch-size column appears only when the reports
/// span more than one batch size.
pub fn results_markdown(reports: &[RunReport]) -> String {
    let multi_batch = reports
        .windows(2)
        .any(|w| w[0].batch_size != w[1].batch_size);
    let mut out = String::new();
    let head = if multi_batch { "| Batch size " } else { "" };
    let rule = if multi_batch { "|---:" } else { "" };
    let _ = writeln!(out, "{head}| Objective | direction | R@1 | R@5 | R@10 |");
    let _ = writeln!(out, "{rule}|---|---|---:|---:|---:|");
    for r in reports {
        for (dir, label) in DIRECTIONS {
            let cells: Vec<String> = match &r.aggregate {
                Some(agg) => {
                    let mean = direction_values(&agg.mean, dir);
                    let std = direction_values(&agg.std, dir);
                    (0..3)
                        .map(|k| format_mean_std(100.0 * mean[k], 100.0 * std[k]))
                        .collect()
                }
                None => vec![NOT_CONVERGED.to_string(); 3],
            };
            if multi_batch {
                let _ = write!(out, "| {} ", r.batch_size);
            }
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                r.objective.label(),
                label,
                cells[0],
                cells[1],
                cells[2]
            );
        }
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.runs.iter().filter(|s| !s.converged()).map(move |s| {
                format!(
                    "- {NOT_CONVERGED}: {} (batch {}) seed {}: {}",
                    r.objective.label(),
                    r.batch_size,
                    s.seed,
                    s.error.as_deref().unwrap_or("failed")
                )
            })
        })
        .collect();
    if !failed.is_empty() {
        out.push('\n');
        for line in failed {
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

/// Aggregated results: one row per `(batch size, objective, direction)`.
pub fn results_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "batch_size,objective,direction,runs,converged,r1_mean,r1_std,r5_mean,r5_std,r10_mean,r10_std\n",
    );
    for r in reports {
        let converged = r.aggregate.map_or(0, |a| a.n);
        for (dir, _) in DIRECTIONS {
            let _ = write!(
                out,
                "{},{},{dir},{},{converged}",
                r.batch_size,
                r.objective.as_str(),
                r.runs.len()
            );
            match &r.aggregate {
                Some(agg) => {
                    let mean = direction_values(&agg.mean, dir);
                    let std = direction_values(&agg.std, dir);
                    for k in 0..3 {
                        let _ = write!(out, ",{},{}", mean[k], std[k]);
                    }
                }
                None => out.push_str(&format!(",{NOT_CONVERGED}").repeat(6)),
            }
            out.push('\n');
        }
    }
    out
}

/// Per-seed test metrics of the selected checkpoints.
pub fn runs_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "batch_size,objective,seed,status,best_epoch,t2a_r1,t2a_r5,t2a_r10,a2t_r1,a2t_r5,a2t_r10\n",
    );
    for r in reports {
        for s in &r.runs {
            let _ = write!(out, "{},{},{}", r.batch_size, r.objective.as_str(), s.seed);
            match (&s.test, s.best_epoch) {
                (Some(t), best) => {
                    let best = best.map_or_else(String::new, |e| e.to_string());
                    let _ = write!(out, ",ok,{best}");
                    for v in t.values() {
                        let _ = write!(out, ",{v}");
                    }
                }
                (None, _) => {
                    let _ = write!(out, ",{NOT_CONVERGED}{}", ",".repeat(7));
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Per-epoch loss and validation score for every run, for external plotting.
pub fn curves_csv(reports: &[RunReport]) -> String {
    let mut out =
        String::from("batch_size,objective,seed,epoch,lr,train_loss,val_sum_of_recalls\n");
    for r in reports {
        for s in &r.runs {
            for e in &s.epochs {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.batch_size,
                    r.objective.as_str(),
                    s.seed,
                    e.epoch,
                    e.lr,
                    e.train_loss,
                    e.val.sum_of_recalls()
                );
            }
        }
    }
    out
}

/// Per-epoch metrics of a single run.
pub fn epochs_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = String::from(
        "epoch,lr,train_loss,val_t2a_r1,val_t2a_r5,val_t2a_r10,val_a2t_r1,val_a2t_r5,val_a2t_r10,val_sum_of_recalls\n",
    );
    for e in epochs {
        let _ = write!(out, "{},{},{}", e.epoch, e.lr, e.train_loss);
        for v in e.val.values() {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", e.val.sum_of_recalls());
    }
    out
}
