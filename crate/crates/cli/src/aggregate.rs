//! Cross-trial statistics: mean, standard error, median, and an
//! interpolated 95% percentile band, grouped by hyperparameters and step,
//! plus the asymptotic-performance rule for picking a softmax temperature.

use std::collections::BTreeMap;

use anyhow::{bail, Result};

use crate::rows::ResultRow;

/// Order-preserving integer key for a float column (None sorts first).
fn ord_bits(v: f64) -> u64 {
    let b = v.to_bits();
    if v.is_sign_negative() {
        !b
    } else {
        b ^ (1 << 63)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    experiment: String,
    env: Option<String>,
    alpha: Option<u64>,
    lambda: Option<u64>,
    eta: Option<u64>,
    beta: Option<u64>,
    sigma: Option<u64>,
    n: Option<usize>,
    step: Option<usize>,
    metric: String,
}

impl GroupKey {
    fn of(row: &ResultRow) -> Self {
        GroupKey {
            experiment: row.experiment.clone(),
            env: row.env.clone(),
            alpha: row.alpha.map(ord_bits),
            lambda: row.lambda.map(ord_bits),
            eta: row.eta.map(ord_bits),
            beta: row.beta.map(ord_bits),
            sigma: row.sigma.map(ord_bits),
            n: row.n,
            step: row.step,
            metric: row.metric.clone(),
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean: sample standard deviation over sqrt(n);
/// zero for a single observation.
pub fn stderr(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Quantile by linear interpolation between closest order statistics
/// (position q * (n - 1) in the sorted sample).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Collapse per-trial rows into summary rows: for every
/// (hyperparameters, step, metric) group the mean, standard error, median,
/// and 2.5/97.5 percentiles over trials, in deterministic group order. The
/// trial column is empty in the output and the metric name gains a suffix.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<ResultRow>> {
    if rows.is_empty() {
        bail!("cannot summarize an empty row set");
    }
    let mut groups: BTreeMap<GroupKey, (ResultRow, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let entry = groups.entry(GroupKey::of(row)).or_insert_with(|| {
            let mut template = row.clone();
            template.trial = None;
            (template, Vec::new())
        });
        entry.1.push(row.value);
    }
    let mut out = Vec::with_capacity(groups.len() * 5);
    for (_, (template, values)) in groups {
        for (suffix, value) in [
            ("mean", mean(&values)),
            ("stderr", stderr(&values)),
            ("median", median(&values)),
            ("p2_5", quantile(&values, 0.025)),
            ("p97_5", quantile(&values, 0.975)),
        ] {
            let mut row = template.clone();
            row.metric = format!("{}_{suffix}", template.metric);
            row.value = value;
            out.push(row);
        }
    }
    Ok(out)
}

/// The winning temperature for one hyperparameter setting.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaChoice {
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub lambda: Option<f64>,
    pub n: Option<usize>,
    pub beta: f64,
    /// Mean metric over the final 20% of recorded policy updates.
    pub asymptotic_mean: f64,
    /// Mean metric at the last recorded step.
    pub final_mean: f64,
}

/// Pick, per (alpha or eta, lambda, N) setting, the temperature whose mean
/// metric over the final 20% of policy-update steps is highest. Ties go to
/// the larger final-step mean, then to the smaller temperature. Expects raw
/// per-trial rows where the temperature column is filled.
pub fn select_best_beta(rows: &[ResultRow]) -> Result<Vec<BetaChoice>> {
    type Fields = (Option<f64>, Option<f64>, Option<f64>, Option<usize>);
    type StepValues = BTreeMap<usize, Vec<f64>>;
    #[allow(clippy::type_complexity)]
    let mut settings: BTreeMap<
        (Option<u64>, Option<u64>, Option<u64>, Option<usize>),
        (Fields, BTreeMap<u64, (f64, StepValues)>),
    > = BTreeMap::new();
    for row in rows {
        let Some(beta) = row.beta else {
            bail!("row with metric {} is missing the temperature column", row.metric);
        };
        let Some(step) = row.step else {
            bail!("row with metric {} is missing the step column", row.metric);
        };
        settings
            .entry((
                row.alpha.map(ord_bits),
                row.eta.map(ord_bits),
                row.lambda.map(ord_bits),
                row.n,
            ))
            .or_insert_with(|| ((row.alpha, row.eta, row.lambda, row.n), BTreeMap::new()))
            .1
            .entry(ord_bits(beta))
            .or_insert_with(|| (beta, BTreeMap::new()))
            .1
            .entry(step)
            .or_default()
            .push(row.value);
    }
    if settings.is_empty() {
        bail!("no rows to select a temperature from");
    }

    let mut choices = Vec::new();
    for (_, (fields, betas)) in settings {
        let mut best: Option<BetaChoice> = None;
        for (_, (beta, steps)) in betas {
            // Step 0 is the pre-update baseline; updates are the rest.
            let update_steps: Vec<usize> = steps.keys().copied().filter(|s| *s > 0).collect();
            if update_steps.is_empty() {
                bail!("temperature {beta} has no post-update rows");
            }
            let tail = (update_steps.len() as f64 * 0.2).ceil().max(1.0) as usize;
            let tail_steps = &update_steps[update_steps.len() - tail..];
            let asym =
                mean(&tail_steps.iter().map(|s| mean(&steps[s])).collect::<Vec<f64>>());
            let last = *update_steps.last().expect("nonempty");
            let final_mean = mean(&steps[&last]);
            let better = match &best {
                None => true,
                Some(b) => {
                    asym > b.asymptotic_mean
                        || (asym == b.asymptotic_mean && final_mean > b.final_mean)
                        || (asym == b.asymptotic_mean
                            && final_mean == b.final_mean
                            && beta < b.beta)
                }
            };
            if better {
                best = Some(BetaChoice {
                    alpha: fields.0,
                    eta: fields.1,
                    lambda: fields.2,
                    n: fields.3,
                    beta,
                    asymptotic_mean: asym,
                    final_mean,
                });
            }
        }
        choices.push(best.expect("at least one temperature per setting"));
    }
    Ok(choices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(beta: f64, trial: usize, step: usize, value: f64) -> ResultRow {
        ResultRow {
            experiment: "frozenlake-control".into(),
            env: Some("frozenlake8x8".into()),
            alpha: Some(0.999),
            lambda: Some(0.0),
            eta: None,
            beta: Some(beta),
            sigma: None,
            n: Some(250),
            trial: Some(trial),
            step: Some(step),
            metric: "success_probability".into(),
            value,
        }
    }

    #[test]
    fn summary_statistics_match_hand_values() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((stderr(&[1.0, 2.0, 3.0]) - 1.0 / 3.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(stderr(&[5.0]), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        // Interpolated percentiles of 0..=10: position q * 10.
        let vals: Vec<f64> = (0..=10).map(f64::from).collect();
        assert!((quantile(&vals, 0.025) - 0.25).abs() < 1e-12);
        assert!((quantile(&vals, 0.975) - 9.75).abs() < 1e-12);
    }

    #[test]
    fn summarize_groups_by_hyperparameters_and_step() {
        let rows = vec![row(1.0, 0, 5, 0.2), row(1.0, 1, 5, 0.4), row(2.0, 0, 5, 0.9)];
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.len(), 10);
        let m = summary
            .iter()
            .find(|r| r.metric == "success_probability_mean" && r.beta == Some(1.0))
            .unwrap();
        assert!((m.value - 0.3).abs() < 1e-15);
        assert_eq!(m.trial, None);
        let med = summary
            .iter()
            .find(|r| r.metric == "success_probability_median" && r.beta == Some(2.0))
            .unwrap();
        assert_eq!(med.value, 0.9);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn single_trial_summary_collapses_to_the_value() {
        let summary = summarize(&[row(1.0, 0, 5, 0.7)]).unwrap();
        for r in &summary {
            if r.metric.ends_with("_stderr") {
                assert_eq!(r.value, 0.0);
            } else {
                assert_eq!(r.value, 0.7);
            }
        }
    }

    #[test]
    fn best_beta_uses_final_fifth_then_tie_breaks() {
        // Two temperatures, five update steps each: beta 1 is better late.
        let mut rows = Vec::new();
        for (beta, tail_value) in [(1.0, 0.8), (2.0, 0.6)] {
            for trial in 0..3 {
                rows.push(row(beta, trial, 0, 0.0));
                for step in 1..=5 {
                    let v = if step == 5 { tail_value } else { 0.9 - 0.1 * beta };
                    rows.push(row(beta, trial, step * 100, v));
                }
            }
        }
        let choice = select_best_beta(&rows).unwrap();
        assert_eq!(choice.len(), 1);
        assert_eq!(choice[0].beta, 1.0);
        assert!((choice[0].asymptotic_mean - 0.8).abs() < 1e-12);

        // Exact tie on both criteria: the smaller temperature wins.
        let tied: Vec<ResultRow> = [0.5, 5.0]
            .into_iter()
            .flat_map(|beta| (1..=5).map(move |s| row(beta, 0, s * 100, 0.5)))
            .collect();
        let choice = select_best_beta(&tied).unwrap();
        assert_eq!(choice[0].beta, 0.5);
    }

    #[test]
    fn best_beta_rejects_malformed_rows() {
        let mut bad = row(1.0, 0, 5, 0.5);
        bad.beta = None;
        assert!(select_best_beta(&[bad]).is_err());
        assert!(select_best_beta(&[]).is_err());
        // Only a baseline row: no updates to judge.
        assert!(select_best_beta(&[row(1.0, 0, 0, 0.0)]).is_err());
    }
}
