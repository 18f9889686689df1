//! CSV result records with a fixed column order, shortest round-trip
//! hyperparameter formatting, 17-significant-digit metric values, and an
//! exact parser so emitted files can be read back losslessly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const CSV_HEADER: &str =
    "experiment,env,alpha,lambda,eta,beta,sigma,N,trial,step,metric,value";

/// One experiment measurement. Hyperparameter columns that do not apply to
/// the producing run stay empty in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub env: Option<String>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub n: Option<usize>,
    pub trial: Option<usize>,
    pub step: Option<usize>,
    pub metric: String,
    pub value: f64,
}

fn check_label(label: &str, what: &str) -> Result<()> {
    if label.is_empty() {
        bail!("{what} must not be empty");
    }
    if label.contains(',') || label.contains('\n') || label.contains('\r') {
        bail!("{what} {label:?} must not contain commas or line breaks");
    }
    Ok(())
}

fn opt_f64(v: &Option<f64>) -> String {
    // Display prints the shortest decimal that parses back to the same bits.
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn opt_usize(v: &Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRow {
    fn to_csv_line(&self) -> Result<String> {
        check_label(&self.experiment, "experiment")?;
        check_label(&self.metric, "metric")?;
        if let Some(env) = &self.env {
            check_label(env, "env")?;
        }
        if !self.value.is_finite() {
            bail!("metric {} produced a non-finite value", self.metric);
        }
        let mut line = String::new();
        write!(
            line,
            "{},{},{},{},{},{},{},{},{},{},{},{:.16e}",
            self.experiment,
            self.env.as_deref().unwrap_or(""),
            opt_f64(&self.alpha),
            opt_f64(&self.lambda),
            opt_f64(&self.eta),
            opt_f64(&self.beta),
            opt_f64(&self.sigma),
            opt_usize(&self.n),
            opt_usize(&self.trial),
            opt_usize(&self.step),
            self.metric,
            self.value,
        )?;
        Ok(line)
    }
}

/// Render rows as a CSV document with a trailing newline.
pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line()?);
        out.push('\n');
    }
    Ok(out)
}

/// Write rows to `path`, creating parent directories as needed.
pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
    }
    let text = rows_to_csv(rows)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_opt_f64(field: &str, col: &str, line_no: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .with_context(|| format!("line {line_no}: column {col} is not a number: {field:?}"))
}

fn parse_opt_usize(field: &str, col: &str, line_no: usize) -> Result<Option<usize>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<usize>()
        .map(Some)
        .with_context(|| format!("line {line_no}: column {col} is not an integer: {field:?}"))
}

/// Parse a CSV document produced by [`rows_to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => bail!("unexpected CSV header: {header:?}"),
        None => bail!("empty CSV document"),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            bail!("line {line_no}: expected 12 columns, found {}", fields.len());
        }
        rows.push(ResultRow {
            experiment: fields[0].to_string(),
            env: (!fields[1].is_empty()).then(|| fields[1].to_string()),
            alpha: parse_opt_f64(fields[2], "alpha", line_no)?,
            lambda: parse_opt_f64(fields[3], "lambda", line_no)?,
            eta: parse_opt_f64(fields[4], "eta", line_no)?,
            beta: parse_opt_f64(fields[5], "beta", line_no)?,
            sigma: parse_opt_f64(fields[6], "sigma", line_no)?,
            n: parse_opt_usize(fields[7], "N", line_no)?,
            trial: parse_opt_usize(fields[8], "trial", line_no)?,
            step: parse_opt_usize(fields[9], "step", line_no)?,
            metric: fields[10].to_string(),
            value: fields[11]
                .parse::<f64>()
                .with_context(|| format!("line {line_no}: bad value {:?}", fields[11]))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> ResultRow {
        ResultRow {
            experiment: "dp-noise".into(),
            env: Some("frozenlake8x8".into()),
            alpha: Some(0.99),
            lambda: Some(0.8),
            eta: None,
            beta: None,
            sigma: Some(0.4),
            n: None,
            trial: Some(3),
            step: Some(17),
            metric: "nrmse".into(),
            value: 0.123456789012345678,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![
            sample_row(),
            ResultRow {
                experiment: "error-decay".into(),
                env: None,
                alpha: Some(1.0),
                lambda: None,
                eta: None,
                beta: None,
                sigma: None,
                n: None,
                trial: None,
                step: Some(0),
                metric: "decay_coefficient".into(),
                value: -3.25e-17,
            },
        ];
        let text = rows_to_csv(&rows).unwrap();
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn value_column_has_seventeen_significant_digits() {
        let text = rows_to_csv(&[sample_row()]).unwrap();
        let line = text.lines().nth(1).unwrap();
        let value_field = line.rsplit(',').next().unwrap();
        let digits: usize = value_field
            .trim_start_matches('-')
            .chars()
            .take_while(|c| *c != 'e')
            .filter(|c| c.is_ascii_digit())
            .count();
        assert_eq!(digits, 17, "value field {value_field:?}");
    }

    #[test]
    fn header_and_shape_are_validated() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("a,b,c\n").is_err());
        let bad_width = format!("{CSV_HEADER}\nonly,three,fields\n");
        assert!(parse_csv(&bad_width).is_err());
        let bad_number = format!("{CSV_HEADER}\ne,,x,,,,,,,,m,1.0e0\n");
        assert!(parse_csv(&bad_number).is_err());
    }

    #[test]
    fn labels_with_commas_are_rejected() {
        let mut row = sample_row();
        row.metric = "a,b".into();
        assert!(rows_to_csv(&[row]).is_err());
        let mut row = sample_row();
        row.value = f64::NAN;
        assert!(rows_to_csv(&[row]).is_err());
    }
}
