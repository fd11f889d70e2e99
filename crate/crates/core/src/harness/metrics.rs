use std::io::Write;
use std::path::Path;

use serde_json::json;

use super::runner::{AblationResult, GridResult, Spread};
use super::train::RunRecord;
use super::{HarnessError, SCHEMA_VERSION};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVALUATIONS_FILE: &str = "evaluations.csv";
pub const RECORD_FILE: &str = "run.json";

fn csv_error(e: csv::Error) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e))
}

/// Writes a JSON header line followed by a CSV table.
fn write_table(
    path: &Path,
    header: serde_json::Value,
    columns: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), HarnessError> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &header).expect("header serialises");
    out.push(b'\n');
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(columns).map_err(csv_error)?;
        for r in rows {
            w.write_record(&r).map_err(csv_error)?;
        }
        w.flush()?;
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Shortest round-trip form, with an exponent for very small or large values.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Writes `metrics.csv` (one row per step), `evaluations.csv` (one row per
/// epoch) and `run.json` into `dir`.
///
/// Step columns: `step, epoch, lr_multiplier, train_loss, train_error`,
/// then `mean_residual, norm_residual` when constraints are active, then
/// `grad_norm_0 .. grad_norm_{L-1}`.
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let constrained = record
        .steps
        .first()
        .is_some_and(|s| s.mean_residual.is_some());
    let layers = record.config.model.depth;
    let mut columns: Vec<String> = [
        "step",
        "epoch",
        "lr_multiplier",
        "train_loss",
        "train_error",
    ]
    .map(String::from)
    .to_vec();
    if constrained {
        columns.extend(["mean_residual".to_string(), "norm_residual".to_string()]);
    }
    columns.extend((0..layers).map(|l| format!("grad_norm_{l}")));
    let header = |table: &str, columns: &[String]| {
        json!({
            "schema_version": SCHEMA_VERSION,
            "table": table,
            "config_hash": record.config_hash,
            "optimizer": record.optimizer,
            "columns": columns,
        })
    };
    let rows = record.steps.iter().map(|s| {
        let mut r = vec![
            s.step.to_string(),
            s.epoch.to_string(),
            num(s.lr_multiplier),
            num(s.train_loss),
            num(s.train_error),
        ];
        if constrained {
            r.push(opt(s.mean_residual));
            r.push(opt(s.norm_residual));
        }
        r.extend(s.grad_norms.iter().map(|&g| num(g)));
        r
    });
    write_table(
        &dir.join(METRICS_FILE),
        header("steps", &columns),
        &columns,
        rows,
    )?;

    let columns: Vec<String> = [
        "epoch",
        "train_loss",
        "train_error",
        "validation_loss",
        "validation_error",
        "test_loss",
        "test_error",
    ]
    .map(String::from)
    .to_vec();
    let rows = record.evaluations.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            num(e.train_loss),
            num(e.train_error),
            num(e.validation_loss),
            num(e.validation_error),
            num(e.test_loss),
            num(e.test_error),
        ]
    });
    write_table(
        &dir.join(EVALUATIONS_FILE),
        header("evaluations", &columns),
        &columns,
        rows,
    )?;

    let json = serde_json::to_vec_pretty(record).expect("record serialises");
    std::fs::write(dir.join(RECORD_FILE), json)?;
    Ok(())
}

fn spread_cells(s: &Option<Spread>) -> [String; 3] {
    match s {
        Some(s) => [num(s.mean), num(s.min), num(s.max)],
        None => Default::default(),
    }
}

/// One row per toggle pair with mean, min and max of the final metrics over
/// completed repeats.
pub fn write_ablation_csv(
    path: &Path,
    result: &AblationResult,
    config_hash: &str,
) -> Result<(), HarnessError> {
    let mut columns: Vec<String> = ["constrain_mean", "constrain_norm", "runs", "failed"]
        .map(String::from)
        .to_vec();
    for m in [
        "final_train_loss",
        "final_train_error",
        "final_validation_error",
    ] {
        for s in ["mean", "min", "max"] {
            columns.push(format!("{m}_{s}"));
        }
    }
    let header = json!({
        "schema_version": SCHEMA_VERSION,
        "table": "ablation",
        "config_hash": config_hash,
        "columns": columns,
    });
    let rows = result.table.iter().map(|r| {
        let mut v = vec![
            r.constrain_mean.to_string(),
            r.constrain_norm.to_string(),
            r.runs.to_string(),
            r.failed.to_string(),
        ];
        for s in [
            &r.final_train_loss,
            &r.final_train_error,
            &r.final_validation_error,
        ] {
            v.extend(spread_cells(s));
        }
        v
    });
    write_table(path, header, &columns, rows)
}

/// One row per learning rate; `selected` marks the chosen cell.
pub fn write_grid_csv(
    path: &Path,
    result: &GridResult,
    config_hash: &str,
) -> Result<(), HarnessError> {
    let columns: Vec<String> = [
        "lr",
        "status",
        "final_train_loss",
        "final_train_error",
        "final_validation_error",
        "final_test_error",
        "selected",
    ]
    .map(String::from)
    .to_vec();
    let header = json!({
        "schema_version": SCHEMA_VERSION,
        "table": "grid",
        "config_hash": config_hash,
        "columns": columns,
    });
    let rows = result.cells.iter().enumerate().map(|(i, c)| {
        let s = &c.record.summary;
        vec![
            num(c.lr),
            if c.record.status.is_completed() {
                "completed"
            } else {
                "failed"
            }
            .to_string(),
            num(s.final_train_loss),
            num(s.final_train_error),
            num(s.final_validation_error),
            num(s.final_test_error),
            (result.best == Some(i)).to_string(),
        ]
    });
    write_table(path, header, &columns, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::train::{tests::blobs_config, train};

    #[test]
    fn metrics_have_json_header_and_fixed_columns() {
        let r = train(&blobs_config(1), Path::new(".")).unwrap().record;
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &r).unwrap();
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(header["config_hash"], r.config_hash.as_str());
        let cols = lines.next().unwrap();
        assert_eq!(
            cols,
            "step,epoch,lr_multiplier,train_loss,train_error,mean_residual,norm_residual,grad_norm_0,grad_norm_1"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), r.steps.len());
        let first: Vec<f64> = rows[0].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[3], r.steps[0].train_loss);
        assert!(rows.iter().all(|l| l.split(',').count() == 9));

        let back: RunRecord =
            serde_json::from_slice(&std::fs::read(dir.path().join(RECORD_FILE)).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
