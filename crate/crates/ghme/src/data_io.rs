//! CSV ingestion and emission for longitudinal datasets.
//!
//! Dialect: comma-separated, '.' decimal, UTF-8, mandatory header. Rows
//! belonging to one individual are grouped by the id column (order of first
//! appearance is kept); unbalanced group sizes are the normal case.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::harness::ColumnRoles;
use crate::model::{IndividualRecord, LongitudinalDataset, ModelError};

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path} row {row}: cannot parse '{value}' in column '{column}' as a number")]
    BadNumber { path: String, row: usize, column: String, value: String },
    #[error("{path}: file has no data rows")]
    Empty { path: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn read_dataset_csv(
    path: impl AsRef<Path>,
    roles: &ColumnRoles,
) -> Result<LongitudinalDataset, DataIoError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
    let headers = rdr
        .headers()
        .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?
        .clone();
    let col = |name: &str| -> Result<usize, DataIoError> {
        headers.iter().position(|h| h == name).ok_or_else(|| DataIoError::MissingColumn {
            path: pstr.clone(),
            column: name.to_string(),
        })
    };
    let id_col = col(&roles.id)?;
    let y_col = col(&roles.y)?;
    let x_cols: Vec<usize> = roles.x.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let z_cols: Vec<usize> = roles.z.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let w_cols: Vec<usize> = roles.w.iter().map(|c| col(c)).collect::<Result<_, _>>()?;

    // group rows by id, keeping first-appearance order
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)>> =
        std::collections::HashMap::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
        let parse = |c: usize| -> Result<f64, DataIoError> {
            rec[c].trim().parse().map_err(|_| DataIoError::BadNumber {
                path: pstr.clone(),
                row: row_idx + 2,
                column: headers[c].to_string(),
                value: rec[c].to_string(),
            })
        };
        let id = rec[id_col].to_string();
        let y = parse(y_col)?;
        let x: Vec<f64> = x_cols.iter().map(|&c| parse(c)).collect::<Result<_, _>>()?;
        let z: Vec<f64> = z_cols.iter().map(|&c| parse(c)).collect::<Result<_, _>>()?;
        let w: Vec<f64> = w_cols.iter().map(|&c| parse(c)).collect::<Result<_, _>>()?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push((y, x, z, w));
    }
    if order.is_empty() {
        return Err(DataIoError::Empty { path: pstr });
    }
    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let rows = groups.remove(&id).unwrap();
        let n = rows.len();
        let y = DVector::from_fn(n, |j, _| rows[j].0);
        let x = DMatrix::from_fn(n, x_cols.len(), |j, k| rows[j].1[k]);
        let z = DMatrix::from_fn(n, z_cols.len(), |j, k| rows[j].2[k]);
        let w = DMatrix::from_fn(n, w_cols.len(), |j, k| rows[j].3[k]);
        records.push(IndividualRecord::new(id, y, x, z, w)?);
    }
    Ok(LongitudinalDataset::new(records)?)
}

/// Write a dataset with generic column names `id,y,x0..,z0..,w0..`.
pub fn write_dataset_csv(
    ds: &LongitudinalDataset,
    path: impl AsRef<Path>,
) -> Result<(), DataIoError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let mut w = csv::Writer::from_path(path)
        .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
    let (px, pz, pw) = ds.covariate_dims();
    let mut header = vec!["id".to_string(), "y".to_string()];
    header.extend((0..px).map(|k| format!("x{k}")));
    header.extend((0..pz).map(|k| format!("z{k}")));
    header.extend((0..pw).map(|k| format!("w{k}")));
    w.write_record(&header)
        .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
    for rec in ds.records() {
        for j in 0..rec.n_obs() {
            let mut row = vec![rec.id.clone(), rec.y[j].to_string()];
            row.extend((0..px).map(|k| rec.x[(j, k)].to_string()));
            row.extend((0..pz).map(|k| rec.z[(j, k)].to_string()));
            row.extend((0..pw).map(|k| rec.w[(j, k)].to_string()));
            w.write_record(&row)
                .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
        }
    }
    w.flush().map_err(|source| DataIoError::Io { path: pstr, source })?;
    Ok(())
}

/// Column roles matching [`write_dataset_csv`]'s generic layout.
pub fn generic_roles(px: usize, pz: usize, pw: usize) -> ColumnRoles {
    ColumnRoles {
        id: "id".into(),
        y: "y".into(),
        x: (0..px).map(|k| format!("x{k}")).collect(),
        z: (0..pz).map(|k| format!("z{k}")).collect(),
        w: (0..pw).map(|k| format!("w{k}")).collect(),
    }
}

/// Write the latent random effects next to a simulated dataset.
pub fn write_latent_csv(
    ids: &[String],
    v: &[f64],
    path: impl AsRef<Path>,
) -> Result<(), DataIoError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let mut w = csv::Writer::from_path(path)
        .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
    w.write_record(["id", "v"])
        .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
    for (id, vi) in ids.iter().zip(v) {
        w.write_record([id.clone(), vi.to_string()])
            .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
    }
    w.flush().map_err(|source| DataIoError::Io { path: pstr, source })?;
    Ok(())
}

pub fn read_latent_csv(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>, DataIoError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
    let mut out = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| DataIoError::Csv { path: pstr.clone(), source })?;
        let v: f64 = rec[1].trim().parse().map_err(|_| DataIoError::BadNumber {
            path: pstr.clone(),
            row: row_idx + 2,
            column: "v".into(),
            value: rec[1].to_string(),
        })?;
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_unbalanced_groups() {
        let dir = std::env::temp_dir().join("ghme_dataio_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        let recs = vec![
            IndividualRecord::new(
                "a",
                DVector::from_vec(vec![1.0, 2.0]),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.25, -1.0]),
                DMatrix::from_row_slice(2, 1, &[0.1, 0.2]),
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]),
            )
            .unwrap(),
            IndividualRecord::new(
                "b",
                DVector::from_vec(vec![-3.5]),
                DMatrix::from_row_slice(1, 2, &[0.0, 7.0]),
                DMatrix::from_row_slice(1, 1, &[0.9]),
                DMatrix::from_row_slice(1, 2, &[1.0, 3.0]),
            )
            .unwrap(),
        ];
        let ds = LongitudinalDataset::new(recs).unwrap();
        write_dataset_csv(&ds, &path).unwrap();
        let back = read_dataset_csv(&path, &generic_roles(2, 1, 2)).unwrap();
        assert_eq!(back.n_individuals(), 2);
        assert_eq!(back.records()[0].y, ds.records()[0].y);
        assert_eq!(back.records()[1].x, ds.records()[1].x);
        assert_eq!(back.records()[0].w, ds.records()[0].w);
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = std::env::temp_dir().join("ghme_dataio_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "id,y,x0\n1,2.0,3.0\n").unwrap();
        let roles = generic_roles(2, 1, 1);
        match read_dataset_csv(&path, &roles) {
            Err(DataIoError::MissingColumn { column, .. }) => assert_eq!(column, "x1"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_row_and_column() {
        let dir = std::env::temp_dir().join("ghme_dataio_test3");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad2.csv");
        std::fs::write(&path, "id,y,x0,z0,w0\n1,2.0,oops,0.1,1.0\n").unwrap();
        let roles = ColumnRoles {
            id: "id".into(),
            y: "y".into(),
            x: vec!["x0".into()],
            z: vec!["z0".into()],
            w: vec!["w0".into()],
        };
        match read_dataset_csv(&path, &roles) {
            Err(DataIoError::BadNumber { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x0");
            }
            other => panic!("expected BadNumber, got {other:?}"),
        }
    }
}
