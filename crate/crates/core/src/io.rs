//! CSV and JSON persistence for panels, truths and estimates.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Panel, SimTruth};

pub const B_FILE: &str = "b.csv";
pub const Y_OBS_FILE: &str = "y_obs.csv";
pub const Y_EFF_FILE: &str = "y_eff.csv";
pub const META_FILE: &str = "panel.json";

/// Covariate l (0-based) lives in x{l+1}.csv.
pub fn covariate_file(l: usize) -> String {
    format!("x{}.csv", l + 1)
}

/// Panel metadata stored next to the matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelMeta {
    pub d: usize,
    pub n: usize,
    pub r_x: usize,
    pub delta: f64,
}

/// Leading column of a matrix file.
#[derive(Debug, Clone, Copy)]
pub enum RowIndex<'a> {
    /// Time stamp t_j = j·delta.
    Time(f64),
    /// Row ids `{prefix}_{j+1}`.
    Id(&'a str),
}

/// Write a matrix with a header `t|id, col_1, …, col_k` and a leading index column.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, rows: RowIndex, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let first = match rows {
        RowIndex::Time(_) => "t".to_string(),
        RowIndex::Id(p) => p.to_string(),
    };
    w.write_record(std::iter::once(first).chain((1..=m.ncols()).map(|k| format!("{prefix}_{k}"))))?;
    for j in 0..m.nrows() {
        let key = match rows {
            RowIndex::Time(delta) => format!("{:?}", j as f64 * delta),
            RowIndex::Id(p) => format!("{p}_{}", j + 1),
        };
        // Debug formatting is the shortest representation that round-trips.
        w.write_record(std::iter::once(key).chain((0..m.ncols()).map(|k| format!("{:?}", m[(j, k)]))))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a matrix written by [`write_matrix`], dropping the index column.
/// Errors name the offending row and column of the file.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    if !path.exists() {
        return Err(Error::Input(format!("missing input file {}", path.display())));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let width = r.headers()?.len();
    if width < 2 {
        return Err(Error::Input(format!(
            "{}: expected an index column and at least one value column",
            path.display()
        )));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (j, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("{}: row {}: {e}", path.display(), j + 1)))?;
        if rec.len() != width {
            return Err(Error::Input(format!(
                "{}: row {} has {} columns, expected {width}",
                path.display(),
                j + 1,
                rec.len()
            )));
        }
        for (k, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Input(format!(
                    "{}: row {}, column {}: `{field}` is not a number",
                    path.display(),
                    j + 1,
                    k + 1
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_iterator(rows, width - 1, data))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::Input(format!("missing input file {}", path.display())));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Write a panel directory; returns the files written.
pub fn write_panel(dir: &Path, panel: &Panel) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let meta = PanelMeta {
        d: panel.d(),
        n: panel.n(),
        r_x: panel.r_x(),
        delta: panel.delta,
    };
    let p = dir.join(META_FILE);
    write_json(&p, &meta)?;
    files.push(p);
    let p = dir.join(B_FILE);
    write_matrix(&p, &panel.b, RowIndex::Time(panel.delta), "asset")?;
    files.push(p);
    for (l, x) in panel.x.iter().enumerate() {
        let p = dir.join(covariate_file(l));
        write_matrix(&p, x, RowIndex::Time(panel.delta), "asset")?;
        files.push(p);
    }
    for (name, m) in [(Y_OBS_FILE, &panel.y_obs), (Y_EFF_FILE, &panel.y_eff)] {
        if let Some(m) = m {
            let p = dir.join(name);
            write_matrix(&p, m, RowIndex::Time(panel.delta), "asset")?;
            files.push(p);
        }
    }
    Ok(files)
}

/// Read a panel directory written by [`write_panel`].
pub fn read_panel(dir: &Path) -> Result<Panel> {
    let meta: PanelMeta = read_json(&dir.join(META_FILE))?;
    let b = read_matrix(&dir.join(B_FILE))?;
    let x = (0..meta.r_x)
        .map(|l| {
            let p = dir.join(covariate_file(l));
            if !p.exists() {
                return Err(Error::Input(format!("missing covariate file {}", p.display())));
            }
            read_matrix(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let optional = |name: &str| -> Result<Option<DMatrix<f64>>> {
        let p = dir.join(name);
        if p.exists() {
            read_matrix(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    let panel = Panel {
        b,
        x,
        y_obs: optional(Y_OBS_FILE)?,
        y_eff: optional(Y_EFF_FILE)?,
        delta: meta.delta,
    };
    if panel.d() != meta.d || panel.n() != meta.n {
        return Err(Error::Input(format!(
            "{}: indicator matrix is {} × {}, metadata says {} × {}",
            dir.display(),
            panel.n() + 1,
            panel.d(),
            meta.n + 1,
            meta.d
        )));
    }
    panel.validate()?;
    Ok(panel)
}

/// Write the ground-truth paths and integrated matrices.
pub fn write_truth(dir: &Path, truth: &SimTruth) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let time = RowIndex::Time(truth.delta);
    let asset = RowIndex::Id("asset");
    let items: [(&str, &DMatrix<f64>, RowIndex, &str); 8] = [
        ("z.csv", &truth.z_path, time, "asset"),
        ("p.csv", &truth.p_path, time, "asset"),
        ("g.csv", &truth.g_path, time, "factor"),
        ("a.csv", &truth.a, asset, "covariate"),
        ("gamma.csv", &truth.gamma, asset, "factor"),
        ("sigma_idio.csv", &truth.sigma_idio, time, "asset"),
        ("sigma_c.csv", &truth.sigma_c, asset, "asset"),
        ("sigma_e.csv", &truth.sigma_e, asset, "asset"),
    ];
    for (name, m, rows, prefix) in items {
        let p = dir.join(name);
        write_matrix(&p, m, rows, prefix)?;
        files.push(p);
    }
    for (l, s) in truth.sigma_sys.iter().enumerate() {
        let p = dir.join(format!("sigma_sys{}.csv", l + 1));
        write_matrix(&p, s, time, "asset")?;
        files.push(p);
    }
    let p = dir.join("rho_star.csv");
    write_matrix(&p, &truth.rho_star, RowIndex::Id("asset"), "asset")?;
    files.push(p);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_world, SimConfig};

    #[test]
    fn matrix_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(4, 3, |j, k| (j as f64 + 0.1) / (k as f64 + 3.0) - 1e-17);
        let p = dir.path().join("m.csv");
        write_matrix(&p, &m, RowIndex::Time(0.5), "c").unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn bad_cell_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "t,a,b\n0,1,2\n1,3,oops\n").unwrap();
        let err = read_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("column 3"), "{err}");
        fs::write(&p, "t,a,b\n0,1,2\n1,3\n").unwrap();
        assert!(read_matrix(&p).is_err());
    }

    #[test]
    fn panel_roundtrip_and_missing_covariate() {
        let cfg = SimConfig {
            d: 4,
            n: 30,
            ..Default::default()
        };
        let (panel, truth) = simulate_world(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_panel(dir.path(), &panel).unwrap();
        write_truth(&dir.path().join("truth"), &truth).unwrap();
        let back = read_panel(dir.path()).unwrap();
        assert_eq!(back.b, panel.b);
        assert_eq!(back.x, panel.x);
        assert_eq!(back.y_obs, panel.y_obs);
        fs::remove_file(dir.path().join(covariate_file(0))).unwrap();
        let err = read_panel(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing covariate file"), "{err}");
    }
}
