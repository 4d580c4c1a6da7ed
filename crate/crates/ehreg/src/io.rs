//! CSV and JSON file formats: datasets, retained draws, summaries, and
//! truth sidecars. All writes go through a temp-file-then-rename so
//! re-running a command replaces outputs atomically.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Summary;
use crate::model::{ChainOutput, Dataset, RandomEffect};

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::domain("output path has no file name"))?
        .to_string_lossy()
        .into_owned();
    tmp.set_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// A dataset CSV as parsed: response, named covariate columns, and the
/// optional grouping / coordinate columns.
#[derive(Clone, Debug)]
pub struct ParsedData {
    pub y: DVector<f64>,
    pub covariates: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    pub groups: Option<Vec<usize>>,
    pub coords: Option<Vec<[f64; 2]>>,
}

impl ParsedData {
    /// Assemble a model dataset. `intercept` prepends a column of ones.
    pub fn dataset(&self, intercept: bool) -> Dataset {
        let n = self.y.len();
        let p = self.covariates.ncols();
        let x = if intercept {
            let mut m = DMatrix::zeros(n, p + 1);
            m.column_mut(0).fill(1.0);
            m.view_mut((0, 1), (n, p)).copy_from(&self.covariates);
            m
        } else {
            self.covariates.clone()
        };
        let mut d = Dataset::new(self.y.clone(), x);
        if let Some(groups) = &self.groups {
            let m = groups.iter().max().map_or(0, |&g| g + 1);
            d.effect = RandomEffect::Intercept {
                groups: groups.clone(),
                m,
            };
        } else if let Some(coords) = &self.coords {
            d.effect = RandomEffect::Spatial {
                coords: coords.clone(),
            };
        }
        d
    }
}

/// Read a headered CSV. Columns named in `exclude` are dropped; the
/// response, group, and coordinate columns are pulled out by name and every
/// remaining column becomes a covariate.
pub fn read_dataset_csv(
    path: &Path,
    response: &str,
    group_col: Option<&str>,
    coord_cols: Option<(&str, &str)>,
    exclude: &[String],
) -> Result<ParsedData> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation {
                violations: vec![format!("column '{name}' not found in {}", path.display())],
            })
    };
    let y_idx = find(response)?;
    let group_idx = group_col.map(find).transpose()?;
    let coord_idx = match coord_cols {
        Some((a, b)) => Some((find(a)?, find(b)?)),
        None => None,
    };
    let mut special: Vec<usize> = vec![y_idx];
    if let Some(g) = group_idx {
        special.push(g);
    }
    if let Some((a, b)) = coord_idx {
        special.push(a);
        special.push(b);
    }
    let cov_idx: Vec<usize> = (0..headers.len())
        .filter(|i| !special.contains(i) && !exclude.contains(&headers[*i]))
        .collect();

    let mut y = Vec::new();
    let mut covs: Vec<f64> = Vec::new();
    let mut groups: Vec<usize> = Vec::new();
    let mut coords: Vec<[f64; 2]> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Validation {
                    violations: vec![format!(
                        "non-numeric value in column '{}' of {}",
                        headers[i],
                        path.display()
                    )],
                })
        };
        y.push(parse(y_idx)?);
        for &i in &cov_idx {
            covs.push(parse(i)?);
        }
        if let Some(g) = group_idx {
            groups.push(parse(g)? as usize);
        }
        if let Some((a, b)) = coord_idx {
            coords.push([parse(a)?, parse(b)?]);
        }
    }
    let n = y.len();
    let p = cov_idx.len();
    // Group labels may be arbitrary integers: re-index densely.
    let groups = if groups.is_empty() {
        None
    } else {
        let mut labels: Vec<usize> = groups.clone();
        labels.sort_unstable();
        labels.dedup();
        Some(
            groups
                .iter()
                .map(|g| labels.binary_search(g).expect("label present"))
                .collect(),
        )
    };
    Ok(ParsedData {
        y: DVector::from_vec(y),
        covariates: DMatrix::from_row_iterator(n, p, covs),
        covariate_names: cov_idx.iter().map(|&i| headers[i].clone()).collect(),
        groups,
        coords: (!coords.is_empty()).then_some(coords),
    })
}

/// Write a simulated dataset: response, covariates x1..xp, the outlier
/// indicator, and optional group / coordinate columns.
pub fn write_dataset_csv(
    path: &Path,
    y: &DVector<f64>,
    covariates: &DMatrix<f64>,
    outlier: &[bool],
    groups: Option<&[usize]>,
    coords: Option<&[[f64; 2]]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = covariates.ncols();
    let mut header = vec!["y".to_string()];
    header.extend((1..=p).map(|k| format!("x{k}")));
    header.push("outlier".into());
    if groups.is_some() {
        header.push("group".into());
    }
    if coords.is_some() {
        header.push("coord_x".into());
        header.push("coord_y".into());
    }
    w.write_record(&header)?;
    for i in 0..y.len() {
        let mut row = vec![format!("{:.17e}", y[i])];
        for k in 0..p {
            row.push(format!("{:.17e}", covariates[(i, k)]));
        }
        row.push(u8::from(outlier[i]).to_string());
        if let Some(g) = groups {
            row.push(g[i].to_string());
        }
        if let Some(c) = coords {
            row.push(format!("{:.17e}", c[i][0]));
            row.push(format!("{:.17e}", c[i][1]));
        }
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::numeric(e.to_string()))?;
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// Draws and summaries
// ---------------------------------------------------------------------------

pub fn draws_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_draws.csv"))
}

pub fn summary_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_summary.json"))
}

/// One row per retained draw, one column per recorded parameter; the column
/// order matches the summary JSON.
pub fn write_draws_csv(path: &Path, out: &ChainOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(out.column_names())?;
    let rows = out.retained();
    for r in 0..rows {
        let mut row: Vec<String> = Vec::new();
        for mat in out.draws.values() {
            for j in 0..mat.ncols() {
                row.push(format!("{:.17e}", mat[(r, j)]));
            }
        }
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::numeric(e.to_string()))?;
    atomic_write(path, &bytes)
}

/// Rebuild a chain from a draws CSV. Columns group back into blocks by the
/// `name_<index>` convention.
pub fn read_draws_csv(path: &Path) -> Result<ChainOutput> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: Option<Vec<f64>> = record.iter().map(|v| v.trim().parse().ok()).collect();
        rows.push(row.ok_or_else(|| Error::Validation {
            violations: vec![format!("non-numeric draw value in {}", path.display())],
        })?);
    }
    let n_rows = rows.len();

    // Group columns into blocks by stripping a trailing _<integer>.
    let mut blocks: IndexMap<String, Vec<usize>> = IndexMap::new();
    for (idx, name) in headers.iter().enumerate() {
        let block = match name.rsplit_once('_') {
            Some((prefix, suffix)) if suffix.chars().all(|c| c.is_ascii_digit()) => {
                prefix.to_string()
            }
            _ => name.clone(),
        };
        blocks.entry(block).or_default().push(idx);
    }
    let mut draws: IndexMap<String, DMatrix<f64>> = IndexMap::new();
    for (name, cols) in blocks {
        let mut m = DMatrix::zeros(n_rows, cols.len());
        for (j, &c) in cols.iter().enumerate() {
            for r in 0..n_rows {
                m[(r, j)] = rows[r][c];
            }
        }
        draws.insert(name, m);
    }
    Ok(ChainOutput {
        draws,
        z_mean: None,
        n_iter: 0,
        burn_in: 0,
        thin: 1,
        seed: 0,
        stream: 0,
        model_tag: String::new(),
        runtime_secs: 0.0,
    })
}

/// Fit summary written next to the draws.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryFile {
    pub model: String,
    pub seed: u64,
    pub stream: u64,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub retained: usize,
    pub runtime_secs: f64,
    /// Column order of the draws CSV.
    pub columns: Vec<String>,
    /// Covariate columns the design was built from, in order.
    pub covariates: Vec<String>,
    /// Whether a leading intercept column was prepended to the design.
    pub intercept_column: bool,
    pub parameters: Vec<ParameterSummary>,
    pub posterior_outlier_probability: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
    pub inefficiency: f64,
}

pub fn build_summary_file(
    out: &ChainOutput,
    summary: &Summary,
    covariates: Vec<String>,
    intercept_column: bool,
    warnings: Vec<String>,
) -> SummaryFile {
    SummaryFile {
        model: out.model_tag.clone(),
        seed: out.seed,
        stream: out.stream,
        iters: out.n_iter,
        burn_in: out.burn_in,
        thin: out.thin,
        retained: out.retained(),
        runtime_secs: out.runtime_secs,
        columns: out.column_names(),
        covariates,
        intercept_column,
        parameters: summary
            .names
            .iter()
            .enumerate()
            .map(|(k, name)| ParameterSummary {
                name: name.clone(),
                mean: summary.mean[k],
                lower95: summary.lower[k],
                upper95: summary.upper[k],
                inefficiency: summary.if_factor[k],
            })
            .collect(),
        posterior_outlier_probability: out
            .z_mean
            .as_ref()
            .map(|z| z.iter().copied().collect()),
        warnings,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::McmcConfig;
    use crate::sampler::run_chain_normal;
    use crate::sim::{simulate_regression, RegressionDesign, Scenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let design = RegressionDesign::standard(40, 4);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let sim = simulate_regression(&design, &Scenario { omega: 0.1, mu: 10.0 }, &mut rng);
        write_dataset_csv(&path, &sim.y, &sim.covariates, &sim.outlier, None, None).unwrap();

        let parsed = read_dataset_csv(&path, "y", None, None, &["outlier".into()]).unwrap();
        assert_eq!(parsed.covariate_names, vec!["x1", "x2", "x3", "x4"]);
        assert_eq!(parsed.y.len(), 40);
        assert!((parsed.y[7] - sim.y[7]).abs() < 1e-15);
        assert!((parsed.covariates[(3, 2)] - sim.covariates[(3, 2)]).abs() < 1e-15);
    }

    #[test]
    fn draws_round_trip() {
        let design = RegressionDesign::standard(60, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let sim = simulate_regression(&design, &Scenario::clean(), &mut rng);
        let data = sim.dataset_with_intercept();
        let mcmc = McmcConfig {
            iters: 300,
            burn_in: 100,
            ..McmcConfig::default()
        };
        let out = run_chain_normal(&data, &Default::default(), &mcmc).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x_draws.csv");
        write_draws_csv(&path, &out).unwrap();
        let back = read_draws_csv(&path).unwrap();
        assert_eq!(back.retained(), out.retained());
        assert_eq!(back.column_names(), out.column_names());
        let a = out.block("beta").unwrap();
        let b = back.block("beta").unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn grouped_csv_reindexes_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let text = "y,x1,group\n1.0,0.5,10\n2.0,0.2,30\n3.0,0.1,10\n";
        fs::write(&path, text).unwrap();
        let parsed = read_dataset_csv(&path, "y", Some("group"), None, &[]).unwrap();
        assert_eq!(parsed.groups, Some(vec![0, 1, 0]));
    }

    #[test]
    fn missing_column_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path, "y", None, None, &[]),
            Err(Error::Validation { .. })
        ));
    }
}
