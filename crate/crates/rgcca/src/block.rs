use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{JobSvd, SVDDC};

use crate::error::{Error, Result};

/// Thin singular value decomposition of a processed data matrix.
///
/// Only the right factor is kept around: the ellipsoid projection and the
/// constraint-matrix spectrum need `sigma` and `vt`, nothing downstream
/// needs the left singular vectors.
#[derive(Debug, Clone)]
pub struct SvdCache {
    /// Singular values in descending order, length `min(n, p)`.
    pub sigma: Array1<f64>,
    /// Right singular vectors, one per row, shape `(min(n, p), p)`.
    pub vt: Array2<f64>,
}

impl SvdCache {
    fn compute(data: &Array2<f64>) -> Result<Self> {
        let (_, sigma, vt) = data
            .svddc(JobSvd::Some)
            .map_err(|e| Error::Svd(e.to_string()))?;
        let vt = vt.ok_or_else(|| Error::Svd("backend returned no right factor".into()))?;
        Ok(SvdCache { sigma, vt })
    }
}

/// Column-wise transformation applied to a raw matrix.
///
/// `offset` and `scale` record what was actually subtracted and divided,
/// so the identical transformation can be replayed onto held-out rows.
#[derive(Debug, Clone)]
pub struct Preprocessing {
    pub centered: bool,
    pub scaled: bool,
    pub offset: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Preprocessing {
    /// Replay this transformation on new raw rows with the same columns.
    pub fn apply(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.offset.len() {
            return Err(Error::Shape {
                message: format!(
                    "preprocessing was fitted on {} columns, data has {}",
                    self.offset.len(),
                    raw.ncols()
                ),
            });
        }
        let mut out = raw.to_owned();
        out -= &self.offset;
        out /= &self.scale;
        Ok(out)
    }
}

/// One data block: the processed matrix together with its SVD and the
/// preprocessing that produced it.
#[derive(Debug, Clone)]
pub struct Block {
    data: Array2<f64>,
    svd: SvdCache,
    preprocessing: Preprocessing,
}

impl Block {
    /// Centre and/or scale the columns of `raw` and cache the SVD of the
    /// result.
    ///
    /// Scaling divides by the sample standard deviation about the column
    /// mean (the `1/(n-1)` convention); a constant column is an error when
    /// scaling is requested.
    pub fn preprocess(raw: ArrayView2<f64>, center: bool, scale: bool) -> Result<Block> {
        let (n, p) = raw.dim();
        if n < 2 {
            return Err(Error::Config {
                message: format!("a block needs at least two rows, got {n}"),
            });
        }
        if p == 0 {
            return Err(Error::Config {
                message: "a block needs at least one column".into(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "raw block data".into(),
            });
        }

        let means = raw.mean_axis(Axis(0)).expect("n >= 2");
        let offset = if center {
            means.clone()
        } else {
            Array1::zeros(p)
        };
        let scale_by = if scale {
            let mut sd = Array1::zeros(p);
            for (j, col) in raw.axis_iter(Axis(1)).enumerate() {
                let ss: f64 = col.iter().map(|v| (v - means[j]).powi(2)).sum();
                let s = (ss / (n - 1) as f64).sqrt();
                if s == 0.0 {
                    return Err(Error::Config {
                        message: format!("column {j} has zero variance, cannot scale"),
                    });
                }
                sd[j] = s;
            }
            sd
        } else {
            Array1::ones(p)
        };

        let mut data = raw.to_owned();
        data -= &offset;
        data /= &scale_by;

        let preprocessing = Preprocessing {
            centered: center,
            scaled: scale,
            offset,
            scale: scale_by,
        };
        Block::with_data(data, preprocessing)
    }

    /// Wrap an already-processed matrix, recomputing the SVD cache.  Used
    /// by deflation, which transforms the data in place.
    pub(crate) fn with_data(data: Array2<f64>, preprocessing: Preprocessing) -> Result<Block> {
        let svd = SvdCache::compute(&data)?;
        Ok(Block {
            data,
            svd,
            preprocessing,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn svd(&self) -> &SvdCache {
        &self.svd
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    /// Number of rows (shared across blocks in a fit).
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of variables in this block.
    pub fn p(&self) -> usize {
        self.data.ncols()
    }
}

/// Read a numeric matrix from a CSV file with a mandatory header row.
///
/// Returns the raw values and the column names.  Every field must parse as
/// a decimal-point float; empty fields and ragged rows are errors.
pub fn read_matrix_csv(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: display.clone(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => Error::Parse {
                path: display.clone(),
                line: 1,
                message: e.to_string(),
            },
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: display.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let p = headers.len();

    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        if record.len() != p {
            return Err(Error::Parse {
                path: display.clone(),
                line,
                message: format!("expected {} fields, found {}", p, record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(Error::Parse {
                    path: display.clone(),
                    line,
                    message: format!("column {:?} is empty (missing values are not supported)", headers[j]),
                });
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: "no data rows after the header".into(),
        });
    }

    let matrix = Array2::from_shape_vec((n, p), values).expect("row-major fill");
    Ok((matrix, headers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn centering_removes_column_means() {
        let raw = array![[1.0, 10.0], [3.0, 30.0], [5.0, 20.0]];
        let block = Block::preprocess(raw.view(), true, false).unwrap();
        for col in block.data().axis_iter(Axis(1)) {
            assert_abs_diff_eq!(col.sum(), 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(block.preprocessing().offset[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(block.preprocessing().offset[1], 20.0, epsilon = 1e-12);
    }

    #[test]
    fn scaling_gives_unit_variance_columns() {
        let raw = array![[1.0, -4.0], [3.0, 0.0], [5.0, 4.0], [7.0, 8.0]];
        let block = Block::preprocess(raw.view(), true, true).unwrap();
        let n = block.n() as f64;
        for col in block.data().axis_iter(Axis(1)) {
            let var: f64 = col.iter().map(|v| v * v).sum::<f64>() / (n - 1.0);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scaling_a_constant_column_fails() {
        let raw = array![[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]];
        let err = Block::preprocess(raw.view(), true, true).unwrap_err();
        assert!(err.to_string().contains("zero variance"));
    }

    #[test]
    fn svd_cache_reconstructs_the_data() {
        let raw = array![
            [0.3, -1.2, 0.5, 2.0],
            [1.1, 0.4, -0.7, 0.2],
            [-0.9, 0.8, 1.3, -1.5]
        ];
        let block = Block::preprocess(raw.view(), true, false).unwrap();
        let svd = block.svd();
        // X = U S Vt, so X v_i = sigma_i u_i and ||X v_i|| = sigma_i.
        for (i, v) in svd.vt.axis_iter(Axis(0)).enumerate() {
            let xv = block.data().dot(&v);
            let norm = xv.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, svd.sigma[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn replaying_preprocessing_matches_training_transform() {
        let raw = array![[1.0, -4.0], [3.0, 0.0], [5.0, 4.0], [7.0, 8.0]];
        let block = Block::preprocess(raw.view(), true, true).unwrap();
        let replayed = block.preprocessing().apply(raw.view()).unwrap();
        assert_abs_diff_eq!(replayed, block.data(), epsilon = 1e-12);
    }

    #[test]
    fn csv_reader_round_trips_and_rejects_bad_input() {
        let dir = std::env::temp_dir().join(format!("rgcca-block-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        let good = dir.join("good.csv");
        std::fs::write(&good, "a,b,c\n1.0,2.5,-3\n4,5.5,6e-1\n").unwrap();
        let (m, names) = read_matrix_csv(&good).unwrap();
        assert_eq!(names, vec!["a", "b", "c"]);
        assert_eq!(m.dim(), (2, 3));
        assert_abs_diff_eq!(m[[1, 2]], 0.6, epsilon = 1e-15);

        let missing = dir.join("missing.csv");
        std::fs::write(&missing, "a,b\n1.0,\n").unwrap();
        let err = read_matrix_csv(&missing).unwrap_err();
        assert!(err.to_string().contains("missing values"), "{err}");

        let text = dir.join("text.csv");
        std::fs::write(&text, "a,b\n1.0,zwei\n").unwrap();
        assert!(read_matrix_csv(&text).is_err());

        std::fs::remove_dir_all(&dir).ok();
    }
}
