//! Dataset loading (dense CSV, MatrixMarket, libsvm) and synthetic stand-ins.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dispca::linalg::Matrix;
use dispca::rng::derive_seed;
use dispca::sketching::gaussian_matrix;
use dispca::synth::{gaussian_mixture, linear_targets, low_rank_plus_noise, sparse_decaying};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    CsvDense,
    MatrixMarket,
    Libsvm,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{}: {msg}", path.display())]
    Shape { path: PathBuf, msg: String },
}

/// Feature rows plus the libsvm labels, when the format carries them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Option<Vec<f64>>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn cols(&self) -> usize {
        self.features.cols()
    }

    /// Splits off column `col` as the regression target.
    pub fn split_target(&self, col: usize) -> Result<(Matrix, Vec<f64>), String> {
        let d = self.cols();
        if col >= d || d < 2 {
            return Err(format!("target column {col} out of range for {d} columns"));
        }
        let keep: Vec<usize> = (0..d).filter(|&j| j != col).collect();
        let cols = self.features.to_columns();
        let features = Matrix::from_columns(&keep.iter().map(|&j| cols[j].clone()).collect::<Vec<_>>())
            .map_err(|e| e.to_string())?;
        Ok((features, cols[col].clone()))
    }
}

fn parse_f64(tok: &str, path: &Path, line: u64) -> Result<f64, LoadError> {
    tok.trim().parse::<f64>().map_err(|_| LoadError::Parse {
        path: path.to_owned(),
        line,
        msg: format!("not a number: {tok:?}"),
    })
}

fn open(path: &Path) -> Result<File, LoadError> {
    File::open(path).map_err(|source| LoadError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset, LoadError> {
    let ds = match format {
        Format::CsvDense => load_csv(path)?,
        Format::MatrixMarket => load_matrix_market(path)?,
        Format::Libsvm => load_libsvm(path, None)?,
    };
    if ds.rows() == 0 || ds.cols() == 0 {
        return Err(LoadError::Shape {
            path: path.to_owned(),
            msg: "empty dataset".into(),
        });
    }
    Ok(ds)
}

/// Numeric CSV. A first line with no numeric field is taken as a header.
pub fn load_csv(path: &Path) -> Result<Dataset, LoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(open(path)?);
    let mut data = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| LoadError::Parse {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && rec.iter().all(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(LoadError::Parse {
                    path: path.to_owned(),
                    line,
                    msg: format!("expected {w} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        for f in rec.iter() {
            data.push(parse_f64(f, path, line)?);
        }
    }
    let d = width.unwrap_or(0);
    let n = data.len().checked_div(d).unwrap_or(0);
    Ok(Dataset {
        features: Matrix::from_vec(n, d, data).expect("row lengths checked"),
        targets: None,
    })
}

/// MatrixMarket `coordinate` (real, integer or pattern; general or
/// symmetric) and `array` (general) files.
pub fn load_matrix_market(path: &Path) -> Result<Dataset, LoadError> {
    let reader = BufReader::new(open(path)?);
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
    let perr = |line: u64, msg: String| LoadError::Parse {
        path: path.to_owned(),
        line,
        msg,
    };
    let io = |source| LoadError::Io {
        path: path.to_owned(),
        source,
    };

    let (_, banner) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let banner = banner.map_err(io)?.to_ascii_lowercase();
    let fields: Vec<&str> = banner.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(perr(1, format!("bad banner {banner:?}")));
    }
    let coordinate = match fields[2] {
        "coordinate" => true,
        "array" => false,
        other => return Err(perr(1, format!("unsupported layout {other}"))),
    };
    let pattern = match fields[3] {
        "real" | "integer" | "double" => false,
        "pattern" if coordinate => true,
        other => return Err(perr(1, format!("unsupported field type {other}"))),
    };
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" if coordinate => true,
        other => return Err(perr(1, format!("unsupported symmetry {other}"))),
    };

    let mut body = lines.filter_map(|(no, l)| match l {
        Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('%') => None,
        other => Some((no, other)),
    });
    let (size_no, size) = body.next().ok_or_else(|| perr(2, "missing size line".into()))?;
    let size = size.map_err(io)?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| perr(size_no, format!("bad size line {size:?}"))))
        .collect::<Result<_, _>>()?;
    let want = if coordinate { 3 } else { 2 };
    if dims.len() != want {
        return Err(perr(size_no, format!("size line needs {want} integers")));
    }
    let (m, n) = (dims[0], dims[1]);
    let mut a = Matrix::zeros(m, n);
    let mut count = 0usize;
    if coordinate {
        let nnz = dims[2];
        for (no, l) in body {
            let l = l.map_err(io)?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != if pattern { 2 } else { 3 } {
                return Err(perr(no, format!("bad entry {l:?}")));
            }
            let idx = |t: &str, hi: usize| -> Result<usize, LoadError> {
                match t.parse::<usize>() {
                    Ok(v) if v >= 1 && v <= hi => Ok(v - 1),
                    _ => Err(perr(no, format!("index {t} outside 1..={hi}"))),
                }
            };
            let (i, j) = (idx(toks[0], m)?, idx(toks[1], n)?);
            let v = if pattern { 1.0 } else { parse_f64(toks[2], path, no)? };
            a[(i, j)] = v;
            if symmetric && i != j {
                if j >= m || i >= n {
                    return Err(perr(no, "symmetric entry outside a square matrix".into()));
                }
                a[(j, i)] = v;
            }
            count += 1;
        }
        if count != nnz {
            return Err(LoadError::Shape {
                path: path.to_owned(),
                msg: format!("header promises {nnz} entries, found {count}"),
            });
        }
    } else {
        // column-major values
        for (no, l) in body {
            let l = l.map_err(io)?;
            for t in l.split_whitespace() {
                if count >= m * n {
                    return Err(perr(no, "more values than m * n".into()));
                }
                a[(count % m, count / m)] = parse_f64(t, path, no)?;
                count += 1;
            }
        }
        if count != m * n {
            return Err(LoadError::Shape {
                path: path.to_owned(),
                msg: format!("expected {} values, found {count}", m * n),
            });
        }
    }
    Ok(Dataset {
        features: a,
        targets: None,
    })
}

/// libsvm `label idx:val ...` with 1-based indices. The width is the largest
/// index seen unless `dim` is given.
pub fn load_libsvm(path: &Path, dim: Option<usize>) -> Result<Dataset, LoadError> {
    let reader = BufReader::new(open(path)?);
    let mut targets = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut width = 0usize;
    for (i, l) in reader.lines().enumerate() {
        let no = i as u64 + 1;
        let l = l.map_err(|source| LoadError::Io {
            path: path.to_owned(),
            source,
        })?;
        let l = l.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let mut toks = l.split_whitespace();
        targets.push(parse_f64(toks.next().unwrap_or(""), path, no)?);
        let mut row = Vec::new();
        for t in toks {
            let (k, v) = t.split_once(':').ok_or_else(|| LoadError::Parse {
                path: path.to_owned(),
                line: no,
                msg: format!("expected index:value, found {t:?}"),
            })?;
            let k = match k.parse::<usize>() {
                Ok(k) if k >= 1 => k,
                _ => {
                    return Err(LoadError::Parse {
                        path: path.to_owned(),
                        line: no,
                        msg: format!("bad index {k:?}"),
                    })
                }
            };
            if let Some(d) = dim {
                if k > d {
                    return Err(LoadError::Parse {
                        path: path.to_owned(),
                        line: no,
                        msg: format!("index {k} exceeds dimension {d}"),
                    });
                }
            }
            width = width.max(k);
            row.push((k - 1, parse_f64(v, path, no)?));
        }
        entries.push(row);
    }
    let d = dim.unwrap_or(width);
    let mut a = Matrix::zeros(entries.len(), d);
    for (i, row) in entries.iter().enumerate() {
        for &(j, v) in row {
            a[(i, j)] = v;
        }
    }
    Ok(Dataset {
        features: a,
        targets: Some(targets),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Synthetic {
    /// Well-separated Gaussian clusters.
    Mixture,
    /// Decaying low-rank signal plus isotropic noise.
    LowRank,
    /// Sparse rows, 1% density, decaying column scales.
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: Synthetic,
    pub n: usize,
    pub d: usize,
    /// Clusters for `mixture`, signal rank for `low-rank`.
    pub components: usize,
    pub seed: u64,
}

/// Synthetic dataset; always carries a noisy linear target so PCR can run on it.
pub fn synthetic(spec: &SyntheticSpec) -> Dataset {
    let SyntheticSpec {
        kind,
        n,
        d,
        components,
        seed,
    } = *spec;
    let features = match kind {
        Synthetic::Mixture => gaussian_mixture(n, d, components.max(1), 5.0, 1.0, seed).0,
        Synthetic::LowRank => low_rank_plus_noise(n, d, components.clamp(1, d), 0.8, 0.1, seed),
        Synthetic::Sparse => sparse_decaying(n, d, 0.01, seed),
    };
    // coefficients drawn through the row space, so the target follows the
    // dominant directions
    let g = gaussian_matrix(1, n, derive_seed(seed, 1));
    let coef = g.matmul(&features).expect("1 x n times n x d").scale(1.0 / n as f64).into_vec();
    let targets = linear_targets(&features, &coef, 0.1, derive_seed(seed, 2));
    Dataset {
        features,
        targets: Some(targets),
    }
}
