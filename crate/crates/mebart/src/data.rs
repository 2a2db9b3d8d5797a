//! Dataset ingestion and export.
//!
//! CSV schema: a header row names the columns; the response column is `y`;
//! columns named `oracle_x1..oracle_xp` and `oracle_f` carry ground truth
//! for synthetic runs and are never used as predictors; every other column
//! is a predictor, in file order. Measurement-error scales arrive either
//! through configuration or a leading comment line of the form
//! `#sigma_e: 0.1` (scalar, applied to every column) or
//! `#sigma_e: 0.1,0.2,...` (one value per predictor column).

use ndarray::{Array1, Array2};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ObservedDataset {
    /// Observed (noisy) predictors, n x p.
    pub x_star: Array2<f64>,
    /// Response; continuous, or {0,1} when `binary_y` is set.
    pub y: Array1<f64>,
    /// Known measurement-error sds per predictor column.
    pub sigma_e: Option<Array1<f64>>,
    /// Oracle-only ground truth (synthetic data).
    pub x_true: Option<Array2<f64>>,
    pub f_true: Option<Array1<f64>>,
    pub binary_y: bool,
    pub predictor_names: Vec<String>,
}

impl ObservedDataset {
    pub fn n(&self) -> usize {
        self.x_star.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_star.ncols()
    }

    /// Fit-time validation: dimensions, finiteness, and the minimum sample
    /// size. Loading tolerates tiny files (so e.g. binary detection can be
    /// probed); fitting does not.
    pub fn validate_for_fit(&self, needs_sigma_e: bool) -> Result<()> {
        let n = self.n();
        if n < 10 {
            return Err(Error::InvalidData(format!(
                "need at least 10 observations to fit, got {n}"
            )));
        }
        if self.y.len() != n {
            return Err(Error::InvalidData(format!(
                "response length {} does not match {n} rows",
                self.y.len()
            )));
        }
        for (i, row) in self.x_star.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "predictor".into(),
                    observation: i,
                });
            }
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "response".into(),
                observation: i,
            });
        }
        if needs_sigma_e {
            match &self.sigma_e {
                None => {
                    return Err(Error::InvalidData(
                        "measurement-error scales (sigma_e) are required in mebart mode; \
                         supply them in the config or a '#sigma_e:' header comment"
                            .into(),
                    ))
                }
                Some(s) => {
                    if s.len() != self.p() {
                        return Err(Error::InvalidData(format!(
                            "sigma_e has {} entries for {} predictor columns",
                            s.len(),
                            self.p()
                        )));
                    }
                    if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                        return Err(Error::InvalidData(
                            "sigma_e entries must be finite and nonnegative".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::InvalidData(format!("input is not valid UTF-8: {e}")))?;
        parse_csv(text)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_csv_bytes(&bytes)
    }

    /// Write the dataset back out in the schema `load_csv` reads. Values are
    /// printed with shortest round-trip formatting, so a save/load cycle
    /// reproduces every float exactly.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = Vec::new();
        if let Some(s) = &self.sigma_e {
            let vals: Vec<String> = s.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "#sigma_e: {}", vals.join(","))?;
        }
        let p = self.p();
        let mut header: Vec<String> = self.predictor_names.clone();
        header.push("y".into());
        if self.x_true.is_some() {
            header.extend((1..=p).map(|j| format!("oracle_x{j}")));
        }
        if self.f_true.is_some() {
            header.push("oracle_f".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut row: Vec<String> = (0..p).map(|j| format!("{}", self.x_star[[i, j]])).collect();
            row.push(format!("{}", self.y[i]));
            if let Some(xt) = &self.x_true {
                row.extend((0..p).map(|j| format!("{}", xt[[i, j]])));
            }
            if let Some(ft) = &self.f_true {
                row.push(format!("{}", ft[i]));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn parse_sigma_e_comment(line: &str) -> Option<Result<Vec<f64>>> {
    let rest = line.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("sigma_e")?.trim_start();
    let rest = rest.strip_prefix(':')?;
    let mut vals = Vec::new();
    for tok in rest.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => vals.push(v),
            _ => {
                return Some(Err(Error::InvalidData(format!(
                    "bad sigma_e value '{tok}' in header comment"
                ))))
            }
        }
    }
    if vals.is_empty() {
        return Some(Err(Error::InvalidData(
            "empty sigma_e header comment".into(),
        )));
    }
    Some(Ok(vals))
}

fn parse_csv(text: &str) -> Result<ObservedDataset> {
    // peel leading comment lines; only #sigma_e is meaningful, other
    // comments are skipped
    let mut sigma_e_vals: Option<Vec<f64>> = None;
    let mut comment_lines = 0usize;
    let mut body_start = 0usize;
    for line in text.split_inclusive('\n') {
        if line.starts_with('#') {
            if let Some(parsed) = parse_sigma_e_comment(line.trim_end()) {
                sigma_e_vals = Some(parsed?);
            }
            comment_lines += 1;
            body_start += line.len();
        } else {
            break;
        }
    }
    let body = &text[body_start..];

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(body.as_bytes());

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidData(format!("cannot read header row: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::InvalidData("empty header row".into()));
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Role {
        Predictor,
        Response,
        OracleX(usize),
        OracleF,
    }
    let mut roles = Vec::with_capacity(headers.len());
    let mut predictor_names = Vec::new();
    let mut y_col = None;
    let mut oracle_x_count = 0usize;
    for (c, h) in headers.iter().enumerate() {
        if h == "y" {
            if y_col.is_some() {
                return Err(Error::InvalidData("duplicate response column 'y'".into()));
            }
            y_col = Some(c);
            roles.push(Role::Response);
        } else if h == "oracle_f" {
            roles.push(Role::OracleF);
        } else if let Some(idx) = h
            .strip_prefix("oracle_x")
            .and_then(|s| s.parse::<usize>().ok())
        {
            if idx == 0 {
                return Err(Error::InvalidData(
                    "oracle predictor columns are 1-based (oracle_x1, ...)".into(),
                ));
            }
            oracle_x_count += 1;
            roles.push(Role::OracleX(idx - 1));
        } else {
            predictor_names.push(h.clone());
            roles.push(Role::Predictor);
        }
    }
    if y_col.is_none() {
        return Err(Error::InvalidData("no response column named 'y'".into()));
    }
    let p = predictor_names.len();
    if p == 0 {
        return Err(Error::InvalidData("no predictor columns".into()));
    }
    let has_oracle_x = oracle_x_count > 0;
    if has_oracle_x && oracle_x_count != p {
        return Err(Error::InvalidData(format!(
            "{oracle_x_count} oracle_x columns for {p} predictors"
        )));
    }
    let has_oracle_f = roles.iter().any(|r| *r == Role::OracleF);

    let mut x_star = Vec::new();
    let mut y = Vec::new();
    let mut x_true = Vec::new();
    let mut f_true = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // user-facing row number: comments + header + 1-based data row
        let file_row = comment_lines + 1 + r + 1;
        let record = record.map_err(|e| Error::InvalidData(format!("row {file_row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::InvalidData(format!(
                "row {file_row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let mut x_row = vec![0.0f64; p];
        let mut xt_row = vec![0.0f64; p];
        let mut pred_pos = 0usize;
        for (c, field) in record.iter().enumerate() {
            let parse = |field: &str| -> Result<f64> {
                if field.is_empty() {
                    return Err(Error::Csv {
                        row: file_row,
                        col: c + 1,
                        name: headers[c].clone(),
                        msg: "empty cell".into(),
                    });
                }
                let v: f64 = field.parse().map_err(|_| Error::Csv {
                    row: file_row,
                    col: c + 1,
                    name: headers[c].clone(),
                    msg: format!("non-numeric value '{field}'"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        row: file_row,
                        col: c + 1,
                        name: headers[c].clone(),
                        msg: format!("non-finite value '{field}'"),
                    });
                }
                Ok(v)
            };
            match roles[c] {
                Role::Predictor => {
                    x_row[pred_pos] = parse(field)?;
                    pred_pos += 1;
                }
                Role::Response => y.push(parse(field)?),
                Role::OracleX(j) => {
                    if j >= p {
                        return Err(Error::InvalidData(format!(
                            "oracle_x{} exceeds predictor count {p}",
                            j + 1
                        )));
                    }
                    xt_row[j] = parse(field)?;
                }
                Role::OracleF => f_true.push(parse(field)?),
            }
        }
        x_star.extend_from_slice(&x_row);
        if has_oracle_x {
            x_true.extend_from_slice(&xt_row);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidData("no data rows".into()));
    }

    let sigma_e = match sigma_e_vals {
        None => None,
        Some(v) if v.len() == 1 => Some(Array1::from_elem(p, v[0])),
        Some(v) if v.len() == p => Some(Array1::from_vec(v)),
        Some(v) => {
            return Err(Error::InvalidData(format!(
                "sigma_e header has {} values for {p} predictor columns",
                v.len()
            )))
        }
    };
    let binary_y = y.iter().all(|&v| v == 0.0 || v == 1.0);
    Ok(ObservedDataset {
        x_star: Array2::from_shape_vec((n, p), x_star)
            .map_err(|e| Error::InvalidData(e.to_string()))?,
        y: Array1::from_vec(y),
        sigma_e,
        x_true: if has_oracle_x {
            Some(
                Array2::from_shape_vec((n, p), x_true)
                    .map_err(|e| Error::InvalidData(e.to_string()))?,
            )
        } else {
            None
        },
        f_true: if has_oracle_f {
            Some(Array1::from_vec(f_true))
        } else {
            None
        },
        binary_y,
        predictor_names,
    })
}
