use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a column participates in forecasting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Series to forecast; also observed in the lookback window.
    Target,
    /// Covariate observed only in the past.
    Historical,
    /// Covariate known in advance over the horizon.
    Future,
    /// Constant per series.
    Static,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
}

/// Column-role sidecar for CSV ingestion.
///
/// ```toml
/// timestamp = "date"
/// [columns]
/// sales = "target"
/// price = "historical"
/// promo = "future"
/// store_size = "static"
/// ```
///
/// CSV columns not listed are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub columns: BTreeMap<String, Role>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

/// Multivariate series with role-tagged columns.
///
/// Time-varying columns are kept ordered targets, then historical, then
/// future covariates, so a lookback window is the leading `C + C_x` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    columns: Vec<Column>,
    values: Tensor,
    statics: Vec<(String, f64)>,
}

impl SeriesFrame {
    /// `values` is `[steps, columns.len()]`; columns may be in any role order.
    pub fn new(columns: Vec<Column>, values: Tensor, statics: Vec<(String, f64)>) -> Result<Self> {
        if values.rank() != 2 || values.shape()[1] != columns.len() {
            return Err(Error::dim("SeriesFrame::new", values.shape(), &[columns.len()]));
        }
        if columns.iter().any(|c| c.role == Role::Static) {
            return Err(Error::Schema("static columns belong in `statics`".into()));
        }
        if !columns.iter().any(|c| c.role == Role::Target) {
            return Err(Error::Schema("at least one target column is required".into()));
        }
        if !values.all_finite() {
            return Err(Error::Schema("frame contains non-finite values".into()));
        }
        let mut order: Vec<usize> = (0..columns.len()).collect();
        order.sort_by_key(|&i| columns[i].role);
        let steps = values.shape()[0];
        let n = columns.len();
        let mut data = Vec::with_capacity(values.len());
        for t in 0..steps {
            data.extend(order.iter().map(|&j| values.at2(t, j)));
        }
        Ok(Self {
            columns: order.iter().map(|&j| columns[j].clone()).collect(),
            values: Tensor::new(&[steps, n], data)?,
            statics,
        })
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn statics(&self) -> &[(String, f64)] {
        &self.statics
    }

    pub fn count(&self, role: Role) -> usize {
        if role == Role::Static {
            return self.statics.len();
        }
        self.columns.iter().filter(|c| c.role == role).count()
    }

    pub fn names(&self, role: Role) -> Vec<String> {
        if role == Role::Static {
            return self.statics.iter().map(|(n, _)| n.clone()).collect();
        }
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.clone())
            .collect()
    }

    /// Width of a lookback window: targets plus historical covariates.
    pub fn history_width(&self) -> usize {
        self.count(Role::Target) + self.count(Role::Historical)
    }

    /// Rows `[start, end)` as a new frame.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.steps() {
            return Err(Error::Precondition(format!(
                "row range {start}..{end} outside frame of {} steps",
                self.steps()
            )));
        }
        let n = self.columns.len();
        let data = self.values.data()[start * n..end * n].to_vec();
        Ok(Self {
            columns: self.columns.clone(),
            values: Tensor::new(&[end - start, n], data)?,
            statics: self.statics.clone(),
        })
    }

    pub(crate) fn with_values(&self, values: Tensor) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::dim("with_values", self.values.shape(), values.shape()));
        }
        Ok(Self {
            columns: self.columns.clone(),
            values,
            statics: self.statics.clone(),
        })
    }

    /// Schema describing this frame, with an integer `t` timestamp column.
    pub fn schema(&self) -> Schema {
        let mut columns: BTreeMap<String, Role> = self.columns.iter().map(|c| (c.name.clone(), c.role)).collect();
        for (name, _) in &self.statics {
            columns.insert(name.clone(), Role::Static);
        }
        Schema {
            timestamp: Some("t".into()),
            columns,
        }
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null" | "none")
}

/// Reads a comma-separated file with a header row. Lines starting with `#`
/// are comments. Rows are returned in timestamp order when the schema names
/// a timestamp column.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<SeriesFrame> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();

    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("declared column `{name}` is missing from the header")))
    };
    let ts_idx = schema.timestamp.as_deref().map(position).transpose()?;
    let mut declared = Vec::new();
    for (name, role) in &schema.columns {
        declared.push((position(name)?, name.clone(), *role));
    }
    declared.sort_by_key(|d| d.0);

    let mut stamps: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(declared.len());
        for (idx, name, _) in &declared {
            let field = &record[*idx];
            if is_missing(field) {
                return Err(Error::Parse {
                    line,
                    reason: format!("missing value in column `{name}`"),
                });
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("column `{name}`: cannot parse `{field}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    reason: format!("column `{name}`: non-finite value"),
                });
            }
            row.push(v);
        }
        if let Some(ti) = ts_idx {
            stamps.push(record[ti].to_owned());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            reason: "no data rows".into(),
        });
    }

    if ts_idx.is_some() {
        let numeric: Option<Vec<f64>> = stamps.iter().map(|s| s.parse::<f64>().ok()).collect();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        match numeric {
            Some(keys) => order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b])),
            None => order.sort_by(|&a, &b| stamps[a].cmp(&stamps[b])),
        }
        rows = order.into_iter().map(|i| std::mem::take(&mut rows[i])).collect();
    }

    let mut columns = Vec::new();
    let mut time_idx = Vec::new();
    let mut statics = Vec::new();
    for (k, (_, name, role)) in declared.iter().enumerate() {
        if *role == Role::Static {
            let first = rows[0][k];
            if rows.iter().any(|r| r[k] != first) {
                return Err(Error::Schema(format!("static column `{name}` varies over time")));
            }
            statics.push((name.clone(), first));
        } else {
            columns.push(Column {
                name: name.clone(),
                role: *role,
            });
            time_idx.push(k);
        }
    }
    let steps = rows.len();
    let data: Vec<f64> = rows.iter().flat_map(|r| time_idx.iter().map(move |&k| r[k])).collect();
    SeriesFrame::new(columns, Tensor::new(&[steps, time_idx.len()], data)?, statics)
}

/// Writes the frame as CSV with a leading `t` step column. Static values are
/// repeated on every row.
pub fn write_csv(frame: &SeriesFrame, path: &Path, header_comment: &str) -> Result<()> {
    let text = csv_string(frame, header_comment);
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn csv_string(frame: &SeriesFrame, header_comment: &str) -> String {
    let mut out = String::new();
    if !header_comment.is_empty() {
        out.push_str("# ");
        out.push_str(header_comment);
        out.push('\n');
    }
    let mut names = vec!["t".to_string()];
    names.extend(frame.columns.iter().map(|c| c.name.clone()));
    names.extend(frame.statics.iter().map(|(n, _)| n.clone()));
    out.push_str(&names.join(","));
    out.push('\n');
    let n = frame.columns.len();
    for t in 0..frame.steps() {
        let mut fields = vec![t.to_string()];
        fields.extend(frame.values.data()[t * n..(t + 1) * n].iter().map(|v| v.to_string()));
        fields.extend(frame.statics.iter().map(|(_, v)| v.to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
