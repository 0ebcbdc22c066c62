use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Record, SequenceDataset, TimeStep};
use crate::nn::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    /// z-normalised with train-split statistics; empty cells become 0 after normalisation.
    Numeric,
    /// One-hot over the `max_vocab` most frequent train values; slot 0 is UNK.
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAggregate {
    /// Maximum over the entity's rows (any positive row makes the record positive).
    Max,
    /// Value at the last step, which is then removed from the sequence.
    LastStep,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub column: String,
    pub task: Task,
    pub aggregate: LabelAggregate,
}

/// Column roles for one CSV layout, declared as data (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub version: u32,
    pub entity: String,
    /// Numeric, or a `YYYY-MM-DD` date mapped to its day number.
    pub order_key: String,
    pub max_len: usize,
    pub test_fraction: f64,
    #[serde(default = "default_vocab")]
    pub max_vocab: usize,
    pub label: LabelSpec,
    pub columns: Vec<ColumnSpec>,
}

fn default_vocab() -> usize {
    16
}

impl FeatureSchema {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let s: FeatureSchema = toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(DataError::Schema(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        if self.max_len == 0 || self.max_vocab == 0 {
            return Err(DataError::Schema("max_len and max_vocab must be positive".into()));
        }
        let mut seen = vec![&self.entity, &self.order_key];
        for c in &self.columns {
            // A last-step label drops its own row first, so its earlier values are fair inputs.
            let label_history = c.name == self.label.column && self.label.aggregate == LabelAggregate::LastStep && c.role == ColumnRole::Numeric;
            if seen.contains(&&c.name) || (c.name == self.label.column && !label_history) {
                return Err(DataError::Schema(format!("column {:?} has two roles", c.name)));
            }
            seen.push(&c.name);
        }
        if self.label.task == Task::Classification && self.label.aggregate == LabelAggregate::LastStep {
            return Err(DataError::Schema("classification labels aggregate by max".into()));
        }
        Ok(())
    }
}

fn parse_key(s: &str) -> Option<f64> {
    if let Ok(v) = s.trim().parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    chrono::NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .ok()
        .map(|d| d.signed_duration_since(chrono::NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch")).num_days() as f64)
}

fn is_test(entity: &str, fraction: f64) -> bool {
    let h = Sha256::digest(entity.as_bytes());
    let u = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
    (u as f64 / u64::MAX as f64) < fraction
}

struct Raw {
    line: usize,
    key: f64,
    label: f64,
    cells: Vec<String>,
}

/// Groups rows by entity, orders them by key, keeps the latest `max_len`
/// steps and encodes features with train-split statistics only.
///
/// The split is a hash of the entity id, so it does not depend on row order.
pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<SequenceDataset, DataError> {
    schema.validate()?;
    let io = |e: &dyn std::fmt::Display| DataError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| io(&e))?;
    let headers = rdr.headers().map_err(|e| io(&e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let ent_i = col(&schema.entity)?;
    let key_i = col(&schema.order_key)?;
    let lab_i = col(&schema.label.column)?;
    let feat_i = schema.columns.iter().map(|c| col(&c.name)).collect::<Result<Vec<_>, _>>()?;

    let mut groups: BTreeMap<String, Vec<Raw>> = BTreeMap::new();
    for (n, row) in rdr.records().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| DataError::Parse { line, msg: e.to_string() })?;
        let get = |i: usize| row.get(i).ok_or_else(|| DataError::Parse { line, msg: format!("missing field {i}") });
        let key = parse_key(get(key_i)?).ok_or_else(|| DataError::Parse { line, msg: format!("bad order key {:?}", row.get(key_i)) })?;
        let label: f64 = get(lab_i)?.trim().parse().map_err(|_| DataError::Parse { line, msg: format!("bad label {:?}", row.get(lab_i)) })?;
        let cells = feat_i.iter().map(|&i| get(i).map(|s| s.trim().to_string())).collect::<Result<Vec<_>, _>>()?;
        for (c, v) in schema.columns.iter().zip(&cells) {
            if c.role == ColumnRole::Numeric && !v.is_empty() && v.parse::<f64>().map(|x| !x.is_finite()).unwrap_or(true) {
                return Err(DataError::Parse { line, msg: format!("column {:?}: bad number {v:?}", c.name) });
            }
        }
        groups.entry(get(ent_i)?.to_string()).or_default().push(Raw { line, key, label, cells });
    }

    let mut grouped = Vec::with_capacity(groups.len());
    for (id, mut rows) in groups {
        rows.sort_by(|a, b| a.key.total_cmp(&b.key));
        if let Some(w) = rows.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(DataError::Parse { line: w[1].line, msg: format!("entity {id:?} repeats order key {}", w[1].key) });
        }
        let label = match schema.label.aggregate {
            LabelAggregate::Max => rows.iter().map(|r| r.label).fold(f64::NEG_INFINITY, f64::max),
            LabelAggregate::LastStep => rows.pop().map(|r| r.label).unwrap_or(f64::NAN),
        };
        if rows.is_empty() {
            return Err(DataError::EmptyGroup(id));
        }
        if rows.len() > schema.max_len {
            rows.drain(..rows.len() - schema.max_len);
        }
        let test = is_test(&id, schema.test_fraction);
        grouped.push((id, rows, label, test));
    }

    // Train-split statistics.
    let nc = schema.columns.len();
    let mut sum = vec![0.0; nc];
    let mut sq = vec![0.0; nc];
    let mut cnt = vec![0usize; nc];
    let mut freq: Vec<HashMap<String, usize>> = vec![HashMap::new(); nc];
    for (_, rows, _, test) in &grouped {
        if *test {
            continue;
        }
        for r in rows {
            for (j, (c, v)) in schema.columns.iter().zip(&r.cells).enumerate() {
                match c.role {
                    ColumnRole::Numeric if !v.is_empty() => {
                        let x: f64 = v.parse().expect("validated");
                        sum[j] += x;
                        sq[j] += x * x;
                        cnt[j] += 1;
                    }
                    ColumnRole::Categorical => *freq[j].entry(v.clone()).or_default() += 1,
                    _ => {}
                }
            }
        }
    }
    let stats: Vec<(f64, f64)> = (0..nc)
        .map(|j| {
            let n = cnt[j].max(1) as f64;
            let mean = sum[j] / n;
            let var = (sq[j] / n - mean * mean).max(0.0);
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    let vocab: Vec<HashMap<String, usize>> = freq
        .iter()
        .map(|f| {
            let mut v: Vec<(&String, &usize)> = f.iter().collect();
            v.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            v.into_iter().take(schema.max_vocab).enumerate().map(|(i, (s, _))| (s.clone(), i + 1)).collect()
        })
        .collect();
    let widths: Vec<usize> = schema.columns.iter().map(|c| if c.role == ColumnRole::Numeric { 1 } else { schema.max_vocab + 1 }).collect();
    let feature_dim = widths.iter().sum();

    let mut records = Vec::with_capacity(grouped.len());
    let (mut train, mut test_idx) = (Vec::new(), Vec::new());
    for (i, (id, rows, label, test)) in grouped.into_iter().enumerate() {
        let steps = rows
            .iter()
            .map(|r| {
                let mut f = Vec::with_capacity(feature_dim);
                for (j, (c, v)) in schema.columns.iter().zip(&r.cells).enumerate() {
                    match c.role {
                        ColumnRole::Numeric => f.push(if v.is_empty() { 0.0 } else { (v.parse::<f64>().expect("validated") - stats[j].0) / stats[j].1 }),
                        ColumnRole::Categorical => {
                            let mut oh = vec![0.0; widths[j]];
                            oh[vocab[j].get(v).copied().unwrap_or(0)] = 1.0;
                            f.extend(oh);
                        }
                    }
                }
                TimeStep { order_key: r.key, features: f }
            })
            .collect();
        records.push(Record { seq_id: id, steps, label });
        if test {
            test_idx.push(i);
        } else {
            train.push(i);
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("schema_version".into(), schema.version as f64);
    for (j, c) in schema.columns.iter().enumerate() {
        if c.role == ColumnRole::Numeric {
            metadata.insert(format!("{}.mean", c.name), stats[j].0);
            metadata.insert(format!("{}.std", c.name), stats[j].1);
        }
    }
    let ds = SequenceDataset { task: schema.label.task, feature_dim, max_len: schema.max_len, records, train, test: test_idx, metadata };
    ds.validate()?;
    Ok(ds)
}
