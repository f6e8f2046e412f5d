//! Clinical table schema, one-hot/standardised encoding, CSV input and the
//! two-layer KAN encoder.

use std::collections::HashMap;
use std::io::Read;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::kan::{kan_layer_forward, KanLayerParams};
use super::spline::SplineGrid;

#[derive(Clone, Debug, PartialEq)]
pub enum FieldKind {
    Numeric,
    Categorical(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub name: String,
    pub kind: FieldKind,
}

impl Field {
    fn numeric(name: &str) -> Self {
        Self { name: name.into(), kind: FieldKind::Numeric }
    }

    fn categorical(name: &str, levels: &[&str]) -> Self {
        Self { name: name.into(), kind: FieldKind::Categorical(levels.iter().map(|s| s.to_string()).collect()) }
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            FieldKind::Numeric => 1,
            FieldKind::Categorical(levels) => levels.len(),
        }
    }
}

/// Ordered attribute list of the clinical table.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularSchema {
    pub fields: Vec<Field>,
}

impl Default for TabularSchema {
    /// Gender, age (years), weight (kg), T/N/M stage and smoking history.
    fn default() -> Self {
        Self {
            fields: vec![
                Field::categorical("gender", &["F", "M"]),
                Field::numeric("age"),
                Field::numeric("weight"),
                Field::categorical("t_stage", &["T1", "T2", "T3", "T4"]),
                Field::categorical("n_stage", &["N0", "N1", "N2", "N3"]),
                Field::categorical("m_stage", &["M0", "M1"]),
                Field::categorical("smoking", &["never", "former", "current"]),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
}

/// One patient's attributes, in schema order.
pub type Record = Vec<Value>;

/// Per numeric field mean and standard deviation from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TabularSchema {
    pub fn width(&self) -> usize {
        self.fields.iter().map(Field::width).sum()
    }

    pub fn names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    fn numeric_indices(&self) -> Vec<usize> {
        self.fields.iter().enumerate().filter(|(_, f)| f.kind == FieldKind::Numeric).map(|(i, _)| i).collect()
    }

    pub fn validate(&self, r: &Record) -> Result<()> {
        if r.len() != self.fields.len() {
            return Err(Error::Data(format!("record has {} values, schema has {} attributes", r.len(), self.fields.len())));
        }
        for (f, v) in self.fields.iter().zip(r) {
            match (&f.kind, v) {
                (FieldKind::Numeric, Value::Num(x)) if x.is_finite() => {}
                (FieldKind::Categorical(levels), Value::Cat(s)) if levels.contains(s) => {}
                _ => return Err(Error::Data(format!("attribute {}: invalid value {v:?}", f.name))),
            }
        }
        Ok(())
    }

    /// Fits standardisation statistics; the std is floored at 1e-6.
    pub fn fit(&self, records: &[Record]) -> Result<Standardizer> {
        if records.is_empty() {
            return Err(Error::Data("cannot fit standardizer on zero records".into()));
        }
        let idx = self.numeric_indices();
        let n = records.len() as f64;
        let mut mean = vec![0.0; idx.len()];
        let mut var = vec![0.0; idx.len()];
        for r in records {
            self.validate(r)?;
            for (k, &i) in idx.iter().enumerate() {
                if let Value::Num(x) = r[i] {
                    mean[k] += x / n;
                }
            }
        }
        for r in records {
            for (k, &i) in idx.iter().enumerate() {
                if let Value::Num(x) = r[i] {
                    var[k] += (x - mean[k]).powi(2) / n;
                }
            }
        }
        Ok(Standardizer { mean, std: var.into_iter().map(|v| v.sqrt().max(1e-6)).collect() })
    }

    /// Encodes records to `[B, width]`: one-hot categoricals, standardised numerics.
    pub fn encode<T: Scalar>(&self, records: &[Record], stats: &Standardizer) -> Result<Tensor<T>> {
        let width = self.width();
        let mut data = Vec::with_capacity(records.len() * width);
        for r in records {
            self.validate(r)?;
            let mut k = 0;
            for (f, v) in self.fields.iter().zip(r) {
                match (&f.kind, v) {
                    (FieldKind::Numeric, Value::Num(x)) => {
                        data.push(T::lit((x - stats.mean[k]) / stats.std[k]));
                        k += 1;
                    }
                    (FieldKind::Categorical(levels), Value::Cat(s)) => {
                        data.extend(levels.iter().map(|l| if l == s { T::one() } else { T::zero() }));
                    }
                    _ => unreachable!("validated"),
                }
            }
        }
        Tensor::new(vec![records.len(), width], data)
    }

    /// Parses one attribute value.
    pub fn parse_value(&self, field: usize, raw: &str) -> Result<Value> {
        let f = &self.fields[field];
        let raw = raw.trim();
        match &f.kind {
            FieldKind::Numeric => raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Value::Num)
                .ok_or_else(|| Error::Data(format!("attribute {}: '{raw}' is not a number", f.name))),
            FieldKind::Categorical(levels) => {
                if levels.iter().any(|l| l == raw) {
                    Ok(Value::Cat(raw.to_string()))
                } else {
                    Err(Error::Data(format!("attribute {}: unknown category '{raw}' (expected one of {levels:?})", f.name)))
                }
            }
        }
    }
}

/// A row of the clinical CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularRow {
    pub id: String,
    pub record: Record,
    pub label: u8,
}

/// Reads a CSV with header `id,<schema attributes...>,label`.
pub fn read_csv<R: Read>(schema: &TabularSchema, reader: R) -> Result<Vec<TabularRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let pos: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| pos.get(name).copied().ok_or_else(|| Error::Data(format!("CSV lacks attribute column '{name}'")));
    let id_col = col("id")?;
    let label_col = col("label")?;
    let field_cols = schema.names().into_iter().map(col).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let record = field_cols.iter().enumerate().map(|(f, &c)| schema.parse_value(f, get(c))).collect::<Result<_>>()?;
        let label = match get(label_col).trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Data(format!("row {}: label '{other}' is not 0 or 1", line + 1))),
        };
        rows.push(TabularRow { id: get(id_col).to_string(), record, label });
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write>(schema: &TabularSchema, rows: &[TabularRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id"];
    header.extend(schema.names());
    header.push("label");
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for row in rows {
        let mut rec = vec![row.id.clone()];
        rec.extend(row.record.iter().map(|v| match v {
            Value::Num(x) => format!("{x}"),
            Value::Cat(s) => s.clone(),
        }));
        rec.push(row.label.to_string());
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Two stacked KAN layers: `width → hidden → out`.
#[derive(Clone, Debug)]
pub struct TabularEncoder {
    pub layers: [KanLayerParams; 2],
}

impl TabularEncoder {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_width: usize,
        hidden: usize,
        out: usize,
        grid: &SplineGrid,
        rng: &mut R,
    ) -> Self {
        Self {
            layers: [
                KanLayerParams::init(store, &format!("{name}.kan0"), in_width, hidden, grid.clone(), rng),
                KanLayerParams::init(store, &format!("{name}.kan1"), hidden, out, grid.clone(), rng),
            ],
        }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].n_in
    }
}

pub fn tabular_encode<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &TabularEncoder) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 2 || s[1] != p.in_width() {
        return Err(Error::Data(format!(
            "encoded tabular batch {s:?} does not match schema width {}",
            p.in_width()
        )));
    }
    let h = kan_layer_forward(tape, store, x, &p.layers[0])?;
    kan_layer_forward(tape, store, h, &p.layers[1])
}
