//! Feature schemas, masked tables and their CSV representation.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Binary missingness mask, `true` = missing.
pub type Mask = Array2<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical {
        #[serde(rename = "K")]
        k: usize,
    },
    /// Ordered levels `1..=levels`, routed through the discrete channel with `K = levels`.
    Ordinal {
        #[serde(rename = "R")]
        levels: usize,
    },
}

impl ColumnKind {
    /// Number of categories for categorical and ordinal columns.
    pub fn cardinality(&self) -> Option<usize> {
        match *self {
            ColumnKind::Continuous => None,
            ColumnKind::Categorical { k } => Some(k),
            ColumnKind::Ordinal { levels } => Some(levels),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, ColumnKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>, k: usize) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical { k },
        }
    }

    pub fn ordinal(name: impl Into<String>, levels: usize) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Ordinal { levels },
        }
    }
}

/// Ordered column list with a continuous / discrete partition of the indices.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<Column>", into = "Vec<Column>")]
pub struct FeatureSchema {
    columns: Vec<Column>,
}

impl TryFrom<Vec<Column>> for FeatureSchema {
    type Error = Error;

    fn try_from(columns: Vec<Column>) -> Result<Self> {
        FeatureSchema::new(columns)
    }
}

impl From<FeatureSchema> for Vec<Column> {
    fn from(schema: FeatureSchema) -> Self {
        schema.columns
    }
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(Error::Schema(format!("column {i} has an empty name")));
            }
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column name '{}'", c.name)));
            }
            if let Some(k) = c.kind.cardinality() {
                if k < 2 {
                    return Err(Error::Schema(format!(
                        "column '{}' needs at least 2 categories, got {k}",
                        c.name
                    )));
                }
            }
        }
        Ok(FeatureSchema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Indices of continuous columns, in schema order.
    pub fn cont_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.columns[j].kind.is_continuous())
            .collect()
    }

    /// Indices of categorical and ordinal columns, in schema order.
    pub fn cat_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| !self.columns[j].kind.is_continuous())
            .collect()
    }

    /// Serializes to a JSON object `name -> {kind, K | R}` in column order.
    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        for c in &self.columns {
            let mut entry = Map::new();
            match c.kind {
                ColumnKind::Continuous => {
                    entry.insert("kind".into(), Value::from("continuous"));
                }
                ColumnKind::Categorical { k } => {
                    entry.insert("kind".into(), Value::from("categorical"));
                    entry.insert("K".into(), Value::from(k));
                }
                ColumnKind::Ordinal { levels } => {
                    entry.insert("kind".into(), Value::from("ordinal"));
                    entry.insert("R".into(), Value::from(levels));
                }
            }
            map.insert(c.name.clone(), Value::Object(entry));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(Error::Schema("schema file must hold a JSON object".into()));
        };
        let mut columns = Vec::with_capacity(map.len());
        for (name, spec) in map {
            let kind_name = spec
                .get("kind")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Schema(format!("column '{name}' lacks a 'kind'")))?;
            let count = |key: &str| -> Option<usize> {
                spec.get(key).and_then(Value::as_u64).map(|v| v as usize)
            };
            let kind = match kind_name {
                "continuous" => ColumnKind::Continuous,
                "categorical" => ColumnKind::Categorical {
                    k: count("K").ok_or_else(|| {
                        Error::Schema(format!("categorical column '{name}' lacks 'K'"))
                    })?,
                },
                "ordinal" => ColumnKind::Ordinal {
                    levels: count("R").or_else(|| count("K")).ok_or_else(|| {
                        Error::Schema(format!("ordinal column '{name}' lacks 'R'"))
                    })?,
                },
                other => {
                    return Err(Error::Schema(format!(
                        "column '{name}' has unknown kind '{other}'"
                    )))
                }
            };
            columns.push(Column { name, kind });
        }
        FeatureSchema::new(columns)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Raw mixed-type table plus its missingness mask.
///
/// Continuous cells hold real values; categorical and ordinal cells hold the
/// category index `1..=K` stored as `f64`. Missing cells hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTable {
    schema: FeatureSchema,
    values: Array2<f64>,
    mask: Mask,
}

impl MaskedTable {
    /// Builds a table, checking that observed cells are valid for their
    /// column and missing cells hold the marker.
    pub fn new(schema: FeatureSchema, values: Array2<f64>, mask: Mask) -> Result<Self> {
        if values.ncols() != schema.len() || mask.dim() != values.dim() {
            return Err(Error::Shape(format!(
                "values {:?} and mask {:?} must both be n x {}",
                values.dim(),
                mask.dim(),
                schema.len()
            )));
        }
        for ((i, j), &v) in values.indexed_iter() {
            if mask[[i, j]] {
                if !v.is_nan() {
                    return Err(Error::InvalidArgument(format!(
                        "cell ({i}, {j}) is masked but holds {v}"
                    )));
                }
                continue;
            }
            check_cell(&schema.columns[j], i, v)?;
        }
        Ok(MaskedTable {
            schema,
            values,
            mask,
        })
    }

    /// A fully observed table.
    pub fn complete(schema: FeatureSchema, values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), false);
        Self::new(schema, values, mask)
    }

    /// Applies `mask` on top of the current one, replacing newly masked cells
    /// with the missing marker.
    pub fn with_mask(&self, mask: &Mask) -> Result<Self> {
        if mask.dim() != self.values.dim() {
            return Err(Error::Shape(format!(
                "mask {:?} does not match table {:?}",
                mask.dim(),
                self.values.dim()
            )));
        }
        let mut values = self.values.clone();
        let mut merged = self.mask.clone();
        for ((i, j), &m) in mask.indexed_iter() {
            if m {
                values[[i, j]] = f64::NAN;
                merged[[i, j]] = true;
            }
        }
        Ok(MaskedTable {
            schema: self.schema.clone(),
            values,
            mask: merged,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.mask[[row, col]]
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let d = self.n_cols();
        let mut values = Array2::zeros((rows.len(), d));
        let mut mask = Array2::from_elem((rows.len(), d), false);
        for (r, &i) in rows.iter().enumerate() {
            values.row_mut(r).assign(&self.values.row(i));
            mask.row_mut(r).assign(&self.mask.row(i));
        }
        MaskedTable {
            schema: self.schema.clone(),
            values,
            mask,
        }
    }

    /// Loads a CSV whose header matches the schema. Empty cells and `NA`
    /// are missing.
    pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, schema)
    }

    pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let expected: Vec<&str> = schema.names();
        if header != expected {
            return Err(Error::Schema(format!(
                "CSV header {header:?} does not match schema columns {expected:?}"
            )));
        }
        let d = schema.len();
        let mut flat = Vec::new();
        let mut flat_mask = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != d {
                return Err(Error::Shape(format!(
                    "row {row} has {} fields, expected {d}",
                    record.len()
                )));
            }
            for (j, raw) in record.iter().enumerate() {
                let raw = raw.trim();
                if is_missing_token(raw) {
                    flat.push(f64::NAN);
                    flat_mask.push(true);
                    continue;
                }
                let column = &schema.columns[j];
                let v = parse_cell(column, row, raw)?;
                flat.push(v);
                flat_mask.push(false);
            }
        }
        let n = flat.len() / d;
        let values = Array2::from_shape_vec((n, d), flat).expect("row-major fill");
        let mask = Array2::from_shape_vec((n, d), flat_mask).expect("row-major fill");
        MaskedTable::new(schema.clone(), values, mask)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.schema.names())?;
        for row in self.values.rows() {
            wtr.write_record(format_row(&self.schema, row))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn is_missing_token(raw: &str) -> bool {
    raw.is_empty() || raw == "NA"
}

fn parse_cell(column: &Column, row: usize, raw: &str) -> Result<f64> {
    let parse_err = || Error::Parse {
        row,
        column: column.name.clone(),
        value: raw.to_string(),
    };
    match column.kind.cardinality() {
        None => {
            let v: f64 = raw.parse().map_err(|_| parse_err())?;
            if !v.is_finite() {
                return Err(parse_err());
            }
            Ok(v)
        }
        Some(k) => {
            let v: i64 = raw.parse().map_err(|_| parse_err())?;
            if v < 1 || v as usize > k {
                return Err(Error::CategoryOutOfRange {
                    row,
                    column: column.name.clone(),
                    value: raw.to_string(),
                    k,
                });
            }
            Ok(v as f64)
        }
    }
}

fn check_cell(column: &Column, row: usize, v: f64) -> Result<()> {
    match column.kind.cardinality() {
        None if v.is_finite() => Ok(()),
        None => Err(Error::NonFinite(format!(
            "row {row}, column '{}' holds {v}",
            column.name
        ))),
        Some(k) => {
            if v.fract() == 0.0 && v >= 1.0 && v <= k as f64 {
                Ok(())
            } else {
                Err(Error::CategoryOutOfRange {
                    row,
                    column: column.name.clone(),
                    value: v.to_string(),
                    k,
                })
            }
        }
    }
}

fn format_row(schema: &FeatureSchema, row: ArrayView1<f64>) -> Vec<String> {
    row.iter()
        .zip(schema.columns())
        .map(|(&v, c)| {
            if v.is_nan() {
                String::new()
            } else if c.kind.is_continuous() {
                format!("{v}")
            } else {
                format!("{}", v as i64)
            }
        })
        .collect()
}

/// Writes a 0/1 mask CSV with the schema's header.
pub fn write_mask_csv<W: Write>(mask: &Mask, schema: &FeatureSchema, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.names())?;
    for row in mask.rows() {
        wtr.write_record(row.iter().map(|&m| if m { "1" } else { "0" }))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_mask_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Mask> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != schema.names() {
        return Err(Error::Schema(format!(
            "mask header {header:?} does not match schema columns {:?}",
            schema.names()
        )));
    }
    let d = schema.len();
    let mut flat = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != d {
            return Err(Error::Shape(format!("mask row {row} has {} fields", record.len())));
        }
        for (j, raw) in record.iter().enumerate() {
            flat.push(match raw.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        row,
                        column: schema.column(j).name.clone(),
                        value: other.to_string(),
                    })
                }
            });
        }
    }
    let n = flat.len() / d;
    Ok(Array2::from_shape_vec((n, d), flat).expect("row-major fill"))
}

/// Column indices of one row split by observed/missing and by kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RowPartition {
    pub obs_cont: Vec<usize>,
    pub obs_cat: Vec<usize>,
    pub mis_cont: Vec<usize>,
    pub mis_cat: Vec<usize>,
}

/// Splits a mask row into the four disjoint index sets.
pub fn split_obs_mis(schema: &FeatureSchema, mask_row: ArrayView1<bool>) -> RowPartition {
    let mut part = RowPartition::default();
    for (j, (&m, c)) in mask_row.iter().zip(schema.columns()).enumerate() {
        let set = match (m, c.kind.is_continuous()) {
            (false, true) => &mut part.obs_cont,
            (false, false) => &mut part.obs_cat,
            (true, true) => &mut part.mis_cont,
            (true, false) => &mut part.mis_cat,
        };
        set.push(j);
    }
    part
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn mixed_schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            Column::continuous("a"),
            Column::categorical("b", 5),
            Column::continuous("c"),
            Column::categorical("d", 3),
        ])
        .unwrap()
    }

    #[test]
    fn csv_with_one_empty_cell_has_one_missing_entry() {
        let csv = "a,b,c,d\n1.5,2,0.1,3\n2.5,,0.2,1\n-1,5,0.3,2\n";
        let t = MaskedTable::read_csv(csv.as_bytes(), &mixed_schema()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.missing_count(), 1);
        assert!(t.is_missing(1, 1));
    }

    #[test]
    fn na_token_is_missing() {
        let csv = "a,b,c,d\nNA,2,0.1,3\n";
        let t = MaskedTable::read_csv(csv.as_bytes(), &mixed_schema()).unwrap();
        assert!(t.is_missing(0, 0));
    }

    #[test]
    fn out_of_range_category_is_rejected() {
        let csv = "a,b,c,d\n1.5,7,0.1,3\n";
        let err = MaskedTable::read_csv(csv.as_bytes(), &mixed_schema()).unwrap_err();
        assert!(err.to_string().contains("category out of range"), "{err}");
    }

    #[test]
    fn fully_observed_csv_has_empty_mask() {
        let csv = "a,b,c,d\n1.5,2,0.1,3\n2.5,1,0.2,1\n";
        let t = MaskedTable::read_csv(csv.as_bytes(), &mixed_schema()).unwrap();
        assert!(t.mask().iter().all(|&m| !m));
    }

    #[test]
    fn header_mismatch_and_bad_numbers_are_errors() {
        let bad_header = "a,b,x,d\n1,2,3,1\n";
        assert!(matches!(
            MaskedTable::read_csv(bad_header.as_bytes(), &mixed_schema()),
            Err(Error::Schema(_))
        ));
        let bad_number = "a,b,c,d\nabc,2,3,1\n";
        assert!(matches!(
            MaskedTable::read_csv(bad_number.as_bytes(), &mixed_schema()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let csv = "a,b,c,d\n0.1234567890123,2,-3.5e-7,3\n,1,1e300,\n";
        let schema = mixed_schema();
        let t = MaskedTable::read_csv(csv.as_bytes(), &schema).unwrap();
        let again = MaskedTable::read_csv(t.to_csv_string().as_bytes(), &schema).unwrap();
        assert_eq!(t.mask(), again.mask());
        for (a, b) in t.values().iter().zip(again.values()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn schema_rejects_small_cardinality_and_json_round_trips() {
        assert!(FeatureSchema::new(vec![Column::categorical("x", 1)]).is_err());
        let schema = FeatureSchema::new(vec![
            Column::continuous("z"),
            Column::ordinal("o", 4),
            Column::categorical("a", 3),
        ])
        .unwrap();
        let back = FeatureSchema::from_json(&schema.to_json()).unwrap();
        assert_eq!(schema, back);
        assert_eq!(back.names(), vec!["z", "o", "a"]);
    }

    #[test]
    fn split_of_all_observed_and_all_missing_rows() {
        let schema = mixed_schema();
        let p = split_obs_mis(&schema, array![false, false, false, false].view());
        assert!(p.mis_cont.is_empty() && p.mis_cat.is_empty());
        assert_eq!(p.obs_cont, vec![0, 2]);
        assert_eq!(p.obs_cat, vec![1, 3]);
        let p = split_obs_mis(&schema, array![true, true, true, true].view());
        assert!(p.obs_cont.is_empty() && p.obs_cat.is_empty());
    }

    #[test]
    fn split_matches_hand_enumeration() {
        // schema order: cont, cont, cat, cat; m = (0, 1, 1, 0)
        let schema = FeatureSchema::new(vec![
            Column::continuous("x1"),
            Column::continuous("x2"),
            Column::categorical("c1", 3),
            Column::categorical("c2", 3),
        ])
        .unwrap();
        let p = split_obs_mis(&schema, array![false, true, true, false].view());
        assert_eq!(p.obs_cont, vec![0]);
        assert_eq!(p.mis_cont, vec![1]);
        assert_eq!(p.mis_cat, vec![2]);
        assert_eq!(p.obs_cat, vec![3]);
    }

    #[test]
    fn mask_csv_round_trip() {
        let schema = mixed_schema();
        let mask = array![[true, false, false, true], [false, false, true, false]];
        let mut buf = Vec::new();
        write_mask_csv(&mask, &schema, &mut buf).unwrap();
        assert_eq!(read_mask_csv(buf.as_slice(), &schema).unwrap(), mask);
    }
}
