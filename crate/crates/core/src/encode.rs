//! Encoding between raw table values and the model space of the two channels.
//!
//! Continuous columns become z-scored coordinates; categorical and ordinal
//! columns become one-hot blocks. The single-channel ablation routings move
//! columns across channels: `ContinuousOnly` encodes every categorical
//! column as one-hot coordinates of the continuous channel, `DiscreteOnly`
//! quantile-bins every continuous column into a categorical block.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::table::{ColumnKind, FeatureSchema, Mask, MaskedTable};

/// Number of quantile bins used when continuous columns are discretized.
pub const DISCRETE_ONLY_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Routing {
    /// Continuous columns to the continuous channel, discrete ones to the discrete channel.
    #[default]
    Hybrid,
    ContinuousOnly,
    DiscreteOnly,
}

/// Per-column z-score parameters; non-continuous columns carry `(0, 1)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and population standard deviation over observed entries.
    pub fn fit(table: &MaskedTable) -> Result<Self> {
        let d = table.n_cols();
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        for (j, col) in table.schema().columns().iter().enumerate() {
            if !col.kind.is_continuous() {
                continue;
            }
            let observed: Vec<f64> = observed_values(table, j).collect();
            if observed.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "column '{}' has no observed entries",
                    col.name
                )));
            }
            let m = observed.iter().sum::<f64>() / observed.len() as f64;
            let var = observed.iter().map(|v| (v - m).powi(2)).sum::<f64>() / observed.len() as f64;
            let s = var.sqrt();
            if s.is_nan() || s <= 1e-12 * m.abs().max(1.0) {
                return Err(Error::ZeroVariance(col.name.clone()));
            }
            mean[j] = m;
            std[j] = s;
        }
        Ok(Standardizer { mean, std })
    }

    pub fn standardize(&self, column: usize, v: f64) -> f64 {
        (v - self.mean[column]) / self.std[column]
    }

    pub fn destandardize(&self, column: usize, z: f64) -> f64 {
        z * self.std[column] + self.mean[column]
    }
}

fn observed_values(table: &MaskedTable, j: usize) -> impl Iterator<Item = f64> + '_ {
    table
        .values()
        .column(j)
        .into_iter()
        .zip(table.mask().column(j))
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .collect::<Vec<_>>()
        .into_iter()
}

/// Quantile bin edges for one continuous column (`bins + 1` non-decreasing edges).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantileBins {
    pub edges: Vec<f64>,
}

impl QuantileBins {
    pub fn fit(values: &[f64], bins: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let edges = (0..=bins)
            .map(|b| quantile_sorted(&sorted, b as f64 / bins as f64))
            .collect();
        QuantileBins { edges }
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Zero-based bin of `v`; values outside the fitted range go to the end bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let inner = &self.edges[1..self.edges.len() - 1];
        inner.iter().take_while(|&&e| v > e).count()
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }
}

/// Linear-interpolated quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// What a coordinate of the continuous channel stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContDim {
    /// Standardized value of a continuous column.
    Value { column: usize },
    /// One-hot coordinate `level` (zero-based) of a categorical column.
    OneHot { column: usize, level: usize },
}

impl ContDim {
    pub fn column(&self) -> usize {
        match *self {
            ContDim::Value { column } | ContDim::OneHot { column, .. } => column,
        }
    }
}

/// A categorical block of the discrete channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CatBlock {
    pub column: usize,
    pub offset: usize,
    pub k: usize,
}

/// Channel layout derived from a schema and routing.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub cont_dims: Vec<ContDim>,
    pub blocks: Vec<CatBlock>,
    pub n_columns: usize,
}

impl Layout {
    pub fn new(schema: &FeatureSchema, routing: Routing) -> Self {
        let mut cont_dims = Vec::new();
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (column, col) in schema.columns().iter().enumerate() {
            match (col.kind.cardinality(), routing) {
                (None, Routing::DiscreteOnly) => {
                    blocks.push(CatBlock {
                        column,
                        offset,
                        k: DISCRETE_ONLY_BINS,
                    });
                    offset += DISCRETE_ONLY_BINS;
                }
                (None, _) => cont_dims.push(ContDim::Value { column }),
                (Some(k), Routing::ContinuousOnly) => {
                    cont_dims.extend((0..k).map(|level| ContDim::OneHot { column, level }))
                }
                (Some(k), _) => {
                    blocks.push(CatBlock { column, offset, k });
                    offset += k;
                }
            }
        }
        Layout {
            cont_dims,
            blocks,
            n_columns: schema.len(),
        }
    }

    pub fn n_cont(&self) -> usize {
        self.cont_dims.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn cat_width(&self) -> usize {
        self.blocks.iter().map(|b| b.k).sum()
    }
}

/// Model-space view of a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    /// `n x n_cont` standardized values (one-hot coordinates under `ContinuousOnly`).
    pub cont: Array2<f64>,
    /// `n x cat_width` concatenated one-hot blocks.
    pub cat: Array2<f64>,
    /// Column-level mask, `true` = missing.
    pub mask: Mask,
    pub layout: Layout,
    pub standardizer: Standardizer,
}

impl EncodedBatch {
    pub fn n_rows(&self) -> usize {
        self.mask.nrows()
    }

    /// Mask expanded to continuous coordinates.
    pub fn mask_cont(&self) -> Mask {
        expand_cont_mask(&self.mask, &self.layout)
    }

    /// Mask restricted to categorical blocks.
    pub fn mask_cat(&self) -> Mask {
        expand_cat_mask(&self.mask, &self.layout)
    }
}

pub fn expand_cont_mask(mask: &Mask, layout: &Layout) -> Mask {
    Array2::from_shape_fn((mask.nrows(), layout.n_cont()), |(i, c)| {
        mask[[i, layout.cont_dims[c].column()]]
    })
}

pub fn expand_cat_mask(mask: &Mask, layout: &Layout) -> Mask {
    Array2::from_shape_fn((mask.nrows(), layout.n_blocks()), |(i, b)| {
        mask[[i, layout.blocks[b].column]]
    })
}

/// Fitted encoder: schema, routing, and the per-column statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Encoder {
    pub schema: FeatureSchema,
    pub routing: Routing,
    pub standardizer: Standardizer,
    /// Quantile bins per column, present only for continuous columns under `DiscreteOnly`.
    pub bins: Vec<Option<QuantileBins>>,
}

impl Encoder {
    /// Fits statistics on the observed entries of `table`.
    pub fn fit(table: &MaskedTable, routing: Routing) -> Result<Self> {
        let standardizer = Standardizer::fit(table)?;
        let bins = table
            .schema()
            .columns()
            .iter()
            .enumerate()
            .map(|(j, col)| {
                (routing == Routing::DiscreteOnly && col.kind.is_continuous()).then(|| {
                    let observed: Vec<f64> = observed_values(table, j).collect();
                    QuantileBins::fit(&observed, DISCRETE_ONLY_BINS)
                })
            })
            .collect();
        Ok(Encoder {
            schema: table.schema().clone(),
            routing,
            standardizer,
            bins,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.schema, self.routing)
    }

    /// Encodes a table; missing cells become zeros.
    pub fn encode(&self, table: &MaskedTable) -> Result<EncodedBatch> {
        if table.schema() != &self.schema {
            return Err(Error::Schema(
                "table schema differs from the encoder's schema".into(),
            ));
        }
        let layout = self.layout();
        let n = table.n_rows();
        let values = table.values();
        let mask = table.mask();
        let mut cont = Array2::zeros((n, layout.n_cont()));
        let mut cat = Array2::zeros((n, layout.cat_width()));
        for i in 0..n {
            for (c, dim) in layout.cont_dims.iter().enumerate() {
                let j = dim.column();
                if mask[[i, j]] {
                    continue;
                }
                cont[[i, c]] = match *dim {
                    ContDim::Value { column } => self.standardizer.standardize(column, values[[i, j]]),
                    ContDim::OneHot { level, .. } => {
                        if values[[i, j]] as usize == level + 1 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
            }
            for block in &layout.blocks {
                let j = block.column;
                if mask[[i, j]] {
                    continue;
                }
                let level = match &self.bins[j] {
                    Some(bins) => bins.bin_of(values[[i, j]]),
                    None => values[[i, j]] as usize - 1,
                };
                cat[[i, block.offset + level]] = 1.0;
            }
        }
        Ok(EncodedBatch {
            cont,
            cat,
            mask: mask.clone(),
            layout,
            standardizer: self.standardizer.clone(),
        })
    }

    /// Decodes every cell; cells masked in `batch` come back as the missing marker.
    pub fn decode(&self, batch: &EncodedBatch) -> Result<MaskedTable> {
        let layout = &batch.layout;
        let n = batch.n_rows();
        let d = self.schema.len();
        let mut values = Array2::from_elem((n, d), f64::NAN);
        for i in 0..n {
            let mut onehot_best: Vec<Option<(usize, f64)>> = vec![None; d];
            for (c, dim) in layout.cont_dims.iter().enumerate() {
                let v = batch.cont[[i, c]];
                match *dim {
                    ContDim::Value { column } => {
                        values[[i, column]] = self.standardizer.destandardize(column, v)
                    }
                    ContDim::OneHot { column, level } => {
                        let best = &mut onehot_best[column];
                        if best.is_none_or(|(_, b)| v > b) {
                            *best = Some((level, v));
                        }
                    }
                }
            }
            for (j, best) in onehot_best.into_iter().enumerate() {
                if let Some((level, _)) = best {
                    values[[i, j]] = (level + 1) as f64;
                }
            }
            for block in &layout.blocks {
                let row = batch.cat.row(i);
                let level = argmax(row.slice(ndarray::s![block.offset..block.offset + block.k]));
                let j = block.column;
                values[[i, j]] = match &self.bins[j] {
                    Some(bins) => bins.midpoint(level),
                    None => (level + 1) as f64,
                };
            }
        }
        for ((i, j), &m) in batch.mask.indexed_iter() {
            if m {
                values[[i, j]] = f64::NAN;
            }
        }
        MaskedTable::new(self.schema.clone(), values, batch.mask.clone())
    }

    /// Whether a column is scored in standardized units by the metrics.
    pub fn is_continuous(&self, column: usize) -> bool {
        matches!(self.schema.column(column).kind, ColumnKind::Continuous)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;
    use ndarray::array;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            Column::continuous("x"),
            Column::categorical("c", 3),
            Column::ordinal("o", 4),
        ])
        .unwrap()
    }

    fn table() -> MaskedTable {
        MaskedTable::complete(
            schema(),
            array![
                [1.0, 2.0, 1.0],
                [2.0, 1.0, 4.0],
                [3.0, 3.0, 2.0],
                [4.0, 2.0, 3.0],
                [5.0, 1.0, 1.0]
            ],
        )
        .unwrap()
    }

    #[test]
    fn mean_encodes_to_zero_and_category_to_one_hot() {
        let t = table();
        let enc = Encoder::fit(&t, Routing::Hybrid).unwrap();
        let b = enc.encode(&t).unwrap();
        // mean of 1..5 is 3, held by row 2
        assert_eq!(b.cont[[2, 0]], 0.0);
        // category 2 of K = 3 in row 0
        assert_eq!(b.cat.row(0).slice(ndarray::s![0..3]).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn five_row_round_trip_is_identity() {
        let t = table();
        let enc = Encoder::fit(&t, Routing::Hybrid).unwrap();
        let back = enc.decode(&enc.encode(&t).unwrap()).unwrap();
        for (a, b) in t.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for j in 1..3 {
            assert_eq!(t.values().column(j), back.values().column(j));
        }
    }

    #[test]
    fn constant_column_is_rejected() {
        let t = MaskedTable::complete(
            FeatureSchema::new(vec![Column::continuous("k")]).unwrap(),
            array![[2.0], [2.0], [2.0]],
        )
        .unwrap();
        let err = Encoder::fit(&t, Routing::Hybrid).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(_)));
        assert!(err.to_string().contains("remove constant columns"));
    }

    #[test]
    fn standardizer_uses_observed_entries_only() {
        let t = table();
        let mut mask = Array2::from_elem((5, 3), false);
        mask[[4, 0]] = true;
        let masked = t.with_mask(&mask).unwrap();
        let s = Standardizer::fit(&masked).unwrap();
        assert!((s.mean[0] - 2.5).abs() < 1e-12);
        let enc = Encoder::fit(&masked, Routing::Hybrid).unwrap();
        let b = enc.encode(&masked).unwrap();
        let obs: Vec<f64> = (0..4).map(|i| b.cont[[i, 0]]).collect();
        let m = obs.iter().sum::<f64>() / 4.0;
        let v = obs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert!(b.mask_cont()[[4, 0]]);
    }

    #[test]
    fn continuous_only_routing_one_hot_decodes_by_argmax() {
        let t = table();
        let enc = Encoder::fit(&t, Routing::ContinuousOnly).unwrap();
        let layout = enc.layout();
        assert_eq!(layout.n_cont(), 1 + 3 + 4);
        assert_eq!(layout.n_blocks(), 0);
        let back = enc.decode(&enc.encode(&t).unwrap()).unwrap();
        assert_eq!(t.values().column(1), back.values().column(1));
        assert_eq!(t.values().column(2), back.values().column(2));
    }

    #[test]
    fn discrete_only_routing_bins_continuous_columns() {
        let t = table();
        let enc = Encoder::fit(&t, Routing::DiscreteOnly).unwrap();
        let layout = enc.layout();
        assert_eq!(layout.n_cont(), 0);
        assert_eq!(layout.blocks[0].k, DISCRETE_ONLY_BINS);
        let back = enc.decode(&enc.encode(&t).unwrap()).unwrap();
        for (a, b) in t.values().column(0).iter().zip(back.values().column(0)) {
            assert!((a - b).abs() <= 0.4 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(array![0.2, 0.5, 0.5].view()), 1);
        assert_eq!(argmax(array![0.0, 0.0].view()), 0);
    }
}
