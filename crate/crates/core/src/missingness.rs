//! Missingness generators (MCAR / MAR / MNAR) and training-time self-masking.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::encode::quantile_sorted;
use crate::error::{Error, Result};
use crate::rng;
use crate::table::{FeatureSchema, Mask, MaskedTable};

/// Default rate grid.
pub const DEFAULT_RATES: [f64; 3] = [0.3, 0.5, 0.7];
/// Default MNAR tail quantile.
pub const DEFAULT_MNAR_QUANTILE: f64 = 0.10;
/// Missing-probability multiplier applied to MNAR extremes.
pub const MNAR_ELEVATION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar];

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            "mnar" => Ok(Mechanism::Mnar),
            other => Err(Error::InvalidArgument(format!("unknown mechanism '{other}'"))),
        }
    }
}

/// When a MAR driver value triggers masking of its target.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    AboveMean,
    BelowMean,
    /// Fires strictly above the given percentile (0..=100) of the driver.
    Percentile(f64),
}

impl std::str::FromStr for ThresholdRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "above-mean" => Ok(ThresholdRule::AboveMean),
            "below-mean" => Ok(ThresholdRule::BelowMean),
            _ => {
                let p = s
                    .strip_prefix('p')
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|p| (0.0..=100.0).contains(p))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown threshold rule '{s}' (use above-mean, below-mean or pNN)"
                        ))
                    })?;
                Ok(ThresholdRule::Percentile(p))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MarRule {
    pub target: usize,
    pub driver: usize,
    pub rule: ThresholdRule,
}

/// Full description of a mask to generate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MechanismSpec {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seed: u64,
    /// MAR target/driver pairs; empty means [`default_mar_rules`].
    pub mar: Vec<MarRule>,
    pub mnar_quantile: f64,
    /// Per categorical column, categories (1-based) masked first under MNAR.
    pub mnar_categories: BTreeMap<usize, Vec<usize>>,
}

impl MechanismSpec {
    pub fn new(mechanism: Mechanism, rate: f64, seed: u64) -> Self {
        MechanismSpec {
            mechanism,
            rate,
            seed,
            mar: Vec::new(),
            mnar_quantile: DEFAULT_MNAR_QUANTILE,
            mnar_categories: BTreeMap::new(),
        }
    }

    /// Generates the mask on a (typically fully observed) table.
    pub fn generate(&self, table: &MaskedTable) -> Result<Mask> {
        match self.mechanism {
            Mechanism::Mcar => gen_mcar(table.n_rows(), table.n_cols(), self.rate, self.seed),
            Mechanism::Mar => {
                let rules = if self.mar.is_empty() {
                    default_mar_rules(table.schema(), self.rate)
                } else {
                    self.mar.clone()
                };
                gen_mar(table, self.rate, &rules, self.seed)
            }
            Mechanism::Mnar => gen_mnar(
                table,
                self.rate,
                self.mnar_quantile,
                &self.mnar_categories,
                self.seed,
            ),
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "missing rate {rate} must lie in (0, 1)"
        )))
    }
}

/// Each entry missing independently with probability `rate`.
pub fn gen_mcar(n: usize, d: usize, rate: f64, seed: u64) -> Result<Mask> {
    check_rate(rate)?;
    let mut rng = rng::rng(seed);
    Ok(Array2::from_shape_simple_fn((n, d), || rng.random::<f64>() < rate))
}

/// Every column targeted, driven by the next continuous column to its right
/// (cyclically; any other column when none is continuous), firing above the
/// percentile that leaves `rate / 0.8` of rows eligible.
///
/// Continuous drivers are preferred because ties in a categorical driver make
/// a percentile threshold fire on fewer rows than intended.
pub fn default_mar_rules(schema: &FeatureSchema, rate: f64) -> Vec<MarRule> {
    let d = schema.len();
    if d < 2 {
        return Vec::new();
    }
    let eligible = (rate / 0.8).min(1.0);
    let is_cont = |j: usize| schema.column(j).kind.is_continuous();
    (0..d)
        .map(|target| {
            let next = |pred: &dyn Fn(usize) -> bool| {
                (1..d).map(|k| (target + k) % d).find(|&j| pred(j))
            };
            let driver = next(&is_cont).unwrap_or((target + 1) % d);
            MarRule {
                target,
                driver,
                rule: ThresholdRule::Percentile(100.0 * (1.0 - eligible)),
            }
        })
        .collect()
}

fn observed_column(table: &MaskedTable, j: usize) -> Vec<f64> {
    table
        .values()
        .column(j)
        .iter()
        .zip(table.mask().column(j))
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .collect()
}

/// Rows where `rule` fires on `driver` (a fully observed column).
pub fn rule_fires(driver: ArrayView1<f64>, rule: ThresholdRule) -> Vec<bool> {
    let threshold = match rule {
        ThresholdRule::AboveMean | ThresholdRule::BelowMean => {
            driver.sum() / driver.len() as f64
        }
        ThresholdRule::Percentile(p) => {
            let mut sorted = driver.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            quantile_sorted(&sorted, p / 100.0)
        }
    };
    driver
        .iter()
        .map(|&v| match rule {
            ThresholdRule::BelowMean => v < threshold,
            _ => v > threshold,
        })
        .collect()
}

/// Masks target cells only where their driver rule fires, subsampled so the
/// target columns reach `rate`. Target values never enter the decision.
pub fn gen_mar(table: &MaskedTable, rate: f64, rules: &[MarRule], seed: u64) -> Result<Mask> {
    check_rate(rate)?;
    if rules.is_empty() {
        return Err(Error::InvalidArgument("MAR needs at least one target/driver rule".into()));
    }
    let (n, d) = (table.n_rows(), table.n_cols());
    let mut targets = BTreeSet::new();
    let mut fired: BTreeSet<(usize, usize)> = BTreeSet::new();
    for r in rules {
        if r.target >= d || r.driver >= d {
            return Err(Error::InvalidArgument(format!("MAR rule {r:?} out of range")));
        }
        if r.target == r.driver {
            return Err(Error::InvalidArgument(format!(
                "MAR driver must differ from target (column {})",
                r.target
            )));
        }
        if table.mask().column(r.driver).iter().any(|&m| m) {
            return Err(Error::InvalidArgument(format!(
                "MAR driver column '{}' must be fully observed",
                table.schema().column(r.driver).name
            )));
        }
        targets.insert(r.target);
        let fires = rule_fires(table.values().column(r.driver), r.rule);
        for (i, f) in fires.into_iter().enumerate() {
            if f && !table.is_missing(i, r.target) {
                fired.insert((i, r.target));
            }
        }
    }
    let pool = n * targets.len();
    let needed = (rate * pool as f64).round() as usize;
    if fired.len() < needed {
        return Err(Error::UnreachableRate {
            requested: rate,
            max_rate: fired.len() as f64 / pool as f64,
        });
    }
    let mut cells: Vec<(usize, usize)> = fired.into_iter().collect();
    let mut rng = rng::rng(seed);
    cells.shuffle(&mut rng);
    let mut mask = Array2::from_elem((n, d), false);
    for &(i, j) in &cells[..needed] {
        mask[[i, j]] = true;
    }
    Ok(mask)
}

/// Self-dependent masking. Continuous columns: cells in the lower or upper
/// `quantile` tail are masked with probability `min(1, 3 rate)`, the rest at
/// the rate that restores `rate` per column. Categorical columns: whole
/// categories are masked in order (listed targets first, then by descending
/// frequency) until the column reaches `rate`.
pub fn gen_mnar(
    table: &MaskedTable,
    rate: f64,
    quantile: f64,
    cat_targets: &BTreeMap<usize, Vec<usize>>,
    seed: u64,
) -> Result<Mask> {
    check_rate(rate)?;
    if !(quantile > 0.0 && quantile < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "MNAR tail quantile {quantile} must lie in (0, 0.5)"
        )));
    }
    let (n, d) = (table.n_rows(), table.n_cols());
    let mut mask = Array2::from_elem((n, d), false);
    for j in 0..d {
        let mut rng = rng::child_rng(seed, j as u64);
        let rows: Vec<usize> = (0..n).filter(|&i| !table.is_missing(i, j)).collect();
        let needed = (rate * rows.len() as f64).round() as usize;
        let column = table.schema().column(j);
        let chosen = match column.kind.cardinality() {
            None => {
                let observed = observed_column(table, j);
                let mut sorted = observed.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let lo = quantile_sorted(&sorted, quantile);
                let hi = quantile_sorted(&sorted, 1.0 - quantile);
                let (mut extreme, mut inner): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| {
                        let v = table.values()[[i, j]];
                        v <= lo || v >= hi
                    });
                let mut k_ext = ((MNAR_ELEVATION * rate).min(1.0) * extreme.len() as f64)
                    .round() as usize;
                k_ext = k_ext.min(needed).min(extreme.len());
                if needed - k_ext > inner.len() {
                    k_ext = needed - inner.len();
                }
                extreme.shuffle(&mut rng);
                inner.shuffle(&mut rng);
                let mut chosen = extreme[..k_ext].to_vec();
                chosen.extend_from_slice(&inner[..needed - k_ext]);
                chosen
            }
            Some(k) => {
                let mut by_cat: Vec<Vec<usize>> = vec![Vec::new(); k];
                for &i in &rows {
                    by_cat[table.values()[[i, j]] as usize - 1].push(i);
                }
                let mut order: Vec<usize> = Vec::new();
                for &c in cat_targets.get(&j).map(Vec::as_slice).unwrap_or(&[]) {
                    if c == 0 || c > k {
                        return Err(Error::InvalidArgument(format!(
                            "MNAR target category {c} outside 1..={k} for column '{}'",
                            column.name
                        )));
                    }
                    if !order.contains(&(c - 1)) {
                        order.push(c - 1);
                    }
                }
                let mut rest: Vec<usize> = (0..k).filter(|c| !order.contains(c)).collect();
                rest.sort_by(|&a, &b| by_cat[b].len().cmp(&by_cat[a].len()).then(a.cmp(&b)));
                order.extend(rest);
                let mut chosen = Vec::with_capacity(needed);
                for c in order {
                    if chosen.len() >= needed {
                        break;
                    }
                    let mut cells = by_cat[c].clone();
                    let room = needed - chosen.len();
                    if cells.len() > room {
                        cells.shuffle(&mut rng);
                        cells.truncate(room);
                    }
                    chosen.extend(cells);
                }
                if chosen.len() < needed {
                    return Err(Error::UnreachableRate {
                        requested: rate,
                        max_rate: chosen.len() as f64 / n as f64,
                    });
                }
                chosen
            }
        };
        for i in chosen {
            mask[[i, j]] = true;
        }
    }
    Ok(mask)
}

/// Fraction of `true` entries.
pub fn achieved_rate(mask: &Mask) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    Ok(mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64)
}

/// Pearson correlation between a binary indicator and a numeric column.
pub fn point_biserial(indicator: ArrayView1<bool>, values: ArrayView1<f64>) -> f64 {
    let n = values.len() as f64;
    let x: Vec<f64> = indicator.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = values.sum() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, &b) in x.iter().zip(values) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Result of self-masking a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfMask {
    /// Training mask: the original mask plus the pseudo-targets.
    pub mask: Mask,
    /// Newly masked, originally observed cells.
    pub pseudo: Mask,
}

fn rebalanced(fraction_high: f64, rate: f64, factor: f64) -> (f64, f64) {
    let p_high = (factor * rate).min(1.0);
    if fraction_high >= 1.0 {
        return (rate, rate);
    }
    let p_low = ((rate - fraction_high * p_high) / (1.0 - fraction_high)).clamp(0.0, 1.0);
    (p_high, p_low)
}

/// Hides a share `ratio` of the observed cells to create supervision targets.
///
/// `values` holds the batch's raw cells (NaN where missing); MAR and MNAR
/// schemes use it to tilt which observed cells are hidden. Originally
/// missing cells are never pseudo-targets.
pub fn self_mask_augment(
    mask: &Mask,
    ratio: f64,
    scheme: Mechanism,
    values: ArrayView2<f64>,
    schema: &FeatureSchema,
    seed: u64,
) -> Result<SelfMask> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "self-mask ratio {ratio} must lie in [0, 1)"
        )));
    }
    if values.dim() != mask.dim() || mask.ncols() != schema.len() {
        return Err(Error::Shape("values, mask and schema disagree".into()));
    }
    let (n, d) = mask.dim();
    let mut probs = Array2::from_elem((n, d), ratio);
    if ratio > 0.0 {
        match scheme {
            Mechanism::Mcar => {}
            Mechanism::Mar if d >= 2 => {
                for j in 0..d {
                    let driver = (j + 1) % d;
                    let obs: Vec<f64> = (0..n)
                        .filter(|&i| !mask[[i, driver]])
                        .map(|i| values[[i, driver]])
                        .collect();
                    if obs.is_empty() {
                        continue;
                    }
                    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
                    let high: Vec<bool> = (0..n)
                        .map(|i| !mask[[i, driver]] && values[[i, driver]] > mean)
                        .collect();
                    tilt_column(&mut probs, mask, j, &high, ratio, 2.0);
                }
            }
            Mechanism::Mar => {}
            Mechanism::Mnar => {
                for j in 0..d {
                    let rows: Vec<usize> = (0..n).filter(|&i| !mask[[i, j]]).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let high: Vec<bool> = if schema.column(j).kind.is_continuous() {
                        let mut sorted: Vec<f64> = rows.iter().map(|&i| values[[i, j]]).collect();
                        sorted.sort_by(|a, b| a.total_cmp(b));
                        let lo = quantile_sorted(&sorted, DEFAULT_MNAR_QUANTILE);
                        let hi = quantile_sorted(&sorted, 1.0 - DEFAULT_MNAR_QUANTILE);
                        (0..n)
                            .map(|i| !mask[[i, j]] && (values[[i, j]] <= lo || values[[i, j]] >= hi))
                            .collect()
                    } else {
                        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
                        for &i in &rows {
                            *counts.entry(values[[i, j]] as i64).or_default() += 1;
                        }
                        let top = counts
                            .iter()
                            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                            .map(|(&c, _)| c)
                            .expect("non-empty");
                        (0..n)
                            .map(|i| !mask[[i, j]] && values[[i, j]] as i64 == top)
                            .collect()
                    };
                    tilt_column(&mut probs, mask, j, &high, ratio, MNAR_ELEVATION);
                }
            }
        }
    }
    let mut rng = rng::rng(seed);
    let mut out = mask.clone();
    let mut pseudo = Array2::from_elem((n, d), false);
    for ((i, j), &p) in probs.indexed_iter() {
        let u: f64 = rng.random();
        if !mask[[i, j]] && u < p {
            out[[i, j]] = true;
            pseudo[[i, j]] = true;
        }
    }
    Ok(SelfMask { mask: out, pseudo })
}

fn tilt_column(probs: &mut Array2<f64>, mask: &Mask, j: usize, high: &[bool], ratio: f64, factor: f64) {
    let observed = (0..mask.nrows()).filter(|&i| !mask[[i, j]]).count();
    if observed == 0 {
        return;
    }
    let n_high = high.iter().filter(|&&h| h).count();
    let (p_high, p_low) = rebalanced(n_high as f64 / observed as f64, ratio, factor);
    for (i, &h) in high.iter().enumerate() {
        probs[[i, j]] = if h { p_high } else { p_low };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;
    use ndarray::Array1;

    fn uniform_table(n: usize, seed: u64) -> MaskedTable {
        let schema = FeatureSchema::new(vec![
            Column::continuous("u"),
            Column::continuous("v"),
            Column::categorical("c", 4),
        ])
        .unwrap();
        let mut r = rng::rng(seed);
        let values = Array2::from_shape_fn((n, 3), |(_, j)| match j {
            2 => r.random_range(1..=4) as f64,
            _ => r.random::<f64>(),
        });
        MaskedTable::complete(schema, values).unwrap()
    }

    #[test]
    fn mcar_rates_and_determinism() {
        let tiny = gen_mcar(10, 10, 1e-12, 1).unwrap();
        assert!(achieved_rate(&tiny).unwrap() < 0.05);
        let m = gen_mcar(100, 100, 0.3, 4).unwrap();
        let r = achieved_rate(&m).unwrap();
        assert!((0.28..=0.32).contains(&r), "{r}");
        assert_eq!(m, gen_mcar(100, 100, 0.3, 4).unwrap());
        assert!(gen_mcar(3, 3, 1.5, 0).is_err());
        assert!(gen_mcar(3, 3, 0.0, 0).is_err());
    }

    #[test]
    fn achieved_rate_examples() {
        assert_eq!(achieved_rate(&Array2::from_elem((2, 5), false)).unwrap(), 0.0);
        assert_eq!(achieved_rate(&Array2::from_elem((2, 5), true)).unwrap(), 1.0);
        let m = Array2::from_shape_fn((1, 10), |(_, j)| j < 3);
        assert!((achieved_rate(&m).unwrap() - 0.3).abs() < 1e-15);
        assert!(achieved_rate(&Array2::from_elem((0, 0), false)).is_err());
    }

    #[test]
    fn mar_with_constant_driver_fails() {
        let schema = FeatureSchema::new(vec![Column::continuous("t"), Column::continuous("k")]).unwrap();
        let values = Array2::from_shape_fn((20, 2), |(i, j)| if j == 0 { i as f64 } else { 1.0 });
        let table = MaskedTable::complete(schema, values).unwrap();
        let rules = [MarRule { target: 0, driver: 1, rule: ThresholdRule::AboveMean }];
        match gen_mar(&table, 0.3, &rules, 0) {
            Err(Error::UnreachableRate { max_rate, .. }) => assert_eq!(max_rate, 0.0),
            other => panic!("expected unreachable rate, got {other:?}"),
        }
    }

    #[test]
    fn mar_median_rule_selects_top_half() {
        let n = 40;
        let schema = FeatureSchema::new(vec![Column::continuous("t"), Column::continuous("idx")]).unwrap();
        let values = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { (i * 7 % 13) as f64 } else { i as f64 * 0.5 });
        let table = MaskedTable::complete(schema, values).unwrap();
        let fires = rule_fires(table.values().column(1), ThresholdRule::Percentile(50.0));
        let expected: Vec<bool> = (0..n).map(|i| i >= n / 2).collect();
        assert_eq!(fires, expected);
        let rules = [MarRule { target: 0, driver: 1, rule: ThresholdRule::Percentile(50.0) }];
        let m = gen_mar(&table, 0.3, &rules, 9).unwrap();
        assert_eq!(m.column(0).iter().filter(|&&b| b).count(), 12);
        assert!((0..n / 2).all(|i| !m[[i, 0]]));
        assert!(m.column(1).iter().all(|&b| !b));
    }

    #[test]
    fn mar_ignores_target_values() {
        let table = uniform_table(500, 3);
        let rules = [MarRule { target: 0, driver: 1, rule: ThresholdRule::AboveMean }];
        let a = gen_mar(&table, 0.3, &rules, 5).unwrap();
        let mut permuted = table.values().clone();
        let col: Vec<f64> = permuted.column(0).iter().rev().cloned().collect();
        permuted.column_mut(0).assign(&Array1::from(col));
        let t2 = MaskedTable::complete(table.schema().clone(), permuted).unwrap();
        assert_eq!(a, gen_mar(&t2, 0.3, &rules, 5).unwrap());
    }

    #[test]
    fn mar_rejects_self_driver() {
        let table = uniform_table(10, 1);
        let rules = [MarRule { target: 0, driver: 0, rule: ThresholdRule::AboveMean }];
        assert!(gen_mar(&table, 0.3, &rules, 0).is_err());
    }

    #[test]
    fn mnar_elevates_extremes() {
        let table = uniform_table(5000, 11);
        let m = gen_mnar(&table, 0.3, 0.1, &BTreeMap::new(), 2).unwrap();
        let col = table.values().column(0);
        let (mut ext, mut ext_m, mut inn, mut inn_m) = (0, 0, 0, 0);
        for i in 0..5000 {
            let v = col[i];
            if !(0.1..0.9).contains(&v) {
                ext += 1;
                ext_m += m[[i, 0]] as usize;
            } else {
                inn += 1;
                inn_m += m[[i, 0]] as usize;
            }
        }
        assert!(ext_m as f64 / ext as f64 > inn_m as f64 / inn as f64);
        let r = achieved_rate(&m).unwrap();
        assert!((r - 0.3).abs() < 0.02);
    }

    #[test]
    fn mnar_single_category_column_is_uniform_subsample() {
        let schema = FeatureSchema::new(vec![Column::categorical("c", 3)]).unwrap();
        let table = MaskedTable::complete(schema, Array2::from_elem((1000, 1), 2.0)).unwrap();
        let m = gen_mnar(&table, 0.3, 0.1, &BTreeMap::new(), 4).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 300);
    }

    #[test]
    fn mnar_target_category_with_exact_mass_is_the_only_one_masked() {
        let schema = FeatureSchema::new(vec![Column::categorical("c", 3)]).unwrap();
        // 30% category 3, 50% category 1, 20% category 2
        let values = Array2::from_shape_fn((100, 1), |(i, _)| match i % 10 {
            0..=2 => 3.0,
            3..=7 => 1.0,
            _ => 2.0,
        });
        let table = MaskedTable::complete(schema, values.clone()).unwrap();
        let targets = BTreeMap::from([(0, vec![3])]);
        let m = gen_mnar(&table, 0.3, 0.1, &targets, 4).unwrap();
        for i in 0..100 {
            assert_eq!(m[[i, 0]], values[[i, 0]] == 3.0);
        }
    }

    #[test]
    fn self_mask_contracts() {
        let schema = FeatureSchema::new((0..10).map(|j| Column::continuous(format!("x{j}"))).collect()).unwrap();
        let values = Array2::from_shape_fn((100, 10), |(i, j)| ((i * 31 + j * 17) % 23) as f64);
        let none = Array2::from_elem((100, 10), false);
        let zero = self_mask_augment(&none, 0.0, Mechanism::Mcar, values.view(), &schema, 1).unwrap();
        assert_eq!(zero.mask, none);
        assert!(zero.pseudo.iter().all(|&b| !b));
        for scheme in Mechanism::ALL {
            let s = self_mask_augment(&none, 0.3, scheme, values.view(), &schema, 2).unwrap();
            let count = s.pseudo.iter().filter(|&&b| b).count();
            assert!((270..=330).contains(&count), "{scheme}: {count}");
        }
        let mut base = gen_mcar(100, 10, 0.4, 3).unwrap();
        base[[0, 0]] = true;
        for seed in 0..20 {
            let s = self_mask_augment(&base, 0.5, Mechanism::Mcar, values.view(), &schema, seed).unwrap();
            for ((i, j), &p) in s.pseudo.indexed_iter() {
                assert!(!(p && base[[i, j]]));
                assert!(s.mask[[i, j]] || !base[[i, j]]);
                assert_eq!(s.mask[[i, j]], base[[i, j]] || p);
            }
        }
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("above-mean".parse::<ThresholdRule>().unwrap(), ThresholdRule::AboveMean);
        assert_eq!("p75".parse::<ThresholdRule>().unwrap(), ThresholdRule::Percentile(75.0));
        assert!("p175".parse::<ThresholdRule>().is_err());
        assert_eq!("MNAR".parse::<Mechanism>().unwrap(), Mechanism::Mnar);
    }

    #[test]
    fn point_biserial_of_independent_columns_is_small() {
        let values = Array1::from_shape_fn(10_000, |i| ((i * 7919) % 1000) as f64);
        let mask = gen_mcar(10_000, 1, 0.3, 8).unwrap();
        assert!(point_biserial(mask.column(0), values.view()).abs() < 0.05);
        let dep: Vec<bool> = values.iter().map(|&v| v > 500.0).collect();
        assert!(point_biserial(Array1::from(dep).view(), values.view()) > 0.5);
    }
}
