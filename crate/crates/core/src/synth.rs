//! Synthetic heterogeneous tables driven by a shared Gaussian latent.

use ndarray::Array2;
use rand::Rng as _;
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::rng;
use crate::table::{Column, FeatureSchema, MaskedTable};

/// Number of latent coordinates each feature reads.
pub const PROJECTION_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub d_cont: usize,
    pub d_cat: usize,
    pub latent_dim: usize,
    /// Cardinalities drawn uniformly per categorical column.
    pub cat_levels: Vec<usize>,
    pub sigma: f64,
    pub sigma_cat: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 10_000,
            d_cont: 15,
            d_cat: 15,
            latent_dim: 15,
            cat_levels: vec![3, 4, 5],
            sigma: 0.1,
            sigma_cat: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 {
            return bad("synthetic n must be at least 1".into());
        }
        if self.d_cont + self.d_cat == 0 {
            return bad("synthetic table needs at least one column".into());
        }
        if self.latent_dim < PROJECTION_DIM {
            return bad(format!("latent dimension must be at least {PROJECTION_DIM}"));
        }
        if self.cat_levels.is_empty() || self.cat_levels.iter().any(|k| !(3..=5).contains(k)) {
            return bad("categorical cardinalities must be drawn from {3, 4, 5}".into());
        }
        if !(self.sigma >= 0.0 && self.sigma_cat >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        Ok(())
    }

    pub fn schema(&self, coefficients: &SynthCoefficients) -> Result<FeatureSchema> {
        let mut cols: Vec<Column> = (0..self.d_cont)
            .map(|k| Column::continuous(format!("num_{}", k + 1)))
            .collect();
        cols.extend(
            coefficients
                .categorical
                .iter()
                .enumerate()
                .map(|(j, c)| Column::categorical(format!("cat_{}", j + 1), c.weights.len())),
        );
        FeatureSchema::new(cols)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContinuousCoefficients {
    /// Latent coordinates read by this feature.
    pub latent: Vec<usize>,
    pub a: Vec<f64>,
    pub b: f64,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CategoricalCoefficients {
    pub latent: Vec<usize>,
    /// One row of projection weights per category.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthCoefficients {
    pub continuous: Vec<ContinuousCoefficients>,
    pub categorical: Vec<CategoricalCoefficients>,
}

impl SynthCoefficients {
    /// Draws the generator coefficients for `config` from its seed.
    pub fn sample(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::child_rng(config.seed, u64::MAX);
        let unit = Uniform::new(0.5, 1.5).expect("valid range");
        let normal4 = |r: &mut rng::Rng| -> Vec<f64> {
            (0..PROJECTION_DIM).map(|_| StandardNormal.sample(r)).collect()
        };
        let mut continuous = Vec::with_capacity(config.d_cont);
        for _ in 0..config.d_cont {
            let latent = sample(&mut r, config.latent_dim, PROJECTION_DIM).into_vec();
            let a = normal4(&mut r);
            let b = unit.sample(&mut r);
            let c = normal4(&mut r);
            continuous.push(ContinuousCoefficients { latent, a, b, c });
        }
        let mut categorical = Vec::with_capacity(config.d_cat);
        for _ in 0..config.d_cat {
            let k = config.cat_levels[r.random_range(0..config.cat_levels.len())];
            let latent = sample(&mut r, config.latent_dim, PROJECTION_DIM).into_vec();
            let weights = (0..k).map(|_| normal4(&mut r)).collect();
            categorical.push(CategoricalCoefficients { latent, weights });
        }
        Ok(SynthCoefficients { continuous, categorical })
    }

    fn check(&self, config: &SynthConfig) -> Result<()> {
        let ok_latent = |l: &[usize]| l.len() == PROJECTION_DIM && l.iter().all(|&i| i < config.latent_dim);
        let cont_ok = self.continuous.len() == config.d_cont
            && self.continuous.iter().all(|c| {
                ok_latent(&c.latent) && c.a.len() == PROJECTION_DIM && c.c.len() == PROJECTION_DIM
            });
        let cat_ok = self.categorical.len() == config.d_cat
            && self.categorical.iter().all(|c| {
                ok_latent(&c.latent)
                    && (3..=5).contains(&c.weights.len())
                    && c.weights.iter().all(|w| w.len() == PROJECTION_DIM)
            });
        if cont_ok && cat_ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("coefficients do not match the synthetic config".into()))
        }
    }
}

fn project(z: &[f64], latent: &[usize], w: &[f64]) -> f64 {
    latent.iter().zip(w).map(|(&i, &wi)| z[i] * wi).sum()
}

/// Generates a fully observed table with freshly drawn coefficients.
pub fn generate_dataset(config: &SynthConfig) -> Result<(MaskedTable, SynthCoefficients)> {
    let coefficients = SynthCoefficients::sample(config)?;
    let table = generate_with(config, &coefficients)?;
    Ok((table, coefficients))
}

/// Generates a fully observed table from given coefficients.
pub fn generate_with(config: &SynthConfig, coefficients: &SynthCoefficients) -> Result<MaskedTable> {
    config.validate()?;
    coefficients.check(config)?;
    let schema = config.schema(coefficients)?;
    let d = config.d_cont + config.d_cat;
    let noise = Normal::new(0.0, config.sigma).expect("sigma validated");
    let cat_noise = Normal::new(0.0, config.sigma_cat).expect("sigma_cat validated");
    let mut values = Array2::zeros((config.n, d));
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let mut r = rng::child_rng(config.seed, i as u64);
        let z: Vec<f64> = (0..config.latent_dim).map(|_| StandardNormal.sample(&mut r)).collect();
        for (k, c) in coefficients.continuous.iter().enumerate() {
            row[k] = project(&z, &c.latent, &c.a)
                + c.b * project(&z, &c.latent, &c.c).tanh()
                + noise.sample(&mut r);
        }
        for (j, c) in coefficients.categorical.iter().enumerate() {
            let logits: Vec<f64> = c
                .weights
                .iter()
                .map(|w| project(&z, &c.latent, w) + cat_noise.sample(&mut r))
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = r.random::<f64>() * total;
            let mut category = weights.len();
            for (idx, w) in weights.iter().enumerate() {
                if u < *w {
                    category = idx + 1;
                    break;
                }
                u -= w;
            }
            row[config.d_cont + j] = category as f64;
        }
    }
    MaskedTable::complete(schema, values)
}
