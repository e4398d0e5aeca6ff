//! Conditional noise and logit predictors shared by the two channels.

use ndarray::{s, Array2, ArrayView2};

use crate::encode::{EncodedBatch, Layout};
use crate::error::{Error, Result};
use crate::nn::{timestep_embedding, Mlp, MlpShape, MlpTape, Parameters};
use crate::table::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DenoiserConfig {
    pub hidden: usize,
    /// Hidden layers per network; 0 makes each head a linear map.
    pub depth: usize,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 256,
            depth: 2,
            time_dim: 64,
        }
    }
}

/// Conditioning signal shared by both networks.
///
/// Unavailable cells (missing, or held out as training targets) hold zero in
/// the observed slots and 1 in the `hidden_*` indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningContext {
    pub obs_cont: Array2<f64>,
    pub hidden_cont: Array2<f64>,
    pub obs_cat: Array2<f64>,
    pub hidden_cat: Array2<f64>,
    /// Continuous-channel estimates, read by the discrete network.
    pub cross_cont: Option<Array2<f64>>,
    /// Discrete-channel estimates, read by the continuous network.
    pub cross_cat: Option<Array2<f64>>,
    layout: Layout,
}

impl ConditioningContext {
    /// Context from the cells of `batch` not flagged in `unavailable`
    /// (column-level, `true` = withheld).
    pub fn new(batch: &EncodedBatch, unavailable: &Mask) -> Result<Self> {
        if unavailable.dim() != batch.mask.dim() {
            return Err(Error::Shape("availability mask does not match batch".into()));
        }
        let layout = batch.layout.clone();
        let n = batch.n_rows();
        let mut obs_cont = batch.cont.clone();
        let mut hidden_cont = Array2::zeros((n, layout.n_cont()));
        for i in 0..n {
            for (c, dim) in layout.cont_dims.iter().enumerate() {
                if unavailable[[i, dim.column()]] || batch.mask[[i, dim.column()]] {
                    obs_cont[[i, c]] = 0.0;
                    hidden_cont[[i, c]] = 1.0;
                }
            }
        }
        let mut obs_cat = batch.cat.clone();
        let mut hidden_cat = Array2::zeros((n, layout.n_blocks()));
        for i in 0..n {
            for (b, block) in layout.blocks.iter().enumerate() {
                if unavailable[[i, block.column]] || batch.mask[[i, block.column]] {
                    obs_cat
                        .slice_mut(s![i, block.offset..block.offset + block.k])
                        .fill(0.0);
                    hidden_cat[[i, b]] = 1.0;
                }
            }
        }
        Ok(ConditioningContext {
            obs_cont,
            hidden_cont,
            obs_cat,
            hidden_cat,
            cross_cont: None,
            cross_cat: None,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_rows(&self) -> usize {
        self.obs_cont.nrows()
    }

    /// Installs continuous estimates at withheld coordinates (zero elsewhere).
    pub fn set_cross_cont(&mut self, estimates: ArrayView2<f64>) {
        let mut x = estimates.to_owned();
        x.zip_mut_with(&self.hidden_cont, |v, &h| *v *= h);
        self.cross_cont = Some(x);
    }

    /// Installs discrete estimates (probability blocks) at withheld blocks.
    pub fn set_cross_cat(&mut self, estimates: ArrayView2<f64>) {
        let mut x = estimates.to_owned();
        for i in 0..x.nrows() {
            for (b, block) in self.layout.blocks.iter().enumerate() {
                if self.hidden_cat[[i, b]] == 0.0 {
                    x.slice_mut(s![i, block.offset..block.offset + block.k])
                        .fill(0.0);
                }
            }
        }
        self.cross_cat = Some(x);
    }

    pub fn clear_cross(&mut self) {
        self.cross_cont = None;
        self.cross_cat = None;
    }

    /// Row subset, for minibatching.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), rows);
        ConditioningContext {
            obs_cont: pick(&self.obs_cont),
            hidden_cont: pick(&self.hidden_cont),
            obs_cat: pick(&self.obs_cat),
            hidden_cat: pick(&self.hidden_cat),
            cross_cont: self.cross_cont.as_ref().map(pick),
            cross_cat: self.cross_cat.as_ref().map(pick),
            layout: self.layout.clone(),
        }
    }
}

fn cont_input_width(layout: &Layout, time_dim: usize) -> usize {
    3 * layout.n_cont() + 2 * layout.cat_width() + layout.n_blocks() + 1 + time_dim
}

fn disc_input_width(layout: &Layout, time_dim: usize) -> usize {
    2 * layout.cat_width() + layout.n_blocks() + 3 * layout.n_cont() + 1 + time_dim
}

/// Trainable parameters of both networks. A network is absent when its
/// channel has no coordinates under the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub cont: Option<Mlp>,
    pub disc: Option<Mlp>,
}

impl DenoiserParams {
    pub fn new(layout: &Layout, config: DenoiserConfig, seed: u64) -> Self {
        let cont = (layout.n_cont() > 0).then(|| {
            Mlp::new(
                MlpShape {
                    input: cont_input_width(layout, config.time_dim),
                    hidden: config.hidden,
                    depth: config.depth,
                    output: layout.n_cont(),
                },
                crate::rng::child_seed(seed, 1),
            )
        });
        let disc = (layout.n_blocks() > 0).then(|| {
            Mlp::new(
                MlpShape {
                    input: disc_input_width(layout, config.time_dim),
                    hidden: config.hidden,
                    depth: config.depth,
                    output: layout.cat_width(),
                },
                crate::rng::child_seed(seed, 2),
            )
        });
        DenoiserParams { config, cont, disc }
    }

    pub fn zeros_like(&self) -> Self {
        DenoiserParams {
            config: self.config,
            cont: self.cont.as_ref().map(Mlp::zeros_like),
            disc: self.disc.as_ref().map(Mlp::zeros_like),
        }
    }

    pub fn cont_net(&self) -> Result<&Mlp> {
        self.cont
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("layout has no continuous coordinates".into()))
    }

    pub fn disc_net(&self) -> Result<&Mlp> {
        self.disc
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("layout has no categorical blocks".into()))
    }

    pub fn cont_input(
        &self,
        x_t: ArrayView2<f64>,
        t: &[usize],
        ctx: &ConditioningContext,
    ) -> Result<Array2<f64>> {
        let layout = ctx.layout();
        let n = ctx.n_rows();
        check_rows(x_t, t, n, layout.n_cont())?;
        let td = self.config.time_dim;
        let mut input = Array2::zeros((n, cont_input_width(layout, td)));
        let cross = ctx.cross_cat.as_ref();
        let parts: [(ArrayView2<f64>, usize); 6] = [
            (x_t, layout.n_cont()),
            (ctx.hidden_cont.view(), layout.n_cont()),
            (ctx.obs_cont.view(), layout.n_cont()),
            (ctx.obs_cat.view(), layout.cat_width()),
            (ctx.hidden_cat.view(), layout.n_blocks()),
            (
                cross.map(|c| c.view()).unwrap_or_else(|| ArrayView2::from_shape((0, 0), &[]).unwrap()),
                layout.cat_width(),
            ),
        ];
        fill_input(&mut input, &parts, cross.is_some(), t, td);
        Ok(input)
    }

    pub fn disc_input(
        &self,
        p_t: ArrayView2<f64>,
        t: &[usize],
        ctx: &ConditioningContext,
    ) -> Result<Array2<f64>> {
        let layout = ctx.layout();
        let n = ctx.n_rows();
        check_rows(p_t, t, n, layout.cat_width())?;
        let td = self.config.time_dim;
        let mut input = Array2::zeros((n, disc_input_width(layout, td)));
        let cross = ctx.cross_cont.as_ref();
        let parts: [(ArrayView2<f64>, usize); 6] = [
            (p_t, layout.cat_width()),
            (ctx.hidden_cat.view(), layout.n_blocks()),
            (ctx.obs_cat.view(), layout.cat_width()),
            (ctx.obs_cont.view(), layout.n_cont()),
            (ctx.hidden_cont.view(), layout.n_cont()),
            (
                cross.map(|c| c.view()).unwrap_or_else(|| ArrayView2::from_shape((0, 0), &[]).unwrap()),
                layout.n_cont(),
            ),
        ];
        fill_input(&mut input, &parts, cross.is_some(), t, td);
        Ok(input)
    }

    /// Noise prediction for every continuous coordinate of the batch.
    pub fn predict_noise(
        &self,
        x_t: ArrayView2<f64>,
        t: &[usize],
        ctx: &ConditioningContext,
    ) -> Result<Array2<f64>> {
        let input = self.cont_input(x_t, t, ctx)?;
        Ok(self.cont_net()?.forward(input.view()))
    }

    pub fn predict_noise_tape(
        &self,
        x_t: ArrayView2<f64>,
        t: &[usize],
        ctx: &ConditioningContext,
    ) -> Result<(Array2<f64>, MlpTape)> {
        let input = self.cont_input(x_t, t, ctx)?;
        Ok(self.cont_net()?.forward_tape(input.view()))
    }

    /// Logits for every categorical block of the batch.
    pub fn predict_logits(
        &self,
        p_t: ArrayView2<f64>,
        t: &[usize],
        ctx: &ConditioningContext,
    ) -> Result<Array2<f64>> {
        let input = self.disc_input(p_t, t, ctx)?;
        Ok(self.disc_net()?.forward(input.view()))
    }

    pub fn predict_logits_tape(
        &self,
        p_t: ArrayView2<f64>,
        t: &[usize],
        ctx: &ConditioningContext,
    ) -> Result<(Array2<f64>, MlpTape)> {
        let input = self.disc_input(p_t, t, ctx)?;
        Ok(self.disc_net()?.forward_tape(input.view()))
    }
}

fn check_rows(x: ArrayView2<f64>, t: &[usize], n: usize, width: usize) -> Result<()> {
    if x.dim() != (n, width) || t.len() != n {
        return Err(Error::Shape(format!(
            "state {:?} / timesteps {} do not match context ({n} x {width})",
            x.dim(),
            t.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("denoiser input state".into()));
    }
    Ok(())
}

fn fill_input(
    input: &mut Array2<f64>,
    parts: &[(ArrayView2<f64>, usize)],
    has_cross: bool,
    t: &[usize],
    time_dim: usize,
) {
    let mut col = 0;
    for (part, width) in parts {
        if part.ncols() == *width && *width > 0 {
            input.slice_mut(s![.., col..col + width]).assign(part);
        }
        col += width;
    }
    if has_cross {
        input.column_mut(col).fill(1.0);
    }
    col += 1;
    for (i, &ti) in t.iter().enumerate() {
        let emb = timestep_embedding(ti, time_dim);
        for (k, v) in emb.into_iter().enumerate() {
            input[[i, col + k]] = v;
        }
    }
}

impl Parameters for DenoiserParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(net) = &self.cont {
            out.extend(net.tensors());
        }
        if let Some(net) = &self.disc {
            out.extend(net.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(net) = &mut self.cont {
            out.extend(net.tensors_mut());
        }
        if let Some(net) = &mut self.disc {
            out.extend(net.tensors_mut());
        }
        out
    }
}
