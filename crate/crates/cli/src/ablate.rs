//! Ablation grids: channel routing, self-mask supervision and eta/steps.

use std::time::Instant;

use hybridimp_core::encode::Routing;
use hybridimp_core::eval::evaluate;
use hybridimp_core::imputer::train;
use hybridimp_core::missingness::default_mar_rules;
use hybridimp_core::rng::child_seed;
use hybridimp_core::synth::{generate_dataset, SynthConfig};
use hybridimp_core::{ImputeOptions, MaskedTable, Mechanism, MechanismSpec, Supervision, TrainConfig};
use serde::Serialize;

use crate::args::{AblateArgs, GlobalArgs, Study};
use crate::commands::{load_schema, load_table};
use crate::plot;
use crate::run::Run;
use crate::usage;

const SELF_MASK_RATIOS: [f64; 3] = [0.1, 0.3, 0.5];
const ETAS: [f64; 3] = [0.0, 0.5, 1.0];
const STEP_COUNTS: [usize; 2] = [25, 100];

#[derive(Debug, Default, Serialize)]
struct Row {
    study: &'static str,
    label: String,
    mechanism: String,
    rate: f64,
    self_mask_scheme: Option<String>,
    self_mask_ratio: Option<f64>,
    eta: Option<f64>,
    steps: Option<usize>,
    avg_err: f64,
    avg_err_std: Option<f64>,
    rmse_mean: Option<f64>,
    cat_err_mean: Option<f64>,
    train_seconds: Option<f64>,
    impute_seconds: f64,
}

struct Cell {
    mechanism: Mechanism,
    rate: f64,
    masked: MaskedTable,
}

fn cells(a: &AblateArgs, truth: &MaskedTable, seed: u64) -> anyhow::Result<Vec<Cell>> {
    let mut out = Vec::new();
    for (mi, &m) in a.mechanisms.iter().enumerate() {
        for (ri, &rate) in a.rates.iter().enumerate() {
            let mechanism: Mechanism = m.into();
            let mut spec = MechanismSpec::new(mechanism, rate, child_seed(seed, 1000 + 100 * mi as u64 + ri as u64));
            if mechanism == Mechanism::Mar {
                spec.mar = default_mar_rules(truth.schema(), rate);
            }
            let mask = spec.generate(truth)?;
            out.push(Cell {
                mechanism,
                rate,
                masked: truth.with_mask(&mask)?,
            });
        }
    }
    Ok(out)
}

struct Scored {
    avg_err: f64,
    rmse_mean: Option<f64>,
    cat_err_mean: Option<f64>,
    train_seconds: f64,
    impute_seconds: f64,
}

fn train_and_score(
    truth: &MaskedTable,
    cell: &Cell,
    config: &TrainConfig,
    options: &ImputeOptions,
) -> anyhow::Result<Scored> {
    let start = Instant::now();
    let checkpoint = train(&cell.masked, config)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let imputed = checkpoint.impute(&cell.masked, options)?;
    let impute_seconds = start.elapsed().as_secs_f64();
    let report = evaluate(truth, &imputed, cell.masked.mask())?;
    Ok(Scored {
        avg_err: report.avg_err,
        rmse_mean: report.rmse_mean,
        cat_err_mean: report.cat_err_mean,
        train_seconds,
        impute_seconds,
    })
}

fn base_row(study: &'static str, label: String, cell: &Cell, s: &Scored) -> Row {
    Row {
        study,
        label,
        mechanism: cell.mechanism.name().to_string(),
        rate: cell.rate,
        avg_err: s.avg_err,
        rmse_mean: s.rmse_mean,
        cat_err_mean: s.cat_err_mean,
        train_seconds: Some(s.train_seconds),
        impute_seconds: s.impute_seconds,
        ..Row::default()
    }
}

fn two_channel(truth: &MaskedTable, cells: &[Cell], base: &TrainConfig, options: &ImputeOptions) -> anyhow::Result<Vec<Row>> {
    let models = [
        ("Full", Routing::Hybrid),
        ("Continuous-only", Routing::ContinuousOnly),
        ("Discrete-only", Routing::DiscreteOnly),
    ];
    let mut rows = Vec::new();
    for cell in cells {
        for (name, routing) in models {
            let config = TrainConfig { routing, ..base.clone() };
            let s = train_and_score(truth, cell, &config, options)?;
            eprintln!("{name} {} {:.0}%: AvgErr {:.4}", cell.mechanism.name(), 100.0 * cell.rate, s.avg_err);
            rows.push(base_row("two-channel", name.to_string(), cell, &s));
        }
    }
    Ok(rows)
}

fn self_mask(truth: &MaskedTable, cells: &[Cell], base: &TrainConfig, options: &ImputeOptions) -> anyhow::Result<Vec<Row>> {
    let mut arms: Vec<(String, TrainConfig)> = vec![
        (
            "Zero-Imp".into(),
            TrainConfig { supervision: Supervision::ZeroFill, self_mask_ratio: 0.0, ..base.clone() },
        ),
        (
            "Mean-Imp".into(),
            TrainConfig { supervision: Supervision::MeanFill, self_mask_ratio: 0.0, ..base.clone() },
        ),
    ];
    for scheme in Mechanism::ALL {
        for ratio in SELF_MASK_RATIOS {
            arms.push((
                format!("{}-{:.0}%", scheme.name().to_uppercase(), 100.0 * ratio),
                TrainConfig {
                    supervision: Supervision::SelfMask,
                    self_mask_scheme: scheme,
                    self_mask_ratio: ratio,
                    ..base.clone()
                },
            ));
        }
    }
    let mut rows = Vec::new();
    for cell in cells {
        for (label, config) in &arms {
            let s = train_and_score(truth, cell, config, options)?;
            eprintln!("{label} {} {:.0}%: AvgErr {:.4}", cell.mechanism.name(), 100.0 * cell.rate, s.avg_err);
            let mut row = base_row("self-mask", label.clone(), cell, &s);
            if config.supervision == Supervision::SelfMask {
                row.self_mask_scheme = Some(config.self_mask_scheme.name().to_string());
                row.self_mask_ratio = Some(config.self_mask_ratio);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn eta_steps(
    truth: &MaskedTable,
    cells: &[Cell],
    base: &TrainConfig,
    options: &ImputeOptions,
    repeats: usize,
    seed: u64,
) -> anyhow::Result<Vec<Row>> {
    let longest = STEP_COUNTS.iter().copied().max().unwrap_or(0);
    if base.steps < longest {
        return Err(usage(format!(
            "the eta-steps study samples with up to {longest} steps; train with --steps {longest} or more"
        )));
    }
    let mut rows = Vec::new();
    for cell in cells {
        let start = Instant::now();
        let checkpoint = train(&cell.masked, base)?;
        let train_seconds = start.elapsed().as_secs_f64();
        for eta in ETAS {
            for steps in STEP_COUNTS {
                let (mut errs, mut secs) = (Vec::new(), Vec::new());
                let mut last = None;
                for r in 0..repeats {
                    let opts = ImputeOptions { steps, eta, seed: child_seed(seed, r as u64), ..*options };
                    let start = Instant::now();
                    let imputed = checkpoint.impute(&cell.masked, &opts)?;
                    secs.push(start.elapsed().as_secs_f64());
                    let report = evaluate(truth, &imputed, cell.masked.mask())?;
                    errs.push(report.avg_err);
                    last = Some(report);
                }
                let (avg, std) = mean_std(&errs);
                let report = last.expect("at least one repeat");
                eprintln!("eta {eta} steps {steps}: AvgErr {avg:.4} (std {std:.4})");
                rows.push(Row {
                    study: "eta-steps",
                    label: format!("eta={eta} T={steps}"),
                    mechanism: cell.mechanism.name().to_string(),
                    rate: cell.rate,
                    eta: Some(eta),
                    steps: Some(steps),
                    avg_err: avg,
                    avg_err_std: Some(std),
                    rmse_mean: report.rmse_mean,
                    cat_err_mean: report.cat_err_mean,
                    train_seconds: Some(train_seconds),
                    impute_seconds: mean_std(&secs).0,
                    ..Row::default()
                });
            }
        }
    }
    Ok(rows)
}

fn rows_csv(rows: &[Row]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner()?)
}

pub fn run(global: &GlobalArgs, a: &AblateArgs) -> anyhow::Result<()> {
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let config = a.model.to_config(global.seed);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let options = a.sample.to_options(a.sample_steps, global.seed);
    let mut run = Run::start("ablate", global)?;
    let truth = match (&a.data, &a.schema) {
        (Some(data), Some(schema)) => {
            let schema = load_schema(&mut run, schema)?;
            load_table(&mut run, "data", data, &schema)?
        }
        _ => {
            let synth = SynthConfig { n: a.n, seed: child_seed(global.seed, 1), ..SynthConfig::default() };
            synth.validate().map_err(|e| usage(e.to_string()))?;
            generate_dataset(&synth)?.0
        }
    };
    let cells = cells(a, &truth, global.seed)?;
    let (name, rows) = match a.study {
        Study::TwoChannel => ("two-channel", two_channel(&truth, &cells, &config, &options)?),
        Study::SelfMask => ("self-mask", self_mask(&truth, &cells, &config, &options)?),
        Study::EtaSteps => ("eta-steps", eta_steps(&truth, &cells, &config, &options, a.repeats, global.seed)?),
    };
    run.write(&format!("ablation-{name}.csv"), &rows_csv(&rows)?)?;
    let bars: Vec<(String, f64)> = rows
        .iter()
        .map(|r| {
            let label = if cells.len() > 1 {
                format!("{} {} {:.0}%", r.label, r.mechanism, 100.0 * r.rate)
            } else {
                r.label.clone()
            };
            (label, r.avg_err)
        })
        .collect();
    let svg = plot::bar_chart(&format!("Ablation: {name}"), "AvgErr", &bars);
    run.write(&format!("ablation-{name}.svg"), svg.as_bytes())?;
    run.finish(global, a)
}
