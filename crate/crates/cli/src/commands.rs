use std::path::Path;

use anyhow::Context;
use hybridimp_core::eval::{downstream_eval, evaluate};
use hybridimp_core::imputer::train_with_progress;
use hybridimp_core::missingness::{achieved_rate, default_mar_rules, MarRule, ThresholdRule};
use hybridimp_core::synth::{generate_dataset, SynthConfig};
use hybridimp_core::table::{read_mask_csv, write_mask_csv};
use hybridimp_core::{Checkpoint, FeatureSchema, Mask, MaskedTable, Mechanism, MechanismSpec, MetricReport};

use crate::args::{EvalArgs, GlobalArgs, ImputeArgs, MaskArgs, SynthArgs, TrainArgs};
use crate::plot;
use crate::run::Run;
use crate::usage;

pub fn load_schema(run: &mut Run, path: &Path) -> anyhow::Result<FeatureSchema> {
    let bytes = run.read("schema", path)?;
    let text = std::str::from_utf8(&bytes).context("schema is not UTF-8")?;
    FeatureSchema::from_json(text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_table(run: &mut Run, role: &str, path: &Path, schema: &FeatureSchema) -> anyhow::Result<MaskedTable> {
    let bytes = run.read(role, path)?;
    MaskedTable::read_csv(bytes.as_slice(), schema).with_context(|| format!("reading {}", path.display()))
}

pub fn load_mask(run: &mut Run, path: &Path, schema: &FeatureSchema) -> anyhow::Result<Mask> {
    let bytes = run.read("mask", path)?;
    read_mask_csv(bytes.as_slice(), schema).with_context(|| format!("reading {}", path.display()))
}

/// Data with the optional mask file applied on top of its own missing cells.
fn load_masked(
    run: &mut Run,
    data: &Path,
    mask: Option<&Path>,
    schema: &FeatureSchema,
) -> anyhow::Result<MaskedTable> {
    let table = load_table(run, "data", data, schema)?;
    match mask {
        Some(p) => {
            let m = load_mask(run, p, schema)?;
            Ok(table.with_mask(&m)?)
        }
        None => Ok(table),
    }
}

pub fn mask_csv(mask: &Mask, schema: &FeatureSchema) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_mask_csv(mask, schema, &mut buf)?;
    Ok(buf)
}

pub fn synth(global: &GlobalArgs, a: &SynthArgs) -> anyhow::Result<()> {
    let config = SynthConfig {
        n: a.n,
        d_cont: a.d_cont,
        d_cat: a.d_cat,
        latent_dim: a.latent_dim,
        cat_levels: a.cat_levels.clone(),
        sigma: a.sigma,
        sigma_cat: a.sigma_cat,
        seed: global.seed,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (table, coefficients) = generate_dataset(&config)?;
    let mut run = Run::start("synth", global)?;
    run.write("data.csv", table.to_csv_string().as_bytes())?;
    run.write("schema.json", table.schema().to_json().as_bytes())?;
    run.write("coefficients.json", serde_json::to_string_pretty(&coefficients)?.as_bytes())?;
    eprintln!("wrote {} rows x {} columns to {}", table.n_rows(), table.n_cols(), global.out.display());
    run.finish(global, a)
}

fn column_index(schema: &FeatureSchema, name: &str) -> anyhow::Result<usize> {
    if let Some(j) = schema.index_of(name) {
        return Ok(j);
    }
    match name.parse::<usize>() {
        Ok(j) if j < schema.len() => Ok(j),
        _ => Err(usage(format!("unknown column '{name}'"))),
    }
}

fn parse_driver(schema: &FeatureSchema, spec: &str) -> anyhow::Result<MarRule> {
    let parts: Vec<&str> = spec.split(':').collect();
    let (target, driver, rule) = match parts.as_slice() {
        [t, d] => (*t, *d, ThresholdRule::AboveMean),
        [t, d, r] => (*t, *d, r.parse().map_err(|e| usage(format!("--driver {spec}: {e}")))?),
        _ => return Err(usage(format!("--driver expects target:driver[:rule], got '{spec}'"))),
    };
    let target = column_index(schema, target)?;
    let driver = column_index(schema, driver)?;
    if target == driver {
        return Err(usage(format!("--driver {spec}: a column cannot drive itself")));
    }
    Ok(MarRule { target, driver, rule })
}

fn parse_mnar_category(schema: &FeatureSchema, spec: &str) -> anyhow::Result<(usize, Vec<usize>)> {
    let (col, cats) = spec
        .split_once(':')
        .ok_or_else(|| usage(format!("--mnar-category expects column:cat[+cat...], got '{spec}'")))?;
    let j = column_index(schema, col)?;
    let Some(k) = schema.column(j).kind.cardinality() else {
        return Err(usage(format!("--mnar-category: column '{col}' is continuous")));
    };
    let cats = cats
        .split('+')
        .map(|c| match c.parse::<usize>() {
            Ok(v) if (1..=k).contains(&v) => Ok(v),
            _ => Err(usage(format!("--mnar-category: '{c}' is not a category of '{col}' (1..={k})"))),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((j, cats))
}

/// Mechanism parameters from the mask flags.
pub fn mechanism_spec(a: &MaskArgs, schema: &FeatureSchema, seed: u64) -> anyhow::Result<MechanismSpec> {
    let mechanism: Mechanism = a.mechanism.into();
    let mut spec = MechanismSpec::new(mechanism, a.rate, seed);
    if !(a.mnar_quantile > 0.0 && a.mnar_quantile < 0.5) {
        return Err(usage("--mnar-quantile must lie in (0, 0.5)"));
    }
    spec.mnar_quantile = a.mnar_quantile;
    match mechanism {
        Mechanism::Mar => {
            if a.driver.is_empty() {
                return Err(usage(
                    "MAR needs at least one --driver target:driver[:rule], or --driver auto",
                ));
            }
            spec.mar = if a.driver.iter().any(|d| d == "auto") {
                if a.driver.len() > 1 {
                    return Err(usage("--driver auto cannot be combined with explicit rules"));
                }
                default_mar_rules(schema, a.rate)
            } else {
                a.driver.iter().map(|d| parse_driver(schema, d)).collect::<anyhow::Result<_>>()?
            };
            if spec.mar.is_empty() {
                return Err(usage("MAR needs at least two columns"));
            }
        }
        _ if !a.driver.is_empty() => return Err(usage("--driver only applies to --mechanism mar")),
        _ => {}
    }
    for c in &a.mnar_category {
        if mechanism != Mechanism::Mnar {
            return Err(usage("--mnar-category only applies to --mechanism mnar"));
        }
        let (j, cats) = parse_mnar_category(schema, c)?;
        spec.mnar_categories.insert(j, cats);
    }
    Ok(spec)
}

pub fn mask(global: &GlobalArgs, a: &MaskArgs) -> anyhow::Result<()> {
    let mut run = Run::start("mask", global)?;
    let schema = load_schema(&mut run, &a.schema)?;
    let spec = mechanism_spec(a, &schema, global.seed)?;
    let table = load_table(&mut run, "data", &a.data, &schema)?;
    let mask = spec.generate(&table)?;
    let masked = table.with_mask(&mask)?;
    run.write("mask.csv", &mask_csv(&mask, &schema)?)?;
    run.write("masked.csv", masked.to_csv_string().as_bytes())?;
    println!("achieved rate {:.4}", achieved_rate(&mask)?);
    run.finish(global, a)
}

pub fn train(global: &GlobalArgs, a: &TrainArgs) -> anyhow::Result<()> {
    let config = a.model.to_config(global.seed);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut run = Run::start("train", global)?;
    let schema = load_schema(&mut run, &a.schema)?;
    let table = load_masked(&mut run, &a.data, a.mask.as_deref(), &schema)?;
    let checkpoint = train_with_progress(&table, &config, |r| {
        let val = r.val_loss.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into());
        eprintln!(
            "epoch {:>3}  loss {:.5}  cont {:.5}  disc {:.5}  val {val}",
            r.epoch, r.train_loss, r.train_cont, r.train_disc
        );
    })?;
    run.write("model.ckpt", &checkpoint.to_bytes()?)?;
    let mut log = String::from("epoch,train_loss,train_cont,train_disc,val_loss\n");
    for r in &checkpoint.history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        log.push_str(&format!("{},{},{},{},{val}\n", r.epoch, r.train_loss, r.train_cont, r.train_disc));
    }
    run.write("train_log.csv", log.as_bytes())?;
    let mut series = vec![(
        "train".to_string(),
        checkpoint.history.iter().map(|r| (r.epoch as f64, r.train_loss)).collect(),
    )];
    if checkpoint.history.iter().any(|r| r.val_loss.is_some()) {
        series.push((
            "validation".to_string(),
            checkpoint
                .history
                .iter()
                .filter_map(|r| r.val_loss.map(|v| (r.epoch as f64, v)))
                .collect(),
        ));
    }
    run.write("loss.svg", plot::line_chart("Training loss", "epoch", "loss", &series).as_bytes())?;
    eprintln!("kept epoch {} of {}", checkpoint.best_epoch, checkpoint.history.len());
    run.finish(global, a)
}

pub fn impute(global: &GlobalArgs, a: &ImputeArgs) -> anyhow::Result<()> {
    let mut run = Run::start("impute", global)?;
    let checkpoint = Checkpoint::from_bytes(&run.read("checkpoint", &a.checkpoint)?)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let schema = checkpoint.encoder.schema.clone();
    let table = load_masked(&mut run, &a.data, a.mask.as_deref(), &schema)?;
    let options = a.sample.to_options(a.steps, global.seed);
    let imputed = checkpoint.impute(&table, &options)?;
    run.write("imputed.csv", imputed.to_csv_string().as_bytes())?;
    eprintln!("imputed {} cells", table.missing_count());
    run.finish(global, a)
}

fn read_labels(bytes: &[u8], column: Option<&str>) -> anyhow::Result<Vec<f64>> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers()?.clone();
    let idx = match column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| usage(format!("labels file has no column '{name}'")))?,
        None => 0,
    };
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let field = record.get(idx).unwrap_or("").trim();
        out.push(
            field
                .parse()
                .with_context(|| format!("label row {}: '{field}' is not a number", i + 1))?,
        );
    }
    Ok(out)
}

pub fn eval(global: &GlobalArgs, a: &EvalArgs) -> anyhow::Result<()> {
    let mut run = Run::start("eval", global)?;
    let schema = load_schema(&mut run, &a.schema)?;
    let truth = load_table(&mut run, "truth", &a.truth, &schema)?;
    let imputed = load_table(&mut run, "imputed", &a.imputed, &schema)?;
    let mask = load_mask(&mut run, &a.mask, &schema)?;
    let mut report = evaluate(&truth, &imputed, &mask)?;
    if let (Some(path), Some(task)) = (&a.labels, a.task) {
        let labels = read_labels(&run.read("labels", path)?, a.label_column.as_deref())?;
        report.downstream = Some(downstream_eval(&imputed, &labels, task.into(), global.seed)?);
    }
    run.write("metrics.json", (report.to_json() + "\n").as_bytes())?;
    let csv = format!("{}\n{}\n", MetricReport::csv_header(), report.csv_row("imputed"));
    run.write("metrics.csv", csv.as_bytes())?;
    println!("AvgErr {:.6}", report.avg_err);
    if let Some(d) = report.downstream {
        println!("downstream {:?} {:.6}", d.task, d.score);
    }
    run.finish(global, a)
}
