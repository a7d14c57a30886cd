use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use rs2acf::baselines::{ccf_constraint, ccf_fit, cf_fit, lccf_fit, lccf_weights, nmf_fit};
use rs2acf::data::{add_noise, load_csv, make_blobs, split_labeled, LabeledData, Metrics, NamedTrace, Results};
use rs2acf::eval::{cluster_eval, knn1_classify, Summary};
use rs2acf::graphs::{cross_class_stats, gaussian_weights, lle_weights, reconstruction_error, CrossClassStats, WeightMatrix};
use rs2acf::solver::fit;
use rs2acf::{seeded_rng, Dataset};

use crate::config::{Method, RunConfig, Task};

/// Largest objective increase a trace may show before `trace` fails.
pub const MONOTONE_SLACK: f64 = 1e-8;

/// An entry counts as a graph edge above this fraction of the largest weight.
pub const EDGE_THRESHOLD: f64 = 1e-3;

/// A finished run. `failures` lists internal checks that did not hold; the
/// results are still complete.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub results: Results,
    pub failures: Vec<String>,
}

/// Fully labeled samples before any labeled/unlabeled split.
pub struct RawData {
    pub x: DMatrix<f64>,
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

impl RawData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        if let Some(blobs) = &cfg.blobs {
            let b = make_blobs(&blobs.spec(cfg.labeled_ratio, cfg.seed))?;
            return Ok(Self {
                x: b.x,
                classes: b.classes,
                num_classes: blobs.classes,
            });
        }
        let path = cfg.data.as_ref().context("no data source")?;
        let csv = load_csv(path).with_context(|| format!("loading {}", path.display()))?;
        if !csv.is_fully_labeled() {
            bail!(
                "{}: every row needs a class id, since evaluation compares against ground truth",
                path.display()
            );
        }
        let num_classes = csv.num_classes();
        let classes = csv.labels.iter().map(|l| l.expect("checked")).collect();
        Ok(Self {
            x: csv.x,
            classes,
            num_classes,
        })
    }

    pub fn split(&self, ratio: f64, seed: u64) -> Result<LabeledData> {
        Ok(split_labeled(&self.x, &self.classes, self.num_classes, ratio, seed)?)
    }
}

/// A learned representation, one row per sample, and the objective values
/// that produced it.
pub struct Fitted {
    pub representation: DMatrix<f64>,
    pub trace: NamedTrace,
    /// The adaptive weights, for `rs2acf` only.
    pub q: Option<DMatrix<f64>>,
}

fn baseline_trace(name: &str, values: Vec<f64>, tol: f64) -> NamedTrace {
    let converged = values.len() >= 2 && (values[values.len() - 1] - values[values.len() - 2]).abs() <= tol;
    NamedTrace {
        name: name.into(),
        values,
        converged,
    }
}

pub fn fit_method(cfg: &RunConfig, method: Method, ds: &Dataset, seed: u64) -> Result<Fitted> {
    let hp = rs2acf::HyperParams { seed, ..cfg.hyper_params() };
    let rank = hp.resolved_rank(ds.num_classes());
    let name = method.name();
    if method == Method::Rs2acf {
        let r = fit(ds, &hp)?;
        return Ok(Fitted {
            representation: r.representation,
            trace: NamedTrace {
                name: name.into(),
                values: r.trace.objective_values,
                converged: r.trace.converged,
            },
            q: Some(r.state.q),
        });
    }
    let x = ds.x();
    let (representation, values) = match method {
        Method::Nmf => {
            let f = nmf_fit(x, rank, cfg.max_iter, seed)?;
            (f.v, f.objective_trace)
        }
        Method::Cf => {
            let f = cf_fit(&(x.transpose() * x), rank, cfg.max_iter, seed)?;
            (f.v, f.objective_trace)
        }
        Method::Lccf => {
            let s = lccf_weights(x, cfg.neighbors)?;
            let f = lccf_fit(&(x.transpose() * x), &s, cfg.lambda, rank, cfg.max_iter, seed)?;
            (f.v, f.objective_trace)
        }
        Method::Ccf => {
            let a = ccf_constraint(&ds.label_indicator(), ds.num_unlabeled());
            let f = ccf_fit(&(x.transpose() * x), &a, rank, cfg.max_iter, seed)?;
            (f.representation(), f.objective_trace)
        }
        Method::Rs2acf => unreachable!(),
    };
    Ok(Fitted {
        representation,
        trace: baseline_trace(name, values, cfg.tol),
        q: None,
    })
}

#[derive(Default)]
struct Timer {
    enabled: bool,
    totals: BTreeMap<String, f64>,
}

impl Timer {
    fn time<T>(&mut self, key: &str, f: impl FnOnce() -> T) -> T {
        if !self.enabled {
            return f();
        }
        let start = Instant::now();
        let out = f();
        *self.totals.entry(key.into()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }
}

fn run_config_value(task: Task, cfg: &RunConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(cfg)?;
    v.as_object_mut()
        .expect("config serializes to an object")
        .insert("task".into(), serde_json::to_value(task)?);
    Ok(v)
}

/// Validates `cfg` and runs `task`.
pub fn run(task: Task, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate(task)?;
    let mut timer = Timer {
        enabled: cfg.timings,
        ..Timer::default()
    };
    let raw = timer.time("load", || RawData::load(cfg))?;
    let (objective_trace, metrics, details, failures) = match task {
        Task::Cluster => cluster(cfg, &raw, &mut timer)?,
        Task::Classify => classify(cfg, &raw, &mut timer)?,
        Task::Weights => weights(cfg, &raw, &mut timer)?,
        Task::Trace => trace(cfg, &raw, &mut timer)?,
    };
    Ok(Outcome {
        results: Results {
            run_config: run_config_value(task, cfg)?,
            seed: cfg.seed,
            objective_trace,
            metrics,
            timings_ms: timer.totals,
            details,
        },
        failures,
    })
}

type Parts = (Vec<NamedTrace>, Metrics, serde_json::Value, Vec<String>);

fn cluster(cfg: &RunConfig, raw: &RawData, timer: &mut Timer) -> Result<Parts> {
    let data = raw.split(cfg.labeled_ratio, cfg.seed)?;
    let fitted = timer.time("fit", || fit_method(cfg, cfg.method, &data.dataset, cfg.seed))?;
    let eval = timer.time("kmeans", || {
        cluster_eval(&fitted.representation, &data.truth, raw.num_classes, cfg.restarts, cfg.seed)
    })?;
    let metrics = Metrics {
        ac: Some(eval.ac),
        nmi: Some(eval.nmi),
        accuracy: None,
    };
    let details = json!({
        "num_samples": data.truth.len(),
        "num_labeled": data.dataset.num_labeled(),
        "num_classes": raw.num_classes,
        "runs": eval.runs,
    });
    Ok((vec![fitted.trace], metrics, details, Vec::new()))
}

#[derive(Serialize)]
struct ClassifyRow {
    ratio: f64,
    accuracy: Summary,
    splits: Vec<f64>,
}

/// Transductive protocol: each split draws a fresh labeled subset, fits on
/// all samples, then labels every unlabeled sample by its nearest labeled
/// neighbor in the learned representation.
fn classify(cfg: &RunConfig, raw: &RawData, timer: &mut Timer) -> Result<Parts> {
    let mut rows = Vec::new();
    for ratio in cfg.sweep(Task::Classify) {
        let mut seeds = seeded_rng(cfg.seed);
        let mut accs = Vec::with_capacity(cfg.splits);
        for _ in 0..cfg.splits {
            let seed: u64 = seeds.gen();
            let data = raw.split(ratio, seed)?;
            let l = data.dataset.num_labeled();
            let fitted = timer.time("fit", || fit_method(cfg, cfg.method, &data.dataset, seed))?;
            let rep = &fitted.representation;
            let n = rep.nrows();
            let pred = timer.time("knn", || {
                knn1_classify(&rep.rows(0, l).into_owned(), &data.truth[..l], &rep.rows(l, n - l).into_owned())
            })?;
            let correct = pred.iter().zip(&data.truth[l..]).filter(|(p, t)| p == t).count();
            accs.push(correct as f64 / (n - l) as f64);
        }
        rows.push(ClassifyRow {
            ratio,
            accuracy: Summary::of(&accs),
            splits: accs,
        });
    }
    let metrics = Metrics {
        accuracy: (rows.len() == 1).then(|| rows[0].accuracy),
        ..Metrics::default()
    };
    Ok((Vec::new(), metrics, json!({ "rows": rows }), Vec::new()))
}

#[derive(Serialize)]
struct WeightReport {
    reconstruction_error: f64,
    cross_class: CrossClassStats,
}

fn report(x: &DMatrix<f64>, w: &WeightMatrix, classes: &[usize]) -> Result<WeightReport> {
    Ok(WeightReport {
        reconstruction_error: reconstruction_error(x, w)?,
        cross_class: cross_class_stats(w, classes, EDGE_THRESHOLD),
    })
}

/// Compares the fixed Gaussian and LLE graphs with the adaptive weights of
/// `rs2acf` on the same samples; `method` is not used.
fn weights(cfg: &RunConfig, raw: &RawData, timer: &mut Timer) -> Result<Parts> {
    let data = raw.split(cfg.labeled_ratio, cfg.seed)?;
    let mut variants = vec![("clean", data.dataset.clone())];
    if cfg.noise > 0.0 {
        variants.push(("noisy", add_noise(&data.dataset, cfg.noise, cfg.seed.wrapping_add(1))?));
    }
    let mut traces = Vec::new();
    let mut details = serde_json::Map::new();
    for (name, ds) in variants {
        let x = ds.x();
        let fitted = timer.time("fit", || fit_method(cfg, Method::Rs2acf, &ds, cfg.seed))?;
        let q = WeightMatrix::new(fitted.q.expect("rs2acf returns weights"))?;
        let gaussian = timer.time("graphs", || gaussian_weights(x, cfg.neighbors))?;
        let lle = timer.time("graphs", || lle_weights(x, cfg.neighbors))?;
        details.insert(
            name.into(),
            json!({
                "gaussian": report(x, &gaussian, &data.truth)?,
                "lle": report(x, &lle, &data.truth)?,
                "adaptive": report(x, &q, &data.truth)?,
            }),
        );
        traces.push(NamedTrace {
            name: format!("rs2acf/{name}"),
            ..fitted.trace
        });
    }
    Ok((traces, Metrics::default(), details.into(), Vec::new()))
}

fn max_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

fn trace(cfg: &RunConfig, raw: &RawData, timer: &mut Timer) -> Result<Parts> {
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for ratio in cfg.sweep(Task::Trace) {
        let data = raw.split(ratio, cfg.seed)?;
        let fitted = timer.time("fit", || fit_method(cfg, cfg.method, &data.dataset, cfg.seed))?;
        let rise = max_increase(&fitted.trace.values);
        if rise > MONOTONE_SLACK {
            failures.push(format!(
                "objective rose by {rise:.3e} at labeled ratio {ratio} (slack {MONOTONE_SLACK:e})"
            ));
        }
        rows.push(json!({
            "ratio": ratio,
            "iterations": fitted.trace.values.len(),
            "converged": fitted.trace.converged,
            "max_increase": rise,
        }));
        traces.push(NamedTrace {
            name: format!("{}@{ratio}", cfg.method.name()),
            ..fitted.trace
        });
    }
    Ok((traces, Metrics::default(), json!({ "rows": rows }), failures))
}
