//! Pipeline commands. Each is a function of the configuration and its input
//! files; progress lines go to stdout.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::cloop::{draw_eval_scenarios, evaluate, EvalReport, NamedPolicy, Policy};
use crate::datagen::{build_dataset, build_nominal_dataset, Dataset};
use crate::error::{Error, Result};
use crate::io::{
    self, fmt_f64, read_dataset, read_json, write_dataset, write_eval_report, write_json, ModelDoc, SplitReport,
    TimingsDoc, TrainingReport,
};
use crate::datagen::LabeledSample;
use crate::learner::labels::NUM_CLASSES;
use crate::learner::{confusion, train_forest, train_test_split, ConfusionMatrix, ForestModel};

pub const DATASET_STEM: &str = "dataset";
pub const NOMINAL_DATASET_STEM: &str = "nominal_dataset";
pub const NOMINAL_MODEL_FILE: &str = "nominal_model.json";
pub const REPORT_STEM: &str = "report";

pub fn model_file(m: usize) -> String {
    format!("model_m{m}.json")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Generates the training dataset and its timing diagnostics.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Dataset> {
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let g = &cfg.generation;
    let (dataset, timings) = build_dataset(
        &g.scenario_spec(),
        g.layout(),
        g.n_scenarios,
        &cfg.model,
        &cfg.solver,
        &cfg.learner.labels,
    )?;
    write_dataset(out, DATASET_STEM, &dataset)?;
    let quartiles = timings.quartiles();
    let doc = TimingsDoc {
        median_solve_seconds: quartiles.map(|q| q[1]),
        quartiles,
        timings,
    };
    write_json(&out.join("timings.json"), io::TIMINGS_FORMAT, &doc)?;

    println!(
        "solved {}/{} scenarios, {} samples",
        dataset.successes(),
        g.n_scenarios,
        dataset.len()
    );
    if let Some([q1, med, q3]) = quartiles {
        println!("solve time: median {med:.3} s, quartiles [{q1:.3}, {q3:.3}] s");
        let extrapolated = med * dataset.len() as f64;
        println!(
            "window extraction {:.3} s vs {:.1} s for one solve per sample",
            doc.timings.extraction_seconds, extrapolated
        );
    }
    Ok(dataset)
}

fn check_dataset_matches(cfg: &RunConfig, ds: &Dataset, path: &Path) -> Result<()> {
    let layout = ds.snapshot.layout;
    if layout.horizon != cfg.generation.horizon || layout.window != cfg.generation.window {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!(
                "dataset has N = {}, M = {}; config has N = {}, M = {}",
                layout.horizon, layout.window, cfg.generation.horizon, cfg.generation.window
            ),
        });
    }
    Ok(())
}

fn split_report(model: &ForestModel, samples: &[LabeledSample]) -> Result<SplitReport> {
    let cm = confusion(model, samples)?;
    Ok(SplitReport {
        samples: samples.len(),
        accuracy: cm.accuracy(),
        confusion: cm,
    })
}

/// Split, fit and score one dataset.
pub fn fit(cfg: &RunConfig, dataset: &Dataset, m: usize, nominal: bool) -> Result<(ModelDoc, TrainingReport)> {
    let l = &cfg.learner;
    let (train, test) = train_test_split(&dataset.samples, l.test_ratio, l.split_seed)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Learner(format!(
            "empty split ({} train, {} test samples)",
            train.len(),
            test.len()
        )));
    }
    let forest = train_forest(&train, &l.forest)?;
    let report = TrainingReport {
        m,
        nominal,
        test_ratio: l.test_ratio,
        train: split_report(&forest, &train)?,
        test: split_report(&forest, &test)?,
    };
    let doc = ModelDoc {
        m,
        window: dataset.snapshot.layout.window,
        nominal,
        labels: dataset.snapshot.labels.clone(),
        forest,
    };
    Ok((doc, report))
}

fn write_model(out: &Path, file: &str, doc: &ModelDoc, report: &TrainingReport) -> Result<()> {
    write_json(&out.join(file), io::MODEL_FORMAT, doc)?;
    let report_file = file.replacen("model", "training", 1);
    write_json(&out.join(report_file), io::TRAINING_FORMAT, report)
}

/// Trains one feedback per `m` variant (or only `m_filter`), optionally the nominal one too.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset_path: Option<&Path>,
    m_filter: Option<usize>,
    nominal: bool,
) -> Result<Vec<TrainingReport>> {
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let (dir, stem) = match dataset_path {
        Some(p) => io::split_dataset_path(p)?,
        None => (out.clone(), DATASET_STEM.to_owned()),
    };
    let csv_path = dir.join(format!("{stem}.csv"));
    let dataset = read_dataset(&dir, &stem)?;
    check_dataset_matches(cfg, &dataset, &csv_path)?;

    let variants = match m_filter {
        Some(m) => vec![m],
        None => cfg.generation.m_variants.clone(),
    };
    let mut reports = Vec::new();
    for m in variants {
        let subset = dataset.with_m(m)?;
        let (doc, report) = fit(cfg, &subset, m, false)?;
        write_model(out, &model_file(m), &doc, &report)?;
        println!(
            "m = {m}: {} samples, train accuracy {:.4}, test accuracy {:.4}",
            subset.len(),
            report.train.accuracy,
            report.test.accuracy
        );
        reports.push(report);
    }
    if nominal {
        let (_, report) = train_nominal(cfg)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Builds the nominal dataset from the evaluation initial states and trains on it.
pub fn train_nominal(cfg: &RunConfig) -> Result<(ModelDoc, TrainingReport)> {
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let g = &cfg.generation;
    let scenarios = draw_eval_scenarios(
        &g.scenario_spec(),
        &cfg.model.w_nominal,
        cfg.evaluation.seed,
        cfg.evaluation.n_scenarios,
    );
    let x0: Vec<_> = scenarios.iter().map(|s| s.x0).collect();
    let (dataset, _) = build_nominal_dataset(
        &x0,
        &g.scenario_spec(),
        g.layout(),
        &cfg.model,
        &cfg.solver,
        &cfg.learner.labels,
    )?;
    write_dataset(out, NOMINAL_DATASET_STEM, &dataset)?;
    let (doc, report) = fit(cfg, &dataset, g.max_m(), true)?;
    write_model(out, NOMINAL_MODEL_FILE, &doc, &report)?;
    println!(
        "nominal: {} samples, train accuracy {:.4}, test accuracy {:.4}",
        dataset.len(),
        report.train.accuracy,
        report.test.accuracy
    );
    Ok((doc, report))
}

pub fn read_model(path: &Path) -> Result<ModelDoc> {
    read_json(path, io::MODEL_FORMAT)
}

fn policy_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_owned()
}

fn forest_policy(cfg: &RunConfig, path: &Path, doc: ModelDoc) -> Result<Policy> {
    if doc.window != cfg.generation.window {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("model uses M = {}, config has M = {}", doc.window, cfg.generation.window),
        });
    }
    Ok(Policy::Forest {
        model: doc.forest,
        labels: doc.labels,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    /// Learned feedbacks; empty means every `model_m*.json` present for the configured variants.
    pub models: Vec<PathBuf>,
    pub nominal_model: Option<PathBuf>,
    /// Train the nominal feedback instead of reading it.
    pub train_nominal: bool,
    /// Add a policy replaying each scenario's ideal solution.
    pub ideal_replay: bool,
    pub m_filter: Option<usize>,
}

/// Closed-loop comparison of the learned feedbacks against the ideal and nominal designs.
pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<EvalReport> {
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let mut model_paths = args.models.clone();
    if model_paths.is_empty() {
        let variants = match args.m_filter {
            Some(m) => vec![m],
            None => cfg.generation.m_variants.clone(),
        };
        model_paths = variants
            .into_iter()
            .map(|m| out.join(model_file(m)))
            .filter(|p| p.exists())
            .collect();
    }
    if model_paths.is_empty() {
        return Err(Error::Evaluation(format!(
            "no learned model given and none found in {}",
            out.display()
        )));
    }

    let mut policies = Vec::new();
    let mut push = |name: String, policy: Policy| {
        let mut unique = name.clone();
        let mut n = 2;
        while policies.iter().any(|p: &NamedPolicy| p.name == unique) {
            unique = format!("{name}_{n}");
            n += 1;
        }
        policies.push(NamedPolicy { name: unique, policy });
    };
    for path in &model_paths {
        let doc = read_model(path)?;
        push(policy_name(path), forest_policy(cfg, path, doc)?);
    }
    let nominal_doc = if args.train_nominal {
        (out.join(NOMINAL_MODEL_FILE), train_nominal(cfg)?.0)
    } else {
        let path = args.nominal_model.clone().unwrap_or_else(|| out.join(NOMINAL_MODEL_FILE));
        if !path.exists() {
            return Err(Error::Evaluation(format!(
                "nominal model {} not found; pass --nominal to train it",
                path.display()
            )));
        }
        let doc = read_model(&path)?;
        (path, doc)
    };
    let nominal_policy = forest_policy(cfg, &nominal_doc.0, nominal_doc.1)?;
    // "nominal" is reserved for the baseline; rename a learned model that clashes
    for p in policies.iter_mut().filter(|p| p.name == "nominal") {
        p.name = "nominal_learned".into();
    }
    policies.push(NamedPolicy {
        name: "nominal".into(),
        policy: nominal_policy,
    });
    if args.ideal_replay {
        policies.push(NamedPolicy {
            name: "ideal_replay".into(),
            policy: Policy::IdealReplay,
        });
    }

    let g = &cfg.generation;
    let scenarios = draw_eval_scenarios(
        &g.scenario_spec(),
        &cfg.model.w_nominal,
        cfg.evaluation.seed,
        cfg.evaluation.n_scenarios,
    );
    let report = evaluate(
        &policies,
        Some("nominal"),
        &scenarios,
        g.horizon,
        g.window,
        &cfg.model,
        &cfg.solver,
    )?;
    write_eval_report(out, REPORT_STEM, &report)?;

    let a = &report.aggregates;
    println!(
        "{} scenarios completed, {} failed; mean ideal cost {}",
        a.completed,
        a.failed,
        fmt_f64(a.mean_ideal)
    );
    if let Some(gap) = a.nominal_gap {
        println!("ideal over nominal gap: {:.1}%", 100.0 * gap);
    }
    for (i, name) in report.policies.iter().enumerate() {
        let ra = a.recovered_advantage[i].map_or_else(|| "undefined".to_owned(), |v| format!("{v:.3}"));
        println!(
            "{name}: mean cost {}, recovered advantage {ra}, ordering {}",
            fmt_f64(a.mean_policies[i]),
            if a.ordering_holds[i] { "holds" } else { "violated" }
        );
    }
    if !report.candidacy.is_empty() {
        println!(
            "{} closed-loop costs below the ideal ({} unconfirmed)",
            report.candidacy.len(),
            report.unconfirmed_violations()
        );
    }
    Ok(report)
}

/// Fixed-width histogram over `[lo, hi]`; values outside are clamped into the end bins.
pub fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for v in values {
        let b = ((v - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    counts
}

fn hist_rows(out: &mut String, key: &str, counts: &[u64], lo: f64, hi: f64) {
    let width = (hi - lo) / counts.len() as f64;
    for (i, c) in counts.iter().enumerate() {
        let a = lo + i as f64 * width;
        out.push_str(&format!("{key},{},{},{c}\n", fmt_f64(a), fmt_f64(a + width)));
    }
}

pub const RATIO_RANGE: (f64, f64) = (0.0, 2.0);
pub const RATIO_BINS: usize = 40;
pub const CONTROL_BINS: usize = 40;

fn dataset_tables(dataset: &Dataset) -> Vec<(String, String)> {
    let nominal = dataset.snapshot.model.w_nominal;
    let mut ratios = "param,bin_lo,bin_hi,count\n".to_owned();
    for (j, name) in ["w1", "w2", "w3"].iter().enumerate() {
        let values = dataset.scenarios.iter().map(|s| s.w.ratio_to(&nominal)[j]);
        let counts = histogram(values, RATIO_RANGE.0, RATIO_RANGE.1, RATIO_BINS);
        hist_rows(&mut ratios, name, &counts, RATIO_RANGE.0, RATIO_RANGE.1);
    }
    let (lo, hi) = (dataset.snapshot.model.u_min, dataset.snapshot.model.u_max);
    let counts = histogram(dataset.samples.iter().map(|s| s.u_value), lo, hi, CONTROL_BINS);
    let mut controls = "series,bin_lo,bin_hi,count\n".to_owned();
    hist_rows(&mut controls, "u", &counts, lo, hi);
    vec![
        ("param_ratio_hist".to_owned(), ratios),
        ("control_hist".to_owned(), controls),
    ]
}

fn confusion_table(cm: &ConfusionMatrix) -> String {
    let mut s = "true_label,predicted_label,count\n".to_owned();
    for t in 0..NUM_CLASSES {
        for p in 0..NUM_CLASSES {
            s.push_str(&format!("{},{},{}\n", t + 1, p + 1, cm.counts[t][p]));
        }
    }
    s
}

fn eval_tables(report: &EvalReport) -> Vec<(String, String)> {
    let mut cmp = "index,policy,j_cl,j_ideal\n".to_owned();
    for r in report.rows.iter().filter(|r| r.completed()) {
        for (p, name) in report.policies.iter().enumerate() {
            cmp.push_str(&format!(
                "{},{name},{},{}\n",
                r.index,
                fmt_f64(r.j_policies[p].unwrap()),
                fmt_f64(r.j_ideal.unwrap())
            ));
        }
    }
    let a = &report.aggregates;
    let mut summary = "policy,mean_cost,recovered_advantage,ordering_holds\n".to_owned();
    summary.push_str(&format!("ideal,{},1.0,true\n", fmt_f64(a.mean_ideal)));
    for (p, name) in report.policies.iter().enumerate() {
        summary.push_str(&format!(
            "{name},{},{},{}\n",
            fmt_f64(a.mean_policies[p]),
            a.recovered_advantage[p].map(fmt_f64).unwrap_or_default(),
            a.ordering_holds[p]
        ));
    }
    vec![
        ("cost_comparison".to_owned(), cmp),
        ("cost_summary".to_owned(), summary),
    ]
}

/// Writes plot-ready tables derived from datasets, training reports and evaluation reports.
pub fn cmd_report(cfg: &RunConfig, files: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if files.is_empty() {
        return Err(Error::Config("report needs at least one input file".into()));
    }
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let mut written = Vec::new();
    for file in files {
        let json = file.with_extension("json");
        if !json.exists() {
            return Err(Error::Format {
                path: file.display().to_string(),
                message: "no JSON document found".into(),
            });
        }
        let stem = policy_name(file);
        let tables = match io::json_format(&json)?.as_str() {
            io::DATASET_FORMAT => {
                let (dir, s) = io::split_dataset_path(&json)?;
                dataset_tables(&read_dataset(&dir, &s)?)
            }
            io::TRAINING_FORMAT => {
                let r: TrainingReport = read_json(&json, io::TRAINING_FORMAT)?;
                vec![
                    ("confusion_train".to_owned(), confusion_table(&r.train.confusion)),
                    ("confusion_test".to_owned(), confusion_table(&r.test.confusion)),
                ]
            }
            io::EVAL_FORMAT => eval_tables(&read_json(&json, io::EVAL_FORMAT)?),
            other => {
                return Err(Error::Format {
                    path: json.display().to_string(),
                    message: format!("no tables for format '{other}'"),
                })
            }
        };
        for (name, body) in tables {
            let path = out.join(format!("{stem}_{name}.csv"));
            fs::write(&path, body)?;
            println!("wrote {}", path.display());
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_clamps_and_counts() {
        let h = histogram([-1.0, 0.0, 0.49, 0.5, 0.99, 1.0, 7.0].into_iter(), 0.0, 1.0, 2);
        assert_eq!(h, vec![3, 4]);
    }

    #[test]
    fn empty_report_list_is_usage_error() {
        let err = cmd_report(&RunConfig::default(), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
