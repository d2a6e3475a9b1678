//! Cross-method comparison and run provenance.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shapebench::clinical::adjusted_rand_index;
use shapebench::metrics::MetricCurves;

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{load_model, read_clusters, recorded_failures, RunDir};

/// Mode counts reported in the summary table.
pub const SUMMARY_K: [usize; 3] = [1, 2, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub compactness: f64,
    pub generalization_mm: f64,
    pub specificity_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub metrics: Vec<MetricRow>,
    /// Members per cluster, clusters numbered from 1.
    pub cluster_sizes: Option<Vec<usize>>,
    /// Agreement of the clustering with the generative family labels.
    pub adjusted_rand_index: Option<f64>,
    pub tests_run: Option<usize>,
    pub tests_passed: Option<usize>,
    /// Last objective of the optimisation trace, where the method has one.
    pub final_objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: Vec<(String, u64)>,
    pub samples: usize,
    /// Where the ostium contours marked on cluster means come from.
    pub contour_source: Option<String>,
    pub methods: Vec<MethodSummary>,
    pub failures: Vec<Failure>,
    /// Expected artifacts that were not found.
    pub missing: Vec<String>,
    /// Every file of the run, relative to the run directory.
    pub files: Vec<String>,
}

impl RunReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn load(run: &Path) -> Result<Self> {
        let path = run.join("report.json");
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

/// One row per method.
pub fn summary_csv(methods: &[MethodSummary]) -> String {
    let mut out = String::from("method");
    for name in ["compactness", "generalization_mm", "specificity_mm"] {
        for k in SUMMARY_K {
            let _ = write!(out, ",{name}_{k}");
        }
    }
    out.push_str(",adjusted_rand_index,tests_passed,tests_run\n");
    for m in methods {
        out.push_str(&m.method);
        let at = |k: usize| m.metrics.iter().find(|r| r.k == k);
        for pick in [|r: &MetricRow| r.compactness, |r: &MetricRow| r.generalization_mm, |r: &MetricRow| r.specificity_mm] {
            for k in SUMMARY_K {
                let _ = write!(out, ",{}", fmt_opt(at(k).map(pick)));
            }
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            fmt_opt(m.adjusted_rand_index),
            fmt_opt(m.tests_passed),
            fmt_opt(m.tests_run)
        );
    }
    out
}

fn last_objective(path: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines().skip(1).last()?.rsplit(',').next()?.parse().ok()
}

/// (run, passed) from a `pvalues.csv`.
fn count_tests(path: &Path) -> Option<(usize, usize)> {
    let text = std::fs::read_to_string(path).ok()?;
    let cells: Vec<&str> = text.lines().skip(1).flat_map(|l| l.split(',').skip(1)).collect();
    let run = cells.iter().filter(|c| !c.ends_with("|skipped")).count();
    let passed = cells.iter().filter(|c| c.ends_with("|pass")).count();
    Some((run, passed))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Gathers whatever artifacts exist into `summary.csv` and `report.json`.
pub fn report(run: &RunDir) -> Result<RunReport> {
    let config_text = std::fs::read_to_string(run.config()).map_err(|e| CliError::io(run.config(), e))?;
    let config = ExperimentConfig::parse(&config_text, &run.config())?;
    let truth = run.ground_truth()?;
    let families = truth.as_ref().and_then(|t| t.family_labels());
    let mut missing = Vec::new();
    let mut methods = Vec::new();
    let mut samples = 0;
    for m in &config.methods {
        let name = m.name();
        let dir = run.method(name);
        let model = match load_model(run, name) {
            Ok(model) => model,
            Err(_) => {
                missing.push(format!("methods/{name}/correspondences"));
                continue;
            }
        };
        samples = model.num_shapes();
        let metrics = match MetricCurves::read_csv(name, dir.join("metrics.csv")) {
            Ok(c) => (0..c.k.len())
                .map(|i| MetricRow {
                    k: c.k[i],
                    compactness: c.compactness[i],
                    generalization_mm: c.generalization[i],
                    specificity_mm: c.specificity[i],
                })
                .collect(),
            Err(_) => {
                missing.push(format!("methods/{name}/metrics.csv"));
                Vec::new()
            }
        };
        let labels = read_clusters(dir.join("clusters.csv"), model.ids()).ok();
        if labels.is_none() {
            missing.push(format!("methods/{name}/clusters.csv"));
        }
        let cluster_sizes = labels.as_ref().map(|l| {
            let k = l.iter().max().map_or(0, |&x| x + 1).max(config.clustering.k);
            (0..k).map(|c| l.iter().filter(|&&x| x == c).count()).collect()
        });
        let adjusted_rand_index = match (&labels, &families) {
            (Some(l), Some(f)) if l.len() == f.len() => Some(adjusted_rand_index(l, f)),
            _ => None,
        };
        let tests = count_tests(&dir.join("pvalues.csv"));
        methods.push(MethodSummary {
            method: name.to_string(),
            metrics,
            cluster_sizes,
            adjusted_rand_index,
            tests_run: tests.map(|t| t.0),
            tests_passed: tests.map(|t| t.1),
            final_objective: last_objective(&dir.join("trace.csv")),
        });
    }
    std::fs::write(run.root.join("summary.csv"), summary_csv(&methods)).map_err(|e| CliError::io(run.root.join("summary.csv"), e))?;
    let contour_source = truth.filter(|t| t.has_ostia() && config.validation).map(|_| {
        "generator ground-truth ostium rings averaged per cluster and anchored on the cluster mean \
         (automated surrogate for manual marking)"
            .to_string()
    });
    let failures = recorded_failures(run, &config)
        .into_iter()
        .map(|f| Failure { method: f.method, stage: f.stage, message: f.message })
        .collect();
    let mut files = Vec::new();
    list_files(&run.root, &run.root, &mut files)?;
    if !files.iter().any(|f| f == "report.json") {
        files.push("report.json".into());
        files.sort();
    }
    let report = RunReport {
        tool: "shapebench".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seeds: config.seeds(),
        samples,
        contour_source,
        methods,
        failures,
        missing,
        files,
    };
    let path = run.root.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}
