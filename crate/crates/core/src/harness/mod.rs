//! Seeded experiment sweeps over network sizes, with CSV output and bound checks.

mod config;
mod table;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rayon::prelude::*;

pub use config::{Experiment, ExperimentConfig};
pub use table::{
    check_rows, mean_ci, read_rows, required_fraction, summarize, validate_bounds, write_table, Check, Row, Sense,
    Summary, ValidationReport, HEADER,
};

use crate::capacity::{
    avg_hop_count, log_log_slope, mean_sd_distance, simulate_throughput, write_results_csv, ThroughputBounds,
    ThroughputRow,
};
use crate::csma::{measure_map, omega3, omega4, run, EntitySet, SaturatedTraffic, SimResult};
use crate::error::{Error, Result};
use crate::percolation::{all_path_sets, PATH_DENSITY};
use crate::phy::{max_interference_bound, solve_pbar_unit_power, PhyParams, TxClass};
use crate::routing::{build_routes, count_sd_lines, generate_sd_pairs, omega2, traffic_load, Backbone, Route, SdPair};
use crate::seed::stream;
use crate::spatial::{classify_sites, deploy_poisson, NodeField, Orientation, Partition};

/// Everything one `(n, seed)` cell produced.
#[derive(Debug, Clone, Default)]
pub struct CellOutput {
    pub rows: Vec<Row>,
    pub throughput: Option<ThroughputRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub n: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub summaries: Vec<Summary>,
    pub failures: Vec<CellFailure>,
    pub throughput: Vec<ThroughputRow>,
    pub report: ValidationReport,
    /// Log-log slope of the measured minimum rate against `n`.
    pub scaling: Option<f64>,
    pub manifest: String,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.report.ok()
    }
}

/// Deployment, backbone, pairs and routes of one replication.
pub struct Network {
    pub field: NodeField,
    pub backbone: Backbone,
    pub pairs: Vec<SdPair>,
    pub routes: Vec<Route>,
}

pub fn build_network(cfg: &ExperimentConfig, n: f64, seed: u64) -> Result<Network> {
    let field = deploy_poisson(1.0, n.sqrt(), seed)?;
    let backbone = Backbone::build(&field, cfg.c, cfg.c1, seed)?;
    let pairs = generate_sd_pairs(&field, seed)?;
    let routes = build_routes(&pairs, &field, &backbone, seed)?;
    Ok(Network { field, backbone, pairs, routes })
}

/// Smallest MAP among entities of `class` with enough competitions; NaN if none qualify.
fn min_map(set: &EntitySet, sim: &SimResult, class: TxClass) -> (f64, usize, usize) {
    let maps = measure_map(&sim.stats);
    let mut min = f64::NAN;
    let (mut counted, mut flagged) = (0, 0);
    for ((e, m), &tracked) in set.entities.iter().zip(&maps).zip(&sim.tracked) {
        if e.class != class || !tracked {
            continue;
        }
        if m.low_confidence {
            flagged += 1;
        } else {
            counted += 1;
            min = if min.is_nan() { m.map } else { min.min(m.map) };
        }
    }
    (min, counted, flagged)
}

pub fn run_cell(cfg: &ExperimentConfig, n: f64, seed: u64) -> Result<CellOutput> {
    let exp = cfg.experiment;
    let row = |metric: &str, value: f64| Row::new(exp, n, seed, metric, value);
    let ln = n.ln();
    let mut out = CellOutput::default();
    match exp {
        Experiment::OpenPaths => {
            let field = deploy_poisson(1.0, n.sqrt(), seed)?;
            let partition = Partition::new(field.side, cfg.c, cfg.c1)?;
            let grid = classify_sites(&field, &partition)?;
            for set in all_path_sets(&grid, &partition) {
                let count = set.paths.len() as f64;
                let r = match set.rect.orientation {
                    Orientation::LeftRight => row("open_paths", count).at_least(PATH_DENSITY * ln),
                    Orientation::TopBottom => row("open_paths_tb", count),
                };
                out.rows.push(r.item(set.rect.to_string()));
            }
        }
        Experiment::SdLines => {
            let net = build_network(cfg, n, seed)?;
            let w2 = omega2(cfg.c1, cfg.epsilon, cfg.delta1);
            let counts = count_sd_lines(&net.pairs, &net.backbone.partition);
            let max_y = counts.iter().copied().max().unwrap_or(0) as f64;
            out.rows.push(row("sd_lines", max_y / (n.sqrt() * ln)).at_most(w2));
            let load = traffic_load(&net.routes, net.field.len());
            let max_load = load.iter().copied().max().unwrap_or(0) as f64;
            out.rows.push(row("relay_load", max_load / n.sqrt()).at_most(w2 / PATH_DENSITY));
            let hops = avg_hop_count(&net.routes).unwrap_or(f64::NAN);
            out.rows.push(row("avg_hops", hops).at_least(0.95 * 0.52 * n.sqrt() / cfg.c));
            let dist = mean_sd_distance(&net.pairs).unwrap_or(f64::NAN) / net.field.side;
            out.rows.push(row("mean_sd_distance", dist));
            let degenerate = net.routes.iter().filter(|r| r.degenerate).count();
            out.rows.push(row("degenerate_routes", degenerate as f64));
        }
        Experiment::Map => {
            let net = build_network(cfg, n, seed)?;
            let params = cfg.phy(n)?;
            let set = EntitySet::from_routes(&net.routes, &net.field);
            let csma = cfg.csma(n, seed);
            let sim = run(&csma, &set, &params, &net.field, &mut SaturatedTraffic::new(&set))?;
            let (low, _, low_flagged) = min_map(&set, &sim, TxClass::Low);
            out.rows.push(row("min_map_low", low).at_least(omega3(&params, cfg.delta2)));
            out.rows.push(row("low_confidence_low", low_flagged as f64));
            let (high, high_counted, _) = min_map(&set, &sim, TxClass::High);
            out.rows.push(row("min_map_high", high).at_least(omega4(&params, n, cfg.delta3)));
            out.rows.push(row("high_with_competitions", high_counted as f64));
            if let Some(audit) = &sim.audit {
                out.rows.push(row("hidden_node_violations", audit.violations as f64).at_most(0.0));
                let bound = max_interference_bound(&params)?.total();
                out.rows.push(row("max_interference", audit.max_interference).at_most(bound));
                out.rows.push(row("audited_links", audit.links as f64));
            }
        }
        Experiment::Throughput => {
            let net = build_network(cfg, n, seed)?;
            let params = cfg.phy(n)?;
            let bounds =
                ThroughputBounds::new(n, &params, omega2(cfg.c1, cfg.epsilon, cfg.delta1), omega3(&params, cfg.delta2));
            let run = simulate_throughput(&net.field, &net.routes, &params, &cfg.csma(n, seed))?;
            let f = &run.flows;
            out.rows.push(row("min_rate", f.min_rate).at_least(bounds.lower));
            out.rows.push(row("min_rate_upper", f.min_rate).at_most(bounds.upper));
            out.rows.push(row("rate_ratio_to_lower", f.min_rate / bounds.lower).at_most(10.0));
            out.rows.push(row("median_rate", f.median_rate));
            out.rows.push(row("mean_rate", f.mean_rate));
            out.rows.push(row("degenerate_flows", f.degenerate_count as f64));
            let (high, _, _) = min_map(&run.entities, &run.sim, TxClass::High);
            out.rows.push(row("min_map_high_flow", high));
            out.throughput = Some(ThroughputRow {
                n,
                seed,
                lower: bounds.lower,
                upper: bounds.upper,
                measured_min: f.min_rate,
                measured_median: f.median_rate,
                degenerate_flow_count: f.degenerate_count,
            });
        }
        Experiment::PhySolve => {
            let params = cfg.phy(n)?;
            let bound = max_interference_bound(&params)?;
            out.rows.push(row("pbar", params.pbar));
            out.rows.push(row("pbar_unit_power", solve_pbar_unit_power(cfg.alpha, cfg.beta, cfg.c)?));
            out.rows.push(row("p_low", params.p_low));
            out.rows.push(row("p_high", params.p_high));
            out.rows.push(row("interference_bound", bound.total()));
            out.rows.push(row("omega3", omega3(&params, cfg.delta2)));
            out.rows.push(row("omega4", omega4(&params, n, cfg.delta3)));
        }
    }
    Ok(out)
}

fn cell_name(exp: Experiment, n: f64, seed: u64) -> String {
    format!("{exp}-n{n}-s{seed}.csv")
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn manifest(cfg: &ExperimentConfig, cells: usize, failures: &[CellFailure], scaling: Option<f64>) -> Result<String> {
    let mut out = String::from("# run manifest\n");
    out += &format!("version={}\n", env!("CARGO_PKG_VERSION"));
    out += &cfg.to_text();
    for (name, label) in [
        ("deploy", stream::DEPLOY),
        ("pairs", stream::PAIRS),
        ("relays", stream::RELAYS),
        ("routes", stream::ROUTES),
        ("csma", stream::CSMA),
    ] {
        out += &format!("stream.{name}={label}\n");
    }
    for &n in &cfg.sizes {
        let params: PhyParams = cfg.phy(n)?;
        let mut kv = Vec::new();
        params.write_kv(&mut kv)?;
        for line in String::from_utf8_lossy(&kv).lines() {
            out += &format!("phy.{n}.{line}\n");
        }
        let csma = cfg.csma(n, 0);
        out += &format!("csma.{n}.lambda_low={}\ncsma.{n}.lambda_high={}\n", csma.lambda_low, csma.lambda_high);
    }
    out += &format!("cells={cells}\nfailed_cells={}\n", failures.len());
    if let Some(s) = scaling {
        out += &format!("scaling_slope={s}\n");
    }
    Ok(out)
}

/// Runs every `(n, seed)` cell, in parallel over at most `jobs` threads.
/// A failing cell is recorded and does not affect the others.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, jobs: Option<usize>) -> Result<Outcome> {
    sweep(cfg, out_dir, jobs, run_cell)
}

fn sweep<F>(cfg: &ExperimentConfig, out_dir: Option<&Path>, jobs: Option<usize>, cell: F) -> Result<Outcome>
where
    F: Fn(&ExperimentConfig, f64, u64) -> Result<CellOutput> + Sync,
{
    cfg.validate()?;
    let exp = cfg.experiment;
    let cells: Vec<(f64, u64)> = cfg.sizes.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("jobs: {e}")))?;
    let results: Vec<std::result::Result<CellOutput, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, seed)| match catch_unwind(AssertUnwindSafe(|| cell(cfg, n, seed))) {
                Ok(Ok(out)) => Ok(out),
                Ok(Err(e)) => Err(e.to_string()),
                Err(p) => Err(p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into())),
            })
            .collect()
    });

    let cell_dir = out_dir.map(|d| d.join("cells"));
    if let Some(d) = &cell_dir {
        fs::create_dir_all(d)?;
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut throughput = Vec::new();
    for (&(n, seed), res) in cells.iter().zip(results) {
        match res {
            Ok(cell) => {
                if let Some(d) = &cell_dir {
                    let mut buf = Vec::new();
                    write_table(&cell.rows, &[], &mut buf)?;
                    write_atomic(&d.join(cell_name(exp, n, seed)), &buf)?;
                }
                rows.extend(cell.rows);
                throughput.extend(cell.throughput);
            }
            Err(error) => failures.push(CellFailure { n, seed, error }),
        }
    }

    let summaries = summarize(&rows);
    let report = check_rows(exp, &rows)?;
    let scaling = (exp == Experiment::Throughput)
        .then(|| {
            let pts: Vec<(f64, f64)> = throughput.iter().map(|t| (t.n, t.measured_min)).collect();
            let distinct = pts.iter().any(|p| p.0 != pts[0].0);
            if distinct {
                log_log_slope(&pts)
            } else {
                None
            }
        })
        .flatten();
    let manifest = manifest(cfg, cells.len(), &failures, scaling)?;

    if let Some(d) = out_dir {
        let mut buf = Vec::new();
        write_table(&rows, &summaries, &mut buf)?;
        write_atomic(&d.join(format!("{exp}.csv")), &buf)?;
        write_atomic(&d.join("manifest.txt"), manifest.as_bytes())?;
        let mut fbuf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut fbuf);
            w.write_record(["n", "seed", "error"])?;
            for f in &failures {
                w.write_record([f.n.to_string(), f.seed.to_string(), f.error.clone()])?;
            }
            w.flush()?;
        }
        write_atomic(&d.join("failures.csv"), &fbuf)?;
        if exp == Experiment::Throughput {
            let mut tbuf = Vec::new();
            write_results_csv(&throughput, &mut tbuf)?;
            write_atomic(&d.join("throughput_results.csv"), &tbuf)?;
        }
        let mut rbuf = Vec::new();
        report.write_text(&mut rbuf)?;
        write_atomic(&d.join("validation.txt"), &rbuf)?;
    }

    Ok(Outcome { rows, summaries, failures, throughput, report, scaling, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(exp: Experiment, sizes: &[f64], seeds: &[u64]) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(exp);
        c.sizes = sizes.to_vec();
        c.seeds = seeds.to_vec();
        c
    }

    #[test]
    fn open_paths_rows_per_rectangle() {
        let c = cfg(Experiment::OpenPaths, &[1e4], &[1, 2, 3]);
        let out = run_experiment(&c, None, Some(1)).unwrap();
        let partition = Partition::new(100.0, c.c, c.c1).unwrap();
        let horizontal = partition.rectangles().filter(|r| r.orientation == Orientation::LeftRight).count();
        let lr: Vec<_> = out.rows.iter().filter(|r| r.metric == "open_paths").collect();
        assert_eq!(lr.len(), 3 * horizontal);
        assert!(lr.iter().filter(|r| r.item == "H0").count() == 3);
        let agg = out.summaries.iter().find(|s| s.metric == "open_paths").unwrap();
        assert_eq!(agg.count, 3 * horizontal);
        assert!(out.failures.is_empty());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(Experiment::SdLines, &[2e3], &[5, 6]);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run_experiment(&c, Some(&a), Some(1)).unwrap();
        run_experiment(&c, Some(&b), Some(2)).unwrap();
        for f in ["sd-lines.csv", "manifest.txt", "cells/sd-lines-n2000-s5.csv"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn phy_solve_manifest_records_pbar() {
        let c = cfg(Experiment::PhySolve, &[1e4], &[1]);
        let out = run_experiment(&c, None, None).unwrap();
        let line = out.manifest.lines().find(|l| l.starts_with("phy.10000.pbar=")).unwrap();
        let pbar: f64 = line.split('=').nth(1).unwrap().parse().unwrap();
        assert!((pbar - 0.742_904_272_596_847_9).abs() < 1e-6 * pbar);
        assert!(out.manifest.contains("experiment=phy-solve\n"));
        assert!(out.manifest.contains("stream.csma=5\n"));
    }

    #[test]
    fn failing_cells_leave_others_intact() {
        let c = cfg(Experiment::SdLines, &[2e3], &[1, 2, 3]);
        let dir = tempfile::tempdir().unwrap();
        let flaky = |cfg: &ExperimentConfig, n: f64, seed: u64| match seed {
            1 => Err(Error::Consistency("injected".into())),
            3 => panic!("injected panic"),
            _ => run_cell(cfg, n, seed),
        };
        let out = sweep(&c, Some(dir.path()), Some(2), flaky).unwrap();
        let alone = run_experiment(&cfg(Experiment::SdLines, &[2e3], &[2]), None, Some(1)).unwrap();
        let key = |r: &Row| (r.label(), r.value.to_bits(), r.bound.to_bits());
        assert_eq!(out.rows.iter().map(key).collect::<Vec<_>>(), alone.rows.iter().map(key).collect::<Vec<_>>());
        assert_eq!(out.failures.len(), 2);
        assert!(out.failures[0].error.contains("injected"));
        assert!(out.failures[1].error.contains("injected panic"));
        assert!(!out.passed());
        let failures = fs::read_to_string(dir.path().join("failures.csv")).unwrap();
        assert_eq!(failures.lines().count(), 3);
        assert!(!dir.path().join("cells/sd-lines-n2000-s1.csv").exists());
        assert!(dir.path().join("cells/sd-lines-n2000-s2.csv").exists());
    }

    #[test]
    fn map_cell_reports_bounds_and_audit() {
        let mut c = cfg(Experiment::Map, &[2e3], &[1]);
        c.horizon = 60.0;
        c.warmup = 5.0;
        c.audit = true;
        let out = run_experiment(&c, None, Some(1)).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        for m in ["min_map_low", "min_map_high", "hidden_node_violations", "max_interference"] {
            assert!(out.rows.iter().any(|r| r.metric == m), "{m}");
        }
        let v = out.rows.iter().find(|r| r.metric == "hidden_node_violations").unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn throughput_cell_writes_results_table() {
        let mut c = cfg(Experiment::Throughput, &[2e3], &[1]);
        c.horizon = 60.0;
        c.warmup = 5.0;
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&c, Some(dir.path()), Some(1)).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.throughput.len(), 1);
        let text = fs::read_to_string(dir.path().join("throughput_results.csv")).unwrap();
        assert!(text.starts_with("n,seed,lower,upper,measured_min,measured_median,degenerate_flow_count\n"));
        assert!(out.throughput[0].lower < out.throughput[0].upper);
    }
}
