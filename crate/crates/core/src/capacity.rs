//! Per-node throughput: closed-form bounds and full-stack measurement.

use std::f64::consts::PI;
use std::io::Write;

use crate::csma::{run, CsmaConfig, EntitySet, FlowTraffic, SimResult};
use crate::error::{Error, Result};
use crate::percolation::PATH_DENSITY;
use crate::phy::PhyParams;
use crate::routing::{Route, SdPair};
use crate::spatial::NodeField;

/// Mean SD distance in a unit square.
pub const MEAN_DISTANCE: f64 = 0.5214;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ThroughputBounds {
    pub fn new(n: f64, params: &PhyParams, omega2: f64, omega3: f64) -> Self {
        Self { lower: lower_bound(n, params, omega2, omega3), upper: upper_bound(n, params) }
    }

    pub fn is_ordered(&self) -> bool {
        self.lower <= self.upper
    }
}

/// Routing share `0.5474 / ω2` times scheduling share `ω3`, times `W / √n`.
pub fn lower_bound(n: f64, params: &PhyParams, omega2: f64, omega3: f64) -> f64 {
    PATH_DENSITY / omega2 * omega3 * params.w / n.sqrt()
}

pub fn upper_bound(n: f64, params: &PhyParams) -> f64 {
    let (c, c1) = (params.c, params.c1);
    let q2 = params.pbar.powf(2.0 / params.alpha);
    params.w / (0.52 * c * (5.0 * PI * c * c * c1 * c1 * q2 + 1.0) * n.sqrt())
}

/// Mean number of relay-stage hops over non-degenerate routes.
pub fn avg_hop_count(routes: &[Route]) -> Option<f64> {
    let (sum, k) =
        routes.iter().filter(|r| !r.degenerate).fold((0usize, 0usize), |(s, k), r| (s + r.relay_hops(), k + 1));
    (k > 0).then(|| sum as f64 / k as f64)
}

pub fn mean_sd_distance(pairs: &[SdPair]) -> Option<f64> {
    (!pairs.is_empty()).then(|| pairs.iter().map(SdPair::length).sum::<f64>() / pairs.len() as f64)
}

/// Delivered traffic per SD pair over the measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStats {
    pub delivered: Vec<u64>,
    pub window: f64,
    /// Delivered bits per unit time, per pair.
    pub rates: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// Minimum over pairs with regular routes.
    pub min_rate: f64,
    pub median_rate: f64,
    /// Average over pairs with regular routes.
    pub mean_rate: f64,
    pub degenerate_count: usize,
}

impl FlowStats {
    fn new(delivered: Vec<u64>, degenerate: Vec<bool>, window: f64, bits_per_packet: f64) -> Self {
        let rates: Vec<f64> = delivered.iter().map(|&d| d as f64 * bits_per_packet / window).collect();
        let mut kept: Vec<f64> = rates.iter().zip(&degenerate).filter(|(_, &d)| !d).map(|(&r, _)| r).collect();
        kept.sort_by(f64::total_cmp);
        let median_rate = match kept.len() {
            0 => f64::NAN,
            k if k % 2 == 1 => kept[k / 2],
            k => 0.5 * (kept[k / 2 - 1] + kept[k / 2]),
        };
        let mean_rate = if kept.is_empty() { f64::NAN } else { kept.iter().sum::<f64>() / kept.len() as f64 };
        Self {
            min_rate: kept.first().copied().unwrap_or(f64::NAN),
            median_rate,
            mean_rate,
            degenerate_count: degenerate.iter().filter(|&&d| d).count(),
            delivered,
            window,
            rates,
            degenerate,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThroughputRun {
    pub flows: FlowStats,
    pub entities: EntitySet,
    pub sim: SimResult,
}

/// Saturated sources, round-robin relays, one CSMA run. Packets carry `W`
/// bits per unit of airtime.
pub fn simulate_throughput(
    field: &NodeField,
    routes: &[Route],
    params: &PhyParams,
    cfg: &CsmaConfig,
) -> Result<ThroughputRun> {
    let entities = EntitySet::from_routes(routes, field);
    let mut traffic = FlowTraffic::new(&entities, routes);
    let sim = run(cfg, &entities, params, field, &mut traffic)?;
    let bad = traffic.unbalanced_routes();
    if !bad.is_empty() {
        return Err(Error::Consistency(format!("packets lost on {} routes, first {}", bad.len(), bad[0])));
    }
    let degenerate = routes.iter().map(|r| r.degenerate).collect();
    let flows = FlowStats::new(traffic.delivered, degenerate, sim.window, params.w * cfg.packet_duration);
    Ok(ThroughputRun { flows, entities, sim })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputRow {
    pub n: f64,
    pub seed: u64,
    pub lower: f64,
    pub upper: f64,
    pub measured_min: f64,
    pub measured_median: f64,
    pub degenerate_flow_count: usize,
}

pub fn write_results_csv<W: Write>(rows: &[ThroughputRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "seed", "lower", "upper", "measured_min", "measured_median", "degenerate_flow_count"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.seed.to_string(),
            format!("{:.9e}", r.lower),
            format!("{:.9e}", r.upper),
            format!("{:.9e}", r.measured_min),
            format!("{:.9e}", r.measured_median),
            r.degenerate_flow_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`. `None` if any value is not positive.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
