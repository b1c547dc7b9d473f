//! Continuous-time CSMA: transmitter entities, the contention relation,
//! the event engine, medium-access statistics and the hidden-node audit.

mod audit;
mod engine;
mod traffic;

use std::collections::HashMap;
use std::f64::consts::PI;

pub use audit::{audit_hidden_node_freedom, AuditReport, InterferenceTracker};
pub use engine::{run, write_trace_csv, SimResult, TraceEvent, TraceKind};
pub use traffic::{FlowTraffic, SaturatedTraffic, Traffic};

use crate::error::{param, Result};
use crate::phy::{PhyParams, TxClass};
use crate::routing::Route;
use crate::spatial::{NodeField, NodeId, Point, SpatialIndex};

/// A node transmitting in one power class. A node that sends both LOW and
/// HIGH hops appears as two entities that always sense each other.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub node: NodeId,
    pub class: TxClass,
    pub pos: Point,
    /// Distinct next hops this entity serves, ascending.
    pub receivers: Vec<NodeId>,
}

#[derive(Debug, Clone, Default)]
pub struct EntitySet {
    pub entities: Vec<Entity>,
    lookup: HashMap<(NodeId, TxClass), u32>,
}

impl EntitySet {
    /// One entity per `(transmitting node, class)` over all route hops, sorted by node then class.
    pub fn from_routes(routes: &[Route], field: &NodeField) -> Self {
        let mut rx: HashMap<(NodeId, TxClass), Vec<NodeId>> = HashMap::new();
        for r in routes {
            for h in &r.hops {
                rx.entry((h.from, h.class)).or_default().push(h.to);
            }
        }
        let mut keys: Vec<_> = rx.keys().copied().collect();
        keys.sort_unstable();
        let entities = keys
            .iter()
            .map(|&(node, class)| {
                let mut receivers = rx.remove(&(node, class)).unwrap();
                receivers.sort_unstable();
                receivers.dedup();
                Entity { node, class, pos: field.position(node), receivers }
            })
            .collect();
        Self::new(entities)
    }

    pub fn new(entities: Vec<Entity>) -> Self {
        let lookup = entities.iter().enumerate().map(|(i, e)| ((e.node, e.class), i as u32)).collect();
        Self { entities, lookup }
    }

    pub fn id(&self, node: NodeId, class: TxClass) -> Option<u32> {
        self.lookup.get(&(node, class)).copied()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: u32) -> &Entity {
        &self.entities[id as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmaConfig {
    /// Countdown rate of LOW entities (mean timer `1 / lambda_low`).
    pub lambda_low: f64,
    /// Countdown rate of HIGH entities.
    pub lambda_high: f64,
    pub packet_duration: f64,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub record_trace: bool,
    pub audit: bool,
    /// Cap on HIGH entities whose competitions are counted. Untracked entities
    /// follow the same protocol but check the medium on demand.
    pub tracked_high: Option<usize>,
}

impl CsmaConfig {
    /// LOW timers with mean 1, HIGH timers with mean `ln² n`, unit packets.
    pub fn for_network(n: f64, horizon: f64, warmup: f64, seed: u64) -> Self {
        let ln = n.ln();
        Self {
            lambda_low: 1.0,
            lambda_high: 1.0 / (ln * ln),
            packet_duration: 1.0,
            horizon,
            warmup,
            seed,
            record_trace: false,
            audit: false,
            tracked_high: None,
        }
    }

    pub fn rate(&self, class: TxClass) -> f64 {
        match class {
            TxClass::Low => self.lambda_low,
            TxClass::High => self.lambda_high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_low", self.lambda_low),
            ("lambda_high", self.lambda_high),
            ("packet_duration", self.packet_duration),
            ("horizon", self.horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return param(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return param(format!("warmup {} must lie in [0, horizon {})", self.warmup, self.horizon));
        }
        Ok(())
    }
}

/// Symmetric "senses" relation between entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentionGraph {
    pub adjacency: Vec<Vec<u32>>,
}

impl ContentionGraph {
    pub fn degree(&self, id: u32) -> usize {
        self.adjacency[id as usize].len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency.iter().enumerate().all(|(i, nbrs)| {
            nbrs.iter().all(|&j| j as usize != i && self.adjacency[j as usize].binary_search(&(i as u32)).is_ok())
        })
    }
}

/// Edge `(i, j)` iff the two entities sense each other under their class powers.
pub fn build_contention_graph(set: &EntitySet, params: &PhyParams, side: f64) -> ContentionGraph {
    let pts: Vec<Point> = set.entities.iter().map(|e| e.pos).collect();
    let r_max = params.sensing_radius(TxClass::High, TxClass::High);
    let r_ll = params.sensing_radius(TxClass::Low, TxClass::Low);
    let index = SpatialIndex::new(&pts, side, r_ll);
    let adjacency = set
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let reach = match e.class {
                TxClass::Low => params.sensing_radius(TxClass::Low, TxClass::High),
                TxClass::High => r_max,
            };
            let mut nbrs = Vec::new();
            index.for_each_candidate(&e.pos, reach, |j| {
                let f = &set.entities[j as usize];
                if j as usize != i && e.pos.dist(&f.pos) < params.sensing_radius(e.class, f.class) {
                    nbrs.push(j);
                }
            });
            nbrs.sort_unstable();
            nbrs
        })
        .collect();
    ContentionGraph { adjacency }
}

/// Per-entity contention tallies after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EntityStats {
    pub competitions: u64,
    pub wins: u64,
    pub transmissions: u64,
    /// Fraction of the measurement window spent transmitting.
    pub busy_fraction: f64,
}

/// Competitions needed before a MAP estimate is trusted.
pub const MIN_COMPETITIONS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEstimate {
    pub map: f64,
    pub competitions: u64,
    pub low_confidence: bool,
}

/// Competitions won over competitions entered; an entity that never
/// competed is reported with MAP 1 and flagged.
pub fn measure_map(stats: &[EntityStats]) -> Vec<MapEstimate> {
    stats
        .iter()
        .map(|s| MapEstimate {
            map: if s.competitions == 0 { 1.0 } else { s.wins as f64 / s.competitions as f64 },
            competitions: s.competitions,
            low_confidence: s.competitions < MIN_COMPETITIONS,
        })
        .collect()
}

/// Guaranteed MAP of a LOW relay.
pub fn omega3(params: &PhyParams, delta2: f64) -> f64 {
    let (c, c1) = (params.c, params.c1);
    let q = params.pbar.powf(1.0 / params.alpha);
    1.0 / (PI * (5.0 * q * c).powi(2) + (1.0 + delta2) * 10.0 * PI * c * c * c1 * c1 * q * q + 1.0)
}

/// Guaranteed MAP of a HIGH transmitter in a network of `n` nodes.
pub fn omega4(params: &PhyParams, n: f64, delta3: f64) -> f64 {
    let c1 = params.c1;
    let q = params.pbar.powf(1.0 / params.alpha);
    let l4 = n.ln().powi(4);
    1.0 / (PI * (10f64.sqrt() * c1 * q).powi(2) * l4 + (1.0 + delta3) * 4.0 * PI * c1.powi(4) * q * q * l4 + 1.0)
}

pub fn write_stats_csv<W: std::io::Write>(set: &EntitySet, stats: &[EntityStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "class", "competitions", "wins", "map", "busy_fraction"])?;
    for (e, (s, m)) in set.entities.iter().zip(stats.iter().zip(measure_map(stats))) {
        w.write_record([
            e.node.to_string(),
            e.class.to_string(),
            s.competitions.to_string(),
            s.wins.to_string(),
            format!("{:.9e}", m.map),
            format!("{:.9e}", s.busy_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}
