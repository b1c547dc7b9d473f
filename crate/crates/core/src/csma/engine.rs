//! Event loop.
//!
//! Every entity with a packet runs an exponential countdown that is frozen
//! while it senses a transmission. Because the countdown is memoryless this is
//! simulated exactly by letting each backlogged entity fire at its class rate
//! at all times and discarding firings that happen while it senses the medium
//! busy.
//!
//! Busy state is kept as a counter per entity: the number of active
//! transmitters it senses. Class pairs whose sensing radius exceeds the box
//! diagonal are tracked by one shared counter instead, and the competitions
//! they end are counted lazily through an epoch number.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::Rng;
use rand_distr::Exp1;

use super::audit::{AuditReport, InterferenceTracker};
use super::traffic::Traffic;
use super::{CsmaConfig, EntitySet, EntityStats};
use crate::error::Result;
use crate::phy::{PhyParams, TxClass};
use crate::seed;
use crate::spatial::{NodeField, NodeId, Point, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    TimerExpire,
    TxStart,
    TxEnd,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::TimerExpire => "timer-expire",
            TraceKind::TxStart => "tx-start",
            TraceKind::TxEnd => "tx-end",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub node: NodeId,
    pub class: TxClass,
    pub receiver: Option<NodeId>,
    pub kind: TraceKind,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub stats: Vec<EntityStats>,
    /// Entities whose competitions were counted; the rest report zero.
    pub tracked: Vec<bool>,
    pub trace: Vec<TraceEvent>,
    pub audit: Option<AuditReport>,
    /// Timer firings processed, including discarded ones.
    pub firings: u64,
    pub transmissions: u64,
    /// Length of the measurement window.
    pub window: f64,
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "node", "event"])?;
    for ev in trace {
        w.write_record([format!("{:.12e}", ev.time), ev.node.to_string(), ev.kind.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct TxEnd {
    time: f64,
    entity: u32,
}

impl PartialEq for TxEnd {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for TxEnd {}

impl PartialOrd for TxEnd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TxEnd {
    // min-heap on (time, entity)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.entity.cmp(&self.entity))
    }
}

/// Set with O(1) insert, remove and uniform draw.
#[derive(Debug, Clone)]
struct Bag {
    items: Vec<u32>,
    pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl Bag {
    fn new(universe: usize) -> Self {
        Self { items: Vec::new(), pos: vec![ABSENT; universe] }
    }

    fn insert(&mut self, x: u32) {
        if self.pos[x as usize] == ABSENT {
            self.pos[x as usize] = self.items.len() as u32;
            self.items.push(x);
        }
    }

    fn remove(&mut self, x: u32) {
        let p = self.pos[x as usize];
        if p != ABSENT {
            let last = *self.items.last().unwrap();
            self.items.swap_remove(p as usize);
            if last != x {
                self.pos[last as usize] = p;
            }
            self.pos[x as usize] = ABSENT;
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Entities of one class with a spatial index over their positions.
struct ClassIndex {
    members: Vec<u32>,
    index: SpatialIndex,
}

/// Currently active transmitters of one class, bucketed for "anyone within
/// `r`?" queries from entities without their own busy counter.
struct ActiveGrid {
    cell: f64,
    width: usize,
    buckets: Vec<Vec<u32>>,
    len: usize,
}

impl ActiveGrid {
    fn new(side: f64, cell: f64) -> Self {
        let cell = cell.max(side / 1024.0);
        let width = ((side / cell).ceil() as usize).max(1);
        Self { cell, width, buckets: vec![Vec::new(); width * width], len: 0 }
    }

    fn coord(&self, v: f64) -> usize {
        ((v / self.cell).floor().max(0.0) as usize).min(self.width - 1)
    }

    fn key(&self, p: &Point) -> usize {
        self.coord(p.y) * self.width + self.coord(p.x)
    }

    fn insert(&mut self, e: u32, p: &Point) {
        let k = self.key(p);
        self.buckets[k].push(e);
        self.len += 1;
    }

    fn remove(&mut self, e: u32, p: &Point) {
        let k = self.key(p);
        let b = &mut self.buckets[k];
        let i = b.iter().position(|&x| x == e).expect("active transmitter is bucketed");
        b.swap_remove(i);
        self.len -= 1;
    }

    /// Scans rings of buckets outward so that a busy neighbourhood answers early.
    fn any_within(&self, p: &Point, r: f64, pos: &[Point]) -> bool {
        if self.len == 0 {
            return false;
        }
        let (cx, cy) = (self.coord(p.x) as i64, self.coord(p.y) as i64);
        let w = self.width as i64;
        let r2 = r * r;
        let reach = (r / self.cell).ceil() as i64 + 1;
        let visit = |bx: i64, by: i64| -> bool {
            if bx < 0 || by < 0 || bx >= w || by >= w {
                return false;
            }
            let (x0, y0) = (bx as f64 * self.cell, by as f64 * self.cell);
            let dx = (x0 - p.x).max(p.x - x0 - self.cell).max(0.0);
            let dy = (y0 - p.y).max(p.y - y0 - self.cell).max(0.0);
            if dx * dx + dy * dy >= r2 {
                return false;
            }
            self.buckets[(by * w + bx) as usize].iter().any(|&e| p.dist2(&pos[e as usize]) < r2)
        };
        for k in 0..=reach {
            if k == 0 {
                if visit(cx, cy) {
                    return true;
                }
                continue;
            }
            for d in -k..=k {
                if visit(cx + d, cy - k) || visit(cx + d, cy + k) {
                    return true;
                }
            }
            for d in -k + 1..k {
                if visit(cx - k, cy + d) || visit(cx + k, cy + d) {
                    return true;
                }
            }
        }
        false
    }
}

struct Engine<'a> {
    cfg: &'a CsmaConfig,
    class: Vec<TxClass>,
    pos: Vec<Point>,
    radius: [[f64; 2]; 2],
    global: [[bool; 2]; 2],
    by_class: [ClassIndex; 2],
    tracked: Vec<bool>,
    active: [ActiveGrid; 2],
    local: Vec<u32>,
    shared: [u32; 2],
    epoch: [u64; 2],
    mark: Vec<u64>,
    demand: Vec<bool>,
    ready: [Bag; 2],
    stats: Vec<EntityStats>,
}

impl Engine<'_> {
    fn for_each_sensed(&self, e: u32, target: usize, mut f: impl FnMut(u32)) {
        let ce = self.class[e as usize].index();
        let idx = &self.by_class[target];
        let p = self.pos[e as usize];
        let r2 = self.radius[ce][target].powi(2);
        idx.index.for_each_candidate(&p, self.radius[ce][target], |i| {
            let g = idx.members[i as usize];
            if p.dist2(&self.pos[g as usize]) < r2 {
                f(g);
            }
        });
    }

    fn idle(&self, e: u32) -> bool {
        let ce = self.class[e as usize].index();
        if self.shared[ce] > 0 {
            return false;
        }
        if self.tracked[e as usize] {
            return self.local[e as usize] == 0;
        }
        let p = &self.pos[e as usize];
        (0..2).all(|b| self.global[ce][b] || !self.active[b].any_within(p, self.radius[ce][b], &self.pos))
    }

    /// Competitions entity `g` lost to shared-counter starts since its mark.
    fn flush_epochs(&mut self, g: u32) {
        let c = self.class[g as usize].index();
        let s = &mut self.stats[g as usize];
        s.competitions += self.epoch[c] - self.mark[g as usize];
        self.mark[g as usize] = self.epoch[c];
    }

    fn start(&mut self, e: u32) {
        let ce = self.class[e as usize].index();
        self.active[ce].insert(e, &self.pos[e as usize]);
        for target in 0..2 {
            if self.global[ce][target] {
                if target == ce && self.tracked[e as usize] {
                    // The starter ends its own competition with a win.
                    self.flush_epochs(e);
                    self.stats[e as usize].competitions += 1;
                    self.stats[e as usize].wins += 1;
                }
                self.shared[target] += 1;
                if self.shared[target] == 1 {
                    self.epoch[target] += 1;
                }
                if target == ce {
                    self.mark[e as usize] = self.epoch[target];
                }
            } else {
                let mut hit = Vec::new();
                self.for_each_sensed(e, target, |g| hit.push(g));
                for g in hit {
                    let gi = g as usize;
                    if self.local[gi] == 0 && self.demand[gi] {
                        self.flush_epochs(g);
                        if self.shared[target] == 0 {
                            self.stats[gi].competitions += 1;
                            if g == e {
                                self.stats[gi].wins += 1;
                            }
                        }
                    }
                    self.local[gi] += 1;
                }
            }
        }
    }

    fn end(&mut self, e: u32) {
        let ce = self.class[e as usize].index();
        self.active[ce].remove(e, &self.pos[e as usize]);
        for target in 0..2 {
            if self.global[ce][target] {
                self.shared[target] -= 1;
            } else {
                let mut hit = Vec::new();
                self.for_each_sensed(e, target, |g| hit.push(g));
                for g in hit {
                    let gi = g as usize;
                    self.local[gi] -= 1;
                    if self.local[gi] == 0 {
                        self.mark[gi] = self.epoch[target];
                    }
                }
            }
        }
    }

    fn gain_demand(&mut self, g: u32) {
        let gi = g as usize;
        self.demand[gi] = true;
        self.ready[self.class[gi].index()].insert(g);
        if self.local[gi] == 0 {
            self.mark[gi] = self.epoch[self.class[gi].index()];
        }
    }

    fn lose_demand(&mut self, g: u32) {
        self.demand[g as usize] = false;
        self.ready[self.class[g as usize].index()].remove(g);
    }

    fn reset_counts(&mut self) {
        for (g, s) in self.stats.iter_mut().enumerate() {
            *s = EntityStats::default();
            self.mark[g] = self.epoch[self.class[g].index()];
        }
    }
}

/// Every LOW entity, and HIGH entities at an even stride when capped.
fn tracked_entities(class: &[TxClass], cap: Option<usize>) -> Vec<bool> {
    let high = class.iter().filter(|&&c| c == TxClass::High).count();
    let stride = match cap {
        Some(k) if k < high => high.div_ceil(k.max(1)),
        _ => 1,
    };
    let mut seen = 0;
    class
        .iter()
        .map(|&c| {
            if c == TxClass::Low {
                return true;
            }
            seen += 1;
            (seen - 1) % stride == 0
        })
        .collect()
}

/// Runs the CSMA protocol over `set` until `cfg.horizon`.
pub fn run<T: Traffic>(
    cfg: &CsmaConfig,
    set: &EntitySet,
    params: &PhyParams,
    field: &NodeField,
    traffic: &mut T,
) -> Result<SimResult> {
    cfg.validate()?;
    let side = field.side;
    let n = set.len();
    let class: Vec<TxClass> = set.entities.iter().map(|e| e.class).collect();
    let pos: Vec<Point> = set.entities.iter().map(|e| e.pos).collect();
    let diag = side * std::f64::consts::SQRT_2;
    let mut radius = [[0.0; 2]; 2];
    let mut global = [[false; 2]; 2];
    for a in TxClass::ALL {
        for b in TxClass::ALL {
            let r = params.sensing_radius(a, b);
            radius[a.index()][b.index()] = r;
            global[a.index()][b.index()] = r > diag;
        }
    }
    let tracked = tracked_entities(&class, cfg.tracked_high);
    let by_class = TxClass::ALL.map(|c| {
        let members: Vec<u32> = (0..n as u32).filter(|&e| class[e as usize] == c && tracked[e as usize]).collect();
        let pts: Vec<Point> = members.iter().map(|&e| pos[e as usize]).collect();
        ClassIndex { index: SpatialIndex::new(&pts, side, radius[c.index()][0]), members }
    });
    let active = TxClass::ALL.map(|c| ActiveGrid::new(side, radius[c.index()][0]));
    let mut eng = Engine {
        cfg,
        class,
        pos,
        radius,
        global,
        by_class,
        tracked,
        active,
        local: vec![0; n],
        shared: [0; 2],
        epoch: [0; 2],
        mark: vec![0; n],
        demand: vec![false; n],
        ready: [Bag::new(n), Bag::new(n)],
        stats: vec![EntityStats::default(); n],
    };
    for e in 0..n as u32 {
        if traffic.backlogged(e) {
            eng.gain_demand(e);
        }
    }

    let mut rng = seed::rng(cfg.seed, &[seed::stream::CSMA]);
    let mut ends: BinaryHeap<TxEnd> = BinaryHeap::new();
    let mut tracker = cfg.audit.then(|| InterferenceTracker::new(params));
    let mut handles = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut measuring = cfg.warmup == 0.0;
    let mut airtime = vec![0.0f64; n];
    let (mut firings, mut transmissions) = (0u64, 0u64);
    let rates = [cfg.rate(TxClass::Low), cfg.rate(TxClass::High)];
    let mut now = 0.0f64;

    loop {
        let total = rates[0] * eng.ready[0].len() as f64 + rates[1] * eng.ready[1].len() as f64;
        let t_fire = if total > 0.0 { now + rng.sample::<f64, _>(Exp1) / total } else { f64::INFINITY };
        let t_end = ends.peek().map_or(f64::INFINITY, |e| e.time);
        let t = t_fire.min(t_end);
        if !measuring && t >= cfg.warmup {
            eng.reset_counts();
            measuring = true;
        }
        if t > cfg.horizon {
            break;
        }
        now = t;
        if t_end <= t_fire {
            let TxEnd { entity: e, .. } = ends.pop().unwrap();
            eng.end(e);
            if let Some(tr) = tracker.as_mut() {
                tr.end(handles[e as usize]);
            }
            if cfg.record_trace {
                let ent = set.get(e);
                trace.push(TraceEvent {
                    time: now,
                    node: ent.node,
                    class: ent.class,
                    receiver: None,
                    kind: TraceKind::TxEnd,
                });
            }
            if let Some(g) = traffic.deliver(e, now, measuring) {
                eng.gain_demand(g);
            }
            continue;
        }

        firings += 1;
        let c = if rng.random::<f64>() * total < rates[0] * eng.ready[0].len() as f64 { 0 } else { 1 };
        let bag = &eng.ready[c];
        let e = bag.items[rng.random_range(0..bag.len())];
        if !eng.idle(e) {
            continue;
        }
        debug_assert!(eng.demand[e as usize]);
        let (rx, more) = traffic.take(e);
        eng.start(e);
        if !more {
            eng.lose_demand(e);
        }
        let ent = set.get(e);
        let end = now + eng.cfg.packet_duration;
        ends.push(TxEnd { time: end, entity: e });
        if let Some(tr) = tracker.as_mut() {
            handles[e as usize] = tr.start(ent.pos, params.power(ent.class), field.position(rx));
        }
        if cfg.record_trace {
            trace.push(TraceEvent {
                time: now,
                node: ent.node,
                class: ent.class,
                receiver: None,
                kind: TraceKind::TimerExpire,
            });
            trace.push(TraceEvent {
                time: now,
                node: ent.node,
                class: ent.class,
                receiver: Some(rx),
                kind: TraceKind::TxStart,
            });
        }
        if measuring {
            transmissions += 1;
            eng.stats[e as usize].transmissions += 1;
        }
        airtime[e as usize] += (end.min(cfg.horizon) - now.max(cfg.warmup)).max(0.0);
    }

    // Competitions already ended by shared-counter starts but not yet booked.
    for g in 0..n as u32 {
        if eng.tracked[g as usize] && eng.local[g as usize] == 0 && eng.demand[g as usize] {
            eng.flush_epochs(g);
        }
    }
    let window = cfg.horizon - cfg.warmup;
    for (s, a) in eng.stats.iter_mut().zip(&airtime) {
        s.busy_fraction = a / window;
    }
    Ok(SimResult {
        stats: eng.stats,
        tracked: eng.tracked,
        trace,
        audit: tracker.map(InterferenceTracker::finish),
        firings,
        transmissions,
        window,
    })
}
