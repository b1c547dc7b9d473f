use std::collections::HashMap;

use super::engine::{TraceEvent, TraceKind};
use crate::phy::PhyParams;
use crate::spatial::{NodeField, Point};

/// Outcome of checking every transmission against the SINR threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditReport {
    pub links: u64,
    /// Links whose received signal is at least `P̄` but whose worst SINR fell below `β`.
    pub violations: u64,
    /// Largest interference seen at any receiver.
    pub max_interference: f64,
    /// Smallest SINR among links with signal at least `P̄`.
    pub min_sinr: f64,
}

impl Default for AuditReport {
    fn default() -> Self {
        Self { links: 0, violations: 0, max_interference: 0.0, min_sinr: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy)]
struct Link {
    tx: Point,
    rx: Point,
    power: f64,
    signal: f64,
    interference: f64,
    worst: f64,
}

/// Running interference at the receiver of every active link.
///
/// Interference only grows while a link is active when a new transmitter
/// starts, so the worst SINR of a link is reached at one of those instants.
#[derive(Debug, Clone)]
pub struct InterferenceTracker {
    alpha: f64,
    beta: f64,
    n0: f64,
    pbar: f64,
    slots: Vec<Option<Link>>,
    free: Vec<usize>,
    active: Vec<usize>,
    report: AuditReport,
}

impl InterferenceTracker {
    pub fn new(params: &PhyParams) -> Self {
        Self {
            alpha: params.alpha,
            beta: params.beta,
            n0: params.n0,
            pbar: params.pbar,
            slots: Vec::new(),
            free: Vec::new(),
            active: Vec::new(),
            report: AuditReport::default(),
        }
    }

    fn gain(&self, power: f64, a: &Point, b: &Point) -> f64 {
        power * a.dist2(b).powf(-0.5 * self.alpha)
    }

    /// Registers a transmission and returns its handle.
    pub fn start(&mut self, tx: Point, power: f64, rx: Point) -> usize {
        let mut interference = 0.0;
        for &h in &self.active {
            let other = self.slots[h].as_ref().expect("active slot");
            interference += self.gain(other.power, &other.tx, &rx);
        }
        for i in 0..self.active.len() {
            let h = self.active[i];
            let add = {
                let other = self.slots[h].as_ref().expect("active slot");
                self.gain(power, &tx, &other.rx)
            };
            let other = self.slots[h].as_mut().expect("active slot");
            other.interference += add;
            other.worst = other.worst.max(other.interference);
        }
        let link = Link { tx, rx, power, signal: self.gain(power, &tx, &rx), interference, worst: interference };
        let h = match self.free.pop() {
            Some(h) => {
                self.slots[h] = Some(link);
                h
            }
            None => {
                self.slots.push(Some(link));
                self.slots.len() - 1
            }
        };
        self.active.push(h);
        h
    }

    pub fn end(&mut self, handle: usize) {
        let link = self.slots[handle].take().expect("ending an inactive link");
        self.free.push(handle);
        let pos = self.active.iter().position(|&h| h == handle).expect("link listed as active");
        self.active.swap_remove(pos);
        for &h in &self.active {
            let other = self.slots[h].as_mut().expect("active slot");
            other.interference -= link.power * link.tx.dist2(&other.rx).powf(-0.5 * self.alpha);
        }
        self.close(&link);
    }

    fn close(&mut self, link: &Link) {
        let r = &mut self.report;
        r.links += 1;
        r.max_interference = r.max_interference.max(link.worst);
        if link.signal >= self.pbar * (1.0 - 1e-12) {
            let noise = self.n0 + link.worst;
            let s = if noise == 0.0 { f64::INFINITY } else { link.signal / noise };
            r.min_sinr = r.min_sinr.min(s);
            if s < self.beta {
                r.violations += 1;
            }
        }
    }

    /// Closes every link still active and returns the report.
    pub fn finish(mut self) -> AuditReport {
        for h in std::mem::take(&mut self.active) {
            if let Some(link) = self.slots[h].take() {
                self.close(&link);
            }
        }
        self.report
    }
}

/// Replays a recorded trace and checks every transmission's SINR.
pub fn audit_hidden_node_freedom(trace: &[TraceEvent], field: &NodeField, params: &PhyParams) -> AuditReport {
    let mut tracker = InterferenceTracker::new(params);
    let mut open = HashMap::new();
    for ev in trace {
        match ev.kind {
            TraceKind::TxStart => {
                let rx = ev.receiver.expect("tx-start carries its receiver");
                let h = tracker.start(field.position(ev.node), params.power(ev.class), field.position(rx));
                open.insert((ev.node, ev.class), h);
            }
            TraceKind::TxEnd => {
                if let Some(h) = open.remove(&(ev.node, ev.class)) {
                    tracker.end(h);
                }
            }
            TraceKind::TimerExpire => {}
        }
    }
    tracker.finish()
}
