use std::collections::VecDeque;

use super::EntitySet;
use crate::routing::Route;
use crate::spatial::NodeId;

/// Packet supply seen by the engine.
pub trait Traffic {
    /// Whether the entity holds a packet at time zero.
    fn backlogged(&self, e: u32) -> bool;
    /// Removes the next packet of `e`. Returns its receiver and whether `e` still holds packets.
    fn take(&mut self, e: u32) -> (NodeId, bool);
    /// The packet `e` was sending has arrived. Returns the entity, if any, that
    /// just received its first queued packet.
    fn deliver(&mut self, e: u32, now: f64, measuring: bool) -> Option<u32>;
}

/// Every entity always has a packet; receivers are served in turn.
#[derive(Debug, Clone)]
pub struct SaturatedTraffic {
    receivers: Vec<Vec<NodeId>>,
    turn: Vec<u32>,
}

impl SaturatedTraffic {
    pub fn new(set: &EntitySet) -> Self {
        Self { receivers: set.entities.iter().map(|e| e.receivers.clone()).collect(), turn: vec![0; set.len()] }
    }
}

impl Traffic for SaturatedTraffic {
    fn backlogged(&self, _e: u32) -> bool {
        true
    }

    fn take(&mut self, e: u32) -> (NodeId, bool) {
        let rx = &self.receivers[e as usize];
        let t = &mut self.turn[e as usize];
        let r = rx[*t as usize % rx.len()];
        *t = (*t + 1) % rx.len() as u32;
        (r, true)
    }

    fn deliver(&mut self, _e: u32, _now: f64, _measuring: bool) -> Option<u32> {
        None
    }
}

#[derive(Debug, Clone)]
struct Slot {
    route: u32,
    entity: u32,
    receiver: NodeId,
    next: Option<u32>,
    queued: u64,
    source: bool,
}

/// Saturated sources forwarding along fixed routes; each entity serves its
/// non-empty (route, hop) queues round-robin, one packet per transmission.
#[derive(Debug, Clone)]
pub struct FlowTraffic {
    slots: Vec<Slot>,
    queues: Vec<VecDeque<u32>>,
    in_flight: Vec<Option<u32>>,
    /// Packets delivered to the destination during the measurement window, per route.
    pub delivered: Vec<u64>,
    /// Packets delivered over the whole run, per route.
    pub arrived: Vec<u64>,
    /// Packets that left the source, per route.
    pub injected: Vec<u64>,
}

impl FlowTraffic {
    pub fn new(set: &EntitySet, routes: &[Route]) -> Self {
        let mut slots = Vec::new();
        let mut queues = vec![VecDeque::new(); set.len()];
        for (ri, r) in routes.iter().enumerate() {
            let base = slots.len() as u32;
            for (hi, h) in r.hops.iter().enumerate() {
                let entity = set.id(h.from, h.class).expect("entity set covers every hop");
                let last = hi + 1 == r.hops.len();
                slots.push(Slot {
                    route: ri as u32,
                    entity,
                    receiver: h.to,
                    next: (!last).then_some(base + hi as u32 + 1),
                    queued: 0,
                    source: hi == 0,
                });
            }
            queues[slots[base as usize].entity as usize].push_back(base);
        }
        Self {
            slots,
            queues,
            in_flight: vec![None; set.len()],
            delivered: vec![0; routes.len()],
            arrived: vec![0; routes.len()],
            injected: vec![0; routes.len()],
        }
    }

    /// Packets waiting at relays of a route (excluding the in-flight one).
    pub fn queued(&self, route: u32) -> u64 {
        self.slots.iter().filter(|s| s.route == route && !s.source).map(|s| s.queued).sum()
    }

    /// Routes on which some injected packet is neither delivered, queued nor on the air.
    pub fn unbalanced_routes(&self) -> Vec<u32> {
        let mut inside = self.arrived.clone();
        for s in self.slots.iter().filter(|s| !s.source) {
            inside[s.route as usize] += s.queued;
        }
        for &s in self.in_flight.iter().flatten() {
            inside[self.slots[s as usize].route as usize] += 1;
        }
        (0..self.injected.len() as u32).filter(|&r| inside[r as usize] != self.injected[r as usize]).collect()
    }

    pub fn in_flight(&self, route: u32) -> u64 {
        self.in_flight.iter().flatten().filter(|&&s| self.slots[s as usize].route == route).count() as u64
    }
}

impl Traffic for FlowTraffic {
    fn backlogged(&self, e: u32) -> bool {
        !self.queues[e as usize].is_empty()
    }

    fn take(&mut self, e: u32) -> (NodeId, bool) {
        let q = &mut self.queues[e as usize];
        let s = q.pop_front().expect("take called on an idle entity");
        let slot = &mut self.slots[s as usize];
        if slot.source {
            self.injected[slot.route as usize] += 1;
        } else {
            slot.queued -= 1;
        }
        if slot.source || slot.queued > 0 {
            q.push_back(s);
        }
        self.in_flight[e as usize] = Some(s);
        (slot.receiver, !q.is_empty())
    }

    fn deliver(&mut self, e: u32, _now: f64, measuring: bool) -> Option<u32> {
        let s = self.in_flight[e as usize].take().expect("delivery without a packet in flight");
        let slot = &self.slots[s as usize];
        match slot.next {
            None => {
                self.arrived[slot.route as usize] += 1;
                if measuring {
                    self.delivered[slot.route as usize] += 1;
                }
                None
            }
            Some(n) => {
                let next = &mut self.slots[n as usize];
                next.queued += 1;
                if next.queued > 1 {
                    return None;
                }
                let q = &mut self.queues[next.entity as usize];
                q.push_back(n);
                (q.len() == 1).then_some(next.entity)
            }
        }
    }
}
