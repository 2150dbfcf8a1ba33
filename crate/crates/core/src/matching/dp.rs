use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::agent::AgentId;

use super::preprocess::PrunedTen;
use super::stem::{TimeExpandedNetwork, VertexId};
use super::types::{Itinerary, Leg, RiddenLink, RiderRequest, STEP_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Move {
    Start,
    Travel(usize),
    Wait(usize),
}

/// Partial route to a vertex. `used` holds every driver ridden so far,
/// sorted; the exclusion set is `used` minus `current`.
#[derive(Debug, Clone)]
struct Label {
    cost: f64,
    legs: u32,
    waits: u32,
    /// Time the rider physically reached this vertex's node.
    arrival: f64,
    current: Option<AgentId>,
    used: Vec<AgentId>,
    boarded: Vec<AgentId>,
    vertex: VertexId,
    parent: Option<usize>,
    via: Move,
}

fn is_subset(a: &[AgentId], b: &[AgentId]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

/// `a` makes `b` redundant: anything reachable from `b` is reachable from
/// `a` at no greater cost, with no more legs or waits, and `a` wins ties.
fn dominates(a: &Label, b: &Label) -> bool {
    if !(a.cost <= b.cost
        && a.legs <= b.legs
        && a.waits <= b.waits
        && a.arrival <= b.arrival
        && is_subset(&a.used, &b.used))
    {
        return false;
    }
    let strictly = a.cost < b.cost
        || a.legs < b.legs
        || a.waits < b.waits
        || a.arrival < b.arrival
        || a.used.len() < b.used.len();
    strictly || a.boarded <= b.boarded
}

/// Ordering of complete itineraries: cost, then fewer legs, earlier arrival,
/// fewer waits, lexicographic driver ids.
fn final_key_cmp(ten: &TimeExpandedNetwork, a: &Label, b: &Label) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(a.legs.cmp(&b.legs))
        .then(ten.vertices[a.vertex].step.cmp(&ten.vertices[b.vertex].step))
        .then(a.waits.cmp(&b.waits))
        .then(a.boarded.cmp(&b.boarded))
}

/// Value table of the dynamic program: best cost per `(vertex, driver)` state.
#[derive(Debug, Clone, Default)]
pub struct DpState {
    pub values: BTreeMap<(VertexId, Option<AgentId>), f64>,
}

/// Minimum-cost itinerary over the pruned network, or `None` when the
/// destination cannot be reached under the no-re-boarding rule.
pub fn solve_itinerary(pruned: &PrunedTen, rider: &RiderRequest) -> Option<Itinerary> {
    solve_with_state(pruned, rider).0
}

pub fn solve_with_state(pruned: &PrunedTen, rider: &RiderRequest) -> (Option<Itinerary>, DpState) {
    let ten = &pruned.ten;
    let mut state = DpState::default();
    let origins = ten.origin_vertices();
    if origins.is_empty() || !pruned.feasible {
        return (None, state);
    }
    let adj = ten.adjacency();
    let mut arena: Vec<Label> = Vec::new();
    // per vertex: current driver -> non-dominated label ids
    let mut buckets: Vec<BTreeMap<Option<AgentId>, Vec<usize>>> = vec![BTreeMap::new(); ten.vertices.len()];

    for &o in &origins {
        arena.push(Label {
            cost: 0.0,
            legs: 0,
            waits: 0,
            arrival: rider.window.earliest_departure,
            current: None,
            used: Vec::new(),
            boarded: Vec::new(),
            vertex: o,
            parent: None,
            via: Move::Start,
        });
        buckets[o].entry(None).or_default().push(arena.len() - 1);
    }

    let mut best: Option<usize> = None;
    for &v in &pruned.order {
        let ids: Vec<usize> = buckets[v].values().flatten().copied().collect();
        for &id in &ids {
            let label = arena[id].clone();
            let slot = state.values.entry((v, label.current)).or_insert(f64::INFINITY);
            *slot = slot.min(label.cost);
        }
        if ten.vertices[v].node == ten.destination {
            for &id in &ids {
                if arena[id].legs == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => final_key_cmp(ten, &arena[id], &arena[b]) == Ordering::Less,
                };
                if better {
                    best = Some(id);
                }
            }
            continue;
        }
        let (travel, wait) = &adj[v];
        for &id in &ids {
            for &ai in travel {
                let arc = &ten.travel_arcs[ai];
                let label = &arena[id];
                let next = if label.current == Some(arc.driver) {
                    Label {
                        cost: label.cost + arc.cost,
                        arrival: arc.arrive,
                        vertex: arc.to,
                        parent: Some(id),
                        via: Move::Travel(ai),
                        ..label.clone()
                    }
                } else {
                    if label.used.binary_search(&arc.driver).is_ok() {
                        continue;
                    }
                    if arc.depart < label.arrival - STEP_EPS {
                        continue;
                    }
                    let mut used = label.used.clone();
                    let pos = used.binary_search(&arc.driver).unwrap_err();
                    used.insert(pos, arc.driver);
                    let mut boarded = label.boarded.clone();
                    boarded.push(arc.driver);
                    Label {
                        cost: label.cost + arc.cost,
                        legs: label.legs + 1,
                        waits: label.waits,
                        arrival: arc.arrive,
                        current: Some(arc.driver),
                        used,
                        boarded,
                        vertex: arc.to,
                        parent: Some(id),
                        via: Move::Travel(ai),
                    }
                };
                insert(&mut arena, &mut buckets, next);
            }
            for &wi in wait {
                let arc = &ten.wait_arcs[wi];
                let label = &arena[id];
                let next = Label {
                    cost: label.cost + arc.cost,
                    waits: label.waits + 1,
                    vertex: arc.to,
                    parent: Some(id),
                    via: Move::Wait(wi),
                    ..label.clone()
                };
                insert(&mut arena, &mut buckets, next);
            }
        }
    }

    let itinerary = best.map(|b| {
        let mut moves = Vec::new();
        let mut at = Some(b);
        while let Some(i) = at {
            moves.push(arena[i].via);
            at = arena[i].parent;
        }
        moves.reverse();
        build_itinerary(ten, &moves, arena[b].cost, arena[b].waits)
    });
    (itinerary, state)
}

fn insert(arena: &mut Vec<Label>, buckets: &mut [BTreeMap<Option<AgentId>, Vec<usize>>], label: Label) {
    let bucket = buckets[label.vertex].entry(label.current).or_default();
    if bucket.iter().any(|&i| dominates(&arena[i], &label)) {
        return;
    }
    bucket.retain(|&i| !dominates(&label, &arena[i]));
    arena.push(label);
    bucket.push(arena.len() - 1);
}

/// Turn a move sequence into legs. Consecutive travel on one driver,
/// including dwells in between, is a single leg.
pub(crate) fn build_itinerary(ten: &TimeExpandedNetwork, moves: &[Move], cost: f64, waits: u32) -> Itinerary {
    let mut legs: Vec<Leg> = Vec::new();
    let mut open = false;
    for mv in moves {
        match *mv {
            Move::Start => {}
            Move::Wait(_) => {}
            Move::Travel(ai) => {
                let arc = &ten.travel_arcs[ai];
                let from = ten.vertices[arc.from];
                let to = ten.vertices[arc.to];
                let ridden = RiddenLink {
                    link: arc.link,
                    depart: arc.depart,
                    arrive: arc.arrive,
                };
                match legs.last_mut() {
                    Some(leg) if open && leg.driver == arc.driver => {
                        leg.alight_node = to.node;
                        leg.alight_time = arc.arrive;
                        leg.alight_step = to.step;
                        leg.links.push(ridden);
                    }
                    _ => {
                        legs.push(Leg {
                            driver: arc.driver,
                            board_node: from.node,
                            board_time: arc.depart,
                            board_step: from.step,
                            alight_node: to.node,
                            alight_time: arc.arrive,
                            alight_step: to.step,
                            links: vec![ridden],
                        });
                        open = true;
                    }
                }
            }
        }
    }
    Itinerary {
        legs,
        total_cost: cost,
        wait_steps: waits,
    }
}
