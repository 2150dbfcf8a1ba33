//! Small random matching instances for cross-checking the dynamic program
//! against exhaustive enumeration.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::AgentId;
use crate::network::{Link, LinkId, Network, NodeId, Toll};

use super::types::{DriverOffer, DriverPlan, MatchParams, RiderRequest, TimeTable, TimeWindow};

#[derive(Debug, Clone)]
pub struct Instance {
    pub network: Network,
    pub rider: RiderRequest,
    pub offers: Vec<DriverOffer>,
    pub params: MatchParams,
    pub times: TimeTable,
}

/// Bounds on generated instances.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_nodes: u32,
    /// The rider's window never spans more than this many steps.
    pub max_steps: u32,
    pub max_drivers: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_nodes: 4,
            max_steps: 12,
            max_drivers: 3,
        }
    }
}

/// Deterministic instance for `seed`.
pub fn instance(seed: u64, limits: Limits) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.05;
    let node_count = rng.gen_range(2..=limits.max_nodes.max(2));
    let nodes: Vec<NodeId> = (0..node_count).map(NodeId).collect();

    let mut links = Vec::new();
    let mut times = TimeTable::default();
    for a in 0..node_count {
        for b in 0..node_count {
            if a != b && rng.gen_bool(0.6) {
                let id = LinkId(links.len() as u32);
                let free_flow_time = dt * rng.gen_range(0.6..3.2);
                links.push(Link {
                    id,
                    from: NodeId(a),
                    to: NodeId(b),
                    length: free_flow_time * 60.0,
                    free_flow_time,
                    has_carpool_lane: rng.gen_bool(0.3),
                    general_lanes: 2,
                    lane_capacity: 1800.0,
                    toll: Toll::default(),
                    observed_daily_flow: 0.0,
                });
                let solo = free_flow_time * rng.gen_range(1.0..1.4);
                times.solo.insert(id, solo);
                times.pooled.insert(id, solo * rng.gen_range(0.7..=1.0));
            }
        }
    }
    let network = Network::new("random", nodes.clone(), links).expect("generated network is valid");

    let origin = *nodes.choose(&mut rng).unwrap();
    let destination = loop {
        let d = *nodes.choose(&mut rng).unwrap();
        if d != origin {
            break d;
        }
    };
    let span = dt * (rng.gen_range(2..limits.max_steps.max(3)) as f64 - 0.5);
    let rider = RiderRequest {
        id: AgentId(1000),
        origin,
        destination,
        window: TimeWindow::new(0.0, span * 0.5, span * 0.5, span).unwrap(),
        request_time: 0.0,
    };

    let driver_count = rng.gen_range(0..=limits.max_drivers);
    let mut offers = Vec::new();
    for k in 0..driver_count {
        if let Some(offer) = random_driver(&mut rng, &network, &times, AgentId(k + 1), dt) {
            offers.push(offer);
        }
    }

    let penalty = match rng.gen_range(0..4) {
        0 => 0.0,
        1 => dt,
        2 => dt * rng.gen_range(0.1..0.9),
        _ => dt * rng.gen_range(1.0..3.0),
    };
    Instance {
        network,
        rider,
        offers,
        params: MatchParams {
            dt,
            penalty,
            time_weight: 1.0,
        },
        times,
    }
}

fn random_driver(
    rng: &mut ChaCha8Rng,
    network: &Network,
    times: &TimeTable,
    id: AgentId,
    dt: f64,
) -> Option<DriverOffer> {
    let nodes: Vec<NodeId> = network.nodes().collect();
    let origin = *nodes.choose(rng)?;
    let mut route = Vec::new();
    let mut visited = vec![origin];
    let mut at = origin;
    let hops = rng.gen_range(1..=3);
    for _ in 0..hops {
        let options: Vec<LinkId> = network
            .outgoing(at)
            .iter()
            .copied()
            .filter(|l| !visited.contains(&network.link(*l).to))
            .collect();
        let Some(&next) = options.choose(rng) else { break };
        route.push(next);
        at = network.link(next).to;
        visited.push(at);
    }
    if route.is_empty() {
        return None;
    }
    let solo: Vec<f64> = route.iter().map(|l| times.solo[l]).collect();
    let total: f64 = solo.iter().sum();
    let depart = dt * rng.gen_range(-1.0..4.0);
    let flex = dt * rng.gen_range(0.0..5.0);
    let window = TimeWindow::for_trip(depart, total, flex);
    let seats = rng.gen_range(1..=2);
    let mut offer = DriverOffer::new_flexible(id, origin, at, window, seats, route, depart);
    for c in offer.remaining_capacity.iter_mut() {
        if rng.gen_bool(0.15) {
            *c = 0;
        }
    }
    if rng.gen_bool(0.5) {
        let mut entry = Vec::new();
        let mut exit = Vec::new();
        let mut t = depart + dt * rng.gen_range(0.0..2.0);
        for s in &solo {
            if rng.gen_bool(0.3) {
                t += dt * rng.gen_range(0.0..1.5);
            }
            entry.push(t);
            t += s;
            exit.push(t);
        }
        // a fixed plan may run late; widen the arrival bound so it stays consistent
        offer.window.latest_arrival = offer.window.latest_arrival.max(t);
        offer.plan = DriverPlan::Scheduled {
            entry,
            exit,
            next: 0,
        };
    }
    Some(offer)
}
