//! Generalized link cost and Dijkstra routing for regular drivers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LaneClass, Link, LinkId, Network, NodeId, VolumeDelay};

/// Weights on toll price and travel time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub toll: f64,
    pub time: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            toll: 1.0,
            time: 1.0,
        }
    }
}

impl CostWeights {
    pub fn new(toll: f64, time: f64) -> Result<Self> {
        let w = CostWeights { toll, time };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.toll >= 0.0 && self.time >= 0.0) || !(self.toll.is_finite() && self.time.is_finite()) {
            return Err(Error::Validation(format!(
                "cost weights must be finite and non-negative, got ({}, {})",
                self.toll, self.time
            )));
        }
        if self.toll == 0.0 && self.time == 0.0 {
            return Err(Error::Validation("cost weights cannot both be zero".into()));
        }
        Ok(())
    }
}

/// `toll_weight * toll(t) + time_weight * s(flow)` on the general lanes.
pub fn link_cost(
    link: &Link,
    time: f64,
    flow: f64,
    weights: CostWeights,
    delay: &VolumeDelay,
) -> Result<f64> {
    let travel = delay.travel_time(link, LaneClass::General, flow)?;
    Ok(weights.toll * link.toll.at(time) + weights.time * travel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub links: Vec<LinkId>,
    pub total_cost: f64,
    pub total_time: f64,
}

impl Path {
    pub fn empty() -> Self {
        Path {
            links: Vec::new(),
            total_cost: 0.0,
            total_time: 0.0,
        }
    }

    pub fn first(&self) -> Option<LinkId> {
        self.links.first().copied()
    }
}

/// Cost and time of traversing one link under a frozen snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeWeight {
    pub cost: f64,
    pub time: f64,
}

impl EdgeWeight {
    pub fn uniform(value: f64) -> Self {
        EdgeWeight {
            cost: value,
            time: value,
        }
    }
}

struct Entry {
    cost: f64,
    node: NodeId,
    seq: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // min-heap on (cost, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Minimum-cost path from `origin` to `dest`. Among equal-cost paths the
/// lexicographically smallest link-id sequence wins. Returns `None` when the
/// destination cannot be reached.
pub fn dijkstra_route<F>(network: &Network, weight: F, origin: NodeId, dest: NodeId) -> Option<Path>
where
    F: Fn(&Link) -> EdgeWeight,
{
    if !network.contains_node(origin) || !network.contains_node(dest) {
        return None;
    }
    if origin == dest {
        return Some(Path::empty());
    }
    let mut best: BTreeMap<NodeId, (f64, f64, Vec<LinkId>)> = BTreeMap::new();
    let mut settled = std::collections::BTreeSet::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    best.insert(origin, (0.0, 0.0, Vec::new()));
    heap.push(Entry {
        cost: 0.0,
        node: origin,
        seq,
    });
    while let Some(Entry { cost, node, .. }) = heap.pop() {
        if !settled.insert(node) {
            continue;
        }
        if node == dest {
            break;
        }
        let (_, time, path) = best[&node].clone();
        debug_assert_eq!(best[&node].0, cost);
        for &lid in network.outgoing(node) {
            let link = network.link(lid);
            if settled.contains(&link.to) || path_visits(network, &path, origin, link.to) {
                continue;
            }
            let w = weight(link);
            if !w.cost.is_finite() {
                continue;
            }
            let next_cost = cost + w.cost;
            let mut next_path = path.clone();
            next_path.push(lid);
            let improve = match best.get(&link.to) {
                None => true,
                Some((c, _, p)) => next_cost < *c || (next_cost == *c && next_path < *p),
            };
            if improve {
                best.insert(link.to, (next_cost, time + w.time, next_path));
                seq += 1;
                heap.push(Entry {
                    cost: next_cost,
                    node: link.to,
                    seq,
                });
            }
        }
    }
    best.remove(&dest).map(|(total_cost, total_time, links)| Path {
        links,
        total_cost,
        total_time,
    })
}

fn path_visits(network: &Network, path: &[LinkId], origin: NodeId, node: NodeId) -> bool {
    origin == node || path.iter().any(|l| network.link(*l).to == node)
}

/// Free-flow shortest travel time between two nodes, if reachable.
pub fn free_flow_time(network: &Network, origin: NodeId, dest: NodeId) -> Option<f64> {
    dijkstra_route(network, |l| EdgeWeight::uniform(l.free_flow_time), origin, dest)
        .map(|p| p.total_time)
}

/// Cheapest loop-free path found by trying every one. Exponential; meant as a
/// reference for checking [`dijkstra_route`] on small networks.
pub fn enumerate_route<F>(network: &Network, weight: F, origin: NodeId, dest: NodeId) -> Option<Path>
where
    F: Fn(&Link) -> EdgeWeight,
{
    #[allow(clippy::too_many_arguments)]
    fn go<F: Fn(&Link) -> EdgeWeight>(
        network: &Network,
        weight: &F,
        at: NodeId,
        dest: NodeId,
        visited: &mut Vec<NodeId>,
        links: &mut Vec<LinkId>,
        cost: f64,
        time: f64,
        best: &mut Option<Path>,
    ) {
        if at == dest {
            let better = match best {
                None => true,
                Some(b) => cost < b.total_cost || (cost == b.total_cost && *links < b.links),
            };
            if better {
                *best = Some(Path {
                    links: links.clone(),
                    total_cost: cost,
                    total_time: time,
                });
            }
            return;
        }
        for &lid in network.outgoing(at) {
            let link = network.link(lid);
            if visited.contains(&link.to) {
                continue;
            }
            let w = weight(link);
            if !w.cost.is_finite() {
                continue;
            }
            visited.push(link.to);
            links.push(lid);
            go(network, weight, link.to, dest, visited, links, cost + w.cost, time + w.time, best);
            links.pop();
            visited.pop();
        }
    }

    if !network.contains_node(origin) || !network.contains_node(dest) {
        return None;
    }
    let mut best = None;
    go(network, &weight, origin, dest, &mut vec![origin], &mut Vec::new(), 0.0, 0.0, &mut best);
    best
}

/// A random directed network with random positive link costs, for routing
/// checks.
#[derive(Debug, Clone)]
pub struct RandomRouting {
    pub network: Network,
    pub costs: BTreeMap<LinkId, f64>,
    pub origin: NodeId,
    pub dest: NodeId,
}

impl RandomRouting {
    pub fn generate(seed: u64, max_nodes: u32) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=max_nodes.max(2));
        let density = rng.gen_range(0.2..0.7);
        let mut links = Vec::new();
        let mut costs = BTreeMap::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.gen_bool(density) {
                    let id = LinkId(links.len() as u32);
                    let free_flow_time = rng.gen_range(0.05..1.0);
                    links.push(Link {
                        id,
                        from: NodeId(a),
                        to: NodeId(b),
                        length: free_flow_time * 50.0,
                        free_flow_time,
                        has_carpool_lane: false,
                        general_lanes: 2,
                        lane_capacity: 2000.0,
                        toll: crate::network::Toll::default(),
                        observed_daily_flow: 0.0,
                    });
                    // coarse costs make equal-cost ties common
                    let cost = if rng.gen_bool(0.3) {
                        f64::from(rng.gen_range(1..4u8))
                    } else {
                        rng.gen_range(0.01..10.0)
                    };
                    costs.insert(id, cost);
                }
            }
        }
        let network = Network::new("random", (0..n).map(NodeId).collect(), links)
            .expect("generated network is valid");
        let origin = NodeId(rng.gen_range(0..n));
        let dest = NodeId(rng.gen_range(0..n));
        RandomRouting {
            network,
            costs,
            origin,
            dest,
        }
    }

    pub fn weight(&self, link: &Link) -> EdgeWeight {
        EdgeWeight {
            cost: self.costs[&link.id],
            time: link.free_flow_time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Toll, LinkId};

    fn ff(l: &Link) -> EdgeWeight {
        EdgeWeight::uniform(l.free_flow_time)
    }

    #[test]
    fn link_cost_examples() {
        let net = Network::la_testbed();
        let bpr = VolumeDelay::default();
        let l1 = net.link(LinkId(1));
        assert_eq!(link_cost(l1, 0.0, 0.0, CostWeights::default(), &bpr).unwrap(), 0.22);

        let mut tolled = net.link(LinkId(2)).clone();
        tolled.toll = Toll::Flat(2.0);
        assert_eq!(link_cost(&tolled, 0.0, 0.0, CostWeights::default(), &bpr).unwrap(), 2.5);

        tolled.toll = Toll::Flat(3.0);
        let w = CostWeights { toll: 2.0, time: 0.0 };
        for flow in [0.0, 5000.0, 1e6] {
            assert_eq!(link_cost(&tolled, 1.0, flow, w, &bpr).unwrap(), 6.0);
        }
        assert!(link_cost(l1, 0.0, -3.0, CostWeights::default(), &bpr).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::new(0.0, 0.0).is_err());
        assert!(CostWeights::new(-1.0, 1.0).is_err());
        assert!(CostWeights::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn testbed_routes() {
        let net = Network::la_testbed();
        let p = dijkstra_route(&net, ff, NodeId(0), NodeId(2)).unwrap();
        assert_eq!(p.links, vec![LinkId(1), LinkId(2)]);
        assert!((p.total_time - 0.72).abs() < 1e-12);

        let p = dijkstra_route(&net, ff, NodeId(0), NodeId(3)).unwrap();
        assert_eq!(p.links, vec![LinkId(0)]);
        assert!((p.total_time - 0.55).abs() < 1e-12);

        let p = dijkstra_route(&net, ff, NodeId(1), NodeId(1)).unwrap();
        assert!(p.links.is_empty());
        assert_eq!(p.total_cost, 0.0);

        assert!(dijkstra_route(&net, ff, NodeId(2), NodeId(0)).is_none());
    }

    #[test]
    fn congested_direct_link_diverts_to_detour() {
        let net = Network::la_testbed();
        let bpr = VolumeDelay::default();
        let w = CostWeights::default();
        // 0.55 * (1 + 0.15 * r^4) > 0.86 needs r^4 > 3.76, so r = 1.5 suffices
        let flows: BTreeMap<LinkId, f64> = [(LinkId(0), 1.5 * 8000.0)].into();
        let cost = |l: &Link| {
            let f = flows.get(&l.id).copied().unwrap_or(0.0);
            EdgeWeight::uniform(link_cost(l, 0.0, f, w, &bpr).unwrap())
        };
        let p = dijkstra_route(&net, cost, NodeId(0), NodeId(3)).unwrap();
        assert_eq!(p.links, vec![LinkId(1), LinkId(3)]);
    }

    #[test]
    fn ties_prefer_smallest_link_ids() {
        let mk = |id, from, to| Link {
            id: LinkId(id),
            from: NodeId(from),
            to: NodeId(to),
            length: 10.0,
            free_flow_time: 0.2,
            has_carpool_lane: false,
            general_lanes: 1,
            lane_capacity: 1000.0,
            toll: Toll::default(),
            observed_daily_flow: 0.0,
        };
        let net = Network::new(
            "diamond",
            vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)],
            vec![mk(5, 0, 1), mk(1, 0, 2), mk(2, 1, 3), mk(3, 2, 3)],
        )
        .unwrap();
        let p = dijkstra_route(&net, ff, NodeId(0), NodeId(3)).unwrap();
        assert_eq!(p.links, vec![LinkId(1), LinkId(3)]);
    }

    #[test]
    fn dijkstra_agrees_with_enumeration() {
        for seed in 0..300 {
            let r = RandomRouting::generate(seed, 8);
            let a = dijkstra_route(&r.network, |l| r.weight(l), r.origin, r.dest);
            let b = enumerate_route(&r.network, |l| r.weight(l), r.origin, r.dest);
            match (a, b) {
                (Some(a), Some(b)) => {
                    assert_eq!(a.total_cost, b.total_cost, "seed {seed}");
                    assert_eq!(a.links, b.links, "seed {seed}");
                }
                (None, None) => {}
                (a, b) => panic!("seed {seed}: reachability differs {a:?} vs {b:?}"),
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn raising_a_flow_never_cheapens_the_route(seed in 0u64..500, link in 0u32..20, extra in 0.0f64..20000.0) {
            let r = RandomRouting::generate(seed, 6);
            let bpr = VolumeDelay::default();
            let w = CostWeights::default();
            let cost_at = |bump: f64| {
                move |l: &Link| {
                    let f = if l.id == LinkId(link) { bump } else { 0.0 };
                    EdgeWeight::uniform(link_cost(l, 0.0, f, w, &bpr).unwrap())
                }
            };
            let base = dijkstra_route(&r.network, cost_at(0.0), r.origin, r.dest);
            let raised = dijkstra_route(&r.network, cost_at(extra), r.origin, r.dest);
            if let (Some(a), Some(b)) = (base, raised) {
                proptest::prop_assert!(b.total_cost >= a.total_cost);
            }
        }

        #[test]
        fn scaling_weights_keeps_the_route(seed in 0u64..500, k in 0.1f64..50.0) {
            let r = RandomRouting::generate(seed, 6);
            let base = dijkstra_route(&r.network, |l| r.weight(l), r.origin, r.dest);
            let scaled = dijkstra_route(&r.network, |l| {
                let e = r.weight(l);
                EdgeWeight { cost: e.cost * k, time: e.time }
            }, r.origin, r.dest);
            if let (Some(a), Some(b)) = (base, scaled) {
                // same sequence, or an equally cheap one that only rounding separated
                let unscaled: f64 = b.links.iter().map(|l| r.costs[l]).sum();
                proptest::prop_assert!(a.links == b.links || (unscaled - a.total_cost).abs() <= 1e-9 * (1.0 + a.total_cost));
            }
        }
    }
}
