use std::collections::{BTreeMap, BTreeSet};

use crate::agent::AgentId;
use crate::error::Result;
use crate::network::{LinkId, Network, NodeId};

use super::types::{steps_up, DriverOffer, DriverPlan, MatchParams, RiderRequest, TravelTimes, STEP_EPS};

pub type VertexId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vertex {
    pub node: NodeId,
    pub step: u32,
}

/// Movement between physical nodes aboard `driver`.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelArc {
    pub from: VertexId,
    pub to: VertexId,
    pub driver: AgentId,
    pub link: LinkId,
    /// Actual time the driver leaves the upstream node.
    pub depart: f64,
    /// Actual time the driver reaches the downstream node.
    pub arrive: f64,
    pub cost: f64,
}

/// Staying at a node for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct WaitArc {
    pub from: VertexId,
    pub to: VertexId,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeExpandedNetwork {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Time of step 0 (the rider's earliest departure).
    pub start_time: f64,
    pub dt: f64,
    /// Last step at which the rider may reach the destination.
    pub last_step: i64,
    pub vertices: Vec<Vertex>,
    pub travel_arcs: Vec<TravelArc>,
    pub wait_arcs: Vec<WaitArc>,
    /// Inclusive step interval during which each node may be visited.
    pub node_intervals: BTreeMap<NodeId, (u32, u32)>,
    /// Links at least one driver can traverse inside its own window.
    pub usable_links: BTreeSet<LinkId>,
    index: BTreeMap<Vertex, VertexId>,
}

impl TimeExpandedNetwork {
    pub(crate) fn assemble(
        template: &TimeExpandedNetwork,
        vertices: Vec<Vertex>,
        travel_arcs: Vec<TravelArc>,
        wait_arcs: Vec<WaitArc>,
    ) -> Self {
        let index = vertices.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        TimeExpandedNetwork {
            origin: template.origin,
            destination: template.destination,
            start_time: template.start_time,
            dt: template.dt,
            last_step: template.last_step,
            vertices,
            travel_arcs,
            wait_arcs,
            node_intervals: template.node_intervals.clone(),
            usable_links: template.usable_links.clone(),
            index,
        }
    }

    pub fn vertex_id(&self, node: NodeId, step: u32) -> Option<VertexId> {
        self.index.get(&Vertex { node, step }).copied()
    }

    pub fn time_of(&self, step: u32) -> f64 {
        self.start_time + f64::from(step) * self.dt
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// The rider is at the origin at step 0.
    pub fn origin_vertices(&self) -> Vec<VertexId> {
        self.vertex_id(self.origin, 0).into_iter().collect()
    }

    pub fn destination_vertices(&self) -> Vec<VertexId> {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.node == self.destination)
            .map(|(i, _)| i)
            .collect()
    }

    /// Outgoing travel and wait arc indices per vertex.
    pub fn adjacency(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut adj = vec![(Vec::new(), Vec::new()); self.vertices.len()];
        for (i, a) in self.travel_arcs.iter().enumerate() {
            adj[a.from].0.push(i);
        }
        for (i, a) in self.wait_arcs.iter().enumerate() {
            adj[a.from].1.push(i);
        }
        adj
    }

    pub fn drivers(&self) -> BTreeSet<AgentId> {
        self.travel_arcs.iter().map(|a| a.driver).collect()
    }
}

struct Candidate {
    driver: AgentId,
    link: LinkId,
    from: NodeId,
    to: NodeId,
    from_step: i64,
    to_step: i64,
    depart: f64,
    arrive: f64,
}

/// Build the rider's time-expanded network.
///
/// Driver arcs come from each offer's own feasible timing: flexible drivers
/// contribute an arc for every step at which they can be at a route node and
/// still finish on time; scheduled drivers contribute their planned
/// traversals. Node intervals come from forward and backward shortest-time
/// sweeps bounded by the rider's window.
pub fn build_stem(
    rider: &RiderRequest,
    offers: &[DriverOffer],
    network: &Network,
    tt: &dyn TravelTimes,
    params: &MatchParams,
) -> Result<TimeExpandedNetwork> {
    params.validate()?;
    rider.validate()?;
    let dt = params.dt;
    let start = rider.window.earliest_departure;
    let last_step = steps_up(rider.window.latest_arrival - start, dt);

    let mut candidates = Vec::new();
    for offer in offers {
        offer.validate(network)?;
        driver_candidates(offer, network, tt, start, dt, last_step, &mut candidates);
    }
    let usable_links: BTreeSet<LinkId> = candidates.iter().map(|c| c.link).collect();

    let mut duration: BTreeMap<LinkId, i64> = network
        .links()
        .iter()
        .map(|l| (l.id, steps_up(tt.pooled(l), dt).max(1)))
        .collect();
    for c in &candidates {
        let d = duration.get_mut(&c.link).expect("candidate on known link");
        *d = (*d).min(c.to_step - c.from_step);
    }

    let node_intervals = sweep_intervals(network, rider, &duration, last_step);

    let mut index = BTreeMap::new();
    for (node, (lo, hi)) in &node_intervals {
        for step in *lo..=*hi {
            index.insert(Vertex { node: *node, step }, 0);
        }
    }
    let vertices: Vec<Vertex> = index.keys().copied().collect();
    for (i, v) in vertices.iter().enumerate() {
        index.insert(*v, i);
    }
    let lookup = |node: NodeId, step: i64| -> Option<VertexId> {
        if step < 0 {
            return None;
        }
        index.get(&Vertex { node, step: step as u32 }).copied()
    };

    let mut travel_arcs: Vec<TravelArc> = candidates
        .iter()
        .filter_map(|c| {
            let from = lookup(c.from, c.from_step)?;
            let to = lookup(c.to, c.to_step)?;
            Some(TravelArc {
                from,
                to,
                driver: c.driver,
                link: c.link,
                depart: c.depart,
                arrive: c.arrive,
                cost: params.time_weight * (c.to_step - c.from_step) as f64 * dt,
            })
        })
        .collect();
    travel_arcs.sort_by_key(|a| (a.from, a.to, a.driver, a.link));

    let mut wait_arcs = Vec::new();
    for (node, (lo, hi)) in &node_intervals {
        for step in *lo..*hi {
            wait_arcs.push(WaitArc {
                from: index[&Vertex { node: *node, step }],
                to: index[&Vertex { node: *node, step: step + 1 }],
                cost: params.penalty,
            });
        }
    }

    Ok(TimeExpandedNetwork {
        origin: rider.origin,
        destination: rider.destination,
        start_time: start,
        dt,
        last_step,
        vertices,
        travel_arcs,
        wait_arcs,
        node_intervals,
        usable_links,
        index,
    })
}

fn driver_candidates(
    offer: &DriverOffer,
    network: &Network,
    tt: &dyn TravelTimes,
    start: f64,
    dt: f64,
    last_step: i64,
    out: &mut Vec<Candidate>,
) {
    let links: Vec<_> = offer.route.iter().map(|l| network.link(*l)).collect();
    match &offer.plan {
        DriverPlan::Flexible { ready } => {
            let solo: Vec<i64> = links.iter().map(|l| steps_up(tt.solo(l), dt).max(1)).collect();
            let pooled: Vec<i64> = links.iter().map(|l| steps_up(tt.pooled(l), dt).max(1)).collect();
            let ready = ready.max(offer.window.earliest_departure);
            let own_last = steps_up(offer.window.latest_arrival - start, dt);
            let latest_leave = steps_up(offer.window.latest_departure - start, dt);
            let mut before = steps_up(ready - start, dt);
            let mut after: i64 = solo.iter().sum();
            for (j, link) in links.iter().enumerate() {
                after -= solo[j];
                if offer.remaining_capacity[j] > 0 {
                    let mut latest = own_last - pooled[j] - after;
                    if j == 0 {
                        latest = latest.min(latest_leave);
                    }
                    latest = latest.min(last_step - pooled[j]);
                    for k in before.max(0)..=latest {
                        let depart = start + k as f64 * dt;
                        out.push(Candidate {
                            driver: offer.id,
                            link: link.id,
                            from: link.from,
                            to: link.to,
                            from_step: k,
                            to_step: k + pooled[j],
                            depart,
                            arrive: start + (k + pooled[j]) as f64 * dt,
                        });
                    }
                }
                before += solo[j];
            }
        }
        DriverPlan::Scheduled { entry, exit, next } => {
            let mut prev_end: Option<i64> = None;
            for j in *next..links.len() {
                let mut a = steps_up(entry[j] - start, dt);
                if let Some(p) = prev_end {
                    a = a.max(p);
                }
                let b = steps_up(exit[j] - start, dt).max(a + 1);
                prev_end = Some(b);
                if entry[j] < start - STEP_EPS || b > last_step || offer.remaining_capacity[j] == 0 {
                    continue;
                }
                out.push(Candidate {
                    driver: offer.id,
                    link: links[j].id,
                    from: links[j].from,
                    to: links[j].to,
                    from_step: a,
                    to_step: b,
                    depart: entry[j],
                    arrive: exit[j],
                });
            }
        }
    }
}

fn sweep_intervals(
    network: &Network,
    rider: &RiderRequest,
    duration: &BTreeMap<LinkId, i64>,
    last_step: i64,
) -> BTreeMap<NodeId, (u32, u32)> {
    // Bellman-Ford style relaxation; networks here are small.
    let mut earliest: BTreeMap<NodeId, i64> = BTreeMap::new();
    let mut latest: BTreeMap<NodeId, i64> = BTreeMap::new();
    if last_step < 0 {
        return BTreeMap::new();
    }
    earliest.insert(rider.origin, 0);
    latest.insert(rider.destination, last_step);
    let rounds = network.nodes().count();
    for _ in 0..rounds {
        let mut changed = false;
        for link in network.links() {
            let d = duration[&link.id];
            if let Some(&e) = earliest.get(&link.from) {
                let cand = e + d;
                let slot = earliest.entry(link.to).or_insert(i64::MAX);
                if cand < *slot {
                    *slot = cand;
                    changed = true;
                }
            }
            if let Some(&l) = latest.get(&link.to) {
                let cand = l - d;
                let slot = latest.entry(link.from).or_insert(i64::MIN);
                if cand > *slot {
                    *slot = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    earliest
        .iter()
        .filter_map(|(node, &e)| {
            let l = (*latest.get(node)?).min(last_step);
            (e >= 0 && e <= l).then_some((*node, (e as u32, l as u32)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::types::{FreeFlow, TimeWindow};

    fn rider(window: TimeWindow) -> RiderRequest {
        RiderRequest {
            id: AgentId(100),
            origin: NodeId(0),
            destination: NodeId(2),
            window,
            request_time: window.earliest_departure,
        }
    }

    fn exact_window() -> TimeWindow {
        TimeWindow::new(0.0, 0.0, 0.72, 0.72).unwrap()
    }

    pub(crate) fn through_driver(id: u32, window: TimeWindow) -> DriverOffer {
        DriverOffer::new_flexible(
            AgentId(id),
            NodeId(0),
            NodeId(2),
            window,
            2,
            vec![LinkId(1), LinkId(2)],
            window.earliest_departure,
        )
    }

    #[test]
    fn exact_window_intervals() {
        let net = Network::la_testbed();
        let w = exact_window();
        let ten = build_stem(&rider(w), &[through_driver(1, w)], &net, &FreeFlow, &MatchParams::default())
            .unwrap();
        assert_eq!(ten.node_intervals[&NodeId(0)], (0, 0));
        assert_eq!(ten.node_intervals[&NodeId(1)], (5, 5));
        assert_eq!(ten.node_intervals[&NodeId(2)], (15, 15));
        assert!(!ten.node_intervals.contains_key(&NodeId(3)));
        assert_eq!(ten.travel_arcs.len(), 2);
        assert!(ten.wait_arcs.is_empty());
        assert_eq!(ten.usable_links, [LinkId(1), LinkId(2)].into());
    }

    #[test]
    fn window_shorter_than_free_flow_is_empty() {
        let net = Network::la_testbed();
        let w = TimeWindow::new(0.0, 0.0, 0.5, 0.6).unwrap();
        let ten = build_stem(&rider(w), &[through_driver(1, exact_window())], &net, &FreeFlow, &MatchParams::default())
            .unwrap();
        assert!(ten.node_intervals.is_empty());
        assert!(ten.is_empty());
        assert!(ten.travel_arcs.is_empty());
    }

    #[test]
    fn no_drivers_gives_vertices_without_travel_arcs() {
        let net = Network::la_testbed();
        let w = TimeWindow::new(0.0, 0.2, 0.72, 0.92).unwrap();
        let ten = build_stem(&rider(w), &[], &net, &FreeFlow, &MatchParams::default()).unwrap();
        assert!(!ten.vertices.is_empty());
        assert!(ten.travel_arcs.is_empty());
        assert!(!ten.wait_arcs.is_empty());
        assert!(ten.usable_links.is_empty());
    }

    #[test]
    fn full_driver_contributes_no_arcs() {
        let net = Network::la_testbed();
        let w = exact_window();
        let mut d = through_driver(1, w);
        d.remaining_capacity = vec![0, 0];
        let ten = build_stem(&rider(w), &[d], &net, &FreeFlow, &MatchParams::default()).unwrap();
        assert!(ten.travel_arcs.is_empty());
    }

    #[test]
    fn scheduled_driver_arcs_follow_plan() {
        let net = Network::la_testbed();
        let w = TimeWindow::new(0.0, 0.3, 0.72, 1.02).unwrap();
        let mut d = through_driver(7, w);
        d.plan = DriverPlan::Scheduled {
            entry: vec![0.1, 0.32],
            exit: vec![0.32, 0.82],
            next: 0,
        };
        let ten = build_stem(&rider(w), &[d], &net, &FreeFlow, &MatchParams::default()).unwrap();
        let steps: Vec<(u32, u32)> = ten
            .travel_arcs
            .iter()
            .map(|a| (ten.vertices[a.from].step, ten.vertices[a.to].step))
            .collect();
        // 0.1 -> step 2, 0.32 -> step 7, 0.82 -> step 17
        assert_eq!(steps, vec![(2, 7), (7, 17)]);
    }
}
