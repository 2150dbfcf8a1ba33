use std::collections::VecDeque;

use super::stem::{TimeExpandedNetwork, TravelArc, Vertex, VertexId, WaitArc};

/// The time-expanded network restricted to vertices lying between the origin
/// and the destination.
#[derive(Debug, Clone)]
pub struct PrunedTen {
    pub ten: TimeExpandedNetwork,
    /// Vertex ids of `ten` in topological order.
    pub order: Vec<VertexId>,
    pub feasible: bool,
    /// Vertices of the input that were dropped.
    pub removed: Vec<Vertex>,
}

/// Remove vertices that are not descendants of the origin or not ancestors of
/// a destination vertex, sort what is left topologically and run a depth-first
/// search to decide whether any origin-to-destination path exists.
pub fn preprocess(ten: &TimeExpandedNetwork) -> PrunedTen {
    let n = ten.vertices.len();
    let mut succ: Vec<Vec<VertexId>> = vec![Vec::new(); n];
    let mut pred: Vec<Vec<VertexId>> = vec![Vec::new(); n];
    for (from, to) in ten
        .travel_arcs
        .iter()
        .map(|a| (a.from, a.to))
        .chain(ten.wait_arcs.iter().map(|a| (a.from, a.to)))
    {
        succ[from].push(to);
        pred[to].push(from);
    }

    let forward = reach(&ten.origin_vertices(), &succ, n);
    let backward = reach(&ten.destination_vertices(), &pred, n);
    let keep: Vec<bool> = (0..n).map(|v| forward[v] && backward[v]).collect();

    let mut remap = vec![usize::MAX; n];
    let mut vertices = Vec::new();
    let mut removed = Vec::new();
    for (v, vertex) in ten.vertices.iter().enumerate() {
        if keep[v] {
            remap[v] = vertices.len();
            vertices.push(*vertex);
        } else {
            removed.push(*vertex);
        }
    }
    let travel_arcs: Vec<TravelArc> = ten
        .travel_arcs
        .iter()
        .filter(|a| keep[a.from] && keep[a.to])
        .map(|a| TravelArc {
            from: remap[a.from],
            to: remap[a.to],
            ..a.clone()
        })
        .collect();
    let wait_arcs: Vec<WaitArc> = ten
        .wait_arcs
        .iter()
        .filter(|a| keep[a.from] && keep[a.to])
        .map(|a| WaitArc {
            from: remap[a.from],
            to: remap[a.to],
            cost: a.cost,
        })
        .collect();
    let pruned = TimeExpandedNetwork::assemble(ten, vertices, travel_arcs, wait_arcs);

    // every arc moves forward by at least one step, so step order is topological
    let mut order: Vec<VertexId> = (0..pruned.vertices.len()).collect();
    order.sort_by_key(|&v| (pruned.vertices[v].step, pruned.vertices[v].node));

    let feasible = dfs_reaches_destination(&pruned);
    PrunedTen {
        ten: pruned,
        order,
        feasible,
        removed,
    }
}

fn reach(seeds: &[VertexId], edges: &[Vec<VertexId>], n: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue: VecDeque<VertexId> = seeds.iter().copied().collect();
    for &s in seeds {
        seen[s] = true;
    }
    while let Some(v) = queue.pop_front() {
        for &w in &edges[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

fn dfs_reaches_destination(ten: &TimeExpandedNetwork) -> bool {
    let adj = ten.adjacency();
    let mut seen = vec![false; ten.vertices.len()];
    let mut stack = ten.origin_vertices();
    while let Some(v) = stack.pop() {
        if ten.vertices[v].node == ten.destination {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        let (travel, wait) = &adj[v];
        stack.extend(travel.iter().map(|&a| ten.travel_arcs[a].to));
        stack.extend(wait.iter().map(|&a| ten.wait_arcs[a].to));
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentId;
    use crate::matching::{build_stem, DriverOffer, FreeFlow, MatchParams, RiderRequest, TimeWindow};
    use crate::network::{LinkId, Network, NodeId};

    fn rider(w: TimeWindow) -> RiderRequest {
        RiderRequest {
            id: AgentId(9),
            origin: NodeId(0),
            destination: NodeId(2),
            window: w,
            request_time: 0.0,
        }
    }

    #[test]
    fn exact_window_is_feasible_with_three_nodes() {
        let net = Network::la_testbed();
        let w = TimeWindow::new(0.0, 0.0, 0.72, 0.72).unwrap();
        let d = DriverOffer::new_flexible(AgentId(1), NodeId(0), NodeId(2), w, 1, vec![LinkId(1), LinkId(2)], 0.0);
        let ten = build_stem(&rider(w), &[d], &net, &FreeFlow, &MatchParams::default()).unwrap();
        let p = preprocess(&ten);
        assert!(p.feasible);
        let nodes: std::collections::BTreeSet<_> = p.ten.vertices.iter().map(|v| v.node).collect();
        assert_eq!(nodes.len(), 3);
        assert!(p.removed.is_empty());
    }

    #[test]
    fn empty_network_is_infeasible() {
        let net = Network::la_testbed();
        let w = TimeWindow::new(0.0, 0.0, 0.3, 0.3).unwrap();
        let ten = build_stem(&rider(w), &[], &net, &FreeFlow, &MatchParams::default()).unwrap();
        assert!(ten.is_empty());
        let p = preprocess(&ten);
        assert!(!p.feasible);
        assert!(p.order.is_empty());
    }

    #[test]
    fn isolated_cluster_is_removed() {
        let net = Network::la_testbed();
        // only a 1 -> 2 driver: everything at nodes 1 and 2 is cut off from the origin
        let w = TimeWindow::new(0.0, 0.5, 0.72, 1.22).unwrap();
        let d12 = DriverOffer::new_flexible(AgentId(1), NodeId(1), NodeId(2), TimeWindow::for_trip(0.0, 0.5, 1.0), 1, vec![LinkId(2)], 0.0);
        let ten = build_stem(&rider(w), &[d12], &net, &FreeFlow, &MatchParams::default()).unwrap();
        assert!(ten.vertices.iter().any(|v| v.node == NodeId(1)));
        assert!(!ten.travel_arcs.is_empty());
        let p = preprocess(&ten);
        assert!(!p.feasible);
        assert!(p.ten.vertices.is_empty());
        assert_eq!(p.removed.len(), ten.vertices.len());
    }

    #[test]
    fn order_is_topological() {
        let net = Network::la_testbed();
        let w = TimeWindow::new(0.0, 0.5, 0.72, 1.22).unwrap();
        let d = DriverOffer::new_flexible(AgentId(2), NodeId(0), NodeId(2), w, 1, vec![LinkId(1), LinkId(2)], 0.0);
        let ten = build_stem(&rider(w), &[d], &net, &FreeFlow, &MatchParams::default()).unwrap();
        let p = preprocess(&ten);
        assert!(p.feasible);
        let mut rank = vec![0; p.order.len()];
        for (i, &v) in p.order.iter().enumerate() {
            rank[v] = i;
        }
        for a in &p.ten.travel_arcs {
            assert!(rank[a.from] < rank[a.to]);
        }
        for a in &p.ten.wait_arcs {
            assert!(rank[a.from] < rank[a.to]);
        }
    }
}
