use std::collections::BTreeSet;

use crate::agent::AgentId;
use crate::error::{Error, Result};

use super::dp::{build_itinerary, Move};
use super::stem::{TimeExpandedNetwork, Vertex};
use super::types::{Itinerary, RiderRequest, STEP_EPS};

struct Search<'a> {
    ten: &'a TimeExpandedNetwork,
    adj: Vec<(Vec<usize>, Vec<usize>)>,
    budget: usize,
    paths: usize,
    best: Option<Best>,
    moves: Vec<Move>,
    trail: Vec<usize>,
    on_paths: Option<BTreeSet<usize>>,
}

struct Best {
    key: (f64, usize, u32, u32, Vec<AgentId>),
    moves: Vec<Move>,
    waits: u32,
}

/// Exhaustively enumerate every origin-to-destination path in `ten` that never
/// boards a driver the rider already left, and return the cheapest.
///
/// Fails with [`Error::Budget`] once more than `budget` complete paths have
/// been seen.
pub fn brute_force_itinerary(
    ten: &TimeExpandedNetwork,
    rider: &RiderRequest,
    budget: usize,
) -> Result<Option<Itinerary>> {
    let search = Search::run(ten, rider, budget, false)?;
    Ok(search.best.map(|b| build_itinerary(ten, &b.moves, b.key.0, b.waits)))
}

/// Every vertex that lies on at least one feasible origin-to-destination path.
pub fn vertices_on_feasible_paths(
    ten: &TimeExpandedNetwork,
    rider: &RiderRequest,
    budget: usize,
) -> Result<BTreeSet<Vertex>> {
    let search = Search::run(ten, rider, budget, true)?;
    Ok(search
        .on_paths
        .unwrap_or_default()
        .into_iter()
        .map(|v| ten.vertices[v])
        .collect())
}

impl<'a> Search<'a> {
    fn run(ten: &'a TimeExpandedNetwork, rider: &RiderRequest, budget: usize, collect: bool) -> Result<Self> {
        let mut search = Search {
            ten,
            adj: ten.adjacency(),
            budget,
            paths: 0,
            best: None,
            moves: vec![Move::Start],
            trail: Vec::new(),
            on_paths: collect.then(BTreeSet::new),
        };
        for o in ten.origin_vertices() {
            search.walk(o, 0.0, None, &mut Vec::new(), rider.window.earliest_departure, 0)?;
        }
        Ok(search)
    }

    fn walk(
        &mut self,
        v: usize,
        cost: f64,
        current: Option<AgentId>,
        history: &mut Vec<AgentId>,
        arrival: f64,
        waits: u32,
    ) -> Result<()> {
        self.trail.push(v);
        let res = self.visit(v, cost, current, history, arrival, waits);
        self.trail.pop();
        res
    }

    fn visit(
        &mut self,
        v: usize,
        cost: f64,
        current: Option<AgentId>,
        history: &mut Vec<AgentId>,
        arrival: f64,
        waits: u32,
    ) -> Result<()> {
        let vertex = self.ten.vertices[v];
        if vertex.node == self.ten.destination {
            if history.is_empty() {
                return Ok(());
            }
            self.paths += 1;
            if self.paths > self.budget {
                return Err(Error::Budget(self.budget));
            }
            if let Some(set) = self.on_paths.as_mut() {
                set.extend(self.trail.iter().copied());
            }
            let key = (cost, history.len(), vertex.step, waits, history.clone());
            let better = match &self.best {
                None => true,
                Some(b) => {
                    key.0
                        .total_cmp(&b.key.0)
                        .then(key.1.cmp(&b.key.1))
                        .then(key.2.cmp(&b.key.2))
                        .then(key.3.cmp(&b.key.3))
                        .then(key.4.cmp(&b.key.4))
                        .is_lt()
                }
            };
            if better {
                self.best = Some(Best {
                    key,
                    moves: self.moves.clone(),
                    waits,
                });
            }
            return Ok(());
        }
        let (travel, wait) = self.adj[v].clone();
        for ai in travel {
            let arc = &self.ten.travel_arcs[ai];
            let (to, c, driver, depart, arrive) = (arc.to, arc.cost, arc.driver, arc.depart, arc.arrive);
            let boarding = current != Some(driver);
            if boarding {
                // a driver already in the history and not the current one was left earlier
                if history.contains(&driver) || depart + STEP_EPS < arrival {
                    continue;
                }
                history.push(driver);
            }
            self.moves.push(Move::Travel(ai));
            let res = self.walk(to, cost + c, Some(driver), history, arrive, waits);
            self.moves.pop();
            if boarding {
                history.pop();
            }
            res?;
        }
        for wi in wait {
            let arc = &self.ten.wait_arcs[wi];
            let (to, c) = (arc.to, arc.cost);
            self.moves.push(Move::Wait(wi));
            let res = self.walk(to, cost + c, current, history, arrival, waits + 1);
            self.moves.pop();
            res?;
        }
        Ok(())
    }
}
