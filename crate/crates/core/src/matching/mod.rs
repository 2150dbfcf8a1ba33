//! Per-rider ride matching over a time-expanded network.
//!
//! The pipeline is [`build_stem`] (space-time feasible region of the rider,
//! labelled with the drivers able to carry them), [`preprocess`] (prune to
//! vertices between origin and destination, order topologically, check that a
//! route exists) and [`solve_itinerary`] (dynamic program over
//! `(vertex, driver)` states with exclusion sets so a rider never re-boards a
//! driver they already left). [`brute_force_itinerary`] enumerates every path
//! and is used to check the dynamic program.
//!
//! Time is discretised relative to the rider's earliest departure: step `k`
//! is `earliest_departure + k * dt`. Travel durations round up to whole steps.

mod brute;
mod dp;
mod preprocess;
pub mod random;
mod stem;
mod types;

pub use brute::{brute_force_itinerary, vertices_on_feasible_paths};
pub use dp::{solve_itinerary, solve_with_state, DpState};
pub use preprocess::{preprocess, PrunedTen};
pub use stem::{build_stem, TimeExpandedNetwork, TravelArc, Vertex, VertexId, WaitArc};
pub use types::*;

use crate::error::Result;
use crate::network::Network;

/// Outcome of running the full pipeline for one rider.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub itinerary: Option<Itinerary>,
    pub trace: MatchTrace,
}

/// Sizes and values observed while matching one rider.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTrace {
    pub rider: crate::agent::AgentId,
    pub request_time: f64,
    pub candidate_drivers: usize,
    pub vertices: usize,
    pub travel_arcs: usize,
    pub wait_arcs: usize,
    pub pruned_vertices: usize,
    pub feasible: bool,
    pub cost: Option<f64>,
}

/// Build, prune and solve for `rider` against the current `offers`.
pub fn plan_match(
    rider: &RiderRequest,
    offers: &[DriverOffer],
    network: &Network,
    tt: &dyn TravelTimes,
    params: &MatchParams,
) -> Result<MatchOutcome> {
    let ten = build_stem(rider, offers, network, tt, params)?;
    let pruned = preprocess(&ten);
    let itinerary = if pruned.feasible {
        solve_itinerary(&pruned, rider)
    } else {
        None
    };
    let trace = MatchTrace {
        rider: rider.id,
        request_time: rider.request_time,
        candidate_drivers: offers.len(),
        vertices: ten.vertices.len(),
        travel_arcs: ten.travel_arcs.len(),
        wait_arcs: ten.wait_arcs.len(),
        pruned_vertices: pruned.removed.len(),
        feasible: pruned.feasible,
        cost: itinerary.as_ref().map(|it| it.total_cost),
    };
    Ok(MatchOutcome { itinerary, trace })
}
