use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::AgentId;
use crate::error::{Error, Result};
use crate::network::{Link, LinkId, Network, NodeId};

/// Slack used when converting continuous times to whole steps.
pub(crate) const STEP_EPS: f64 = 1e-9;

/// Number of whole steps needed to cover `duration`, rounding up.
pub fn steps_up(duration: f64, dt: f64) -> i64 {
    (duration / dt - STEP_EPS).ceil() as i64
}

/// Departure and arrival bounds of a traveller, in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub earliest_departure: f64,
    pub latest_departure: f64,
    pub earliest_arrival: f64,
    pub latest_arrival: f64,
}

impl TimeWindow {
    pub fn new(
        earliest_departure: f64,
        latest_departure: f64,
        earliest_arrival: f64,
        latest_arrival: f64,
    ) -> Result<Self> {
        let w = TimeWindow {
            earliest_departure,
            latest_departure,
            earliest_arrival,
            latest_arrival,
        };
        w.validate()?;
        Ok(w)
    }

    /// Window for a trip whose solo travel time is `travel_time`, starting at
    /// `departure` with `flexibility` hours of slack.
    pub fn for_trip(departure: f64, travel_time: f64, flexibility: f64) -> Self {
        TimeWindow {
            earliest_departure: departure,
            latest_departure: departure + flexibility,
            earliest_arrival: departure + travel_time,
            latest_arrival: departure + travel_time + flexibility,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.earliest_departure <= self.latest_departure
            && self.earliest_arrival <= self.latest_arrival
            && self.earliest_departure <= self.latest_arrival
            && [
                self.earliest_departure,
                self.latest_departure,
                self.earliest_arrival,
                self.latest_arrival,
            ]
            .iter()
            .all(|t| t.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("inconsistent time window {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiderRequest {
    pub id: AgentId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub window: TimeWindow,
    pub request_time: f64,
}

impl RiderRequest {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.origin == self.destination {
            return Err(Error::Validation(format!("rider {}: origin equals destination", self.id)));
        }
        if self.request_time > self.window.earliest_departure + STEP_EPS {
            return Err(Error::Validation(format!(
                "rider {}: request after earliest departure",
                self.id
            )));
        }
        Ok(())
    }
}

/// How much freedom a driver still has over its timing.
#[derive(Debug, Clone, PartialEq)]
pub enum DriverPlan {
    /// Not yet committed to anyone: may leave the origin at any time in
    /// `[ready, latest_departure]` and dwell at nodes as long as it still
    /// arrives by its latest arrival.
    Flexible { ready: f64 },
    /// Committed timing. `entry[j]` and `exit[j]` are the planned times on
    /// route link `j`; links before `next` are already entered.
    Scheduled {
        entry: Vec<f64>,
        exit: Vec<f64>,
        next: usize,
    },
}

/// A rideshare driver as seen by the matcher.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverOffer {
    pub id: AgentId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub window: TimeWindow,
    pub seats: u32,
    /// Minimum-time route, fixed when the driver registers.
    pub route: Vec<LinkId>,
    pub plan: DriverPlan,
    /// Free seats on each route link.
    pub remaining_capacity: Vec<u32>,
}

impl DriverOffer {
    pub fn new_flexible(
        id: AgentId,
        origin: NodeId,
        destination: NodeId,
        window: TimeWindow,
        seats: u32,
        route: Vec<LinkId>,
        ready: f64,
    ) -> Self {
        let remaining_capacity = vec![seats; route.len()];
        DriverOffer {
            id,
            origin,
            destination,
            window,
            seats,
            route,
            plan: DriverPlan::Flexible { ready },
            remaining_capacity,
        }
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        self.window.validate()?;
        if self.remaining_capacity.len() != self.route.len() {
            return Err(Error::Validation(format!("driver {}: capacity per leg mismatch", self.id)));
        }
        if self.remaining_capacity.iter().any(|&c| c > self.seats) {
            return Err(Error::Validation(format!("driver {}: capacity above seats", self.id)));
        }
        let mut at = self.origin;
        for lid in &self.route {
            let link = network
                .get_link(*lid)
                .ok_or_else(|| Error::Validation(format!("driver {}: unknown link {lid}", self.id)))?;
            if link.from != at {
                return Err(Error::Validation(format!("driver {}: route not contiguous", self.id)));
            }
            at = link.to;
        }
        if at != self.destination {
            return Err(Error::Validation(format!("driver {}: route misses destination", self.id)));
        }
        if let DriverPlan::Scheduled { entry, exit, next } = &self.plan {
            if entry.len() != self.route.len() || exit.len() != self.route.len() || *next > self.route.len() {
                return Err(Error::Validation(format!("driver {}: schedule length mismatch", self.id)));
            }
        }
        Ok(())
    }

    /// Riders aboard on route link `j`, plus the driver.
    pub fn occupancy(&self, j: usize) -> u32 {
        1 + self.seats - self.remaining_capacity[j]
    }

    pub fn is_flexible(&self) -> bool {
        matches!(self.plan, DriverPlan::Flexible { .. })
    }

    /// `(link, entry time)` pairs of the committed schedule, if any.
    pub fn committed_route(&self) -> Vec<(LinkId, f64)> {
        match &self.plan {
            DriverPlan::Flexible { .. } => Vec::new(),
            DriverPlan::Scheduled { entry, .. } => {
                self.route.iter().copied().zip(entry.iter().copied()).collect()
            }
        }
    }
}

/// Link traversal times under a frozen flow snapshot.
pub trait TravelTimes {
    /// Time with the driver alone (general lanes).
    fn solo(&self, link: &Link) -> f64;
    /// Time with at least one rider aboard (carpool lane where it is faster).
    fn pooled(&self, link: &Link) -> f64;
}

/// Free-flow times regardless of occupancy.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreeFlow;

impl TravelTimes for FreeFlow {
    fn solo(&self, link: &Link) -> f64 {
        link.free_flow_time
    }
    fn pooled(&self, link: &Link) -> f64 {
        link.free_flow_time
    }
}

/// Explicit per-link times, used by tests and tools.
#[derive(Debug, Clone, Default)]
pub struct TimeTable {
    pub solo: BTreeMap<LinkId, f64>,
    pub pooled: BTreeMap<LinkId, f64>,
}

impl TravelTimes for TimeTable {
    fn solo(&self, link: &Link) -> f64 {
        self.solo.get(&link.id).copied().unwrap_or(link.free_flow_time)
    }
    fn pooled(&self, link: &Link) -> f64 {
        self.pooled
            .get(&link.id)
            .copied()
            .unwrap_or_else(|| self.solo(link))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Step length in hours.
    pub dt: f64,
    /// Cost of one waiting step.
    pub penalty: f64,
    /// Weight on travel time when costing travel arcs.
    pub time_weight: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            dt: 0.05,
            penalty: 0.05,
            time_weight: 1.0,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.penalty >= 0.0 && self.time_weight >= 0.0) {
            return Err(Error::Validation("penalty and time weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// One link ridden within a leg.
#[derive(Debug, Clone, PartialEq)]
pub struct RiddenLink {
    pub link: LinkId,
    pub depart: f64,
    pub arrive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub driver: AgentId,
    pub board_node: NodeId,
    pub board_time: f64,
    pub board_step: u32,
    pub alight_node: NodeId,
    pub alight_time: f64,
    pub alight_step: u32,
    pub links: Vec<RiddenLink>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Itinerary {
    pub legs: Vec<Leg>,
    pub total_cost: f64,
    pub wait_steps: u32,
}

impl Itinerary {
    pub fn arrival_time(&self) -> f64 {
        self.legs.last().map_or(f64::NAN, |l| l.alight_time)
    }

    pub fn arrival_step(&self) -> u32 {
        self.legs.last().map_or(0, |l| l.alight_step)
    }

    pub fn departure_time(&self) -> f64 {
        self.legs.first().map_or(f64::NAN, |l| l.board_time)
    }

    pub fn drivers(&self) -> Vec<AgentId> {
        self.legs.iter().map(|l| l.driver).collect()
    }

    /// Legs connect in space and never go back in time.
    pub fn is_contiguous(&self) -> bool {
        self.legs.windows(2).all(|w| {
            w[0].alight_node == w[1].board_node && w[0].alight_time <= w[1].board_time + STEP_EPS
        }) && self.legs.iter().all(|l| l.board_time <= l.alight_time)
    }

    /// No driver appears in two different legs.
    pub fn has_no_reboarding(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.legs.iter().all(|l| seen.insert(l.driver))
    }
}

/// Reserve seats for `itinerary` and pin the timing of every driver it uses.
///
/// Fails without touching `offers` if a seat the itinerary needs has been
/// taken since it was planned.
pub fn commit(
    offers: &mut [DriverOffer],
    itinerary: &Itinerary,
    network: &Network,
    tt: &dyn TravelTimes,
) -> Result<Vec<AgentId>> {
    let position: BTreeMap<AgentId, usize> =
        offers.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
    let mut plans = Vec::with_capacity(itinerary.legs.len());
    for leg in &itinerary.legs {
        let idx = *position
            .get(&leg.driver)
            .ok_or_else(|| Error::Contract(format!("driver {} is not on offer", leg.driver)))?;
        let offer = &offers[idx];
        let start = offer
            .route
            .iter()
            .position(|l| *l == leg.links[0].link)
            .ok_or_else(|| Error::Contract(format!("leg not on driver {} route", offer.id)))?;
        for (k, ridden) in leg.links.iter().enumerate() {
            let j = start + k;
            if offer.route.get(j) != Some(&ridden.link) {
                return Err(Error::Contract(format!("leg not on driver {} route", offer.id)));
            }
            if offer.remaining_capacity[j] == 0 {
                return Err(Error::Contract(format!(
                    "capacity conflict on driver {} link {}",
                    offer.id, ridden.link
                )));
            }
        }
        plans.push((idx, start));
    }
    let mut touched = Vec::new();
    for (leg, (idx, start)) in itinerary.legs.iter().zip(plans) {
        let offer = &mut offers[idx];
        for k in 0..leg.links.len() {
            offer.remaining_capacity[start + k] -= 1;
        }
        if let DriverPlan::Flexible { ready } = offer.plan {
            offer.plan = pin_schedule(offer, ready, leg, start, network, tt);
        }
        touched.push(offer.id);
    }
    Ok(touched)
}

fn pin_schedule(
    offer: &DriverOffer,
    ready: f64,
    leg: &Leg,
    start: usize,
    network: &Network,
    tt: &dyn TravelTimes,
) -> DriverPlan {
    let n = offer.route.len();
    let solo: Vec<f64> = offer.route.iter().map(|l| tt.solo(network.link(*l))).collect();
    let mut entry = vec![0.0; n];
    let mut exit = vec![0.0; n];
    // leave as late as the pickup allows but no later than the latest
    // departure; any slack is spent waiting at the pickup node
    let approach: f64 = solo[..start].iter().sum();
    let earliest = ready.max(offer.window.earliest_departure);
    let mut t = (leg.board_time - approach)
        .min(offer.window.latest_departure)
        .max(earliest);
    for j in 0..start {
        entry[j] = t;
        exit[j] = t + solo[j];
        t = exit[j];
    }
    for (k, ridden) in leg.links.iter().enumerate() {
        entry[start + k] = ridden.depart;
        exit[start + k] = ridden.arrive;
    }
    let mut t = leg.alight_time;
    for j in start + leg.links.len()..n {
        entry[j] = t;
        exit[j] = t + solo[j];
        t = exit[j];
    }
    DriverPlan::Scheduled { entry, exit, next: 0 }
}
