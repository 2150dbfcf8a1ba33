//! Discrete-event mesoscopic traffic simulation.
//!
//! Vehicles move link by link. A vehicle entering a link at `t` leaves it at
//! `t + s(f)`, where `f` is the hourly flow on its lane class estimated from
//! entries during a trailing window. Regular drivers re-plan at every node;
//! rideshare drivers follow the route they registered with, waiting at nodes
//! when their committed schedule says so. Riders are matched once, when they
//! enter the system, and drive alone if no itinerary exists.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::agent::{AgentId, Role, VehicleAgent};
use crate::demand::{fallback_to_driver, generate_agents, DemandSpec};
use crate::error::{Error, Result};
use crate::matching::{
    commit, plan_match, DriverOffer, DriverPlan, Itinerary, MatchParams, MatchTrace, RiderRequest,
    TimeTable, TravelTimes,
};
use crate::network::{LaneClass, Link, LinkId, Network, NodeId, VolumeDelay};
use crate::routing::{dijkstra_route, link_cost, CostWeights, EdgeWeight};

/// Background carpool vehicles are calibrated so that this fraction of the
/// lane's reference capacity matches the per-lane flow of the general lanes.
pub const EQUIVALENT_LOAD: f64 = 0.75;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub weights: CostWeights,
    pub delay: VolumeDelay,
    pub matching: MatchParams,
    /// Ratio of simulated to real vehicles used when evaluating congestion:
    /// the delay function sees `simulated flow / capacity_scale`.
    pub capacity_scale: f64,
    /// Length of the trailing window used to estimate hourly flows.
    pub flow_window: f64,
    pub horizon: f64,
    pub record_trace: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            weights: CostWeights::default(),
            delay: VolumeDelay::default(),
            matching: MatchParams::default(),
            capacity_scale: 0.1,
            flow_window: 0.25,
            horizon: 24.0,
            record_trace: false,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.delay.validate()?;
        self.matching.validate()?;
        if !(self.capacity_scale > 0.0 && self.capacity_scale.is_finite()) {
            return Err(Error::Validation(format!("capacity_scale must be > 0, got {}", self.capacity_scale)));
        }
        if !(self.flow_window > 0.0 && self.flow_window.is_finite()) {
            return Err(Error::Validation("flow window must be > 0".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be > 0, got {}", self.horizon)));
        }
        Ok(())
    }
}

fn class_index(class: LaneClass) -> usize {
    match class {
        LaneClass::General => 0,
        LaneClass::Carpool => 1,
    }
}

const CLASSES: [LaneClass; 2] = [LaneClass::General, LaneClass::Carpool];

/// Who entered a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupant {
    Agent(AgentId),
    Background,
}

/// Per-link, per-lane-class traffic state.
#[derive(Debug, Clone)]
pub struct LinkState {
    pub link: LinkId,
    /// Vehicles currently on the link, by class (general, carpool).
    pub in_transit: [u64; 2],
    pub entries: [u64; 2],
    pub exits: [u64; 2],
    /// Agent entries only, by class.
    pub agent_entries: [u64; 2],
    pub entry_log: Vec<(Occupant, LaneClass, f64)>,
    recent: [VecDeque<f64>; 2],
}

impl LinkState {
    fn new(link: LinkId) -> Self {
        LinkState {
            link,
            in_transit: [0; 2],
            entries: [0; 2],
            exits: [0; 2],
            agent_entries: [0; 2],
            entry_log: Vec::new(),
            recent: [VecDeque::new(), VecDeque::new()],
        }
    }

    /// Entries per hour over `[now - window, now]`.
    fn hourly_flow(&self, class: LaneClass, now: f64, window: f64) -> f64 {
        let q = &self.recent[class_index(class)];
        let from = q.partition_point(|&t| t < now - window);
        (q.len() - from) as f64 / window
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Arrive(usize),
    Release(usize),
    /// A vehicle is at a node and ready to continue (or a driver's pinned departure).
    Continue(usize),
    LinkExit { agent: usize, link: LinkId, class: LaneClass },
    BackgroundEntry { stream: usize, generation: u32 },
    BackgroundExit(LinkId),
}

#[derive(Debug, Clone)]
struct Queued {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // BinaryHeap is a max-heap: earliest time, then first inserted, on top
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Waiting,
    Regular,
    Rideshare,
    /// Matched rider travelling in other vehicles.
    Passenger,
}

#[derive(Debug, Clone)]
struct AgentRun {
    agent: VehicleAgent,
    original_role: Role,
    mode: Mode,
    node: NodeId,
    /// Index of the next route link for rideshare drivers.
    next_link: usize,
    departure: Option<f64>,
    arrival: Option<f64>,
    legs: u32,
    stranded: bool,
    matched_calls: u32,
}

#[derive(Debug, Clone)]
struct BackgroundStream {
    link: LinkId,
    gap: Exp<f64>,
    rng: ChaCha8Rng,
}

/// What a vehicle does at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeDecision {
    Next(LinkId),
    Arrival,
    /// No way to continue towards the destination.
    Stranded,
    /// A rideshare driver early for its schedule, waiting until the given time.
    Hold,
}

pub struct SimState<'a> {
    pub clock: f64,
    network: &'a Network,
    params: SimParams,
    demand_scale: f64,
    seed: u64,
    queue: BinaryHeap<Queued>,
    seq: u64,
    links: BTreeMap<LinkId, LinkState>,
    agents: Vec<AgentRun>,
    index: BTreeMap<AgentId, usize>,
    /// Registered rideshare drivers still on the road or waiting to leave.
    offers: Vec<DriverOffer>,
    background: Vec<BackgroundStream>,
    generation: u32,
    traces: Vec<MatchTrace>,
    events_processed: u64,
}

/// Set up a run: materialize the demand and, when `unused_fraction` is given,
/// the background carpool stream.
pub fn init_simulation<'a>(
    params: &SimParams,
    demand: &DemandSpec,
    network: &'a Network,
    seed: u64,
    unused_fraction: Option<f64>,
) -> Result<SimState<'a>> {
    params.validate()?;
    demand.validate()?;
    let schedule = generate_agents(demand, network, seed)?;
    let mut sim = SimState {
        clock: 0.0,
        network,
        params: params.clone(),
        demand_scale: demand.scale,
        seed,
        queue: BinaryHeap::new(),
        seq: 0,
        links: network.link_ids().map(|l| (l, LinkState::new(l))).collect(),
        agents: Vec::with_capacity(schedule.len()),
        index: BTreeMap::new(),
        offers: Vec::new(),
        background: Vec::new(),
        generation: 0,
        traces: Vec::new(),
        events_processed: 0,
    };
    for (t, agent) in schedule.entries {
        sim.add_agent(t, agent)?;
    }
    if let Some(u) = unused_fraction {
        sim.inject_background_carpool_load(u)?;
    }
    Ok(sim)
}

impl<'a> SimState<'a> {
    fn push(&mut self, time: f64, event: Event) {
        debug_assert!(time >= self.clock - EPS, "event at {time} before clock {}", self.clock);
        self.seq += 1;
        self.queue.push(Queued {
            time: time.max(self.clock),
            seq: self.seq,
            event,
        });
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn link_state(&self, link: LinkId) -> Option<&LinkState> {
        self.links.get(&link)
    }

    /// Background carpool vehicles per hour a link receives at
    /// `unused_fraction`.
    pub fn background_rate(&self, link: &Link, unused_fraction: f64) -> f64 {
        let per_lane = link.observed_daily_flow / 24.0 * self.demand_scale / f64::from(link.general_lanes);
        (1.0 - unused_fraction) * per_lane / EQUIVALENT_LOAD
    }

    /// Start (or replace) a Poisson stream of pass-through vehicles on every
    /// carpool lane.
    pub fn inject_background_carpool_load(&mut self, unused_fraction: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&unused_fraction) {
            return Err(Error::Domain(format!("unused fraction {unused_fraction} outside [0, 1]")));
        }
        if !self.network.has_carpool_link() {
            return Err(Error::Domain(format!("network {} has no carpool lane", self.network.name())));
        }
        self.generation += 1;
        self.background.clear();
        let carpool: Vec<Link> = self.network.links().iter().filter(|l| l.has_carpool_lane).cloned().collect();
        for link in carpool {
            let rate = self.background_rate(&link, unused_fraction);
            if rate <= 0.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            // stream 0 belongs to demand generation
            rng.set_stream(1 + u64::from(link.id.0));
            let gap = Exp::new(rate).map_err(|e| Error::Domain(e.to_string()))?;
            let first = self.clock + gap.sample(&mut rng);
            self.background.push(BackgroundStream { link: link.id, gap, rng });
            let stream = self.background.len() - 1;
            let generation = self.generation;
            if first <= self.params.horizon {
                self.push(first, Event::BackgroundEntry { stream, generation });
            }
        }
        Ok(())
    }

    fn flow(&self, link: LinkId, class: LaneClass) -> f64 {
        self.links[&link].hourly_flow(class, self.clock, self.params.flow_window) / self.params.capacity_scale
    }

    fn lane_time(&self, link: &Link, class: LaneClass) -> f64 {
        self.params
            .delay
            .travel_time(link, class, self.flow(link.id, class))
            .expect("flows are never negative")
    }

    /// Solo and pooled link times under the current flows.
    pub fn travel_times(&self) -> TimeTable {
        let mut table = TimeTable::default();
        for link in self.network.links() {
            let solo = self.lane_time(link, LaneClass::General);
            let pooled = if link.has_carpool_lane {
                solo.min(self.lane_time(link, LaneClass::Carpool))
            } else {
                solo
            };
            table.solo.insert(link.id, solo);
            table.pooled.insert(link.id, pooled);
        }
        table
    }

    /// Entries of agent vehicles per link since the start (background excluded).
    pub fn observe_link_flows(&self) -> BTreeMap<LinkId, u64> {
        self.links
            .iter()
            .map(|(l, s)| (*l, s.agent_entries.iter().sum()))
            .collect()
    }

    /// Decide where a vehicle at `node` goes next at `time`.
    pub fn vehicle_at_node(&self, vehicle: AgentId, node: NodeId, time: f64) -> NodeDecision {
        match self.index.get(&vehicle) {
            Some(&i) => self.decide(i, node, time),
            None => NodeDecision::Stranded,
        }
    }

    fn decide(&self, i: usize, node: NodeId, time: f64) -> NodeDecision {
        let run = &self.agents[i];
        if node == run.agent.destination {
            return NodeDecision::Arrival;
        }
        match run.mode {
            Mode::Rideshare => {
                let Some(offer) = self.offers.iter().find(|o| o.id == run.agent.id) else {
                    return NodeDecision::Stranded;
                };
                let j = run.next_link;
                let Some(&lid) = offer.route.get(j) else {
                    return NodeDecision::Stranded;
                };
                if let DriverPlan::Scheduled { entry, .. } = &offer.plan {
                    if time + EPS < entry[j] {
                        return NodeDecision::Hold;
                    }
                }
                NodeDecision::Next(lid)
            }
            _ => {
                let w = self.params.weights;
                let delay = &self.params.delay;
                let cost = |l: &Link| {
                    let f = self.flow(l.id, LaneClass::General);
                    EdgeWeight {
                        cost: link_cost(l, time, f, w, delay).expect("flows are never negative"),
                        time: delay.travel_time(l, LaneClass::General, f).expect("flows are never negative"),
                    }
                };
                match dijkstra_route(self.network, cost, node, run.agent.destination).and_then(|p| p.first()) {
                    Some(l) => NodeDecision::Next(l),
                    None => NodeDecision::Stranded,
                }
            }
        }
    }

    /// Process every event up to `horizon` and report.
    pub fn run(mut self, horizon: f64) -> SimReport {
        self.advance(horizon);
        self.report(horizon)
    }

    /// Process every event with time at or before `until`; the clock ends at
    /// `until` (or stays put if it is already later).
    pub fn advance(&mut self, until: f64) {
        while let Some(top) = self.queue.peek() {
            if top.time > until {
                break;
            }
            let Queued { time, event, .. } = self.queue.pop().unwrap();
            debug_assert!(time >= self.clock);
            self.clock = time;
            self.events_processed += 1;
            self.handle(event);
        }
        self.clock = self.clock.max(until);
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Schedule one more agent to enter the system at `time`.
    pub fn add_agent(&mut self, time: f64, agent: VehicleAgent) -> Result<()> {
        if self.index.contains_key(&agent.id) {
            return Err(Error::Validation(format!("agent {} already exists", agent.id)));
        }
        if !(time >= self.clock && time.is_finite()) {
            return Err(Error::Domain(format!("entry time {time} precedes the clock {}", self.clock)));
        }
        for n in [agent.origin, agent.destination] {
            if !self.network.contains_node(n) {
                return Err(Error::Validation(format!("agent {} references unknown node {n}", agent.id)));
            }
        }
        let i = self.agents.len();
        self.index.insert(agent.id, i);
        self.agents.push(AgentRun {
            node: agent.origin,
            original_role: agent.role,
            agent,
            mode: Mode::Waiting,
            next_link: 0,
            departure: None,
            arrival: None,
            legs: 0,
            stranded: false,
            matched_calls: 0,
        });
        self.push(time, Event::Arrive(i));
        Ok(())
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Arrive(i) => self.on_arrive(i),
            Event::Release(i) => self.on_release(i),
            Event::Continue(i) => self.at_node(i),
            Event::LinkExit { agent, link, class } => {
                let st = self.links.get_mut(&link).unwrap();
                st.in_transit[class_index(class)] -= 1;
                st.exits[class_index(class)] += 1;
                let to = self.network.link(link).to;
                let run = &mut self.agents[agent];
                run.node = to;
                if run.mode == Mode::Rideshare {
                    run.next_link += 1;
                }
                self.at_node(agent);
            }
            Event::BackgroundEntry { stream, generation } => {
                if generation != self.generation {
                    return;
                }
                let lid = self.background[stream].link;
                let link = self.network.link(lid).clone();
                let travel = self.lane_time(&link, LaneClass::Carpool);
                self.enter(Occupant::Background, lid, LaneClass::Carpool);
                self.push(self.clock + travel, Event::BackgroundExit(lid));
                let s = &mut self.background[stream];
                let next = self.clock + s.gap.sample(&mut s.rng);
                if next <= self.params.horizon {
                    self.push(next, Event::BackgroundEntry { stream, generation });
                }
            }
            Event::BackgroundExit(lid) => {
                let st = self.links.get_mut(&lid).unwrap();
                let c = class_index(LaneClass::Carpool);
                st.in_transit[c] -= 1;
                st.exits[c] += 1;
            }
        }
    }

    fn enter(&mut self, who: Occupant, lid: LinkId, class: LaneClass) {
        let now = self.clock;
        let window = self.params.flow_window;
        let st = self.links.get_mut(&lid).unwrap();
        let c = class_index(class);
        st.in_transit[c] += 1;
        st.entries[c] += 1;
        if let Occupant::Agent(_) = who {
            st.agent_entries[c] += 1;
        }
        st.entry_log.push((who, class, now));
        let q = &mut st.recent[c];
        q.push_back(now);
        while q.front().is_some_and(|&t| t < now - window) {
            q.pop_front();
        }
    }

    fn on_arrive(&mut self, i: usize) {
        match self.agents[i].agent.role {
            Role::RegularDriver => {
                self.agents[i].mode = Mode::Regular;
                self.at_node(i);
            }
            Role::RideshareDriver => self.register_driver(i),
            Role::Rider => self.on_rider(i),
        }
    }

    fn register_driver(&mut self, i: usize) {
        let tt = self.travel_times();
        let agent = self.agents[i].agent.clone();
        let route = dijkstra_route(
            self.network,
            |l| EdgeWeight::uniform(tt.solo(l)),
            agent.origin,
            agent.destination,
        );
        let Some(route) = route.filter(|p| !p.links.is_empty()) else {
            self.agents[i].stranded = true;
            return;
        };
        self.offers.push(DriverOffer::new_flexible(
            agent.id,
            agent.origin,
            agent.destination,
            agent.window,
            agent.seats,
            route.links,
            self.clock,
        ));
        self.agents[i].mode = Mode::Rideshare;
        let release = agent.window.latest_departure.max(self.clock);
        self.push(release, Event::Release(i));
    }

    /// A held driver nobody booked leaves at its latest departure.
    fn on_release(&mut self, i: usize) {
        let id = self.agents[i].agent.id;
        let tt = self.travel_times();
        let now = self.clock;
        let network = self.network;
        let Some(offer) = self.offers.iter_mut().find(|o| o.id == id) else { return };
        if !offer.is_flexible() {
            return;
        }
        let mut t = now;
        let mut entry = Vec::with_capacity(offer.route.len());
        let mut exit = Vec::with_capacity(offer.route.len());
        for lid in &offer.route {
            entry.push(t);
            t += tt.solo(network.link(*lid));
            exit.push(t);
        }
        offer.plan = DriverPlan::Scheduled { entry, exit, next: 0 };
        self.at_node(i);
    }

    fn on_rider(&mut self, i: usize) {
        self.agents[i].matched_calls += 1;
        match self.match_rider(i) {
            Ok(Some(it)) => {
                let run = &mut self.agents[i];
                run.mode = Mode::Passenger;
                run.agent.matched = Some(true);
                run.departure = Some(it.departure_time());
                run.arrival = Some(it.arrival_time());
                run.legs = it.legs.len() as u32;
            }
            Ok(None) | Err(_) => {
                let run = &mut self.agents[i];
                run.agent.matched = Some(false);
                let driver = fallback_to_driver(&run.agent).expect("rider is unmatched");
                run.agent = driver;
                run.mode = Mode::Regular;
                self.at_node(i);
            }
        }
    }

    /// Plan and commit an itinerary for rider `i`. A capacity conflict at
    /// commit time is retried once against the refreshed offers.
    pub fn match_rider_by_id(&mut self, rider: AgentId) -> Result<Option<Itinerary>> {
        let i = *self
            .index
            .get(&rider)
            .ok_or_else(|| Error::Contract(format!("unknown agent {rider}")))?;
        if self.agents[i].agent.role != Role::Rider || self.agents[i].agent.matched.is_some() {
            return Err(Error::Contract(format!("agent {rider} is not an unmatched rider")));
        }
        self.match_rider(i)
    }

    fn match_rider(&mut self, i: usize) -> Result<Option<Itinerary>> {
        let agent = &self.agents[i].agent;
        let request = RiderRequest {
            id: agent.id,
            origin: agent.origin,
            destination: agent.destination,
            window: agent.window,
            request_time: agent.request_time,
        };
        let now = self.clock;
        for offer in &mut self.offers {
            if let DriverPlan::Flexible { ready } = &mut offer.plan {
                *ready = ready.max(now);
            }
        }
        for _attempt in 0..2 {
            let tt = self.travel_times();
            let candidates: Vec<DriverOffer> = self
                .offers
                .iter()
                .filter(|o| may_serve(o, &request, now))
                .cloned()
                .collect();
            let outcome = plan_match(&request, &candidates, self.network, &tt, &self.params.matching)?;
            if self.params.record_trace {
                self.traces.push(outcome.trace.clone());
            }
            let Some(itinerary) = outcome.itinerary else {
                return Ok(None);
            };
            let was_flexible: Vec<AgentId> =
                self.offers.iter().filter(|o| o.is_flexible()).map(|o| o.id).collect();
            match commit(&mut self.offers, &itinerary, self.network, &tt) {
                Ok(touched) => {
                    for id in touched {
                        if was_flexible.contains(&id) {
                            let offer = self.offers.iter().find(|o| o.id == id).unwrap();
                            if let DriverPlan::Scheduled { entry, .. } = &offer.plan {
                                let leave = entry[0];
                                let d = self.index[&id];
                                self.push(leave.max(now), Event::Continue(d));
                            }
                        }
                    }
                    return Ok(Some(itinerary));
                }
                Err(Error::Contract(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    fn at_node(&mut self, i: usize) {
        let node = self.agents[i].node;
        let decision = self.decide(i, node, self.clock);
        match decision {
            NodeDecision::Arrival => {
                let run = &mut self.agents[i];
                run.arrival = Some(self.clock);
                if run.departure.is_none() {
                    run.departure = Some(self.clock);
                }
                if run.mode == Mode::Rideshare {
                    let id = run.agent.id;
                    self.offers.retain(|o| o.id != id);
                }
            }
            NodeDecision::Stranded => {
                let run = &mut self.agents[i];
                run.stranded = true;
                if run.mode == Mode::Rideshare {
                    let id = run.agent.id;
                    self.offers.retain(|o| o.id != id);
                }
            }
            NodeDecision::Hold => {
                // early at an intermediate node: resume at the planned entry time
                let id = self.agents[i].agent.id;
                let j = self.agents[i].next_link;
                if let Some(DriverPlan::Scheduled { entry, .. }) =
                    self.offers.iter().find(|o| o.id == id).map(|o| &o.plan)
                {
                    let at = entry[j];
                    self.push(at, Event::Continue(i));
                }
            }
            NodeDecision::Next(lid) => {
                let link = self.network.link(lid).clone();
                let mut class = LaneClass::General;
                if self.agents[i].mode == Mode::Rideshare {
                    let id = self.agents[i].agent.id;
                    let j = self.agents[i].next_link;
                    let offer = self.offers.iter_mut().find(|o| o.id == id).unwrap();
                    if let DriverPlan::Scheduled { next, .. } = &mut offer.plan {
                        *next = j + 1;
                    }
                    let pooled = offer.occupancy(j) >= 2;
                    if pooled
                        && link.has_carpool_lane
                        && self.lane_time(&link, LaneClass::Carpool) < self.lane_time(&link, LaneClass::General)
                    {
                        class = LaneClass::Carpool;
                    }
                }
                let travel = self.lane_time(&link, class);
                let run = &mut self.agents[i];
                if run.departure.is_none() {
                    run.departure = Some(self.clock);
                }
                let id = run.agent.id;
                self.enter(Occupant::Agent(id), lid, class);
                self.push(self.clock + travel, Event::LinkExit { agent: i, link: lid, class });
            }
        }
    }

    fn report(self, horizon: f64) -> SimReport {
        let link_flows = self
            .links
            .values()
            .flat_map(|st| {
                CLASSES.iter().map(move |&class| {
                    let c = class_index(class);
                    LinkFlow {
                        link: st.link,
                        class,
                        count: st.agent_entries[c],
                        background: st.entries[c] - st.agent_entries[c],
                    }
                })
            })
            .collect();
        let agents = self
            .agents
            .iter()
            .map(|r| AgentOutcome {
                id: r.agent.id,
                role: r.original_role,
                origin: r.agent.origin,
                destination: r.agent.destination,
                matched: if r.original_role == Role::Rider { r.agent.matched } else { None },
                departure: r.departure,
                arrival: r.arrival,
                legs: r.legs,
                stranded: r.stranded,
                match_calls: r.matched_calls,
            })
            .collect();
        SimReport {
            seed: self.seed,
            horizon,
            link_flows,
            agents,
            traces: self.traces,
            events: self.events_processed,
        }
    }
}

/// Cheap filter: can this driver possibly carry the rider?
fn may_serve(offer: &DriverOffer, rider: &RiderRequest, now: f64) -> bool {
    if offer.window.latest_arrival + EPS < rider.window.earliest_departure {
        return false;
    }
    match &offer.plan {
        DriverPlan::Flexible { .. } => offer.remaining_capacity.iter().any(|&c| c > 0),
        DriverPlan::Scheduled { entry, next, .. } => {
            (*next..offer.route.len()).any(|j| offer.remaining_capacity[j] > 0 && entry[j] + EPS >= now)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkFlow {
    pub link: LinkId,
    pub class: LaneClass,
    /// Agent vehicles that entered this lane class.
    pub count: u64,
    /// Background carpool vehicles that entered it.
    pub background: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    pub id: AgentId,
    /// Role at generation time; riders keep this role after falling back.
    pub role: Role,
    pub origin: NodeId,
    pub destination: NodeId,
    pub matched: Option<bool>,
    pub departure: Option<f64>,
    pub arrival: Option<f64>,
    pub legs: u32,
    pub stranded: bool,
    pub match_calls: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub seed: u64,
    pub horizon: f64,
    pub link_flows: Vec<LinkFlow>,
    pub agents: Vec<AgentOutcome>,
    pub traces: Vec<MatchTrace>,
    pub events: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl SimReport {
    pub fn riders(&self) -> usize {
        self.agents.iter().filter(|a| a.role == Role::Rider).count()
    }

    pub fn matched_riders(&self) -> usize {
        self.agents.iter().filter(|a| a.matched == Some(true)).count()
    }

    /// Matched riders over all riders; 0 when there were none.
    pub fn match_rate(&self) -> f64 {
        match self.riders() {
            0 => 0.0,
            n => self.matched_riders() as f64 / n as f64,
        }
    }

    pub fn mean_travel_time(&self) -> Option<f64> {
        let times: Vec<f64> = self
            .agents
            .iter()
            .filter_map(|a| Some(a.arrival? - a.departure?))
            .collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }

    /// Agent entries per link, all lane classes together.
    pub fn link_entries(&self) -> BTreeMap<LinkId, u64> {
        let mut out = BTreeMap::new();
        for f in &self.link_flows {
            *out.entry(f.link).or_insert(0) += f.count;
        }
        out
    }

    /// Vehicles per hour entering a lane class of a link, background included.
    pub fn lane_hourly_flow(&self, link: LinkId, class: LaneClass) -> f64 {
        self.link_flows
            .iter()
            .filter(|f| f.link == link && f.class == class)
            .map(|f| (f.count + f.background) as f64)
            .sum::<f64>()
            / self.horizon
    }

    pub fn stranded(&self) -> usize {
        self.agents.iter().filter(|a| a.stranded).count()
    }

    pub fn write_link_flows<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["link", "class", "count", "background"])?;
        for f in &self.link_flows {
            w.write_record([
                f.link.to_string(),
                f.class.as_str().to_string(),
                f.count.to_string(),
                f.background.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_agents<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "role", "matched", "departure", "arrival"])?;
        for a in &self.agents {
            let matched = match a.matched {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            };
            w.write_record([
                a.id.to_string(),
                a.role.as_str().to_string(),
                matched.to_string(),
                opt(a.departure),
                opt(a.arrival),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "seed",
            "horizon",
            "agents",
            "riders",
            "matched_riders",
            "match_rate",
            "mean_travel_time",
            "stranded",
        ])?;
        w.write_record([
            self.seed.to_string(),
            format!("{:.6}", self.horizon),
            self.agents.len().to_string(),
            self.riders().to_string(),
            self.matched_riders().to_string(),
            format!("{:.6}", self.match_rate()),
            opt(self.mean_travel_time()),
            self.stranded().to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rider",
            "request_time",
            "candidate_drivers",
            "vertices",
            "travel_arcs",
            "wait_arcs",
            "pruned_vertices",
            "feasible",
            "cost",
        ])?;
        for t in &self.traces {
            w.write_record([
                t.rider.to_string(),
                format!("{:.6}", t.request_time),
                t.candidate_drivers.to_string(),
                t.vertices.to_string(),
                t.travel_arcs.to_string(),
                t.wait_arcs.to_string(),
                t.pruned_vertices.to_string(),
                t.feasible.to_string(),
                opt(t.cost),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
