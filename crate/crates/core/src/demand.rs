//! Agent generation from O-D rates, and calibration of those rates from
//! observed link counts.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::agent::{AgentId, Role, VehicleAgent};
use crate::error::{Error, Result};
use crate::matching::TimeWindow;
use crate::network::{LinkId, Network, NodeId};
use crate::routing::{dijkstra_route, free_flow_time, EdgeWeight};

pub type OdPair = (NodeId, NodeId);

/// Fractions of agents taking each role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shares {
    pub rider: f64,
    pub driver: f64,
    pub regular: f64,
}

impl Shares {
    pub const RIDESHARING: Shares = Shares {
        rider: 0.10,
        driver: 0.40,
        regular: 0.50,
    };
    pub const BASELINE: Shares = Shares {
        rider: 0.0,
        driver: 0.0,
        regular: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.rider, self.driver, self.regular];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation(format!("shares must lie in [0, 1], got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("shares must sum to 1, got {sum}")));
        }
        Ok(())
    }

    fn draw(&self, u: f64) -> Role {
        if u < self.rider {
            Role::Rider
        } else if u < self.rider + self.driver {
            Role::RideshareDriver
        } else {
            Role::RegularDriver
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    /// Full-scale hourly rates per O-D pair.
    pub od_rates: BTreeMap<OdPair, f64>,
    pub shares: Shares,
    pub window_flexibility: f64,
    pub horizon: f64,
    /// Multiplier applied to every rate.
    pub scale: f64,
    /// Seats offered by each rideshare driver.
    pub seats: u32,
}

impl DemandSpec {
    pub fn validate(&self) -> Result<()> {
        self.shares.validate()?;
        if let Some(((o, d), r)) = self.od_rates.iter().find(|(_, r)| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::Validation(format!("rate {r} for {o}->{d} must be finite and >= 0")));
        }
        if !(self.window_flexibility >= 0.0 && self.window_flexibility.is_finite()) {
            return Err(Error::Validation("window_flexibility must be >= 0".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Validation(format!("scale must be > 0, got {}", self.scale)));
        }
        if self.seats == 0 && self.shares.driver > 0.0 {
            return Err(Error::Validation("rideshare drivers need at least one seat".into()));
        }
        Ok(())
    }
}

/// Agents in order of arrival.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentSchedule {
    pub entries: Vec<(f64, VehicleAgent)>,
}

impl AgentSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VehicleAgent> {
        self.entries.iter().map(|(_, a)| a)
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.iter().filter(|a| a.role == role).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "role",
            "origin",
            "destination",
            "arrival",
            "earliest_departure",
            "latest_departure",
            "earliest_arrival",
            "latest_arrival",
            "seats",
        ])?;
        for (t, a) in &self.entries {
            let win = a.window;
            w.write_record([
                a.id.to_string(),
                a.role.as_str().to_string(),
                a.origin.to_string(),
                a.destination.to_string(),
                format!("{t:.6}"),
                format!("{:.6}", win.earliest_departure),
                format!("{:.6}", win.latest_departure),
                format!("{:.6}", win.earliest_arrival),
                format!("{:.6}", win.latest_arrival),
                a.seats.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Poisson arrivals per O-D pair with roles drawn from the shares.
pub fn generate_agents(spec: &DemandSpec, network: &Network, seed: u64) -> Result<AgentSchedule> {
    spec.validate()?;
    let mut shortest = BTreeMap::new();
    for (&(o, d), &rate) in &spec.od_rates {
        if rate == 0.0 {
            continue;
        }
        if o == d || !network.contains_node(o) || !network.contains_node(d) {
            return Err(Error::Validation(format!("O-D pair {o}->{d} is not a trip in network {}", network.name())));
        }
        let tt = free_flow_time(network, o, d)
            .ok_or_else(|| Error::Validation(format!("O-D pair {o}->{d} is not connected")))?;
        shortest.insert((o, d), tt);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw: Vec<(f64, usize, OdPair, Role)> = Vec::new();
    for (k, &pair) in shortest.keys().enumerate() {
        let lambda = spec.od_rates[&pair] * spec.scale;
        let gap = Exp::new(lambda).map_err(|e| Error::Validation(e.to_string()))?;
        let mut t = gap.sample(&mut rng);
        while t <= spec.horizon {
            let role = spec.shares.draw(rng.gen::<f64>());
            raw.push((t, k, pair, role));
            t += gap.sample(&mut rng);
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let entries = raw
        .into_iter()
        .enumerate()
        .map(|(i, (t, _, (o, d), role))| {
            let seats = if role == Role::RideshareDriver { spec.seats } else { 0 };
            let agent = VehicleAgent {
                id: AgentId(i as u32),
                role,
                origin: o,
                destination: d,
                request_time: t,
                window: TimeWindow::for_trip(t, shortest[&(o, d)], spec.window_flexibility),
                seats,
                occupancy: 1,
                committed_route: Vec::new(),
                matched: None,
            };
            (t, agent)
        })
        .collect();
    Ok(AgentSchedule { entries })
}

/// How observed link counts are turned into O-D rates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationOptions {
    /// Candidate pairs; empty means every ordered pair with a path.
    pub pairs: Vec<OdPair>,
    /// Pairs whose hourly rate is set rather than solved for.
    pub fixed: BTreeMap<OdPair, f64>,
}

/// Hourly O-D rates whose free-flow all-or-nothing assignment reproduces the
/// target link flows, given in vehicles per `period_hours`.
pub fn calibrate_od_rates(
    network: &Network,
    targets: &BTreeMap<LinkId, f64>,
    period_hours: f64,
    options: &CalibrationOptions,
) -> Result<BTreeMap<OdPair, f64>> {
    if !(period_hours > 0.0) {
        return Err(Error::Validation("calibration period must be positive".into()));
    }
    let links: Vec<LinkId> = network.link_ids().collect();
    if let Some(missing) = links.iter().find(|l| !targets.contains_key(l)) {
        return Err(Error::Validation(format!("no target flow for link {missing}")));
    }
    if let Some((l, v)) = targets.iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Validation(format!("target flow {v} on link {l} is negative")));
    }

    let pairs: Vec<OdPair> = if options.pairs.is_empty() {
        let nodes: Vec<NodeId> = network.nodes().collect();
        nodes
            .iter()
            .flat_map(|&o| nodes.iter().map(move |&d| (o, d)))
            .filter(|&(o, d)| o != d && free_flow_time(network, o, d).is_some())
            .collect()
    } else {
        options.pairs.clone()
    };
    let mut paths: BTreeMap<OdPair, Vec<LinkId>> = BTreeMap::new();
    for &(o, d) in pairs.iter().chain(options.fixed.keys()) {
        let p = dijkstra_route(network, |l| EdgeWeight::uniform(l.free_flow_time), o, d)
            .filter(|_| o != d)
            .ok_or_else(|| Error::Validation(format!("O-D pair {o}->{d} is not connected")))?;
        paths.insert((o, d), p.links);
    }
    let free: Vec<OdPair> = pairs.iter().copied().filter(|p| !options.fixed.contains_key(p)).collect();

    let row = |l: LinkId| links.iter().position(|x| *x == l).unwrap();
    let mut rhs = DVector::from_iterator(links.len(), links.iter().map(|l| targets[l] / period_hours));
    for (pair, &rate) in &options.fixed {
        for &l in &paths[pair] {
            rhs[row(l)] -= rate;
        }
    }
    let mut a = DMatrix::<f64>::zeros(links.len(), free.len());
    for (j, pair) in free.iter().enumerate() {
        for &l in &paths[pair] {
            a[(row(l), j)] = 1.0;
        }
    }

    let x = if free.is_empty() {
        DVector::zeros(0)
    } else {
        a.clone()
            .svd(true, true)
            .solve(&rhs, 1e-10)
            .map_err(|m| Error::Calibration {
                message: m.to_string(),
                residuals: Vec::new(),
            })?
    };
    let residual = &a * &x - &rhs;
    let tol = 1e-7 * (1.0 + rhs.amax());
    let bad: Vec<(u32, f64)> = links
        .iter()
        .zip(residual.iter())
        .filter(|(_, r)| r.abs() > tol)
        .map(|(l, r)| (l.0, *r))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Calibration {
            message: "targets cannot be reproduced by the O-D pairs".into(),
            residuals: bad,
        });
    }

    let mut rates: BTreeMap<OdPair, f64> = options.fixed.clone();
    for (pair, v) in free.iter().zip(x.iter()) {
        // clean round-off around zero
        let v = if v.abs() <= tol { 0.0 } else { *v };
        if v < 0.0 {
            return Err(Error::Calibration {
                message: format!("calibrated rate for {}->{} is negative ({v})", pair.0, pair.1),
                residuals: Vec::new(),
            });
        }
        rates.insert(*pair, v);
    }
    Ok(rates)
}

/// Hourly link flows implied by sending each O-D rate along its free-flow
/// shortest path.
pub fn assign_free_flow(network: &Network, rates: &BTreeMap<OdPair, f64>) -> BTreeMap<LinkId, f64> {
    let mut flows: BTreeMap<LinkId, f64> = network.link_ids().map(|l| (l, 0.0)).collect();
    for (&(o, d), &rate) in rates {
        if let Some(p) = dijkstra_route(network, |l| EdgeWeight::uniform(l.free_flow_time), o, d) {
            for l in p.links {
                *flows.get_mut(&l).unwrap() += rate;
            }
        }
    }
    flows
}

/// An unmatched rider driving alone instead.
pub fn fallback_to_driver(rider: &VehicleAgent) -> Result<VehicleAgent> {
    if rider.role != Role::Rider {
        return Err(Error::Contract(format!("agent {} is a {}, not a rider", rider.id, rider.role.as_str())));
    }
    if rider.matched == Some(true) {
        return Err(Error::Contract(format!("rider {} is already matched", rider.id)));
    }
    Ok(VehicleAgent {
        role: Role::RegularDriver,
        request_time: rider.window.earliest_departure,
        seats: 0,
        occupancy: 1,
        committed_route: Vec::new(),
        matched: Some(false),
        ..rider.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn testbed_targets() -> BTreeMap<LinkId, f64> {
        Network::la_testbed()
            .links()
            .iter()
            .map(|l| (l.id, l.observed_daily_flow))
            .collect()
    }

    fn pair(o: u32, d: u32) -> OdPair {
        (NodeId(o), NodeId(d))
    }

    #[test]
    fn testbed_calibration_solves_the_conservation_system() {
        let net = Network::la_testbed();
        let x = 26660.0 / 24.0;
        let opts = CalibrationOptions {
            pairs: Vec::new(),
            fixed: [(pair(0, 2), x)].into(),
        };
        let rates = calibrate_od_rates(&net, &testbed_targets(), 24.0, &opts).unwrap();
        assert_eq!(rates.len(), 5);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        assert!(close(rates[&pair(0, 3)], 12948.0 / 24.0));
        assert!(close(rates[&pair(1, 3)], 58343.0 / 24.0));
        assert!(close(rates[&pair(0, 1)] + rates[&pair(0, 2)], 53319.0 / 24.0));
        assert!(close(rates[&pair(0, 2)] + rates[&pair(1, 2)], 106058.0 / 24.0));
        assert_eq!(rates[&pair(0, 2)], x);

        let flows = assign_free_flow(&net, &rates);
        for l in net.links() {
            assert!((flows[&l.id] * 24.0 - l.observed_daily_flow).abs() < 1e-9 * l.observed_daily_flow);
        }
    }

    #[test]
    fn zero_targets_give_zero_rates() {
        let net = Network::la_testbed();
        let zero: BTreeMap<LinkId, f64> = net.link_ids().map(|l| (l, 0.0)).collect();
        let rates = calibrate_od_rates(&net, &zero, 24.0, &CalibrationOptions::default()).unwrap();
        assert!(rates.values().all(|&r| r == 0.0));
    }

    #[test]
    fn unused_link_with_flow_is_a_calibration_error() {
        let net = Network::la_testbed();
        let opts = CalibrationOptions {
            pairs: vec![pair(0, 1), pair(1, 2)],
            fixed: BTreeMap::new(),
        };
        match calibrate_od_rates(&net, &testbed_targets(), 24.0, &opts) {
            Err(Error::Calibration { residuals, .. }) => {
                let links: Vec<u32> = residuals.iter().map(|r| r.0).collect();
                assert!(links.contains(&0) && links.contains(&3));
            }
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    fn spec(shares: Shares, rate: f64) -> DemandSpec {
        DemandSpec {
            od_rates: [(pair(0, 2), rate)].into(),
            shares,
            window_flexibility: 0.25,
            horizon: 1.0,
            scale: 1.0,
            seats: 3,
        }
    }

    #[test]
    fn zero_rates_give_empty_schedule() {
        let s = generate_agents(&spec(Shares::RIDESHARING, 0.0), &Network::la_testbed(), 3).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn generation_is_reproducible_and_ordered() {
        let net = Network::la_testbed();
        let a = generate_agents(&spec(Shares::RIDESHARING, 60.0), &net, 11).unwrap();
        let b = generate_agents(&spec(Shares::RIDESHARING, 60.0), &net, 11).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.entries.windows(2).all(|w| w[0].0 <= w[1].0));
        assert!(a.entries.iter().all(|(t, _)| *t <= 1.0));
        let c = generate_agents(&spec(Shares::RIDESHARING, 60.0), &net, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn windows_admit_the_solo_trip() {
        let net = Network::la_testbed();
        let s = generate_agents(&spec(Shares::RIDESHARING, 200.0), &net, 5).unwrap();
        for a in s.iter() {
            a.window.validate().unwrap();
            let w = a.window;
            assert!((w.latest_arrival - w.earliest_departure - 0.72 - 0.25).abs() < 1e-12);
            assert!(w.latest_arrival - w.latest_departure >= 0.72 - 1e-12);
        }
    }

    #[test]
    fn role_counts_within_three_sigma() {
        let net = Network::la_testbed();
        let mut sp = spec(Shares::RIDESHARING, 10_000.0);
        sp.horizon = 1.0;
        let s = generate_agents(&sp, &net, 99).unwrap();
        let n = s.len() as f64;
        assert!((n - 10_000.0).abs() < 400.0);
        for (role, p) in [(Role::Rider, 0.1), (Role::RideshareDriver, 0.4), (Role::RegularDriver, 0.5)] {
            let k = s.count_role(role) as f64;
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((k - n * p).abs() <= 3.0 * sigma, "{role:?}: {k} vs {}", n * p);
        }
    }

    #[test]
    fn disconnected_pair_is_rejected() {
        let mut sp = spec(Shares::BASELINE, 10.0);
        sp.od_rates = [(pair(2, 0), 10.0)].into();
        assert!(matches!(generate_agents(&sp, &Network::la_testbed(), 1), Err(Error::Validation(_))));
    }

    #[test]
    fn invalid_shares_are_rejected() {
        let bad = Shares { rider: 0.2, driver: 0.4, regular: 0.5 };
        assert!(bad.validate().is_err());
        assert!(Shares::RIDESHARING.validate().is_ok());
    }

    #[test]
    fn fallback_copies_the_trip() {
        let net = Network::la_testbed();
        let mut sp = spec(Shares { rider: 1.0, driver: 0.0, regular: 0.0 }, 30.0);
        sp.scale = 1.0;
        let s = generate_agents(&sp, &net, 2).unwrap();
        let mut rider = s.entries[0].1.clone();
        rider.matched = Some(false);
        let d = fallback_to_driver(&rider).unwrap();
        assert_eq!(d.role, Role::RegularDriver);
        assert_eq!((d.origin, d.destination), (NodeId(0), NodeId(2)));
        assert_eq!(d.departure_time(), rider.window.earliest_departure);

        rider.matched = Some(true);
        assert!(matches!(fallback_to_driver(&rider), Err(Error::Contract(_))));
    }
}
