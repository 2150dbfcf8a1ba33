//! Highway network: nodes, directed links and the BPR volume-delay function.
//!
//! Networks are read from a TOML file with a `nodes` list and a `links` array.
//! Unknown keys are rejected. Lane counts, lane capacities and tolls are
//! optional per link and fall back to [`DEFAULT_GENERAL_LANES`],
//! [`DEFAULT_LANE_CAPACITY`] and a zero toll.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GENERAL_LANES: u32 = 4;
/// Vehicles per hour per lane.
pub const DEFAULT_LANE_CAPACITY: f64 = 2000.0;
/// Upper bound on the implied free-flow speed, in mph.
pub const MAX_FREE_FLOW_SPEED: f64 = 100.0;

/// Bundled Los Angeles County testbed (four directed freeway links).
pub const LA_TESTBED_TOML: &str = include_str!("../data/la_testbed.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneClass {
    General,
    Carpool,
}

impl LaneClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LaneClass::General => "general",
            LaneClass::Carpool => "carpool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TollPeriod {
    /// Hour of day (or simulation hour) at which this price starts to apply.
    pub from: f64,
    pub amount: f64,
}

/// Link toll, either flat or a piecewise-constant schedule over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Toll {
    Flat(f64),
    Schedule(Vec<TollPeriod>),
}

impl Default for Toll {
    fn default() -> Self {
        Toll::Flat(0.0)
    }
}

impl Toll {
    pub fn at(&self, time: f64) -> f64 {
        match self {
            Toll::Flat(v) => *v,
            Toll::Schedule(periods) => periods
                .iter()
                .filter(|p| p.from <= time)
                .max_by(|a, b| a.from.total_cmp(&b.from))
                .map_or(0.0, |p| p.amount),
        }
    }

    fn min_amount(&self) -> f64 {
        match self {
            Toll::Flat(v) => *v,
            Toll::Schedule(periods) => periods
                .iter()
                .map(|p| p.amount)
                .fold(0.0, f64::min),
        }
    }
}

fn default_lanes() -> u32 {
    DEFAULT_GENERAL_LANES
}

fn default_capacity() -> f64 {
    DEFAULT_LANE_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Miles.
    pub length: f64,
    /// Hours.
    pub free_flow_time: f64,
    #[serde(default)]
    pub has_carpool_lane: bool,
    #[serde(default = "default_lanes")]
    pub general_lanes: u32,
    /// Vehicles per hour per lane.
    #[serde(default = "default_capacity")]
    pub lane_capacity: f64,
    #[serde(default)]
    pub toll: Toll,
    /// Vehicles per 24 hours.
    #[serde(default)]
    pub observed_daily_flow: f64,
}

impl Link {
    pub fn free_flow_speed(&self) -> f64 {
        self.length / self.free_flow_time
    }

    pub fn lanes(&self, class: LaneClass) -> u32 {
        match class {
            LaneClass::General => self.general_lanes,
            LaneClass::Carpool => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Validation(format!("link {}: {what}", self.id)));
        if !(self.length > 0.0 && self.length.is_finite()) {
            return fail("length must be positive");
        }
        if !(self.free_flow_time > 0.0 && self.free_flow_time.is_finite()) {
            return fail("free_flow_time must be positive");
        }
        let speed = self.free_flow_speed();
        if !(speed > 0.0 && speed <= MAX_FREE_FLOW_SPEED) {
            return fail(&format!("implied free-flow speed {speed:.1} mph outside (0, 100]"));
        }
        if self.from == self.to {
            return fail("from and to must differ");
        }
        if self.general_lanes == 0 {
            return fail("general_lanes must be at least 1");
        }
        if !(self.lane_capacity > 0.0 && self.lane_capacity.is_finite()) {
            return fail("lane_capacity must be positive");
        }
        if self.toll.min_amount() < 0.0 {
            return fail("toll must be non-negative");
        }
        if !(self.observed_daily_flow >= 0.0) {
            return fail("observed_daily_flow must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    name: Option<String>,
    nodes: Vec<NodeId>,
    links: Vec<Link>,
}

/// Directed highway graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    nodes: BTreeSet<NodeId>,
    links: Vec<Link>,
    index: BTreeMap<LinkId, usize>,
    adjacency: BTreeMap<NodeId, Vec<LinkId>>,
}

impl Network {
    pub fn new(name: impl Into<String>, nodes: Vec<NodeId>, links: Vec<Link>) -> Result<Self> {
        let mut node_set = BTreeSet::new();
        for n in &nodes {
            if !node_set.insert(*n) {
                return Err(Error::Validation(format!("duplicate node id {n}")));
            }
        }
        let mut index = BTreeMap::new();
        let mut adjacency: BTreeMap<NodeId, Vec<LinkId>> =
            node_set.iter().map(|n| (*n, Vec::new())).collect();
        for (i, link) in links.iter().enumerate() {
            link.validate()?;
            for end in [link.from, link.to] {
                if !node_set.contains(&end) {
                    return Err(Error::Validation(format!(
                        "link {}: endpoint node {end} does not exist",
                        link.id
                    )));
                }
            }
            if index.insert(link.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate link id {}", link.id)));
            }
            adjacency.entry(link.from).or_default().push(link.id);
        }
        for out in adjacency.values_mut() {
            out.sort();
        }
        Ok(Network {
            name: name.into(),
            nodes: node_set,
            links,
            index,
            adjacency,
        })
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let file: NetworkFile =
            toml::from_str(text).map_err(|e| Error::from_toml(origin, e, text))?;
        let name = file.name.unwrap_or_else(|| {
            origin
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        Network::new(name, file.nodes, file.links)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// The bundled four-link testbed.
    pub fn la_testbed() -> Self {
        Self::from_toml_str(LA_TESTBED_TOML, Path::new("la_testbed.toml"))
            .expect("bundled testbed is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains_node(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[self.index[&id]]
    }

    pub fn get_link(&self, id: LinkId) -> Option<&Link> {
        self.index.get(&id).map(|&i| &self.links[i])
    }

    /// Outgoing link ids of `node`, sorted ascending.
    pub fn outgoing(&self, node: NodeId) -> &[LinkId] {
        self.adjacency.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.index.keys().copied()
    }

    pub fn has_carpool_link(&self) -> bool {
        self.links.iter().any(|l| l.has_carpool_lane)
    }

    pub fn total_length(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    pub fn total_free_flow_time(&self) -> f64 {
        self.links.iter().map(|l| l.free_flow_time).sum()
    }

    pub fn total_observed_flow(&self) -> f64 {
        self.links.iter().map(|l| l.observed_daily_flow).sum()
    }
}

/// Share of each link in the total count. Fails when every count is zero.
pub fn flow_distribution<C>(counts: &BTreeMap<LinkId, C>) -> Result<BTreeMap<LinkId, f64>>
where
    C: Copy + Into<f64>,
{
    let mut total = 0.0;
    for (id, &c) in counts {
        let c: f64 = c.into();
        if c < 0.0 || !c.is_finite() {
            return Err(Error::Domain(format!("count on link {id} is {c}")));
        }
        total += c;
    }
    if total <= 0.0 {
        return Err(Error::Domain("flow distribution of all-zero counts".into()));
    }
    Ok(counts
        .iter()
        .map(|(id, &c)| (*id, c.into() / total))
        .collect())
}

/// BPR volume-delay function `t0 * (1 + alpha * (v / c)^beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeDelay {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for VolumeDelay {
    fn default() -> Self {
        VolumeDelay {
            alpha: 0.15,
            beta: 4.0,
        }
    }
}

impl VolumeDelay {
    /// Traversal time in hours for `flow` vehicles/hour on one lane class of `link`.
    pub fn travel_time(&self, link: &Link, class: LaneClass, flow: f64) -> Result<f64> {
        if !(flow >= 0.0) {
            return Err(Error::Domain(format!("negative flow {flow} on link {}", link.id)));
        }
        let capacity = f64::from(link.lanes(class)) * link.lane_capacity;
        let ratio = flow / capacity;
        Ok(link.free_flow_time * (1.0 + self.alpha * ratio.powf(self.beta)))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Validation(format!(
                "BPR parameters must be non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(id: u32, from: u32, to: u32) -> Link {
        Link {
            id: LinkId(id),
            from: NodeId(from),
            to: NodeId(to),
            length: 10.0,
            free_flow_time: 0.2,
            has_carpool_lane: false,
            general_lanes: 4,
            lane_capacity: 2000.0,
            toll: Toll::default(),
            observed_daily_flow: 0.0,
        }
    }

    #[test]
    fn testbed_matches_table() {
        let net = Network::la_testbed();
        assert_eq!(net.nodes().count(), 4);
        assert_eq!(net.links().len(), 4);
        assert!(net.link(LinkId(2)).has_carpool_lane);
        assert_eq!(net.links().iter().filter(|l| l.has_carpool_lane).count(), 1);
        assert!((net.total_length() - 125.1).abs() < 1e-9);
        assert!((net.total_free_flow_time() - 1.91).abs() < 1e-9);
        assert_eq!(net.total_observed_flow(), 230_668.0);
        for l in net.links() {
            let v = l.free_flow_speed();
            assert!((64.0..=67.0).contains(&v), "link {} speed {v}", l.id);
        }
        assert_eq!(net.outgoing(NodeId(0)), &[LinkId(0), LinkId(1)]);
        assert_eq!(net.outgoing(NodeId(2)), &[] as &[LinkId]);
    }

    #[test]
    fn rejects_negative_length() {
        let mut l = link(0, 0, 1);
        l.length = -1.0;
        let err = Network::new("x", vec![NodeId(0), NodeId(1)], vec![l]).unwrap_err();
        assert!(err.to_string().contains("link 0"), "{err}");
    }

    #[test]
    fn rejects_dangling_endpoint() {
        let err = Network::new("x", vec![NodeId(0), NodeId(1)], vec![link(3, 0, 9)]).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("link 3") && m.contains('9')));
    }

    #[test]
    fn rejects_self_loop_and_fast_links() {
        assert!(Network::new("x", vec![NodeId(0)], vec![link(0, 0, 0)]).is_err());
        let mut l = link(0, 0, 1);
        l.free_flow_time = 0.05; // 200 mph
        assert!(Network::new("x", vec![NodeId(0), NodeId(1)], vec![l]).is_err());
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let text = "nodes = [0, 1]\n[[links]]\nid = 0\nfrom = 0\nto = 1\nlength = 1.0\nfree_flow_time = 0.02\nlanes = 3\n";
        let err = Network::from_toml_str(text, Path::new("bad.toml")).unwrap_err();
        match err {
            Error::Parse { location, message, .. } => {
                assert!(location.starts_with("line"), "{location}");
                assert!(message.contains("lanes"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn toll_schedule_lookup() {
        let toll = Toll::Schedule(vec![
            TollPeriod { from: 6.0, amount: 2.0 },
            TollPeriod { from: 10.0, amount: 0.5 },
        ]);
        assert_eq!(toll.at(5.0), 0.0);
        assert_eq!(toll.at(7.0), 2.0);
        assert_eq!(toll.at(12.0), 0.5);
    }

    #[test]
    fn flow_distribution_examples() {
        let counts: BTreeMap<LinkId, f64> = [(0, 12948.0), (1, 53319.0), (2, 106058.0), (3, 58343.0)]
            .into_iter()
            .map(|(k, v)| (LinkId(k), v))
            .collect();
        let d = flow_distribution(&counts).unwrap();
        let rounded: Vec<f64> = d.values().map(|p| (p * 1000.0).round() / 1000.0).collect();
        assert_eq!(rounded, vec![0.056, 0.231, 0.460, 0.253]);
        assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-12);

        let sym: BTreeMap<LinkId, u32> = [(LinkId(0), 5), (LinkId(1), 5)].into();
        let d = flow_distribution(&sym).unwrap();
        assert_eq!(d[&LinkId(0)], 0.5);

        let degenerate: BTreeMap<LinkId, u32> =
            [(LinkId(0), 1), (LinkId(1), 0), (LinkId(2), 0), (LinkId(3), 0)].into();
        assert_eq!(flow_distribution(&degenerate).unwrap()[&LinkId(0)], 1.0);

        let zero: BTreeMap<LinkId, u32> = [(LinkId(0), 0)].into();
        assert!(matches!(flow_distribution(&zero), Err(Error::Domain(_))));
    }

    #[test]
    fn volume_delay_examples() {
        let net = Network::la_testbed();
        let bpr = VolumeDelay::default();
        for l in net.links() {
            assert_eq!(bpr.travel_time(l, LaneClass::General, 0.0).unwrap(), l.free_flow_time);
        }
        let l1 = net.link(LinkId(1));
        let cap = f64::from(l1.general_lanes) * l1.lane_capacity;
        let t = bpr.travel_time(l1, LaneClass::General, cap).unwrap();
        assert!((t - 0.253).abs() < 1e-12);

        let l2 = net.link(LinkId(2));
        let t = bpr.travel_time(l2, LaneClass::Carpool, 0.5 * l2.lane_capacity).unwrap();
        // 0.50 * (1 + 0.15 * 0.5^4)
        assert!((t - 0.504_687_5).abs() < 1e-12);
        assert!((t - 0.5047).abs() < 1e-4);

        assert!(matches!(
            bpr.travel_time(l1, LaneClass::General, -1.0),
            Err(Error::Domain(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn volume_delay_is_monotone(a in 0.0f64..20_000.0, b in 0.0f64..20_000.0, idx in 0usize..4, carpool: bool) {
            let net = Network::la_testbed();
            let l = &net.links()[idx];
            let class = if carpool { LaneClass::Carpool } else { LaneClass::General };
            let bpr = VolumeDelay::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(bpr.travel_time(l, class, lo).unwrap() <= bpr.travel_time(l, class, hi).unwrap());
        }

        #[test]
        fn distribution_sums_to_one(counts in proptest::collection::vec(0u32..100_000, 1..8)) {
            proptest::prop_assume!(counts.iter().any(|&c| c > 0));
            let m: BTreeMap<LinkId, u32> = counts.iter().enumerate().map(|(i, &c)| (LinkId(i as u32), c)).collect();
            let d = flow_distribution(&m).unwrap();
            proptest::prop_assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(d.values().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
