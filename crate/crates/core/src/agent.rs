use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matching::TimeWindow;
use crate::network::{LinkId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    RegularDriver,
    RideshareDriver,
    Rider,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::RegularDriver => "regular_driver",
            Role::RideshareDriver => "rideshare_driver",
            Role::Rider => "rider",
        }
    }
}

/// A traveller in the simulation. Riders never drive unless they fall back to
/// driving alone; rideshare drivers carry up to `seats` riders.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleAgent {
    pub id: AgentId,
    pub role: Role,
    pub origin: NodeId,
    pub destination: NodeId,
    pub request_time: f64,
    pub window: TimeWindow,
    pub seats: u32,
    pub occupancy: u32,
    /// Planned (link, entry time) pairs; empty until a driver commits to a route.
    pub committed_route: Vec<(LinkId, f64)>,
    /// Set once a rider has been through matching.
    pub matched: Option<bool>,
}

impl VehicleAgent {
    pub fn departure_time(&self) -> f64 {
        self.window.earliest_departure
    }
}
