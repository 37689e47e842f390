//! Regions, zones and the instance catalog.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CloudError;
use crate::ids::{RegionId, ZoneId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub zones: Vec<ZoneId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: ZoneId,
    pub region: RegionId,
}

/// Validated region/zone map. Every region has at least one zone and zone
/// ids are globally unique.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Topology {
    regions: BTreeMap<RegionId, Region>,
    zones: BTreeMap<ZoneId, Zone>,
}

impl Topology {
    pub fn new(regions: impl IntoIterator<Item = Region>) -> Result<Self, CloudError> {
        let mut topo = Topology::default();
        for region in regions {
            if region.zones.is_empty() {
                return Err(CloudError::InvalidTopology(format!("region {} has no zones", region.id)));
            }
            if topo.regions.contains_key(&region.id) {
                return Err(CloudError::InvalidTopology(format!("duplicate region {}", region.id)));
            }
            for z in &region.zones {
                let zone = Zone { id: z.clone(), region: region.id.clone() };
                if topo.zones.insert(z.clone(), zone).is_some() {
                    return Err(CloudError::InvalidTopology(format!("duplicate zone {z}")));
                }
            }
            topo.regions.insert(region.id.clone(), region);
        }
        Ok(topo)
    }

    /// Ten zones across four regions; the default synthetic-market layout.
    pub fn ten_zone_default() -> Self {
        let spec: [(&str, &[&str]); 4] = [
            ("us-east-1", &["us-east-1a", "us-east-1b", "us-east-1e"]),
            ("us-west-1", &["us-west-1a", "us-west-1c"]),
            ("us-west-2", &["us-west-2a", "us-west-2b", "us-west-2c"]),
            ("eu-west-1", &["eu-west-1a", "eu-west-1b"]),
        ];
        Topology::new(spec.iter().map(|(r, zs)| Region {
            id: RegionId::from(*r),
            zones: zs.iter().map(|z| ZoneId::from(*z)).collect(),
        }))
        .expect("static topology is valid")
    }

    pub fn region_of(&self, zone: &ZoneId) -> Option<&RegionId> {
        self.zones.get(zone).map(|z| &z.region)
    }

    pub fn zone(&self, zone: &ZoneId) -> Option<&Zone> {
        self.zones.get(zone)
    }

    pub fn region(&self, region: &RegionId) -> Option<&Region> {
        self.regions.get(region)
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    /// All zones in lexicographic id order.
    pub fn zones(&self) -> impl Iterator<Item = &Zone> {
        self.zones.values()
    }

    pub fn zones_in(&self, region: &RegionId) -> Vec<ZoneId> {
        self.zones.values().filter(|z| &z.region == region).map(|z| z.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTypeSpec {
    pub name: String,
    pub vcpus: u32,
    pub memory_gib: f64,
    /// Base on-demand price, used for any region without an override.
    pub on_demand_price_per_hour: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub region_prices: BTreeMap<RegionId, f64>,
}

impl InstanceTypeSpec {
    pub fn new(name: impl Into<String>, vcpus: u32, memory_gib: f64, price: f64) -> Self {
        InstanceTypeSpec {
            name: name.into(),
            vcpus,
            memory_gib,
            on_demand_price_per_hour: price,
            region_prices: BTreeMap::new(),
        }
    }

    pub fn on_demand_price(&self, region: Option<&RegionId>) -> f64 {
        region
            .and_then(|r| self.region_prices.get(r))
            .copied()
            .unwrap_or(self.on_demand_price_per_hour)
    }

    fn validate(&self) -> Result<(), CloudError> {
        if self.vcpus < 1 {
            return Err(CloudError::Config(format!("{}: vcpus must be >= 1", self.name)));
        }
        let prices = std::iter::once(self.on_demand_price_per_hour).chain(self.region_prices.values().copied());
        for p in prices {
            if !(p > 0.0 && p.is_finite()) {
                return Err(CloudError::Config(format!("{}: on-demand price must be > 0", self.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Catalog {
    types: BTreeMap<String, InstanceTypeSpec>,
}

impl Catalog {
    pub fn new(types: impl IntoIterator<Item = InstanceTypeSpec>) -> Result<Self, CloudError> {
        let mut cat = Catalog::default();
        for t in types {
            t.validate()?;
            if cat.types.contains_key(&t.name) {
                return Err(CloudError::Config(format!("duplicate instance type {}", t.name)));
            }
            cat.types.insert(t.name.clone(), t);
        }
        Ok(cat)
    }

    pub fn get(&self, name: &str) -> Option<&InstanceTypeSpec> {
        self.types.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &InstanceTypeSpec> {
        self.types.values()
    }
}

/// On-disk catalog: regions with their zones, and instance types.
///
/// ```toml
/// [[region]]
/// id = "us-east-1"
/// zones = ["us-east-1a", "us-east-1b"]
///
/// [[instance_type]]
/// name = "m-std"
/// vcpus = 4
/// memory_gib = 16.0
/// on_demand_price_per_hour = 0.239
/// region_prices = { "us-west-1" = 0.279 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogConfig {
    #[serde(rename = "region")]
    pub regions: Vec<Region>,
    #[serde(rename = "instance_type")]
    pub instance_types: Vec<InstanceTypeSpec>,
}

impl CatalogConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CloudError> {
        toml::from_str(s).map_err(|e| CloudError::Config(e.to_string()))
    }

    pub fn build(self) -> Result<(Topology, Catalog), CloudError> {
        let topo = Topology::new(self.regions)?;
        let cat = Catalog::new(self.instance_types)?;
        for t in cat.iter() {
            for r in t.region_prices.keys() {
                if topo.region(r).is_none() {
                    return Err(CloudError::Config(format!("{}: price for unknown region {r}", t.name)));
                }
            }
        }
        Ok((topo, cat))
    }
}
