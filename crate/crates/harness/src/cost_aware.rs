//! Month-long placement of a one-hour task per hour under four search
//! scopes, priced as instance price plus inter-region transfer.

use std::collections::BTreeMap;

use enclave_core::cloudsim::{Topology, TraceSet};
use enclave_core::provisioner::{quote, MarketKind, MarketView, PlacementScope, TransferParams, DEFAULT_TRANSFER_COST_PER_GB};
use enclave_core::time::{SimDuration, SimTime};
use enclave_core::workload::TraceSynthesis;
use enclave_core::{RegionId, ZoneId};
use serde::{Deserialize, Serialize};

use crate::config::TraceSource;
use crate::fixture::default_catalog;
use crate::report::Report;
use crate::scaling::savings_pct;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostAwareConfig {
    pub instance_type: String,
    pub volumes_gb: Vec<f64>,
    pub transfer_cost_per_gb: f64,
    pub duration_days: u32,
    pub data_region: RegionId,
    pub traces: TraceSource,
}

impl Default for CostAwareConfig {
    fn default() -> Self {
        CostAwareConfig {
            instance_type: "c4.8xlarge".into(),
            volumes_gb: vec![0.0, 10.0, 50.0, 100.0, 500.0],
            transfer_cost_per_gb: DEFAULT_TRANSFER_COST_PER_GB,
            duration_days: 30,
            data_region: RegionId::from("us-east-1"),
            traces: TraceSource::Synthetic(TraceSynthesis { seed: 7, ..TraceSynthesis::default() }),
        }
    }
}

impl CostAwareConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_owned()));
        if self.volumes_gb.is_empty() || self.volumes_gb.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("volumes_gb must be non-empty and non-negative");
        }
        if !(self.transfer_cost_per_gb >= 0.0) {
            return bad("transfer_cost_per_gb must be non-negative");
        }
        if self.duration_days == 0 {
            return bad("duration_days must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementStrategy {
    /// The single data-region zone with the lowest monthly bill.
    CheapestInAz,
    /// The single data-region zone with the highest monthly bill.
    MostExpensiveInAz,
    /// Each hour, the cheapest zone of the data region.
    CheapestAcrossAzs,
    /// Each hour, the cheapest zone anywhere, transfer included.
    CheapestAcrossRegions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAwareRow {
    pub strategy: PlacementStrategy,
    pub volume_gb: f64,
    pub monthly_cost: f64,
    pub instance_cost: f64,
    pub transfer_cost: f64,
    /// Saving against the cheapest single zone.
    pub savings_pct: f64,
    /// Hours placed outside the data region.
    pub remote_hours: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsPoint {
    pub volume_gb: f64,
    pub cross_az_savings_pct: f64,
    pub cross_region_savings_pct: f64,
    /// Extra saving from searching other regions on top of other zones.
    pub region_over_az_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAwareReport {
    pub instance_type: String,
    pub data_region: RegionId,
    pub hours: u32,
    pub cheapest_zone: ZoneId,
    pub most_expensive_zone: ZoneId,
    pub rows: Vec<CostAwareRow>,
    pub series: Vec<SavingsPoint>,
}

impl CostAwareReport {
    pub fn cost(&self, strategy: PlacementStrategy, volume_gb: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.strategy == strategy && r.volume_gb == volume_gb).map(|r| r.monthly_cost)
    }
}

#[derive(Default, Clone, Copy)]
struct Bill {
    instance: f64,
    transfer: f64,
    remote_hours: u32,
}

impl Bill {
    fn total(&self) -> f64 {
        self.instance + self.transfer
    }
}

fn bill(
    market: MarketView<'_>,
    scope: &PlacementScope,
    cfg: &CostAwareConfig,
    volume_gb: f64,
    hours: &[SimTime],
) -> Result<Bill, HarnessError> {
    let transfer = TransferParams::symmetric(volume_gb, cfg.transfer_cost_per_gb);
    let mut b = Bill::default();
    for &t in hours {
        let q = quote(market, MarketKind::Spot, scope, &cfg.instance_type, t, transfer, &cfg.data_region)?;
        b.instance += q.p_i;
        b.transfer += q.p_transfer;
        if market.topology.region_of(&q.zone) != Some(&cfg.data_region) {
            b.remote_hours += 1;
        }
    }
    Ok(b)
}

pub fn run_with_traces(cfg: &CostAwareConfig, topology: &Topology, traces: &TraceSet) -> Result<CostAwareReport, HarnessError> {
    cfg.validate()?;
    let catalog = default_catalog();
    if catalog.get(&cfg.instance_type).is_none() {
        return Err(HarnessError::Config(format!("unknown instance type {}", cfg.instance_type)));
    }
    let market = MarketView::new(topology, &catalog, traces);
    let start = traces.common_start().ok_or_else(|| HarnessError::Config("empty trace set".into()))?;
    let n = cfg.duration_days * 24;
    let hours: Vec<SimTime> = (0..n).map(|h| start + SimDuration::from_hours(h as i64)).collect();
    let last = *hours.last().expect("n > 0");
    if traces.iter().any(|t| t.instance_type == cfg.instance_type && t.last_sample_time() < last) {
        return Err(HarnessError::Config("traces do not cover the simulated period".into()));
    }

    let local = topology.zones_in(&cfg.data_region);
    if local.is_empty() {
        return Err(HarnessError::Config(format!("data region {} has no zones", cfg.data_region)));
    }
    // single-zone bills are the same at every volume: no transfer in-region
    let mut fixed: BTreeMap<ZoneId, Bill> = BTreeMap::new();
    for z in &local {
        fixed.insert(z.clone(), bill(market, &PlacementScope::SingleZone(z.clone()), cfg, 0.0, &hours)?);
    }
    let pick = |better: fn(f64, f64) -> bool| {
        let mut best: Option<(&ZoneId, &Bill)> = None;
        for (z, b) in &fixed {
            if best.is_none_or(|(_, bb)| better(b.total(), bb.total())) {
                best = Some((z, b));
            }
        }
        best.map(|(z, b)| (z.clone(), *b)).expect("local zones exist")
    };
    let (cheap_zone, cheap) = pick(|a, b| a < b);
    let (dear_zone, dear) = pick(|a, b| a > b);
    let cross_az = bill(market, &PlacementScope::CrossZone(cfg.data_region.clone()), cfg, 0.0, &hours)?;
    let all_regions = PlacementScope::CrossRegion(topology.regions().map(|r| r.id.clone()).collect());

    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &v in &cfg.volumes_gb {
        let cross_region = bill(market, &all_regions, cfg, v, &hours)?;
        let base = cheap.total();
        for (strategy, b) in [
            (PlacementStrategy::CheapestInAz, cheap),
            (PlacementStrategy::MostExpensiveInAz, dear),
            (PlacementStrategy::CheapestAcrossAzs, cross_az),
            (PlacementStrategy::CheapestAcrossRegions, cross_region),
        ] {
            rows.push(CostAwareRow {
                strategy,
                volume_gb: v,
                monthly_cost: b.total(),
                instance_cost: b.instance,
                transfer_cost: b.transfer,
                savings_pct: savings_pct(base, b.total()),
                remote_hours: b.remote_hours,
            });
        }
        let az = savings_pct(base, cross_az.total());
        let region = savings_pct(base, cross_region.total());
        series.push(SavingsPoint {
            volume_gb: v,
            cross_az_savings_pct: az,
            cross_region_savings_pct: region,
            region_over_az_pct: region - az,
        });
    }
    Ok(CostAwareReport {
        instance_type: cfg.instance_type.clone(),
        data_region: cfg.data_region.clone(),
        hours: n,
        cheapest_zone: cheap_zone,
        most_expensive_zone: dear_zone,
        rows,
        series,
    })
}

pub fn run_cost_aware_experiment(cfg: &CostAwareConfig) -> Result<CostAwareReport, HarnessError> {
    let topology = Topology::ten_zone_default();
    let traces = cfg.traces.load(&topology)?;
    run_with_traces(cfg, &topology, &traces)
}

impl Report for CostAwareReport {
    type Row = CostAwareRow;
    const STEM: &'static str = "cost_aware";
    fn csv_rows(&self) -> Vec<CostAwareRow> {
        self.rows.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use enclave_core::cloudsim::SpotPriceTrace;

    fn flat(zone: &str, price: f64) -> SpotPriceTrace {
        let samples = (0..=48).map(|h| (SimTime::EPOCH + SimDuration::from_hours(h), price)).collect();
        SpotPriceTrace::new(zone.into(), "c4.8xlarge", samples).unwrap()
    }

    fn cfg(volumes: Vec<f64>) -> CostAwareConfig {
        CostAwareConfig { volumes_gb: volumes, duration_days: 1, ..CostAwareConfig::default() }
    }

    #[test]
    fn hand_built_market() {
        let topo = Topology::ten_zone_default();
        let traces: TraceSet = topo
            .zones()
            .map(|z| {
                let p = match z.id.as_str() {
                    "us-east-1a" => 0.50,
                    "us-east-1b" => 0.70,
                    "us-east-1e" => 0.60,
                    "eu-west-1a" => 0.30,
                    _ => 0.90,
                };
                flat(z.id.as_str(), p)
            })
            .collect();
        let r = run_with_traces(&cfg(vec![0.0, 1.0, 10.0]), &topo, &traces).unwrap();
        assert_eq!(r.cheapest_zone, ZoneId::from("us-east-1a"));
        assert_eq!(r.most_expensive_zone, ZoneId::from("us-east-1b"));
        let c = |s, v| r.cost(s, v).unwrap();
        assert!((c(PlacementStrategy::CheapestInAz, 0.0) - 24.0 * 0.50).abs() < 1e-9);
        assert!((c(PlacementStrategy::MostExpensiveInAz, 0.0) - 24.0 * 0.70).abs() < 1e-9);
        assert!((c(PlacementStrategy::CheapestAcrossRegions, 0.0) - 24.0 * 0.30).abs() < 1e-9);
        // 1 GB each way costs 0.04 per hour; eu-west still wins at 0.34
        assert!((c(PlacementStrategy::CheapestAcrossRegions, 1.0) - 24.0 * 0.34).abs() < 1e-9);
        // 10 GB each way costs 0.40 per hour; staying local at 0.50 wins
        assert!((c(PlacementStrategy::CheapestAcrossRegions, 10.0) - 24.0 * 0.50).abs() < 1e-9);
        assert_eq!(r.series[2].region_over_az_pct, 0.0);
    }

    #[test]
    fn scope_order_at_zero_volume_and_monotone_gap() {
        let r = run_cost_aware_experiment(&CostAwareConfig { duration_days: 30, ..CostAwareConfig::default() }).unwrap();
        let c = |s| r.cost(s, 0.0).unwrap();
        assert!(c(PlacementStrategy::CheapestAcrossRegions) <= c(PlacementStrategy::CheapestAcrossAzs));
        assert!(c(PlacementStrategy::CheapestAcrossAzs) <= c(PlacementStrategy::CheapestInAz));
        assert!(c(PlacementStrategy::CheapestInAz) <= c(PlacementStrategy::MostExpensiveInAz));
        for w in r.series.windows(2) {
            assert!(w[1].region_over_az_pct <= w[0].region_over_az_pct);
        }
    }

    #[test]
    fn short_traces_are_rejected() {
        let topo = Topology::ten_zone_default();
        let traces: TraceSet = topo.zones().map(|z| flat(z.id.as_str(), 0.5)).collect();
        let long = CostAwareConfig { duration_days: 5, ..cfg(vec![0.0]) };
        assert!(matches!(run_with_traces(&long, &topo, &traces), Err(HarnessError::Config(_))));
    }
}
