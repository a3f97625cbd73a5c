//! In-memory chaining of the stages: raw records to clean series, then to a
//! standardized, grouped panel.

use std::collections::BTreeMap;

use crate::calendar::TradingCalendar;
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::grouping::{group_daily_panel, group_panel, GroupCutoffs};
use crate::ingest::{
    adjust_timestamps, apply_filters, prepare_ticks, CleanData, Exclusion, FilterLedger, RawSnapshot, SecurityMeta,
    TradeTick, VenueTable,
};
use crate::panel::{build_daily_panel, build_panel, BuildStats, DailyPanel, MarketSeries, Panel};
use crate::volatility::{standardize_daily_panel, standardize_panel, VolatilityOutput};

/// Everything the ingest stage reads.
#[derive(Debug, Clone, Default)]
pub struct RawInputs {
    pub snapshots: Vec<RawSnapshot>,
    pub ticks: Vec<TradeTick>,
    pub meta: BTreeMap<String, SecurityMeta>,
    pub venues: VenueTable,
    pub exclusions: Vec<Exclusion>,
}

/// Delay correction, tick preparation and the filter steps.
pub fn ingest(raw: RawInputs, cfg: &PipelineConfig, cal: &TradingCalendar) -> Result<(CleanData, FilterLedger)> {
    let snapshots = adjust_timestamps(raw.snapshots, cfg.delay_minutes)?;
    let ticks = prepare_ticks(raw.ticks, &raw.meta, &raw.venues, cal);
    apply_filters(snapshots, &ticks, &raw.meta, cfg, cal, &raw.exclusions)
}

#[derive(Debug, Clone)]
pub struct StandardizedPanel {
    pub panel: Panel,
    pub market: MarketSeries,
    pub build: BuildStats,
    pub volatility: VolatilityOutput,
    pub cutoffs: GroupCutoffs,
}

/// Panel assembly, volatility standardization and return grouping.
pub fn standardized_panel(clean: &CleanData, cfg: &PipelineConfig, cal: &TradingCalendar) -> Result<StandardizedPanel> {
    let (mut panel, mut market, build) = build_panel(clean, cfg)?;
    let volatility = standardize_panel(&mut panel, &mut market, &clean.ticks, &clean.market_ticker, cal)?;
    let cutoffs = group_panel(&mut panel)?;
    Ok(StandardizedPanel { panel, market, build, volatility, cutoffs })
}

#[derive(Debug, Clone)]
pub struct StandardizedDailyPanel {
    pub panel: DailyPanel,
    pub market: MarketSeries,
    pub volatility: VolatilityOutput,
    pub cutoffs: GroupCutoffs,
}

pub fn standardized_daily_panel(clean: &CleanData, cfg: &PipelineConfig) -> Result<StandardizedDailyPanel> {
    let (mut panel, mut market) = build_daily_panel(clean, cfg)?;
    let volatility = standardize_daily_panel(&mut panel, &mut market)?;
    let cutoffs = group_daily_panel(&mut panel)?;
    Ok(StandardizedDailyPanel { panel, market, volatility, cutoffs })
}
