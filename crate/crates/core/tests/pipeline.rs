use retail_flow::behaviors::{compare_levels, default_contrasts, proxy_table, Proxy};
use retail_flow::calendar::TradingCalendar;
use retail_flow::pipeline::{ingest, standardized_daily_panel, standardized_panel};
use retail_flow::regression::{run_daily, run_spec_suite, Dependent, RegressionData, SubgroupDef};
use retail_flow::synth::{simulate, DgpConfig};

fn cfg() -> DgpConfig {
    DgpConfig { n_stocks: 24, n_days: 245, seed: 21, ..DgpConfig::default() }
}

#[test]
fn high_frequency_and_daily_suites_on_synthetic_data() {
    let cfg = cfg();
    let pcfg = cfg.pipeline_config();
    let cal = TradingCalendar::bundled();
    let sim = simulate(&cfg).unwrap();
    let (clean, ledger) = ingest(sim.raw, &pcfg, &cal).unwrap();
    assert!(ledger.no_attrition());

    let sp = standardized_panel(&clean, &pcfg, &cal).unwrap();
    assert_eq!(sp.panel.rows.len(), sim.truth.panel_rows);
    for dep in [Dependent::DeltaN, Dependent::DeltaNDetrended] {
        let data = RegressionData::from_panel(&sp.panel, &sp.market, dep).unwrap();
        let fits = run_spec_suite(&data, SubgroupDef::None, true).unwrap();
        assert_eq!(fits[0].n_obs, sim.truth.sample_rows);
        // extreme past returns attract more openings than moderate ones
        let ext = proxy_table(&fits).unwrap();
        let ext1 = ext.iter().find(|p| p.proxy == Proxy::Ext && p.lag == Some(1)).unwrap();
        assert!(ext1.value_bps > 0.0 && ext1.p_value < 0.05, "{ext1:?}");
    }

    let data = RegressionData::from_panel(&sp.panel, &sp.market, Dependent::DeltaN).unwrap();
    for def in [SubgroupDef::Kind, SubgroupDef::Covid, SubgroupDef::Size] {
        let fits = run_spec_suite(&data, def, true);
        if def == SubgroupDef::Covid {
            // the simulated window ends before the outbreak boundary
            assert!(fits.is_err());
            continue;
        }
        let fits = fits.unwrap();
        let rows = compare_levels(&fits, &default_contrasts(def.name(), &fits[0].levels)).unwrap();
        assert!(rows.iter().all(|r| r.value_bps.is_finite() && r.std_error_bps > 0.0));
    }

    let daily = standardized_daily_panel(&clean, &pcfg).unwrap();
    let data = RegressionData::from_daily(&daily.panel, &daily.market).unwrap();
    let fits = run_daily(&data, SubgroupDef::None, true).unwrap();
    assert_eq!(fits.len(), 6);
    assert!(fits.iter().all(|f| f.n_obs == fits[0].n_obs && f.n_clusters == cfg.n_stocks));
    assert!(run_daily(&data, SubgroupDef::Kind, true).is_err());
}
