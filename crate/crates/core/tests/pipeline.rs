use chrono::NaiveDate;
use proptest::prelude::*;
use volregime::changepoint::ThresholdTable;
use volregime::market_data::{load_prices, log_returns};
use volregime::regimes::{fit_regimes, regime_report, RegimeConfig};
use volregime::spectral::ClusterMethod;
use volregime::strategy::{run_backtest, Holding, StrategyConfig, StrategyKind};
use volregime::synthetic::{generate_two_asset_world, TwoAssetSpec};

#[test]
fn csv_round_trip_feeds_the_regime_model() {
    let world = generate_two_asset_world(&TwoAssetSpec::default(), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("risk.csv");
    world.risk.write_csv(&path).unwrap();
    let loaded = load_prices(&path, "RISK").unwrap();
    assert_eq!(loaded.dates(), world.risk.dates());

    let returns = log_returns(&loaded).unwrap();
    let model = fit_regimes(&returns, &ThresholdTable::bundled_default(), &RegimeConfig::default()).unwrap();
    model.validate().unwrap();
    assert!(model.n_segments() > 4, "regime switches should be detected");

    // the most volatile cluster should mostly cover turbulent days
    let hot = model.variance_rank[0];
    let (mut hot_days, mut hot_turbulent) = (0, 0);
    for (s, range) in model.partition.segments().into_iter().enumerate() {
        if model.label(s) == hot {
            hot_days += range.len();
            hot_turbulent += range.filter(|&i| world.turbulent[i]).count();
        }
    }
    assert!(hot_turbulent * 2 > hot_days, "{hot_turbulent} of {hot_days}");

    let report = regime_report(&model);
    assert_eq!(report.cluster_sizes.iter().sum::<usize>(), model.n_segments());
    assert_eq!(report.segments.last().unwrap().end, returns.len());
}

#[test]
fn positions_ignore_later_prices() {
    let world = generate_two_asset_world(&TwoAssetSpec::default(), 4).unwrap();
    let table = ThresholdTable::bundled_default();
    let config = StrategyConfig::default();
    let start = NaiveDate::from_ymd_opt(2004, 1, 5).unwrap();
    let end = NaiveDate::from_ymd_opt(2009, 12, 31).unwrap();
    let base = run_backtest(&world.risk, &world.haven, start, end, &table, &config).unwrap();

    let cut = base.dates[600];
    let crash = |p: &volregime::market_data::PriceSeries| {
        let obs = p
            .dates()
            .iter()
            .zip(p.closes())
            .map(|(d, c)| (*d, if *d > cut { c * 0.3 } else { *c }))
            .collect();
        volregime::market_data::PriceSeries::new(p.ticker(), obs).unwrap()
    };
    let shocked = run_backtest(&crash(&world.risk), &world.haven, start, end, &table, &config).unwrap();
    assert_eq!(base.positions[..602], shocked.positions[..602]);
    assert_eq!(base.windows[..1], shocked.windows[..1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn dynamic_returns_come_from_the_held_asset(seed in 0u64..1000) {
        let world = generate_two_asset_world(&TwoAssetSpec::default(), seed).unwrap();
        let start = NaiveDate::from_ymd_opt(2004, 1, 5).unwrap();
        let end = NaiveDate::from_ymd_opt(2006, 12, 29).unwrap();
        let config = StrategyConfig {
            regime: RegimeConfig { method: ClusterMethod::Zp, seed, ..RegimeConfig::default() },
            ..StrategyConfig::default()
        };
        let report = run_backtest(&world.risk, &world.haven, start, end, &ThresholdTable::bundled_default(), &config).unwrap();
        let dynamic = &report.strategy(StrategyKind::Dynamic).returns;
        let risk = &report.strategy(StrategyKind::HoldRisk).returns;
        let haven = &report.strategy(StrategyKind::HoldHaven).returns;
        let balanced = &report.strategy(StrategyKind::Balanced).returns;
        prop_assert_eq!(report.positions.len(), dynamic.len());
        for (i, p) in report.positions.iter().enumerate() {
            let held = match p.holding {
                Holding::Risk => risk[i],
                Holding::Haven => haven[i],
            };
            prop_assert_eq!(dynamic[i], held);
            prop_assert!((balanced[i] - 0.5 * (risk[i] + haven[i])).abs() < 1e-15);
            prop_assert!(p.lookback >= config.lookback_grid.0 && p.lookback <= config.lookback_grid.1);
        }
    }
}
