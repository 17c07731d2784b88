use chrono::NaiveDate;

use epf::arx::ModelSpec;
use epf::backtest::{
    parse_methods, read_forecasts, run_backtest, write_forecasts, BacktestConfig, BacktestError, Transform,
};
use epf::synth::{generate, SynthSpec};
use epf::HOURS;

fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn panel() -> epf::HourlyPanel {
    let spec = SynthSpec {
        variant: ModelSpec::M2,
        noise: 2.0,
        days: 70,
        seed: 5,
        start: date("2018-01-01"),
    };
    generate(&spec).unwrap().panel
}

fn config(from: &str, to: &str) -> BacktestConfig {
    let mut cfg = BacktestConfig::new(30, 30, date(from), date(to));
    cfg.methods = parse_methods("era,qra,q-hist-3,ex-hist-5").unwrap();
    cfg.transform = Transform::Asinh;
    cfg.mc = epf::transform::McConfig::new(500, 2).unwrap();
    cfg
}

#[test]
fn backtest_covers_every_cell_with_monotone_curves() {
    let panel = panel();
    let out = run_backtest(&panel, &config("2018-03-09", "2018-03-11")).unwrap();
    assert!(out.errors.is_empty(), "{:?}", out.errors);
    assert_eq!(out.cells, 3 * HOURS * 4);
    assert_eq!(out.records.len(), out.cells);
    for r in &out.records {
        let v = r.curve.values();
        assert_eq!(v.len(), 99);
        assert!(v.windows(2).all(|w| w[0] <= w[1]), "{} {} {}", r.date, r.hour, r.method);
        let day = panel.index_of(r.date).unwrap();
        assert_eq!(r.actual, panel.prices()[day][r.hour]);
    }
    assert_eq!(out.report.days, 3);
    assert_eq!(out.report.methods.len(), 4);
}

#[test]
fn forecast_file_round_trips() {
    let panel = panel();
    let cfg = config("2018-03-10", "2018-03-11");
    let out = run_backtest(&panel, &cfg).unwrap();
    let mut buf = Vec::new();
    write_forecasts(&mut buf, &cfg.method_names(), &out.records, &out.errors, |_, _| None).unwrap();
    let stored = read_forecasts(buf.as_slice()).unwrap();
    assert_eq!(stored.methods, cfg.method_names());
    assert_eq!(stored.dates, vec![date("2018-03-10"), date("2018-03-11")]);
    assert_eq!(stored.records.len(), out.records.len());
    for (a, b) in stored.records.iter().zip(&out.records) {
        assert_eq!((a.date, a.hour, &a.method), (b.date, b.hour, &b.method));
        assert_eq!(a.curve.values(), b.curve.values());
        assert_eq!(a.actual, b.actual);
    }
}

#[test]
fn short_history_is_infeasible() {
    let err = run_backtest(&panel(), &config("2018-02-20", "2018-02-21")).unwrap_err();
    assert!(matches!(err, BacktestError::Infeasible(_)), "{err}");
}
