use std::io::BufReader;

use ibotdr::config::ExperimentConfig;
use ibotdr::pipeline::{run, simulate, RunOverrides};
use ibotdr::presets::{exp_100m, exp_50km, PRESETS};
use ibotdr::tdc_histogram::{Fidelity, Histogram};
use ibotdr::trace_processing::OtdrTrace;

fn short_link() -> ExperimentConfig {
    exp_100m().unwrap()
}

/// Few enough periods for the event-level simulator.
fn short_link_few_periods() -> ExperimentConfig {
    let mut c = exp_100m().unwrap();
    c.acquisition.periods = 5000;
    c
}

#[test]
fn every_preset_survives_toml() {
    for p in PRESETS {
        let cfg = ibotdr::presets::preset(p.name).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg, "{}", p.name);
        back.build().unwrap();
    }
}

#[test]
fn histogram_csv_round_trip() {
    let exp = short_link_few_periods().build().unwrap();
    for fidelity in [Fidelity::Analytic, Fidelity::Poisson, Fidelity::Events] {
        let over = RunOverrides {
            seed: Some(1),
            fidelity: Some(fidelity),
        };
        let h = simulate(&exp, over).unwrap().histogram;
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let back = Histogram::read_csv(BufReader::new(&buf[..])).unwrap();
        assert_eq!(back.counts, h.counts);
        assert_eq!(back.config, h.config);
        assert_eq!(back.periods, h.periods);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(again, buf);
    }
}

#[test]
fn trace_csv_round_trip() {
    let exp = short_link().build().unwrap();
    let (_, analyzed) = run(&exp, RunOverrides::default()).unwrap();
    for (t, _) in analyzed {
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = OtdrTrace::read_csv(BufReader::new(&buf[..])).unwrap();
        assert_eq!(back.positions, t.positions);
        assert_eq!(back.diff_counts, t.diff_counts);
        assert_eq!(back.lag, t.lag);
        assert_eq!(back.first_bin, t.first_bin);
    }
}

#[test]
fn truncated_histogram_csv_is_rejected() {
    let exp = short_link().build().unwrap();
    let h = simulate(&exp, RunOverrides::default()).unwrap().histogram;
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut: String = text.lines().take(text.lines().count() / 2).collect::<Vec<_>>().join("\n");
    assert!(Histogram::read_csv(BufReader::new(cut.as_bytes())).is_err());
}

#[test]
fn seeds_change_noise_not_the_mean() {
    let exp = short_link_few_periods().build().unwrap();
    let draw = |seed| {
        simulate(
            &exp,
            RunOverrides {
                seed: Some(seed),
                fidelity: Some(Fidelity::Poisson),
            },
        )
        .unwrap()
        .histogram
    };
    let (a, b) = (draw(1), draw(2));
    assert_ne!(a.counts, b.counts);
    let (sa, sb): (f64, f64) = (a.counts.iter().sum(), b.counts.iter().sum());
    assert!((sa - sb).abs() < 6.0 * (sa + sb).sqrt(), "{sa} vs {sb}");
}

#[test]
fn analytic_50km_is_seed_independent() {
    let exp = exp_50km().unwrap().build().unwrap();
    let over = |seed| RunOverrides {
        seed: Some(seed),
        fidelity: Some(Fidelity::Analytic),
    };
    let a = simulate(&exp, over(1)).unwrap().histogram;
    let b = simulate(&exp, over(99)).unwrap().histogram;
    assert_eq!(a.counts, b.counts);
}
