use qcal_core::config::RunConfig;
use qcal_core::control::{run_campaign, summarize, Campaign, CycleRecord};
use qcal_core::drift::{Binding, DriftConfig, Field, ProcessSpec};

fn records(cfg: &RunConfig, n: usize, skip: usize) -> Vec<CycleRecord> {
    let mut c = Campaign::new(
        cfg.device.clone(),
        cfg.sim.clone(),
        cfg.latency,
        &cfg.drift,
        cfg.initial.clone(),
        cfg.loop_primitives.clone(),
        &cfg.campaign,
        cfg.seed,
    )
    .unwrap();
    let mut out = Vec::new();
    run_campaign(&mut c, n, skip, |r| {
        out.push(r.clone());
        Ok::<_, ()>(())
    })
    .unwrap();
    out
}

#[test]
fn same_seed_same_records() {
    let cfg = RunConfig::default();
    assert_eq!(records(&cfg, 50, 0), records(&cfg, 50, 0));
    let other = RunConfig {
        seed: 8,
        ..cfg.clone()
    };
    assert_ne!(records(&cfg, 50, 0), records(&other, 50, 0));
}

#[test]
fn resume_replays_to_identical_tail() {
    let cfg = RunConfig::default();
    let full = records(&cfg, 80, 0);
    let tail = records(&cfg, 80, 30);
    assert_eq!(tail.len(), 50);
    assert_eq!(&full[30..], &tail[..]);
}

#[test]
fn gamma1_trace_occupies_two_bands() {
    let cfg = RunConfig::default();
    let recs = records(&cfg, 2000, 0);
    let lo = 1.0 / 27.5;
    let hi = 1.0 / 14.5;
    let mut in_lo = 0;
    let mut in_hi = 0;
    for r in &recs {
        let g = r.truth.gamma1;
        assert!(
            (g - lo).abs() < 1e-12 || (g - hi).abs() < 1e-12,
            "gamma1 {g}"
        );
        if (g - lo).abs() < 1e-12 {
            in_lo += 1;
        } else {
            in_hi += 1;
        }
    }
    assert!(in_lo > 200 && in_hi > 200, "{in_lo} low, {in_hi} high");

    // The estimated trace separates into the same two bands.
    let mean = |band: f64| {
        let v: Vec<f64> = recs
            .iter()
            .filter(|r| (r.truth.gamma1 - band).abs() < 1e-12)
            .filter_map(|r| r.gamma1_hat)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!((mean(lo) / lo - 1.0).abs() < 0.15);
    assert!((mean(hi) / hi - 1.0).abs() < 0.15);
}

#[test]
fn frequency_drift_only_recalibration_helps() {
    let cfg = RunConfig {
        drift: DriftConfig {
            dt: 0.01,
            bindings: vec![Binding {
                field: Field::F01,
                processes: vec![ProcessSpec::GaussMarkov {
                    mean: 0.0,
                    stddev: 0.02,
                    tau_c: 60.0,
                    initial: Some(0.0),
                }],
            }],
        },
        ..RunConfig::default()
    };
    let s = summarize(&records(&cfg, 600, 0));
    assert!(s.mean_eps_b.unwrap() < s.mean_eps_a.unwrap());
}
