mod common;

use carct::simulator::{run_experiment, run_prepared, run_trial, PreparedExperiment, TestRecord};

#[test]
fn worker_count_does_not_change_results() {
    let mut cfg = common::config("seed = 11\nreplications = 300\nn_grid = [20, 60]\nsnapshot_points = [5]");
    cfg.workers = 1;
    let one = run_experiment(&cfg).unwrap();
    cfg.workers = 8;
    let eight = run_experiment(&cfg).unwrap();
    assert_eq!(one, eight);
    let a = serde_json::to_string(&one).unwrap();
    let b = serde_json::to_string(&eight).unwrap();
    assert_eq!(a, b);
}

#[test]
fn evaluation_points_share_one_trajectory() {
    let cfg = common::config("seed = 3\nreplications = 50\nn_grid = [40]\ninference = \"none\"");
    let more = common::config("seed = 3\nreplications = 50\nn_grid = [40]\nsnapshot_points = [7, 13]\ninference = \"none\"");
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&more).unwrap();
    for name in &a.procedures {
        assert_eq!(a.cell(name, 40), b.cell(name, 40), "{name}");
    }
}

#[test]
fn seeds_change_results() {
    let a = run_experiment(&common::config("seed = 1\nreplications = 64\nn_grid = [30]")).unwrap();
    let b = run_experiment(&common::config("seed = 2\nreplications = 64\nn_grid = [30]")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn per_trial_outputs_are_in_range() {
    let cfg = common::config("seed = 5\nreplications = 1\nn_grid = [10, 50]\nsnapshot_points = [1, 2, 3]");
    let exp = PreparedExperiment::new(&cfg).unwrap();
    for p in 0..exp.procedures.len() {
        for rep in 0..40 {
            let out = run_trial(&exp, p, rep).unwrap();
            assert_eq!(out, run_trial(&exp, p, rep).unwrap());
            for rec in &out.points {
                assert!((0.5..=1.0).contains(&rec.sb_rb), "{}", rec.sb_rb);
                assert!(rec.sb_raw.iter().all(|s| (0.0..=1.0).contains(s)));
                assert!(rec.m_n >= 0.0 && rec.v_n >= 0.0);
                assert!(rec.d_n.unsigned_abs() <= rec.n);
                if let Some(TestRecord::Done { power: Some(pw), .. }) = rec.test {
                    assert!(pw.loss_p > 0.0 && pw.loss_p <= 1.0);
                    assert!(pw.ell_n <= (rec.n as f64).sqrt() * (1.0 + 1e-12));
                    assert!((0.0..=1.0).contains(&pw.cond_power));
                }
            }
        }
    }
}

#[test]
fn first_assignment_is_a_fair_coin() {
    // SB_1 = 1/2 for every procedure
    let cfg = common::config("seed = 9\nreplications = 200\nn_grid = [1]\ninference = \"none\"");
    let s = run_prepared(&PreparedExperiment::new(&cfg).unwrap()).unwrap();
    for c in &s.cells {
        assert_eq!(c.sb_rb.mean(), 0.5, "{}", c.procedure);
        assert_eq!(c.m_n.mean(), 1.0);
    }
}

#[test]
fn residual_free_grid_points_are_rejected_for_inference() {
    let text = format!("seed = 1\nn_grid = [4, 10]\n{}\n{}", common::TWO_BINARY, common::ALL_PROCEDURES);
    let cfg = carct::config::ExperimentConfig::from_toml_str(&text).unwrap();
    assert!(PreparedExperiment::new(&cfg).err().expect("must fail").is_config());
}
