mod common;

use carct::report::{emit_report, power_table, summary_table, Format, Manifest, Value};
use carct::simulator::{run_prepared, ExperimentSummary, PreparedExperiment};

fn small() -> (PreparedExperiment, ExperimentSummary) {
    let cfg = common::config("seed = 17\nreplications = 120\nn_grid = [12, 30]\nsnapshot_points = [4]");
    let exp = PreparedExperiment::new(&cfg).unwrap();
    let s = run_prepared(&exp).unwrap();
    (exp, s)
}

#[test]
fn summary_json_round_trips_exactly() {
    let (_, s) = small();
    let text = serde_json::to_string_pretty(&s).unwrap();
    let back: ExperimentSummary = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
}

#[test]
fn csv_and_json_outputs_agree() {
    let (exp, s) = small();
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest::new("simulate", &exp.config, 0.0);
    let bundle = emit_report(dir.path(), &s, &[], Format::Csv, manifest).unwrap();
    assert!(bundle.files.iter().any(|f| f.ends_with("manifest.json")));

    let json: ExperimentSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), json.cells.len());
    for (row, cell) in rows.iter().zip(&json.cells) {
        assert_eq!(row[col("procedure")], cell.procedure);
        assert_eq!(row[col("n")].parse::<u64>().unwrap(), cell.n);
        let m: f64 = row[col("mean_M_n")].parse().unwrap();
        assert_eq!(m.to_bits(), cell.m_n.mean().to_bits());
        let sb: f64 = row[col("sb_rb")].parse().unwrap();
        assert_eq!(sb.to_bits(), cell.sb_rb.mean().to_bits());
    }
}

#[test]
fn one_cell_gives_one_row_and_a_manifest() {
    let text = format!(
        "seed = 2\nreplications = 10\nn_grid = [20]\n{}\n[[procedures]]\nkind = \"efron\"\n",
        common::TWO_BINARY
    );
    let cfg = carct::config::ExperimentConfig::from_toml_str(&text).unwrap();
    let exp = PreparedExperiment::new(&cfg).unwrap();
    let s = run_prepared(&exp).unwrap();
    assert_eq!(summary_table(&s).rows.len(), 1);
    let dir = tempfile::tempdir().unwrap();
    emit_report(dir.path(), &s, &[], Format::Json, Manifest::new("simulate", &cfg, 1.5)).unwrap();
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.config, cfg);
    assert_eq!(m.seed, 2);
    assert!(m.outputs.contains(&"summary.csv".to_string()));
}

#[test]
fn extra_tables_follow_the_format() {
    let (exp, s) = small();
    let t = power_table(&exp, &s);
    for (format, file) in [(Format::Csv, "power.csv"), (Format::Json, "power.json")] {
        let dir = tempfile::tempdir().unwrap();
        emit_report(dir.path(), &s, std::slice::from_ref(&t), format, Manifest::new("power", &exp.config, 0.0)).unwrap();
        assert!(dir.path().join(file).exists(), "{file}");
    }
}

#[test]
fn predicted_loss_for_complete_randomization() {
    let (exp, s) = small();
    let t = power_table(&exp, &s);
    let p = t.column("predicted_LossP").unwrap();
    let row = t.rows.iter().find(|r| r[0] == Value::Text("complete".into())).unwrap();
    // two covariates: (1 + c)^{-3/2} with c = mu^2 / (4 sigma^2) and mu = 0.5
    let want = (1.0f64 + 0.0625).powf(-1.5);
    match row[p] {
        Value::Real(v) => assert!((v - want).abs() < 1e-14, "{v} vs {want}"),
        ref other => panic!("{other:?}"),
    }
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let (exp, s) = small();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = emit_report(&blocker.join("sub"), &s, &[], Format::Csv, Manifest::new("simulate", &exp.config, 0.0))
        .unwrap_err();
    assert!(matches!(err, carct::Error::Io(_)), "{err}");
    assert!(!err.is_config());
}
