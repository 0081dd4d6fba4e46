use nlhomog::config::Config;
use nlhomog::registry::{report, Registry};
use nlhomog::stats::CsvTable;

fn cfg(overrides: &[&str]) -> Config {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Config::from_json_str("{}", &o).unwrap()
}

#[test]
fn twoscale_ledger_has_every_term() {
    let out = Registry::standard()
        .run("twoscale", &cfg(&["experiment.n=4", "ensemble.size=1"]))
        .unwrap();
    assert!(out.all_passed(), "{:?}", out.checks);
    let table = &out.tables[0].1;
    let term = table.column("term").unwrap();
    let terms: std::collections::BTreeSet<_> = table.rows.iter().map(|r| r[term].as_str()).collect();
    for t in ["glue_error", "expansion_residual", "flux_residual", "mollification_error", "homogenization_error"] {
        assert!(terms.contains(t), "{t} missing from {terms:?}");
    }
}

#[test]
fn twoscale_rejects_out_of_order_mesoscales() {
    let c = cfg(&["experiment.n=4", r#"experiment.mesoscales={"k":2,"l":2,"m":3}"#]);
    assert!(Registry::standard().run("twoscale", &c).is_err());
}

#[test]
fn lbar_table_roundtrips_into_commute() {
    let dir = tempfile::tempdir().unwrap();
    let lbar = Registry::standard()
        .run(
            "lbar",
            &cfg(&["experiment.table.n_list=[1]", "experiment.table.ensemble_size=4"]),
        )
        .unwrap();
    assert!(lbar.all_passed(), "{:?}", lbar.checks);
    lbar.write_to("lbar", dir.path()).unwrap();
    let path = dir.path().join("table.json");
    let commute = Registry::standard()
        .run(
            "commute",
            &cfg(&[
                &format!("experiment.table.path={}", path.display()),
                "experiment.n_list=[1,2,3]",
                "ensemble.size=8",
            ]),
        )
        .unwrap();
    let csv = &commute.tables[0].1;
    assert_eq!(csv.rows.len(), 24);
    commute.write_to("commute", dir.path()).unwrap();
    let rep = report(dir.path()).unwrap();
    assert!(rep["rate_fits"]["commute.csv"]["grad"]["alpha_hat"].is_number(), "{rep}");
    let read = CsvTable::read(&dir.path().join("commute.csv")).unwrap();
    assert_eq!(&read, csv);
}

#[test]
fn linearized_scan_reports_minimal_scales() {
    let out = Registry::standard()
        .run("linreg", &cfg(&["experiment.big_r=9", "ensemble.size=8"]))
        .unwrap();
    let scans = &out.tables[0].1;
    assert!(scans.column("minimal_scale_hat").is_some());
    let doc = &out.documents[0].1;
    assert_eq!(doc["count"], 8);
}

#[test]
fn coverage_failure_is_reported() {
    let err = Registry::standard()
        .run(
            "commute",
            &cfg(&[
                "experiment.table.n_list=[1]",
                "experiment.table.ensemble_size=2",
                "experiment.table.lo=[0.4,0.2]",
                "experiment.table.hi=[0.6,0.3]",
                "experiment.table.spacing=0.05",
                "experiment.n_list=[1]",
                "ensemble.size=2",
            ]),
        )
        .unwrap_err();
    assert!(err.to_string().contains("coverage"), "{err}");
}
