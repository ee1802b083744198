use netar::model::Domain;
use netar::panel::{load_panel_csv, Panel};
use netar::Error;

#[test]
fn panel_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for domain in [Domain::Count, Domain::Continuous] {
        let vals: Vec<f64> = (0..12).map(|k| if domain == Domain::Count { k as f64 } else { k as f64 * 0.1 - 0.35 }).collect();
        let p = Panel::from_time_major(3, 4, domain, vals).unwrap();
        let path = dir.path().join("p.csv");
        p.write_csv(&path).unwrap();
        let back = load_panel_csv(&path, domain).unwrap();
        assert_eq!(back.values(), p.values());
        assert_eq!(back.labels(), p.labels());
        assert_eq!((back.n(), back.t()), (3, 4));
    }
}

#[test]
fn header_labels_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    std::fs::write(&path, "north, south\n1,2\n3,4\n").unwrap();
    let p = load_panel_csv(&path, Domain::Count).unwrap();
    assert_eq!(p.labels(), &["north".to_string(), "south".to_string()]);
    assert_eq!(p.series(1), vec![2.0, 4.0]);
}

#[test]
fn bad_cells_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    std::fs::write(&path, "a,b\n1,2.5\n").unwrap();
    assert!(matches!(load_panel_csv(&path, Domain::Count), Err(Error::InvalidArgument(_))));
    assert!(load_panel_csv(&path, Domain::Continuous).is_ok());
    std::fs::write(&path, "a,b\n1,-2\n").unwrap();
    assert!(matches!(load_panel_csv(&path, Domain::Count), Err(Error::NegativeCount { .. })));
    std::fs::write(&path, "a,b\n1,x\n").unwrap();
    assert!(matches!(load_panel_csv(&path, Domain::Continuous), Err(Error::Parse(_))));
    std::fs::write(&path, "a,b\n1\n").unwrap();
    assert!(load_panel_csv(&path, Domain::Continuous).is_err());
    std::fs::write(&path, "a,b\n1,nan\n").unwrap();
    assert!(load_panel_csv(&path, Domain::Continuous).is_err());
}

#[test]
fn panel_shape_errors() {
    assert!(Panel::from_time_major(0, 3, Domain::Count, vec![]).is_err());
    assert!(Panel::from_time_major(2, 2, Domain::Count, vec![1.0; 3]).is_err());
    assert!(Panel::from_rows(&[vec![1.0, 2.0], vec![1.0]], Domain::Count).is_err());
}
