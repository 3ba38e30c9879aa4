use proptest::prelude::*;

use svc_sdm::data::{
    ingest_long_csv_reader, schema_for, write_long_csv, CovariateSet, Dataset, DetectionData,
    IngestSchema, SpatialCoordinates,
};

/// Long CSV for a small random design. `y` is `None` where a survey is missing.
fn long_csv(sites: usize, seasons: usize, k: usize, cells: &[Option<u8>], x: &[f64]) -> String {
    let mut s = String::from("site_id,easting,northing,season,replicate,y,x\n");
    for j in 0..sites {
        for t in 0..seasons {
            for r in 0..k {
                let y = cells[(j * seasons + t) * k + r].map(|v| v.to_string()).unwrap_or_default();
                s += &format!("s{j},{},{},{},{},{y},{}\n", j as f64 * 0.5, (j % 3) as f64, 2010 + t, r + 1, x[j * seasons + t]);
            }
        }
    }
    s
}

fn design() -> impl Strategy<Value = (usize, usize, usize, Vec<Option<u8>>, Vec<f64>)> {
    (1usize..6, 1usize..3, 1usize..4).prop_flat_map(|(j, t, k)| {
        (
            Just(j),
            Just(t),
            Just(k),
            prop::collection::vec(prop::option::weighted(0.85, 0u8..2), j * t * k),
            prop::collection::vec(-3.0..3.0f64, j * t),
        )
    })
}

fn schema() -> IngestSchema {
    IngestSchema {
        occurrence_covariates: vec!["x".into()],
        standardize: false,
        ..IngestSchema::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn csv_round_trip_preserves_dataset((j, t, k, cells, x) in design()) {
        prop_assume!(cells.iter().any(Option::is_some));
        let text = long_csv(j, t, k, &cells, &x);
        let Ok(ds) = ingest_long_csv_reader(text.as_bytes(), &schema()) else {
            return Ok(());
        };
        let mut buf = Vec::new();
        write_long_csv(&ds, &mut buf).unwrap();
        let back = ingest_long_csv_reader(buf.as_slice(), &schema_for(&ds.covariates)).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.content_hash().unwrap(), ds.content_hash().unwrap());
        let json = Dataset::from_json(&ds.to_canonical_json().unwrap()).unwrap();
        prop_assert_eq!(json, ds);
    }

    #[test]
    fn json_round_trip_is_exact_for_arbitrary_floats(vals in prop::collection::vec(-1e3..1e3f64, 2..20)) {
        let points: Vec<[f64; 2]> = vals.windows(2).map(|w| [w[0], w[1] + w[0] * 1e-7]).collect();
        prop_assume!(points.iter().enumerate().all(|(i, p)| points[..i].iter().all(|q| q != p)));
        let Ok(coords) = SpatialCoordinates::from_points(points) else { return Ok(()); };
        let data = DetectionData::new(coords.clone(), vec![1], 1, vec![Some(1); coords.len()]).unwrap();
        let covariates = CovariateSet::for_data(&data);
        let ds = Dataset { data, covariates };
        let back = Dataset::from_json(&ds.to_canonical_json().unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn row_order_does_not_change_the_dataset((j, t, k, cells, x) in design(), shift in 1usize..50) {
        prop_assume!(cells.iter().any(Option::is_some));
        let text = long_csv(j, t, k, &cells, &x);
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let n = lines.len();
        lines.rotate_left(shift % n);
        lines.reverse();
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let a = ingest_long_csv_reader(text.as_bytes(), &schema());
        let b = ingest_long_csv_reader(shuffled.as_bytes(), &schema());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap()),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "only one ordering ingested: {:?} / {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn standardized_covariates_have_zero_mean((j, t, k, cells, x) in design()) {
        prop_assume!(cells.iter().any(Option::is_some));
        let distinct = x.iter().any(|v| (v - x[0]).abs() > 1e-6);
        prop_assume!(distinct);
        let text = long_csv(j, t, k, &cells, &x);
        let s = IngestSchema { standardize: true, ..schema() };
        let Ok(ds) = ingest_long_csv_reader(text.as_bytes(), &s) else { return Ok(()); };
        let vals: Vec<f64> = ds.covariates.occurrence("x").unwrap().iter().flatten().copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        let tr = ds.covariates.transform("x").unwrap();
        prop_assert!((tr.invert(tr.apply(1.7)) - 1.7).abs() < 1e-9);
    }
}

#[test]
fn non_binary_detection_is_reported_with_its_row() {
    let csv = "site_id,easting,northing,season,replicate,y\na,0,0,1,1,0\na,0,0,1,2,3\n";
    let e = ingest_long_csv_reader(csv.as_bytes(), &IngestSchema::default()).unwrap_err();
    assert!(e.to_string().contains('3'), "{e}");
}

#[test]
fn conflicting_coordinates_are_rejected() {
    let csv = "site_id,easting,northing,season,replicate,y\na,0,0,1,1,0\na,1,0,1,2,1\n";
    assert!(ingest_long_csv_reader(csv.as_bytes(), &IngestSchema::default()).is_err());
}

#[test]
fn missing_column_is_named() {
    let csv = "site_id,easting,season,replicate,y\na,0,1,1,0\n";
    let e = ingest_long_csv_reader(csv.as_bytes(), &IngestSchema::default()).unwrap_err();
    assert!(e.to_string().contains("northing"), "{e}");
}
