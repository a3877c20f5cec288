mod oracles;

use geocausal_core::geo::{haversine_km, LatLon, EARTH_RADIUS_KM};
use geocausal_core::panel::{assign_treatment, Funder, Neighborhood, Precision, ProjectRecord};
use oracles::checks::{exact_project_treats, finalize, median_against_sort, near_project_treats};
use proptest::prelude::*;

#[test]
fn near_projects_treat_within_25_km() {
    assert!(near_project_treats(24.9));
    assert!(!near_project_treats(25.1));
}

#[test]
fn exact_projects_treat_inside_the_square() {
    for lat in [-33.9, -1.2, 0.0, 9.0, 36.5] {
        for (e, n) in [
            (3.349, 0.0),
            (-3.349, 0.0),
            (0.0, 3.349),
            (0.0, -3.349),
            (3.0, -3.0),
            (0.0, 0.0),
        ] {
            assert!(exact_project_treats(lat, e, n), "({e}, {n}) at lat {lat}");
        }
        for (e, n) in [(3.351, 0.0), (-3.351, 0.0), (0.0, 3.351), (0.0, -3.351), (3.351, 3.351)] {
            assert!(!exact_project_treats(lat, e, n), "({e}, {n}) at lat {lat}");
        }
    }
}

#[test]
fn panels_below_min_treated_are_rejected() {
    let (report, kept) = finalize(99, 100);
    assert!(kept.is_none());
    assert_eq!(report.status, "rejected");
    assert_eq!(report.reason.as_deref(), Some("min-treated"));
    assert_eq!(report.n_treated, 99);

    let (report, kept) = finalize(100, 100);
    assert_eq!(report.status, "built");
    assert_eq!(kept.unwrap(), vec!["ntl".to_string(), "pop".to_string()]);
    assert_eq!(report.dropped_covariates, vec!["flat".to_string()]);
}

#[test]
fn median_composite_matches_sort() {
    let (gap, mask_bad) = median_against_sort(200, 31);
    assert_eq!(gap, 0.0);
    assert!(!mask_bad);
}

#[test]
fn adm2_projects_need_an_adm2_id() {
    let unit = Neighborhood {
        unit_id: "u".into(),
        centroid: LatLon::new(5.0, 5.0),
        country_code: "NGA".into(),
        adm1_id: "NGA.1".into(),
        adm2_id: "NGA.1.4".into(),
    };
    let mut p = ProjectRecord {
        project_id: "x".into(),
        funder: Funder::China,
        sector_code: 230,
        location: LatLon::new(9.0, 9.0),
        precision: Precision::Adm2,
        adm2_id: Some("NGA.1.4".into()),
        commitment_year: 2008,
    };
    assert_eq!(assign_treatment(&unit, [&p]).unwrap(), 1);
    p.adm2_id = Some("NGA.1.5".into());
    assert_eq!(assign_treatment(&unit, [&p]).unwrap(), 0);
    p.adm2_id = None;
    assert!(assign_treatment(&unit, [&p]).is_err());
}

proptest! {
    #[test]
    fn meridian_offsets_have_their_arc_length(lat in -60.0f64..60.0, km in 0.0f64..500.0) {
        let a = LatLon::new(lat, 12.0);
        let b = LatLon::new(lat + (km / EARTH_RADIUS_KM).to_degrees(), 12.0);
        prop_assert!((haversine_km(a, b) - km).abs() < 1e-6);
    }

    #[test]
    fn haversine_is_a_symmetric_metric(
        a in (-80.0f64..80.0, -179.0f64..179.0),
        b in (-80.0f64..80.0, -179.0f64..179.0),
        c in (-80.0f64..80.0, -179.0f64..179.0),
    ) {
        let (a, b, c) = (LatLon::new(a.0, a.1), LatLon::new(b.0, b.1), LatLon::new(c.0, c.1));
        prop_assert!((haversine_km(a, b) - haversine_km(b, a)).abs() < 1e-9);
        prop_assert!(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-6);
    }
}
