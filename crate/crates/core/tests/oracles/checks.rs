//! Randomised comparisons of library routines against the oracles. Each
//! returns the worst discrepancy found so callers can assert or report it.

use geocausal_core::analysis::{auc, leading_canonical_correlation, meta_regress_ate, ols, twfe, MetaWeighting};
use geocausal_core::estimator::{diff_in_means, hajek_fit, AteEstimate, Specification};
use geocausal_core::geo::{in_local_square, LatLon, EARTH_RADIUS_KM};
use geocausal_core::panel::{
    assign_treatment, finalize_panel, Funder, Neighborhood, PanelCell, PanelReport, PanelSlice, Precision,
    ProjectRecord, SQUARE_SIDE_KM,
};
use geocausal_core::tile::{median_composite, Band, ImageTile};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{auc_pairs, cca_projected_gradient, normal, normal_equations, sorted_median, twfe_dummies};

fn arms(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut a: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    a[0] = 1;
    a[1] = 0;
    a.shuffle(rng);
    a
}

/// Hájek with a constant propensity against the difference in means.
/// Returns (largest ATE gap, largest deviation of an arm's weights from 1).
pub fn hajek_constant_propensity(instances: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gap, mut wgap): (f64, f64) = (0.0, 0.0);
    for _ in 0..instances {
        let n = rng.gen_range(2..400);
        let a = arms(&mut rng, n);
        let y: Vec<f64> = (0..n).map(|_| 10.0 * normal(&mut rng) + 3.0).collect();
        let c = rng.gen_range(0.01..0.99);
        let fit = hajek_fit(&y, &a, &vec![c; n]).unwrap();
        gap = gap.max((fit.ate - diff_in_means(&y, &a).unwrap()).abs());
        for arm in [0, 1] {
            let s: f64 = fit
                .weights
                .iter()
                .zip(&a)
                .filter(|(_, &ai)| ai == arm)
                .map(|(w, _)| w)
                .sum();
            wgap = wgap.max((s - 1.0).abs());
        }
        // Arbitrary propensities keep the per-arm normalisation.
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98)).collect();
        let fit = hajek_fit(&y, &a, &p).unwrap();
        for arm in [0, 1] {
            let s: f64 = fit
                .weights
                .iter()
                .zip(&a)
                .filter(|(_, &ai)| ai == arm)
                .map(|(w, _)| w)
                .sum();
            wgap = wgap.max((s - 1.0).abs());
        }
    }
    (gap, wgap)
}

/// Midrank AUC against pair enumeration, on scores with many ties.
pub fn auc_against_pairs(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(2..=200);
        let labels = arms(&mut rng, n);
        let levels = rng.gen_range(1..12) as f64;
        let scores: Vec<f64> = (0..n)
            .map(|i| (normal(&mut rng) * levels / 3.0 + 0.7 * f64::from(labels[i])).round() / levels)
            .collect();
        worst = worst.max((auc(&scores, &labels).unwrap() - auc_pairs(&scores, &labels)).abs());
    }
    worst
}

pub struct Panel {
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    pub units: Vec<String>,
    pub periods: Vec<usize>,
    pub clusters: Vec<String>,
}

/// Staggered-adoption panel with optional noise and randomly missing cells.
pub fn random_panel(rng: &mut ChaCha8Rng, beta: f64, noise: f64, drop_share: f64) -> Panel {
    let nu = rng.gen_range(8..40);
    let np = rng.gen_range(2..7);
    let ng = rng.gen_range(2..6);
    let lambda: Vec<f64> = (0..np).map(|_| 3.0 * normal(rng)).collect();
    let mut p = Panel {
        y: vec![],
        a: vec![],
        units: vec![],
        periods: vec![],
        clusters: vec![],
    };
    for i in 0..nu {
        let alpha = 5.0 * normal(rng);
        let start = if i == 0 { 1 } else { rng.gen_range(0..np + 2) };
        let cluster = if i < ng { i } else { rng.gen_range(0..ng) };
        for (t, l) in lambda.iter().enumerate() {
            if i >= 2 && rng.gen_bool(drop_share) {
                continue;
            }
            let at = f64::from(u8::from(t >= start));
            p.y.push(alpha + l + beta * at + noise * normal(rng));
            p.a.push(at);
            p.units.push(format!("u{i}"));
            p.periods.push(2000 + 3 * t);
            p.clusters.push(format!("g{cluster}"));
        }
    }
    p
}

/// (largest |β̂−β| on noise-free panels, largest |β̂−β_oracle| and
/// |SE−SE_oracle| on noisy panels).
pub fn twfe_against_dummies(panels: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut exact, mut bgap, mut segap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut done = 0;
    while done < panels {
        let beta = [-2.0, 0.0, 2.0][done % 3];
        let drop = if done % 2 == 0 { 0.0 } else { 0.15 };
        let clean = random_panel(&mut rng, beta, 0.0, drop);
        let noisy = random_panel(&mut rng, beta, 1.0, drop);
        let (Ok(fc), Ok(fnz)) = (
            twfe(&clean.y, &clean.a, &clean.units, &clean.periods, &clean.clusters),
            twfe(&noisy.y, &noisy.a, &noisy.units, &noisy.periods, &noisy.clusters),
        ) else {
            continue;
        };
        let (ob, ose) = twfe_dummies(&noisy.y, &noisy.a, &noisy.units, &noisy.periods, &noisy.clusters);
        exact = exact.max((fc.beta - beta).abs());
        bgap = bgap.max((fnz.beta - ob).abs());
        segap = segap.max((fnz.clustered_se - ose).abs());
        done += 1;
    }
    (exact, bgap, segap)
}

fn row(funder: Funder, sector: u32, spec: Specification, ate: f64, se: f64) -> AteEstimate {
    AteEstimate {
        funder,
        sector_code: sector,
        specification: spec,
        ate,
        std_error: se,
        ci_low: ate - 1.96 * se,
        ci_high: ate + 1.96 * se,
        n_treated: 100,
        n_control: 900,
        clip_bounds: (0.01, 0.99),
        variance_method: "influence".into(),
    }
}

/// Meta-regression fixture: every selected funder×sector with all four
/// specifications, ATEs from `ate`.
pub fn meta_rows(
    rng: &mut ChaCha8Rng,
    sectors: usize,
    ate: &mut dyn FnMut(&mut ChaCha8Rng, Funder, Specification) -> f64,
) -> Vec<AteEstimate> {
    let mut rows = Vec::new();
    for f in [Funder::WorldBank, Funder::China] {
        for s in 0..sectors {
            for spec in Specification::ALL {
                let v = ate(rng, f, spec);
                let se = rng.gen_range(0.2..3.0);
                rows.push(row(f, 110 + 10 * s as u32, spec, v, se));
            }
        }
    }
    rows
}

/// Meta-regression coefficients against normal equations on the
/// non-aliased columns, unweighted and inverse-variance weighted.
pub fn meta_against_normal_equations(fixtures: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..fixtures {
        let sectors = rng.gen_range(1..8);
        let rows = meta_rows(&mut rng, sectors, &mut |r, _, _| 4.0 * normal(r));
        for weighting in [MetaWeighting::Unweighted, MetaWeighting::InverseVariance] {
            let fit = meta_regress_ate(&rows, weighting).unwrap();
            let x = DMatrix::from_fn(rows.len(), 4, |i, j| {
                let r = &rows[i];
                match j {
                    0 => 1.0,
                    1 => f64::from(u8::from(r.specification.has_x())),
                    2 => f64::from(u8::from(r.specification.has_m())),
                    _ => f64::from(u8::from(r.funder == Funder::China)),
                }
            });
            let y: Vec<f64> = rows.iter().map(|r| r.ate).collect();
            let w: Option<Vec<f64>> = match weighting {
                MetaWeighting::Unweighted => None,
                MetaWeighting::InverseVariance => {
                    Some(rows.iter().map(|r| 1.0 / (r.std_error * r.std_error)).collect())
                }
            };
            let (coef, adj) = normal_equations(&x, &y, w.as_deref());
            for (name, c) in ["intercept", "has_X", "has_M", "funder_China"].iter().zip(&coef) {
                let got = fit.model1.coefficient(name).unwrap();
                worst = worst.max((got - c).abs());
            }
            worst = worst.max((fit.model1.adj_r2 - adj).abs());
            assert_eq!(fit.model1.dropped, vec!["has_FE".to_string()]);
        }
    }
    worst
}

/// Plain OLS against normal equations on random full-rank designs.
pub fn ols_against_normal_equations(fixtures: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..fixtures {
        let k = rng.gen_range(1..6);
        let n = rng.gen_range(k + 2..60);
        let x = DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { normal(&mut rng) });
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let fit = ols(&names, &x, &y, None).unwrap();
        let (coef, adj) = normal_equations(&x, &y, None);
        for (a, b) in fit.coef.iter().zip(&coef) {
            worst = worst.max((a - b).abs());
        }
        if k > 1 {
            worst = worst.max((fit.adj_r2 - adj).abs());
        }
    }
    worst
}

/// The `ATE = 5 − 2·has_M` fixture: (has_M coefficient, adjusted R²).
pub fn meta_exact_fixture() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = meta_rows(&mut rng, 4, &mut |_, _, s| 5.0 - 2.0 * f64::from(u8::from(s.has_m())));
    let fit = meta_regress_ate(&rows, MetaWeighting::Unweighted).unwrap();
    (fit.model1.coefficient("has_M").unwrap(), fit.model1.adj_r2)
}

fn random_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |_, _| normal(rng)).qr().q()
}

/// Largest distance from 1 of the correlation between a matrix and itself,
/// and between a matrix and an orthogonal mixing of its columns, with
/// ridge → 0.
pub fn cca_full_correlation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.gen_range(1..5);
        let n = rng.gen_range(k + 3..30);
        let a = DMatrix::from_fn(n, k, |_, _| normal(&mut rng));
        let q = random_orthogonal(&mut rng, k);
        let mixed = &a * q;
        for b in [&a, &mixed] {
            let r = leading_canonical_correlation(&a, b, 1e-10).unwrap();
            worst = worst.max((r - 1.0).abs());
        }
    }
    worst
}

/// Largest gap to the projected-gradient oracle on random instances.
pub fn cca_against_projected_gradient(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let ka = rng.gen_range(1..5);
        let kb = rng.gen_range(1..5);
        let n = rng.gen_range(6..25);
        let a = DMatrix::from_fn(n, ka, |_, _| normal(&mut rng));
        let b = DMatrix::from_fn(n, kb, |i, _| 0.5 * a[(i, 0)] + normal(&mut rng));
        let ridge = rng.gen_range(0.05..0.5);
        let r = leading_canonical_correlation(&a, &b, ridge).unwrap();
        let o = cca_projected_gradient(&a, &b, ridge, &mut rng);
        worst = worst.max((r - o).abs());
    }
    worst
}

fn neighborhood(center: LatLon) -> Neighborhood {
    Neighborhood {
        unit_id: "n1".into(),
        centroid: center,
        country_code: "KEN".into(),
        adm1_id: "KEN.1".into(),
        adm2_id: "KEN.1.1".into(),
    }
}

fn project(location: LatLon, precision: Precision) -> ProjectRecord {
    ProjectRecord {
        project_id: "p1".into(),
        funder: Funder::WorldBank,
        sector_code: 110,
        location,
        precision,
        adm2_id: None,
        commitment_year: 2005,
    }
}

/// Treatment of a unit with a near-precision project `km` due north,
/// placed on the meridian via Δlat = d/R.
pub fn near_project_treats(km: f64) -> bool {
    let center = LatLon::new(-1.2, 36.8);
    let loc = LatLon::new(center.lat + (km / EARTH_RADIUS_KM).to_degrees(), center.lon);
    assign_treatment(&neighborhood(center), [&project(loc, Precision::Near)]).unwrap() == 1
}

/// Whether an exact-precision project at east/north offsets (km) treats a
/// unit at latitude `lat`; offsets use Δlat = d/R and Δlon = d/(R cos φ).
pub fn exact_project_treats(lat: f64, east_km: f64, north_km: f64) -> bool {
    let center = LatLon::new(lat, 20.0);
    let loc = LatLon::new(
        lat + (north_km / EARTH_RADIUS_KM).to_degrees(),
        20.0 + (east_km / (EARTH_RADIUS_KM * lat.to_radians().cos())).to_degrees(),
    );
    let direct = in_local_square(center, loc, SQUARE_SIDE_KM);
    let treated = assign_treatment(&neighborhood(center), [&project(loc, Precision::Exact)]).unwrap() == 1;
    assert_eq!(direct, treated);
    treated
}

/// Slice with `treated` treated cells out of 300, one constant covariate.
pub fn slice_with_treated(treated: usize) -> PanelSlice {
    PanelSlice {
        funder: Funder::China,
        sector_code: 230,
        covariate_names: vec!["ntl".into(), "flat".into(), "pop".into()],
        cells: (0..300)
            .map(|i| PanelCell {
                unit_id: format!("u{i}"),
                period: 0,
                country_code: "GHA".into(),
                adm2_id: format!("a{}", i % 7),
                treated: u8::from(i < treated),
                outcome_lead: Some(i as f64),
                covariates: vec![(i % 13) as f64, 4.5, (i % 5) as f64],
                tile_ref: format!("u{i}_p0"),
            })
            .collect(),
    }
}

/// Finalises a slice; returns the report and the surviving covariates.
pub fn finalize(treated: usize, min_treated: usize) -> (PanelReport, Option<Vec<String>>) {
    let mut report = PanelReport::default();
    let kept = finalize_panel(slice_with_treated(treated), min_treated, &mut report);
    (report, kept.map(|s| s.covariate_names))
}

/// Median composite against a per-pixel sort over the valid scenes of random
/// masked stacks. Returns (largest value gap, any mask disagreement).
pub fn median_against_sort(stacks: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut mask_bad = false;
    for _ in 0..stacks {
        let side = rng.gen_range(1..9);
        let plane = side * side;
        let bands = Band::ALL[..rng.gen_range(1..=5)].to_vec();
        let scenes: Vec<ImageTile> = (0..rng.gen_range(1..8))
            .map(|s| {
                let pixels: Vec<f32> = (0..bands.len() * plane).map(|_| normal(&mut rng) as f32).collect();
                let mask: Vec<bool> = (0..plane).map(|_| rng.gen_bool(0.6)).collect();
                ImageTile::new(format!("s{s}"), bands.clone(), side, pixels, mask).unwrap()
            })
            .collect();
        let out = median_composite("m", &scenes).unwrap();
        for i in 0..plane {
            let valid: Vec<&ImageTile> = scenes.iter().filter(|s| s.mask()[i]).collect();
            mask_bad |= out.mask()[i] != !valid.is_empty();
            if valid.is_empty() {
                continue;
            }
            for b in 0..bands.len() {
                let vals: Vec<f32> = valid.iter().map(|s| s.band(b)[i]).collect();
                worst = worst.max((out.band(b)[i] - sorted_median(&vals)).abs() as f64);
            }
        }
    }
    (worst, mask_bad)
}
