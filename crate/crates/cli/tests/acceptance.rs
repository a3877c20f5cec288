//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use geocausal_core::estimator::{EstimatorConfig, SpecOutcome, Specification};
use geocausal_core::pipeline::{run_slice, PipelineConfig};
use geocausal_core::simulator::{bias_ladder, generate_world, RunEstimate, WorldConfig};
use geocausal_core::vit::{ModelConfig, TrainConfig};
use oracles::checks::*;
use oracles::grad::{model_error, op_errors};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let ops = op_errors(20, 7);
    let (worst_op, op_err) = ops
        .iter()
        .copied()
        .fold(("", 0.0f64), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let model = model_error(20, 3);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        op_err < 1e-2 && model < 1e-2 && secs < 120.0,
        format!(
            "gradients: {} ops worst {op_err:.2e} ({worst_op}), full model (64x64x5, embed 32, 2 layers) {model:.2e}, {secs:.1}s",
            ops.len()
        ),
    )
}

fn hajek() -> Outcome {
    let (gap, wgap) = hajek_constant_propensity(1000, 11);
    outcome(
        gap < 1e-10 && wgap < 1e-12,
        format!("hajek vs diff-in-means over 1000 instances: max gap {gap:.2e}, weight sums off by {wgap:.2e}"),
    )
}

fn randomized_world() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig {
        estimator: EstimatorConfig {
            cluster: false,
            ..EstimatorConfig::default()
        },
        ..PipelineConfig::default()
    };
    let mut runs = Vec::new();
    for seed in 0..100 {
        let world = generate_world(&WorldConfig {
            n_units: 2000,
            n_periods: 1,
            tau_true: 5.0,
            gamma_visible: 0.0,
            gamma_invisible: 0.0,
            gamma_tabular: 0.0,
            image_side: 16,
            seed,
            ..WorldConfig::default()
        })
        .unwrap();
        let run = run_slice(&world.panel, None, &[Specification::DiffMeans], &cfg).unwrap();
        runs.push(estimates(&run.outcomes));
    }
    let ladder = bias_ladder(5.0, &runs);
    let row = ladder.row(Specification::DiffMeans).unwrap();
    let mc_se = row.sd_estimate / (row.runs as f64).sqrt();
    let coverage = row.coverage.unwrap();
    let within = (row.mean_estimate - 5.0).abs() <= 3.0 * mc_se;
    outcome(
        within && (0.92..=0.98).contains(&coverage),
        format!(
            "randomized world, 100 seeds: mean (a) {:.3} (3 MC SE = {:.3}), coverage {:.0}%, {:.1}s",
            row.mean_estimate,
            3.0 * mc_se,
            100.0 * coverage,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn estimates(outcomes: &[SpecOutcome]) -> BTreeMap<Specification, RunEstimate> {
    outcomes
        .iter()
        .filter_map(|o| match o {
            SpecOutcome::Estimated(e) => Some((
                e.specification,
                RunEstimate {
                    ate: e.ate,
                    ci: Some((e.ci_low, e.ci_high)),
                },
            )),
            SpecOutcome::Skipped { .. } => None,
        })
        .collect()
}

/// Visible-confounding world and the model used for the confounded runs.
fn confounded(seed: u64) -> (WorldConfig, PipelineConfig) {
    let world = WorldConfig {
        n_units: 2000,
        n_adm2: 20,
        n_periods: 1,
        tau_true: 5.0,
        gamma_visible: 2.0,
        gamma_tabular: 1.5,
        gamma_invisible: 0.1,
        image_side: 32,
        seed,
        ..WorldConfig::default()
    };
    let pipeline = PipelineConfig {
        model: ModelConfig {
            image_side: 32,
            patch_size: 8,
            embed_dim: 16,
            num_layers: 1,
            num_heads: 2,
            mlp_ratio: 2,
            dropout_rate: 0.0,
            drop_path_rate: 0.0,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 8,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            folds: 5,
            seed,
            ..TrainConfig::default()
        },
        estimator: EstimatorConfig::default(),
    };
    (world, pipeline)
}

struct ConfoundedRuns {
    estimates: Vec<BTreeMap<Specification, RunEstimate>>,
    auc_m: Vec<f64>,
    auc_mxfe: Vec<f64>,
    secs: f64,
}

fn run_confounded(seeds: u64) -> ConfoundedRuns {
    let start = Instant::now();
    let mut out = ConfoundedRuns {
        estimates: Vec::new(),
        auc_m: Vec::new(),
        auc_mxfe: Vec::new(),
        secs: 0.0,
    };
    for seed in 0..seeds {
        let (wc, pc) = confounded(seed);
        let world = generate_world(&wc).unwrap();
        let tiles: Vec<_> = (0..world.panel.cells.len())
            .map(|i| world.render_tile(i).unwrap())
            .collect();
        let run = run_slice(&world.panel, Some(&tiles), &Specification::ALL, &pc).unwrap();
        let est = estimates(&run.outcomes);
        let auc_of = |s: Specification| run.summaries.iter().find(|f| f.specification == s).unwrap().auc;
        out.auc_m.push(auc_of(Specification::M));
        out.auc_mxfe.push(auc_of(Specification::MXFe));
        eprintln!(
            "  seed {seed:2}: bias a {:+.2} b {:+.2} c1 {:+.2} c2 {:+.2}, AUC(M) {:.3}, AUC(M+X+FE) {:.3}",
            est[&Specification::DiffMeans].ate - wc.tau_true,
            est[&Specification::XFe].ate - wc.tau_true,
            est[&Specification::M].ate - wc.tau_true,
            est[&Specification::MXFe].ate - wc.tau_true,
            out.auc_m.last().unwrap(),
            out.auc_mxfe.last().unwrap(),
        );
        out.estimates.push(est);
    }
    out.secs = start.elapsed().as_secs_f64();
    out
}

fn bias_ordering(runs: &ConfoundedRuns) -> Outcome {
    let ladder = bias_ladder(5.0, &runs.estimates);
    let abs = |s: Specification| ladder.row(s).unwrap().mean_abs_bias;
    let signed = |s: Specification| ladder.row(s).unwrap().mean_bias;
    let (a, b, c1, c2) = (
        abs(Specification::DiffMeans),
        abs(Specification::XFe),
        abs(Specification::M),
        abs(Specification::MXFe),
    );
    let pass = c2 <= c1 && c1 < b && b <= a && c2 < 0.5 * a && runs.secs < 3600.0;
    outcome(
        pass,
        format!(
            "confounded world, {} seeds: mean |bias| a {a:.2} b {b:.2} c1 {c1:.2} c2 {c2:.2} (mean bias {:+.2} {:+.2} {:+.2} {:+.2}), {:.0}s",
            runs.estimates.len(),
            signed(Specification::DiffMeans),
            signed(Specification::XFe),
            signed(Specification::M),
            signed(Specification::MXFe),
            runs.secs
        ),
    )
}

fn predictability(runs: &ConfoundedRuns) -> Outcome {
    let k = 10.min(runs.auc_m.len());
    let m = runs.auc_m[..k].iter().sum::<f64>() / k as f64;
    let mxfe = runs.auc_mxfe[..k].iter().sum::<f64>() / k as f64;
    outcome(
        m >= 0.70 && mxfe >= m - 0.02,
        format!("out-of-fold AUC over {k} seeds: M {m:.3}, M+X+FE {mxfe:.3}"),
    )
}

fn auc_oracle() -> Outcome {
    let gap = auc_against_pairs(500, 12);
    outcome(
        gap < 1e-12,
        format!("AUC vs pair counting over 500 instances with ties: max gap {gap:.2e}"),
    )
}

fn twfe_exact() -> Outcome {
    let (exact, bgap, segap) = twfe_against_dummies(100, 21);
    outcome(
        exact < 1e-8 && bgap < 1e-8 && segap < 1e-8,
        format!("TWFE over 100 panels: beta error {exact:.2e}, beta vs dummies {bgap:.2e}, SE vs sandwich {segap:.2e}"),
    )
}

fn meta() -> Outcome {
    let gap = meta_against_normal_equations(100, 22);
    let (coef, adj) = meta_exact_fixture();
    outcome(
        gap < 1e-8 && (coef + 2.0).abs() < 1e-8 && (adj - 1.0).abs() < 1e-8,
        format!("meta-regression vs normal equations over 100 fixtures: max gap {gap:.2e}; exact fixture has_M {coef:.6}, adj R2 {adj:.6}"),
    )
}

fn cca() -> Outcome {
    let full = cca_full_correlation(50, 24);
    let gap = cca_against_projected_gradient(20, 25);
    outcome(
        full < 1e-6 && gap < 1e-3,
        format!("CCA: identical/mixed off 1 by {full:.2e}, gap to projected-gradient oracle {gap:.2e}"),
    )
}

fn geospatial() -> Outcome {
    let mut fails = Vec::new();
    if !near_project_treats(24.9) || near_project_treats(25.1) {
        fails.push("25 km boundary");
    }
    let inside = [(3.349, 0.0), (-3.349, 0.0), (0.0, 3.349), (0.0, -3.349)];
    let outside = [(3.351, 0.0), (-3.351, 0.0), (0.0, 3.351), (0.0, -3.351)];
    for lat in [-33.9, -1.2, 0.0, 9.0, 36.5] {
        if inside.iter().any(|&(e, n)| !exact_project_treats(lat, e, n))
            || outside.iter().any(|&(e, n)| exact_project_treats(lat, e, n))
        {
            fails.push("square edges");
            break;
        }
    }
    let (low, kept_low) = finalize(99, 100);
    let (ok, kept_ok) = finalize(100, 100);
    if kept_low.is_some() || low.reason.as_deref() != Some("min-treated") || kept_ok.is_none() {
        fails.push("min-treated");
    }
    if ok.dropped_covariates != ["flat"] {
        fails.push("zero-variance covariate");
    }
    let (gap, mask_bad) = median_against_sort(200, 31);
    if gap != 0.0 || mask_bad {
        fails.push("median composite");
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            "geospatial: 24.9/25.1 km, +-3.35 km square, 99/100 treated, constant covariate, median of 200 masked stacks".into()
        } else {
            format!("geospatial: failed {}", fails.join(", "))
        },
    )
}

fn demo_manifest(cwd: &Path, config: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_geocausal"))
        .current_dir(cwd)
        .args(["all", "-c", config.to_str().unwrap(), "--workers", "1"])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    std::fs::read(cwd.join("demo-out/manifest.json")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (demo_manifest(d1.path(), &config), demo_manifest(d2.path(), &config)) {
        (Ok(a), Ok(b)) => outcome(
            a == b,
            format!(
                "two single-worker demo runs: manifests {} ({} bytes), {:.0}s",
                if a == b { "identical" } else { "differ" },
                a.len(),
                start.elapsed().as_secs_f64()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("demo run failed: {e}")),
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| {
        println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    };
    report(1, gradients());
    report(2, hajek());
    report(3, randomized_world());
    let runs = run_confounded(50);
    report(4, bias_ordering(&runs));
    report(5, predictability(&runs));
    report(6, auc_oracle());
    report(7, twfe_exact());
    report(8, meta());
    report(9, cca());
    report(10, geospatial());
    report(11, determinism());
    if failed == 0 {
        println!("acceptance: all 11 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 11 criteria failed");
        ExitCode::FAILURE
    }
}
