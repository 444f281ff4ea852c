//! Runtime self-test: re-runs the library's oracle suites at reduced scale
//! so a deployed binary can prove its numeric core on the spot.
//!
//! Each check compares an optimized code path against an independent naive
//! implementation from [`crate::reference`] (brute-force graph construction,
//! dense matrix PPR, exhaustive nearest-neighbor scans) or against a closed
//! form. These are the same oracles the test suite uses, packaged behind a
//! stable report type for the CLI's `selftest` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffusion::{ppr_row, DiffusionConfig, TransitionMatrix};
use crate::export::{self, Provenance};
use crate::forecast::{self, Fallback, ForecastConfig, ForecastMode};
use crate::graph::{BuildOptions, Mdbg, NodeKey};
use crate::ingest::TimeSeriesDataset;
use crate::query::{self, SampleConfig};
use crate::reference::{
    canonical_form, dense_ppr, naive_build, nearest_by_scan, random_fitted_instance,
    random_instance, random_transition,
};
use crate::discretize::Discretizer;
use crate::query::QueryWindow;

/// Outcome of one self-test check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Runs every check. `quick` trades instance counts for speed (for use on
/// slow or busy machines); the full run matches the acceptance scales more
/// closely. All randomness is seeded, so reports are reproducible.
pub fn run_all(quick: bool) -> Vec<CheckReport> {
    vec![
        construction_matches_naive_oracle(if quick { 60 } else { 250 }),
        sequential_weight_is_conserved(if quick { 60 } else { 250 }),
        ppr_matches_dense_solve(if quick { 15 } else { 50 }),
        ppr_closed_forms_hold(),
        resolution_matches_exhaustive_scan(if quick { 40 } else { 150 }),
        sampling_matches_multiplicities(if quick { 4_000 } else { 10_000 }),
        archives_round_trip(if quick { 5 } else { 20 }),
        forecaster_reproduces_periodic_series(),
    ]
}

/// True when every check passed.
pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

fn construction_matches_naive_oracle(instances: usize) -> CheckReport {
    let name = "construction-oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..instances {
        let (raw, disc, k) = random_instance(&mut rng);
        let opts = BuildOptions::default();
        let built = match Mdbg::build_with(&raw, &disc, k, &opts) {
            Ok(g) => g,
            Err(e) => {
                return CheckReport::new(name, false, format!("instance {i}: build failed: {e}"))
            }
        };
        if canonical_form(&built) != naive_build(&raw, &disc, k, &opts) {
            return CheckReport::new(
                name,
                false,
                format!("instance {i}: optimized and naive graphs differ"),
            );
        }
    }
    CheckReport::new(
        name,
        true,
        format!("{instances}/{instances} random instances match the brute-force builder"),
    )
}

fn sequential_weight_is_conserved(instances: usize) -> CheckReport {
    let name = "weight-conservation";
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..instances {
        let (raw, disc, k) = random_instance(&mut rng);
        let g = Mdbg::build(&raw, &disc, k).expect("build");
        let expected = (raw.len() - k + 1) as u64;
        for d in g.stats().per_dim {
            if d.seq_weight != expected {
                return CheckReport::new(
                    name,
                    false,
                    format!(
                        "instance {i} dim {}: total weight {} != S-k+1 = {expected}",
                        d.dim, d.seq_weight
                    ),
                );
            }
        }
    }
    CheckReport::new(
        name,
        true,
        format!("total sequential edge weight equals S-k+1 in all {instances} instances"),
    )
}

fn ppr_matches_dense_solve(instances: usize) -> CheckReport {
    let name = "ppr-dense-oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = DiffusionConfig::default();
    let mut worst = 0.0f64;
    for i in 0..instances {
        let dense = random_transition(&mut rng, 40);
        let t = TransitionMatrix::from_dense(&dense).expect("valid transition");
        let oracle = dense_ppr(&dense, cfg.teleport);
        for (s, oracle_row) in oracle.iter().enumerate() {
            let row = ppr_row(&t, s as u32, &cfg).expect("converges");
            for (v, o) in row.iter().zip(oracle_row) {
                worst = worst.max((v - o).abs());
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return CheckReport::new(
                    name,
                    false,
                    format!("instance {i} source {s}: row sums to {sum}"),
                );
            }
        }
    }
    let passed = worst <= 1e-6;
    CheckReport::new(
        name,
        passed,
        format!("max |power-iteration - dense solve| = {worst:.3e} over {instances} matrices"),
    )
}

fn ppr_closed_forms_hold() -> CheckReport {
    let name = "ppr-closed-form";
    // Doubly-uniform two-state chain: pi*T = (1/2, 1/2) for any probability
    // vector pi, so the fixed point is c*e_s + (1-c)*(1/2, 1/2) exactly.
    let dense = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let t = TransitionMatrix::from_dense(&dense).expect("valid");
    let cfg = DiffusionConfig::default();
    let row = ppr_row(&t, 0, &cfg).expect("converges");
    let c = cfg.teleport;
    let pi0 = c + (1.0 - c) * 0.5;
    let pi1 = (1.0 - c) * 0.5;
    let ok_closed = (row[0] - pi0).abs() <= 1e-12 && (row[1] - pi1).abs() <= 1e-12;

    // Teleport 1 returns exactly the indicator of the source.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dense = random_transition(&mut rng, 12);
    let t = TransitionMatrix::from_dense(&dense).expect("valid");
    let row = ppr_row(
        &t,
        0,
        &DiffusionConfig {
            teleport: 1.0,
            ..DiffusionConfig::default()
        },
    )
    .expect("converges");
    let ok_teleport =
        row[0] == 1.0 && row[1..].iter().all(|&v| v == 0.0);

    let passed = ok_closed && ok_teleport;
    CheckReport::new(
        name,
        passed,
        format!("2-state closed form: {ok_closed}; teleport=1 identity: {ok_teleport}"),
    )
}

fn resolution_matches_exhaustive_scan(instances: usize) -> CheckReport {
    let name = "resolve-oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut queries = 0usize;
    for i in 0..instances {
        let (raw, disc, k) = random_instance(&mut rng);
        let g = Mdbg::build(&raw, &disc, k).expect("build");
        for _ in 0..20 {
            let dim = rng.random_range(1..=raw.dims() as u16);
            let alpha = disc.alphabet_sizes[dim as usize - 1];
            let symbols: Vec<u16> = (0..k - 1)
                .map(|_| rng.random_range(1..=alpha.saturating_add(2)))
                .collect();
            let q = NodeKey::new(dim, symbols);
            let got = query::resolve(&g, &q).expect("dimension is populated");
            let want = nearest_by_scan(&g, &q).expect("dimension is populated");
            if got != want {
                return CheckReport::new(
                    name,
                    false,
                    format!("instance {i}: resolve({q}) = {got:?}, oracle says {want:?}"),
                );
            }
            queries += 1;
        }
    }
    CheckReport::new(
        name,
        true,
        format!("{queries} resolutions matched the exhaustive scan"),
    )
}

fn sampling_matches_multiplicities(draws: usize) -> CheckReport {
    let name = "sampling-frequencies";
    // One node whose feature multiset is {1.0: 3 positions, 1.25: 1}.
    let raw = TimeSeriesDataset::new(
        vec![vec![1.0, 5.0, 1.0, 5.0, 1.0, 5.0, 1.25]],
        vec!["d0".into()],
        None,
    )
    .expect("valid");
    let disc = Discretizer::fit_uniform(&raw, &[2]).expect("fit");
    let discrete = disc.apply(&raw).expect("apply");
    let g = Mdbg::build(&raw, &discrete, 2).expect("build");
    let node = g
        .node_lookup(&NodeKey::new(1, vec![1]))
        .expect("well-formed key")
        .expect("node exists");
    let set = g.feature_multiset(node);
    if set.len() != 2 {
        return CheckReport::new(name, false, format!("fixture multiset: {set:?}"));
    }
    let samples = query::sample_features(
        &g,
        node,
        &SampleConfig {
            f: draws,
            seed: 99,
        },
    )
    .expect("sampling succeeds");
    let low = samples.iter().filter(|t| t.0[0] == 1.0).count() as f64;
    let high = draws as f64 - low;
    // Pearson chi-square against expected (0.75, 0.25); df = 1, and the
    // 0.01 critical value is 6.635.
    let e_low = draws as f64 * 0.75;
    let e_high = draws as f64 * 0.25;
    let chi2 = (low - e_low).powi(2) / e_low + (high - e_high).powi(2) / e_high;
    let passed = chi2 <= 6.635;
    CheckReport::new(
        name,
        passed,
        format!("chi-square {chi2:.3} over {draws} draws (critical 6.635 at p=0.01)"),
    )
}

fn archives_round_trip(instances: usize) -> CheckReport {
    let name = "export-round-trip";
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for i in 0..instances {
        let (raw, disc, discrete, k) = random_fitted_instance(&mut rng);
        let g = Mdbg::build(&raw, &discrete, k).expect("build");
        let dir = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return CheckReport::new(name, false, format!("tempdir: {e}")),
        };
        if let Err(e) = export::save(&g, None, Some(&disc), &Provenance::default(), dir.path()) {
            return CheckReport::new(name, false, format!("instance {i}: save failed: {e}"));
        }
        match export::load(dir.path()) {
            Ok(archive) => {
                if archive.graph != g {
                    return CheckReport::new(
                        name,
                        false,
                        format!("instance {i}: archive does not equal the saved graph"),
                    );
                }
            }
            Err(e) => {
                return CheckReport::new(name, false, format!("instance {i}: load failed: {e}"))
            }
        }
    }
    CheckReport::new(
        name,
        true,
        format!("{instances}/{instances} archives reloaded losslessly"),
    )
}

fn forecaster_reproduces_periodic_series() -> CheckReport {
    let name = "forecast-periodic";
    let series: Vec<f64> = (0..40).map(|t| if t % 2 == 0 { 0.0 } else { 10.0 }).collect();
    let raw =
        TimeSeriesDataset::new(vec![series.clone()], vec!["w".into()], None).expect("valid");
    let disc = Discretizer::fit_uniform(&raw, &[4]).expect("fit");
    let discrete = disc.apply(&raw).expect("apply");
    let g = Mdbg::build(&raw, &discrete, 3).expect("build");
    let window = QueryWindow::from_raw(vec![series[..8].to_vec()], &disc).expect("window");
    let horizon = 12;
    let pred = forecast::forecast(
        &g,
        &disc,
        &window,
        &ForecastConfig {
            horizon,
            mode: ForecastMode::Greedy,
            fallback: Fallback::NearestNode,
        },
    )
    .expect("forecast");
    let half_bin = 10.0 / 4.0 / 2.0;
    let mut ok = true;
    for (step, &p) in pred[0].iter().enumerate() {
        let truth = if (8 + step) % 2 == 0 { 0.0 } else { 10.0 };
        if (p - truth).abs() > half_bin + 1e-12 {
            ok = false;
        }
    }
    CheckReport::new(
        name,
        ok,
        format!("greedy forecast tracks a period-2 square wave over {horizon} steps"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_self_test_passes() {
        let reports = run_all(true);
        assert_eq!(reports.len(), 8);
        for r in &reports {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert!(all_passed(&reports));
    }
}
