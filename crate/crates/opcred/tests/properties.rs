//! Property-based and statistical tests of the library's contracts:
//! algebraic invariants via proptest, distributional claims via seeded
//! simulation with explicit error bands.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use opcred::calibration::{calibrate_severity_scales, SeverityOpinion};
use opcred::capital::{quantile, run_capital, simulate_annual_loss, CapitalConfig, CellLossModel};
use opcred::credibility::{credibility_combine, truncate_nonnegative, FixedPointSettings};
use opcred::domain::{
    load_losses, write_losses, CellConfig, CellConfigSet, CellKey, LossPanel, LossRecord,
};
use opcred::frequency::{
    apply_industry_frequency, fit_bank_frequency, frequency_weight, industry_rate_injection,
};
use opcred::severity::{
    apply_industry_severity, industry_profile_injection, pareto_mle, severity_weight,
};
use opcred::synth::{self, SynthConfig};

fn key(bank: &str, cell: &str) -> CellKey {
    CellKey::new(bank, cell)
}

// ---------------------------------------------------------------------------
// Algebraic invariants (proptest)
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn combine_stays_between_its_inputs(
        individual in -1e9f64..1e9,
        collective in -1e9f64..1e9,
        weight in 0.0f64..=1.0,
    ) {
        let combined = credibility_combine(individual, collective, weight).unwrap();
        let low = individual.min(collective);
        let high = individual.max(collective);
        // Bracketing holds up to rounding of the convex combination.
        let slack = 8.0 * f64::EPSILON * individual.abs().max(collective.abs()).max(1.0);
        prop_assert!(low - slack <= combined && combined <= high + slack);
    }

    #[test]
    fn combine_is_monotone_in_each_argument(
        individual in -1e6f64..1e6,
        collective in -1e6f64..1e6,
        bump in 0.0f64..1e5,
        w1 in 0.0f64..=1.0,
        w2 in 0.0f64..=1.0,
    ) {
        let base = credibility_combine(individual, collective, w1).unwrap();
        // Monotone in the individual estimate.
        let up = credibility_combine(individual + bump, collective, w1).unwrap();
        prop_assert!(up >= base);
        // Monotone in the collective estimate.
        let up = credibility_combine(individual, collective + bump, w1).unwrap();
        prop_assert!(up >= base);
        // Monotone in the weight, with slope sign individual - collective.
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        let a = credibility_combine(individual, collective, lo).unwrap();
        let b = credibility_combine(individual, collective, hi).unwrap();
        prop_assert!((b - a) * (individual - collective) >= -1e-9 * individual.abs().max(collective.abs()).max(1.0));
    }

    #[test]
    fn combine_is_linear_in_the_estimates(
        x1 in -1e6f64..1e6,
        c1 in -1e6f64..1e6,
        x2 in -1e6f64..1e6,
        c2 in -1e6f64..1e6,
        weight in 0.0f64..=1.0,
    ) {
        let joint = credibility_combine(x1 + x2, c1 + c2, weight).unwrap();
        let split = credibility_combine(x1, c1, weight).unwrap()
            + credibility_combine(x2, c2, weight).unwrap();
        let scale = joint.abs().max(split.abs()).max(1.0);
        prop_assert!((joint - split).abs() <= 1e-9 * scale);
    }

    #[test]
    fn truncation_is_the_positive_part(estimate in -1e12f64..1e12) {
        let (value, truncated) = truncate_nonnegative(estimate);
        if estimate > 0.0 {
            prop_assert_eq!(value, estimate);
            prop_assert!(!truncated);
        } else {
            prop_assert_eq!(value, 0.0);
            prop_assert!(truncated);
        }
    }

    #[test]
    fn severity_weight_grows_with_observations(
        k in 3usize..500,
        profile in 0.01f64..100.0,
        sd in 0.01f64..100.0,
    ) {
        let smaller = severity_weight(k, profile, sd);
        let larger = severity_weight(k + 1, profile, sd);
        prop_assert!((0.0..1.0).contains(&smaller));
        prop_assert!(larger > smaller);
    }

    #[test]
    fn frequency_weight_grows_with_volume(
        volume in 0.1f64..1e6,
        extra in 0.1f64..1e6,
        profile in 0.01f64..100.0,
        variance in 1e-6f64..100.0,
    ) {
        let smaller = frequency_weight(volume, profile, variance);
        let larger = frequency_weight(volume + extra, profile, variance);
        prop_assert!((0.0..1.0).contains(&smaller));
        prop_assert!(larger > smaller);
    }

    #[test]
    fn calibration_scales_with_opinion_power(
        threshold_ratio in 1.5f64..1e4,
        probability in 1e-6f64..0.9,
        power in 0.1f64..5.0,
        reference in 0.1f64..10.0,
    ) {
        let configs = CellConfigSet::new(vec![CellConfig {
            bank_id: "1".into(),
            cell_id: "1".into(),
            threshold: 1.0,
            severity_scale: 1.0,
            frequency_scale: 1.0,
        }]).unwrap();
        let base_opinion = SeverityOpinion {
            key: key("1", "1"),
            level: threshold_ratio,
            exceedance_probability: probability,
        };
        let powered_opinion = SeverityOpinion {
            key: key("1", "1"),
            level: threshold_ratio,
            exceedance_probability: probability.powf(power),
        };
        let base = calibrate_severity_scales(&[base_opinion], &configs, reference).unwrap();
        let powered = calibrate_severity_scales(&[powered_opinion], &configs, reference).unwrap();
        let a = base[&key("1", "1")];
        let b = powered[&key("1", "1")];
        // Raising the opinion probability to a power scales the implied
        // a priori constant by the same power.
        prop_assert!((b - power * a).abs() <= 1e-9 * (power * a).abs().max(1e-12));
    }

    #[test]
    fn duplicated_opinions_match_the_single_formula(
        threshold_ratio in 1.5f64..1e4,
        probability in 1e-6f64..0.9,
        copies in 2usize..6,
        reference in 0.1f64..10.0,
    ) {
        let configs = CellConfigSet::new(vec![CellConfig {
            bank_id: "1".into(),
            cell_id: "1".into(),
            threshold: 1.0,
            severity_scale: 1.0,
            frequency_scale: 1.0,
        }]).unwrap();
        let one = SeverityOpinion {
            key: key("1", "1"),
            level: threshold_ratio,
            exceedance_probability: probability,
        };
        let single = calibrate_severity_scales(&[one.clone()], &configs, reference).unwrap();
        let repeated: Vec<SeverityOpinion> = std::iter::repeat(one).take(copies).collect();
        let pooled = calibrate_severity_scales(&repeated, &configs, reference).unwrap();
        let a = single[&key("1", "1")];
        let b = pooled[&key("1", "1")];
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12));
    }

    #[test]
    fn loss_csv_round_trips(
        amounts in prop::collection::vec(1.0f64..1e12, 1..40),
    ) {
        let cells = ["1", "2", "3"];
        let configs = CellConfigSet::new(
            cells
                .iter()
                .map(|&cell| CellConfig {
                    bank_id: "1".into(),
                    cell_id: cell.into(),
                    threshold: 1.0,
                    severity_scale: 1.0,
                    frequency_scale: 1.0,
                })
                .collect(),
        )
        .unwrap();
        let records: Vec<LossRecord> = amounts
            .iter()
            .enumerate()
            .map(|(i, &amount)| LossRecord {
                bank_id: "1".into(),
                cell_id: cells[i % cells.len()].into(),
                amount,
            })
            .collect();
        let panel = LossPanel::from_records(&records, &configs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("losses.csv");
        write_losses(&panel, &path).unwrap();
        let reloaded = load_losses(&path, &configs).unwrap();
        prop_assert_eq!(panel.len(), reloaded.len());
        for ((key_a, cell_a), (key_b, cell_b)) in panel.cells().zip(reloaded.cells()) {
            prop_assert_eq!(key_a, key_b);
            prop_assert_eq!(&cell_a.amounts, &cell_b.amounts);
        }
    }
}

// ---------------------------------------------------------------------------
// Statistical contracts (seeded simulations with explicit bands)
// ---------------------------------------------------------------------------

#[test]
fn pareto_fit_is_stable_under_higher_thresholds() {
    // Losses above any higher level follow the same tail law; fits above
    // L = 1 and above L = 2 must agree within sampling error.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let tail = 2.0;
    let losses: Vec<f64> = (0..20_000)
        .map(|_| {
            let u: f64 = rng.random();
            (1.0 - u).powf(-1.0 / tail)
        })
        .collect();
    let (_, fit_low) = pareto_mle(&losses, 1.0, 1.0).unwrap();
    let above: Vec<f64> = losses.iter().copied().filter(|&x| x >= 2.0).collect();
    let (_, fit_high) = pareto_mle(&above, 2.0, 1.0).unwrap();

    let se_low = tail / (losses.len() as f64).sqrt();
    let se_high = tail / (above.len() as f64).sqrt();
    assert!(
        (fit_low - tail).abs() <= 4.0 * se_low,
        "full-sample fit {fit_low:.4} strays from {tail}"
    );
    assert!(
        (fit_high - tail).abs() <= 4.0 * se_high,
        "thinned fit {fit_high:.4} strays from {tail} (K = {})",
        above.len()
    );
}

#[test]
fn poisson_counts_match_their_conditional_moments() {
    let rate = 3.7;
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let poisson = Poisson::new(rate).unwrap();
    let counts: Vec<f64> = (0..n).map(|_| poisson.sample(&mut rng)).collect();
    let nf = n as f64;
    let mean = counts.iter().sum::<f64>() / nf;
    let variance = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (nf - 1.0);

    let mean_se = (rate / nf).sqrt();
    assert!(
        (mean - rate).abs() <= 3.0 * mean_se,
        "sample mean {mean:.4} vs rate {rate}"
    );
    // Var(S^2) for Poisson uses the fourth central moment: kurtosis 3 + 1/rate.
    let variance_se = rate * ((2.0 + 1.0 / rate) / nf).sqrt();
    assert!(
        (variance - rate).abs() <= 3.0 * variance_se,
        "sample variance {variance:.4} vs rate {rate}"
    );
}

#[test]
fn zero_loss_probability_matches_the_poisson_atom() {
    // With rate ln 2 the annual loss is zero with probability 1/2.
    let model = CellLossModel::new(key("1", "1"), std::f64::consts::LN_2, 2.0, 1.0, None).unwrap();
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let zeros = (0..n)
        .filter(|_| simulate_annual_loss(&model, &mut rng) == 0.0)
        .count();
    let fraction = zeros as f64 / n as f64;
    let band = 3.0 * (0.25f64 / n as f64).sqrt();
    assert!(
        (fraction - 0.5).abs() <= band,
        "zero fraction {fraction:.5} outside {band:.5} of 0.5"
    );
}

#[test]
fn annual_loss_mean_obeys_the_wald_identity() {
    // rate 1, tail 2, threshold 1: E[Z] = E[N] E[X] = 1 * 2.
    let model = CellLossModel::new(key("1", "1"), 1.0, 2.0, 1.0, None).unwrap();
    let config = CapitalConfig {
        paths: 1_000_000,
        seed: 23,
        quantiles: vec![0.5],
    };
    let result = run_capital(&[model], &config).unwrap();
    let standard_error = result.bank.std_dev / (config.paths as f64).sqrt();
    assert!(
        (result.bank.mean - 2.0).abs() <= 3.0 * standard_error,
        "mean {:.4} vs 2.0 (SE {standard_error:.4})",
        result.bank.mean
    );
}

#[test]
fn median_of_uniform_draws_sits_at_one_half() {
    let n = 1_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut sample: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    sample.sort_unstable_by(f64::total_cmp);
    let estimate = quantile(&sample, 0.5).unwrap();
    assert!(
        (estimate.value - 0.5).abs() <= 0.002,
        "median {:.5}",
        estimate.value
    );
    assert!(estimate.lower <= estimate.value && estimate.value <= estimate.upper);
}

fn ks_distance(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut distance = 0.0f64;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        distance = distance.max((i as f64 / n - j as f64 / m).abs());
    }
    distance
}

#[test]
fn split_cells_superpose_like_a_single_poisson() {
    // Two independent cells at half the rate match one cell at full rate.
    let paths = 1_000_000u64;
    let split = vec![
        CellLossModel::new(key("1", "a"), 0.5, 2.0, 1.0, None).unwrap(),
        CellLossModel::new(key("1", "b"), 0.5, 2.0, 1.0, None).unwrap(),
    ];
    let merged = vec![CellLossModel::new(key("1", "a"), 1.0, 2.0, 1.0, None).unwrap()];
    let split_result = run_capital(
        &split,
        &CapitalConfig {
            paths,
            seed: 101,
            quantiles: vec![0.999],
        },
    )
    .unwrap();
    let merged_result = run_capital(
        &merged,
        &CapitalConfig {
            paths,
            seed: 202,
            quantiles: vec![0.999],
        },
    )
    .unwrap();
    let distance = ks_distance(split_result.bank_sample, merged_result.bank_sample);
    // Two-sample Kolmogorov-Smirnov 1% critical value at n = m = 1e6.
    let critical = 1.628 * ((2.0 / paths as f64) as f64).sqrt();
    assert!(
        distance <= critical,
        "KS distance {distance:.5} above the 1% critical value {critical:.5}"
    );
}

#[test]
fn var_is_monotone_in_rate_and_tail() {
    let paths = 300_000u64;
    let seed = 7;
    let var_for = |rate: f64, tail: f64| {
        let model = CellLossModel::new(key("1", "1"), rate, tail, 1.0, None).unwrap();
        let config = CapitalConfig {
            paths,
            seed,
            quantiles: vec![0.999],
        };
        run_capital(&[model], &config).unwrap().bank.quantiles[0].value
    };
    // Nondecreasing in the arrival rate.
    let low = var_for(0.05, 2.0);
    let mid = var_for(0.1, 2.0);
    let high = var_for(0.2, 2.0);
    assert!(
        low <= mid && mid <= high,
        "rate grid VaR not monotone: {low:.3}, {mid:.3}, {high:.3}"
    );
    // Nonincreasing in the tail parameter.
    let heavy = var_for(0.1, 1.5);
    let base = var_for(0.1, 2.0);
    let light = var_for(0.1, 3.0);
    assert!(
        heavy >= base && base >= light,
        "tail grid VaR not monotone: {heavy:.3}, {base:.3}, {light:.3}"
    );
}

// ---------------------------------------------------------------------------
// Hierarchy-direction and shrinkage contracts
// ---------------------------------------------------------------------------

#[test]
fn injected_collective_pulls_all_cells_in_its_direction() {
    let configs = opcred::domain::load_configs(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo/cells.json"),
    )
    .unwrap();
    let counts = opcred::domain::load_counts(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo/counts.csv"),
        &configs,
    )
    .unwrap();
    let settings = FixedPointSettings::default();
    let base = fit_bank_frequency(&counts, &settings).unwrap();
    let profile = base.profile.profile;

    // Collective above the bank profile: every final estimate moves up.
    let mut raised = base.clone();
    apply_industry_frequency(&mut raised, &industry_rate_injection(profile + 0.5, 0.3).unwrap());
    for (cell, adjusted) in base.cells.iter().zip(&raised.cells) {
        let after = adjusted.adjusted_credibility.unwrap();
        assert!(cell.weight < 1.0);
        assert!(
            after > cell.credibility,
            "cell {}: {after:.6} not above {:.6}",
            cell.key,
            cell.credibility
        );
    }

    // Collective below: every final estimate moves down.
    let mut lowered = base.clone();
    apply_industry_frequency(
        &mut lowered,
        &industry_rate_injection((profile - 0.5).max(0.05), 0.3).unwrap(),
    );
    for (cell, adjusted) in base.cells.iter().zip(&lowered.cells) {
        let after = adjusted.adjusted_credibility.unwrap();
        assert!(
            after < cell.credibility,
            "cell {}: {after:.6} not below {:.6}",
            cell.key,
            cell.credibility
        );
    }
}

#[test]
fn credibility_estimates_stay_between_mle_and_profile() {
    for seed in [1u64, 2, 3] {
        let data = synth::generate(&SynthConfig {
            banks: 3,
            cells: 8,
            years: 8,
            losses_per_cell: 9,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let configs = CellConfigSet::new(data.configs.clone()).unwrap();
        let settings = FixedPointSettings {
            max_iterations: 50_000,
            ..FixedPointSettings::default()
        };

        let losses = LossPanel::from_records(&data.losses, &configs).unwrap();
        let severity = opcred::severity::fit_industry_severity(&losses, &settings).unwrap();
        for bank in &severity.banks {
            let bottom_up = bank.profile.profile;
            let adjusted = bank.profile.adjusted_profile.unwrap();
            let collective = severity.industry.collective;
            assert!(
                bottom_up.min(collective) <= adjusted && adjusted <= bottom_up.max(collective),
                "bank {} adjusted profile escapes its bracket",
                bank.profile.bank_id
            );
            for cell in &bank.cells {
                let mle = cell.mle.unwrap();
                assert!(
                    mle.min(bottom_up) <= cell.credibility
                        && cell.credibility <= mle.max(bottom_up),
                    "cell {} bank-tier estimate escapes [MLE, profile]",
                    cell.key
                );
                let industry_tier = cell.adjusted_credibility.unwrap();
                assert!(
                    mle.min(adjusted) <= industry_tier && industry_tier <= mle.max(adjusted),
                    "cell {} industry-tier estimate escapes [MLE, adjusted profile]",
                    cell.key
                );
            }
        }

        let count_panel = opcred::domain::CountPanel::from_records(&data.counts, &configs).unwrap();
        let frequency = opcred::frequency::fit_industry_frequency(&count_panel, &settings).unwrap();
        for bank in &frequency.banks {
            let bottom_up = bank.profile.profile;
            let adjusted = bank.profile.adjusted_profile.unwrap();
            let collective = frequency.industry.collective;
            assert!(
                bottom_up.min(collective) <= adjusted && adjusted <= bottom_up.max(collective)
            );
            for cell in &bank.cells {
                assert!(
                    cell.mle.min(bottom_up) <= cell.credibility
                        && cell.credibility <= cell.mle.max(bottom_up)
                );
                let industry_tier = cell.adjusted_credibility.unwrap();
                assert!(
                    cell.mle.min(adjusted) <= industry_tier
                        && industry_tier <= cell.mle.max(adjusted)
                );
            }
        }
    }
}

#[test]
fn severity_injection_mirrors_the_frequency_direction_rule() {
    let data = synth::generate(&SynthConfig {
        banks: 1,
        cells: 10,
        years: 5,
        losses_per_cell: 10,
        seed: 12,
        ..SynthConfig::default()
    })
    .unwrap();
    let configs = CellConfigSet::new(data.configs.clone()).unwrap();
    let losses = LossPanel::from_records(&data.losses, &configs).unwrap();
    let base = opcred::severity::fit_bank_severity(&losses, &FixedPointSettings::default()).unwrap();
    let profile = base.profile.profile;

    let mut raised = base.clone();
    apply_industry_severity(
        &mut raised,
        &industry_profile_injection(profile * 1.5, 0.4).unwrap(),
    );
    for (cell, adjusted) in base.cells.iter().zip(&raised.cells) {
        assert!(adjusted.adjusted_credibility.unwrap() > cell.credibility);
    }

    let mut lowered = base.clone();
    apply_industry_severity(
        &mut lowered,
        &industry_profile_injection(profile * 0.5, 0.4).unwrap(),
    );
    for (cell, adjusted) in base.cells.iter().zip(&lowered.cells) {
        assert!(adjusted.adjusted_credibility.unwrap() < cell.credibility);
    }
}
