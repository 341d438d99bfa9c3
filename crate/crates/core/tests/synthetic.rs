use tap_core::fixtures::precision_truth;
use tap_core::synthetic::{add_noise, perturb_parameters, NoiseModel};
use tap_core::FluxSeries;

fn flat(n: usize, gases: &[&str]) -> FluxSeries {
    let time = (1..=n).map(|i| i as f64 * 1e-3).collect();
    FluxSeries::zeros(time, gases.iter().map(|g| g.to_string()).collect())
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn noise_moments_and_independence() {
    let flux = flat(100_000, &["A", "B"]);
    let noisy = add_noise(&flux, &NoiseModel::absolute(vec![0.1, 0.1], 11)).unwrap();
    for g in 0..2 {
        let (m, sd) = mean_sd(&noisy.flux[g]);
        assert!(m.abs() < 0.002, "mean {m}");
        assert!((sd / 0.1 - 1.0).abs() < 0.01, "sd {sd}");
    }
    let (a, b) = (&noisy.flux[0], &noisy.flux[1]);
    let corr = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
    assert!(corr.abs() < 0.02, "cross-correlation {corr}");
}

#[test]
fn zero_sigma_leaves_flux_untouched() {
    let mut flux = flat(50, &["A"]);
    flux.flux[0].iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
    assert_eq!(add_noise(&flux, &NoiseModel::absolute(vec![0.0], 3)).unwrap(), flux);
}

#[test]
fn perturbation_moments() {
    let truth = precision_truth();
    let base = truth.get("Ga3").unwrap();
    let draws: Vec<f64> = (0..10_000u64)
        .map(|seed| perturb_parameters(&truth, 0.05, seed).unwrap().get("Ga3").unwrap() - base)
        .collect();
    let (m, sd) = mean_sd(&draws);
    assert!(m.abs() < 0.002, "mean {m}");
    assert!((sd / 0.05 - 1.0).abs() < 0.02, "sd {sd}");
}

#[test]
fn perturbation_is_seeded_and_spares_fixed_entries() {
    let truth = precision_truth();
    let a = perturb_parameters(&truth, 0.05, 42).unwrap();
    let b = perturb_parameters(&truth, 0.05, 42).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, perturb_parameters(&truth, 0.05, 43).unwrap());
    for (e, t) in a.entries.iter().zip(&truth.entries) {
        if !t.free {
            assert_eq!(e.value, t.value, "{}", e.name);
        }
    }
    assert_eq!(perturb_parameters(&truth, 0.0, 42).unwrap(), truth);
    assert!(perturb_parameters(&truth, -0.1, 42).is_err());
}
