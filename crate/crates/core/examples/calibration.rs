//! ECE, temperature sweep and threshold abstention on a synthetic
//! overconfident ensemble.

use spectranet::bayes::{PredictiveDistribution, Source};
use spectranet::eval::{
    calibration_report, default_temperature_grid, records_from, threshold_abstain, top_k_accuracy, TemperMode,
};
use spectranet::manifest::Split;
use spectranet::rng::rng_from_seed;
use rand::Rng;

fn main() -> spectranet::Result<()> {
    let mut rng = rng_from_seed(9);
    let (n, classes, members) = (2000, 5, 8);
    let mut labels = Vec::with_capacity(n);
    let preds: Vec<PredictiveDistribution> = (0..n)
        .map(|_| {
            let y = rng.random_range(0..classes);
            labels.push(y);
            // members share one noisy vote and differ by a small jitter; the factor 4 overstates confidence
            let signal: f64 = rng.random_range(0.0..1.5);
            let shared: Vec<f64> = (0..classes)
                .map(|c| f64::from(u8::from(c == y)) * signal + rng.random_range(-1.0..1.0))
                .collect();
            let logits = (0..members)
                .map(|_| shared.iter().map(|v| 4.0 * (v + rng.random_range(-0.1..0.1))).collect())
                .collect();
            PredictiveDistribution::from_logits(Source::MultiSwa, logits)
        })
        .collect();
    let dn = vec![0.0; n];
    for mode in [TemperMode::Member, TemperMode::Ensemble] {
        let rep = calibration_report(&preds, &labels, &default_temperature_grid(), 15, mode)?;
        println!(
            "{mode:?} tempering: ECE {:.4} at T=1, best T {:.2} with ECE {:.4}",
            rep.ece,
            rep.best_t.unwrap_or(1.0),
            rep.ece_at_best_t.unwrap_or(rep.ece)
        );
    }
    let recs = records_from(&preds, &labels, &dn, Split::Test, 1.0, TemperMode::Member)?;
    println!("Top-1 {:.3}, Top-3 {:.3}", top_k_accuracy(&recs, 1)?, top_k_accuracy(&recs, 3)?);
    for t in [0.4, 0.6, 0.8] {
        let a = threshold_abstain(&recs, t)?;
        println!(
            "threshold {t}: {:.1}% uncertain, Top-1 on the rest {}",
            100.0 * a.uncertain_fraction,
            a.top1.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
    }
    Ok(())
}
