use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use spectranet::bayes::{PredictiveDistribution, Source, SwaState};
use spectranet::eval::{
    argmax, confusion_matrix, ece, rank_of, records_from, spearman, threshold_abstain, top_k_accuracy, TemperMode,
};
use spectranet::manifest::Split;
use spectranet::metrics::{dn_med, DnMedConfig};
use spectranet::model::{Layout, ParameterVector};
use spectranet::rng::rng_from_seed;
use spectranet::sim::{
    calibrate_exposure, compose_sed, render_frame, AtmosphereModel, DatasetSpec, Frame, InstrumentModel, Orientation,
    SolarSpectrum, SOLAR_TEMPERATURE_K,
};

fn logits(classes: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, classes)
}

/// Ensembles of `members` members over `classes` classes with labels.
fn ensembles(n: usize, members: usize, classes: usize) -> impl Strategy<Value = (Vec<PredictiveDistribution>, Vec<usize>)> {
    (
        prop::collection::vec(prop::collection::vec(logits(classes), members), n),
        prop::collection::vec(0..classes, n),
    )
        .prop_map(|(l, y)| {
            (
                l.into_iter()
                    .map(|m| PredictiveDistribution::from_logits(Source::MultiSwa, m))
                    .collect(),
                y,
            )
        })
}

fn recs(preds: &[PredictiveDistribution], labels: &[usize], t: f64) -> Vec<spectranet::eval::EvalRecord> {
    records_from(preds, labels, &vec![0.0; labels.len()], Split::Test, t, TemperMode::Member).unwrap()
}

fn rendered() -> &'static (Frame, DnMedConfig) {
    static FRAME: OnceLock<(Frame, DnMedConfig)> = OnceLock::new();
    FRAME.get_or_init(|| {
        let instr = InstrumentModel::default();
        let class = &DatasetSpec::default().class_library().unwrap()[2];
        let sun = SolarSpectrum::blackbody(&instr.grid, SOLAR_TEMPERATURE_K);
        let atm = AtmosphereModel::parametric(&instr.grid, 1.2, 10.0).unwrap();
        let sed = compose_sed(class, &Orientation::NADIR, &sun, &atm).unwrap();
        let scale = calibrate_exposure(&sed, &instr, 400.0).unwrap();
        let frame = render_frame(&sed, &instr, scale, &mut rng_from_seed(5)).unwrap();
        (frame, instr.dnmed_config())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ece_lies_in_unit_interval((preds, labels) in ensembles(40, 3, 5), bins in 1usize..30) {
        let rep = ece(&recs(&preds, &labels, 1.0), bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&rep.ece));
        let mass: f64 = rep.reliability.iter().map(|b| b.mass).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tempering_keeps_single_member_ranking(
        (preds, labels) in ensembles(30, 1, 6).prop_filter("distinct logits", |(p, _)| p.iter().all(|d| {
            let mut l = d.member_logits[0].clone();
            l.sort_by(f64::total_cmp);
            l.windows(2).all(|w| w[1] - w[0] > 1e-6)
        })),
        t in 0.1..8.0f64,
    ) {
        let base = recs(&preds, &labels, 1.0);
        let hot = recs(&preds, &labels, t);
        for (a, b) in base.iter().zip(&hot) {
            for c in 0..6 {
                prop_assert_eq!(rank_of(&a.probs, c), rank_of(&b.probs, c));
            }
        }
        for k in 1..=6 {
            prop_assert_eq!(top_k_accuracy(&base, k).unwrap(), top_k_accuracy(&hot, k).unwrap());
        }
    }

    #[test]
    fn top_k_is_nondecreasing_in_k((preds, labels) in ensembles(30, 2, 5)) {
        let r = recs(&preds, &labels, 1.0);
        let acc: Vec<f64> = (1..=5).map(|k| top_k_accuracy(&r, k).unwrap()).collect();
        prop_assert!(acc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(acc[4], 1.0);
    }

    #[test]
    fn uncertain_share_grows_with_threshold((preds, labels) in ensembles(50, 4, 4), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let r = recs(&preds, &labels, 1.0);
        let (lo, hi) = (a.min(b), a.max(b));
        let (x, y) = (threshold_abstain(&r, lo).unwrap(), threshold_abstain(&r, hi).unwrap());
        prop_assert!(x.uncertain_fraction <= y.uncertain_fraction);
        prop_assert!(x.n_confident >= y.n_confident);
        prop_assert_eq!(threshold_abstain(&r, 0.0).unwrap().uncertain_fraction, 0.0);
    }

    #[test]
    fn confusion_counts_every_record((preds, labels) in ensembles(60, 2, 4)) {
        let r = recs(&preds, &labels, 1.0);
        let cm = confusion_matrix(&r).unwrap();
        prop_assert_eq!(cm.total(), 60);
        for (c, row) in cm.counts.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), labels.iter().filter(|&&y| y == c).count());
        }
        prop_assert!((cm.micro_recall() - top_k_accuracy(&r, 1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ensemble_mean_ignores_member_order(members in prop::collection::vec(logits(5), 2..8), shift in 1usize..8) {
        let a = PredictiveDistribution::from_logits(Source::MultiSwag, members.clone());
        let mut rotated = members;
        let len = rotated.len();
        rotated.rotate_left(shift % len);
        let b = PredictiveDistribution::from_logits(Source::MultiSwag, rotated);
        prop_assert_eq!(a.mean(), b.mean());
        prop_assert_eq!(a.median(), b.median());
        prop_assert!((a.mean().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(argmax(&a.mean()), argmax(&b.mean()));
    }

    #[test]
    fn swa_running_mean_matches_direct_mean(xs in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 6), 1..30)) {
        let layout = Arc::new(Layout::from_shapes([("w", &[2, 3][..])]));
        let mut swa = SwaState::new(layout.clone());
        for x in &xs {
            swa.update(&ParameterVector::new(layout.clone(), x.clone()).unwrap()).unwrap();
        }
        for (j, m) in swa.mean.values.iter().enumerate() {
            let direct = xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64;
            prop_assert!((m - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
        prop_assert_eq!(swa.n_collected, xs.len());
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Some(r) = spearman(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((spearman(&y, &x).unwrap() - r).abs() < 1e-12);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((spearman(&x, &neg).unwrap() + r).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dn_med_ignores_bias_and_scales_with_gain(bias in 0.0..5000.0f64, gain in 0.1..20.0f64) {
        let (frame, cfg) = rendered();
        let base = dn_med(frame, cfg).unwrap().dnmed;
        let map = |f: &dyn Fn(f64) -> f64| Frame::new(frame.height, frame.width, frame.pixels.iter().map(|&p| f(p)).collect()).unwrap();
        let biased = dn_med(&map(&|p| p + bias), cfg).unwrap().dnmed;
        let scaled = dn_med(&map(&|p| gain * p), cfg).unwrap().dnmed;
        prop_assert!((biased - base).abs() <= 1e-6 * base.abs().max(1.0), "{base} vs {biased}");
        prop_assert!((scaled - gain * base).abs() <= 1e-9 * (gain * base).abs().max(1.0), "{} vs {scaled}", gain * base);
    }
}
