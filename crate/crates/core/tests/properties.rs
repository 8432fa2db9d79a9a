use aecf::data::{fit_norm, make_windows, LabelRule, SeriesFile};
use aecf::detector::{Confusion, DetectorProfile};
use aecf::evalx::{distance, sparsity};
use aecf::explainer::{explain_counterfactual, select_features, ExplainConfig, FeatureMask, SelectorConfig};
use aecf::model::{AeModel, Architecture};
use aecf::tensor::{anomaly_score, anomaly_score_window};
use aecf::Tensor;
use proptest::prelude::*;

fn tensor(n: usize, l: usize, values: &[f64]) -> Tensor {
    Tensor::new(vec![n, l], values[..n * l].to_vec()).unwrap()
}

fn series(name: &str, channels: Vec<Vec<f64>>, labels: Option<Vec<bool>>) -> SeriesFile {
    let len = channels[0].len();
    SeriesFile {
        source: name.into(),
        offset: 0,
        timestamps: (0..len).map(|t| t as f64).collect(),
        channel_names: (0..channels.len()).map(|i| format!("c{i}")).collect(),
        channels,
        labels,
    }
}

proptest! {
    #[test]
    fn score_is_mean_of_window_scores(
        n in 1usize..6,
        l in 1usize..20,
        a in prop::collection::vec(-3.0f64..3.0, 120),
        b in prop::collection::vec(-3.0f64..3.0, 120),
    ) {
        let (x, y) = (tensor(n, l, &a), tensor(n, l, &b));
        let asw = anomaly_score_window(&x, &y).unwrap();
        let diff = (asw.mean() - anomaly_score(&x, &y).unwrap()).abs();
        prop_assert!(diff <= 1e-12);
        prop_assert!(asw.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn window_count_formula(len in 1usize..200, l in 1usize..70, stride in 1usize..9) {
        let s = series("a", vec![(0..len).map(|v| v as f64).collect()], None);
        let set = make_windows(&s, l, stride, LabelRule::Any).unwrap();
        let expect = if len >= l { (len - l) / stride + 1 } else { 0 };
        prop_assert_eq!(set.len(), expect);
    }

    #[test]
    fn windows_stay_inside_their_file(len_a in 10usize..40, len_b in 10usize..40, l in 2usize..10) {
        // values encode the file so any mixed window is detectable
        let a = series("a", vec![vec![1.0; len_a]], None);
        let b = series("b", vec![vec![2.0; len_b]], None);
        let mut set = make_windows(&a, l, 1, LabelRule::Any).unwrap();
        set.extend(make_windows(&b, l, 1, LabelRule::Any).unwrap()).unwrap();
        for (w, p) in set.windows.iter().zip(&set.provenance) {
            let v = if p.file == "a" { 1.0 } else { 2.0 };
            prop_assert!(w.data().iter().all(|x| *x == v));
        }
    }

    #[test]
    fn normalisation_round_trip(values in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let s = series("a", vec![values.clone()], None);
        let stats = fit_norm(&[&s]).unwrap();
        let scaled = stats.apply(&s).unwrap();
        for (orig, v) in values.iter().zip(&scaled.channels[0]) {
            prop_assert!((stats.denormalize(0, *v) - orig).abs() <= 1e-12 * orig.abs().max(1.0));
        }
    }

    #[test]
    fn threshold_monotone_in_k(scores in prop::collection::vec(0.0f64..5.0, 1..40), k1 in 0.0f64..10.0, dk in 0.0f64..10.0) {
        let a = DetectorProfile::from_scores(&scores, k1).unwrap();
        let b = DetectorProfile::from_scores(&scores, k1 + dk).unwrap();
        prop_assert!(a.threshold <= b.threshold);
    }

    #[test]
    fn confusion_matches_rederivation(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
        let (p, l): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let c = Confusion::from_pairs(&p, &l);
        let tp = pairs.iter().filter(|(p, l)| *p && *l).count() as f64;
        let fp = pairs.iter().filter(|(p, l)| *p && !*l).count() as f64;
        let fn_ = pairs.iter().filter(|(p, l)| !*p && *l).count() as f64;
        let tn = pairs.iter().filter(|(p, l)| !*p && !*l).count() as f64;
        let m = c.metrics();
        if tp + fn_ > 0.0 {
            prop_assert_eq!(m.recall, Some(tp / (tp + fn_)));
        }
        if fp + tn > 0.0 {
            prop_assert_eq!(m.fpr, Some(fp / (fp + tn)));
        }
        if tp + fp + fn_ > 0.0 {
            prop_assert!((m.f1.unwrap() - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-15);
        }
    }

    #[test]
    fn selection_commutes_with_permutation(
        n in 1usize..7,
        l in 1usize..20,
        values in prop::collection::vec(0.0f64..4.0, 140),
        perm_seed in prop::collection::vec(any::<u32>(), 7),
    ) {
        let asw = tensor(n, l, &values);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&i| perm_seed[i]);
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| asw.row(i).to_vec()).collect();
        let permuted = Tensor::from_rows(&rows).unwrap();
        let cfg = SelectorConfig::default();
        let direct = select_features(&asw, &cfg).unwrap().selected;
        let via = select_features(&permuted, &cfg).unwrap().selected;
        let mut back = vec![false; n];
        for (k, &i) in perm.iter().enumerate() {
            back[i] = via[k];
        }
        prop_assert_eq!(direct, back);
    }

    #[test]
    fn sparsity_and_distance_agree_on_zero(n in 1usize..5, l in 1usize..10, values in prop::collection::vec(0.0f64..1.0, 50), shift in 0.0f64..0.1) {
        let x = tensor(n, l, &values);
        let cf = x.map(|v| v + shift).unwrap();
        let d = distance(&[(&x, &cf)]).unwrap();
        let s = sparsity(&[(&x, &cf)], 0.0).unwrap();
        prop_assert_eq!(d == 0.0, s == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Descent on small random networks never touches unselected rows.
    #[test]
    fn masked_rows_are_bitwise_untouched(
        n in 2usize..5,
        seed in any::<u64>(),
        values in prop::collection::vec(-0.5f64..1.5, 64),
        mask_bits in prop::collection::vec(any::<bool>(), 4),
        lambda in prop::sample::select(vec![0.0, 0.5, 1.0]),
    ) {
        let model = AeModel::build(&Architecture::skab_scaled(n, 16, [4, 4], 2), seed).unwrap();
        let x = tensor(n, 16, &values);
        let score = model.score(&x).unwrap();
        let profile = DetectorProfile { threshold: score / 2.0, mean: 0.0, std: 0.0, k: 0.0 };
        let mut selected = mask_bits[..n].to_vec();
        selected[seed as usize % n] = true;
        let mask = FeatureMask { selected: selected.clone(), ..FeatureMask::all(n) };
        let cfg = ExplainConfig { lambda, eta: 0.5, max_iters: 15, early_stop: false };
        let e = explain_counterfactual(&model, &profile, &x, &mask, &cfg).unwrap();
        for j in (0..n).filter(|&j| !selected[j]) {
            for (a, b) in e.counterfactual.row(j).iter().zip(x.row(j)) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // returned iterate never has a worse objective than the start
        prop_assert!(e.objective <= score);
        prop_assert_eq!(e.final_score, model.score(&e.counterfactual).unwrap());
    }
}
