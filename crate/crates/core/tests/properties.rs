use imu_stride::augment::{cutout, cutout_start, make_pretext_set, CUTOUT_LEN};
use imu_stride::data::synth::{class_range_cm, synth_gait, GaitScenario, SubjectProfile};
use imu_stride::data::{denormalize, normalize, GaitClass, NormalizedStreams, RawRecording, Sample, SEGMENT_LEN};
use imu_stride::segment::detect_strides;
use imu_stride::tensor::ops::{conv2d_same, softmax};
use imu_stride::tensor::Tensor;
use imu_stride::train::loss::{pew_rmse, rmse};
use imu_stride::train::metrics::metrics;
use imu_stride::train::schedule::one_cycle;
use proptest::prelude::*;

fn lengths(n: usize) -> impl Strategy<Value = Vec<(f32, f32)>> {
    prop::collection::vec((50.0f32..300.0, 50.0f32..300.0), 1..n)
}

proptest! {
    #[test]
    fn pew_rmse_dominates_rmse(pairs in lengths(40)) {
        let (p, g): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
        let pew = pew_rmse(&p, &g).unwrap();
        let plain = rmse(&p, &g).unwrap();
        prop_assert!(pew >= plain);
        if p != g {
            prop_assert!(pew > plain);
        }
    }

    #[test]
    fn both_losses_vanish_on_exact_predictions(g in prop::collection::vec(1.0f32..300.0, 1..40)) {
        prop_assert_eq!(pew_rmse(&g, &g).unwrap(), 0.0);
        prop_assert_eq!(rmse(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-30.0f32..30.0, 1..12)) {
        let p = softmax(&logits);
        let s: f64 = p.iter().map(|&v| v as f64).sum();
        prop_assert!((s - 1.0).abs() < 1e-6, "sum {s}");
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn conv_is_linear(
        x in prop::collection::vec(-1.0f32..1.0, 2 * 3 * 9),
        y in prop::collection::vec(-1.0f32..1.0, 2 * 3 * 9),
        w in prop::collection::vec(-1.0f32..1.0, 4 * 2 * 9),
        a in -2.0f32..2.0,
        b in -2.0f32..2.0,
    ) {
        let t = |v: Vec<f32>| Tensor::new(vec![2, 3, 9], v).unwrap();
        let w = Tensor::new(vec![4, 2, 3, 3], w).unwrap();
        let zero = Tensor::zeros(&[4]);
        let mix: Vec<f32> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv2d_same(&t(mix), &w, &zero).unwrap();
        let cx = conv2d_same(&t(x), &w, &zero).unwrap();
        let cy = conv2d_same(&t(y), &w, &zero).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }

    #[test]
    fn normalize_inverts_denormalize(rows in prop::collection::vec(prop::array::uniform6(-1.0f32..1.0), 1..200)) {
        let streams = NormalizedStreams {
            sample_rate: 500.0,
            rows: std::array::from_fn(|r| rows.iter().map(|s| s[r]).collect()),
        };
        let back = normalize(&denormalize(&streams, "p")).unwrap();
        for r in 0..6 {
            for (a, b) in back.rows[r].iter().zip(&streams.rows[r]) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn cutout_keeps_label_and_zeroes_120(seed in any::<u64>()) {
        let out = synth_gait(&GaitScenario::new(11.0), 1, 5);
        let seg = &out.segments().unwrap()[0];
        let cut = cutout(seg, seed);
        let start = cutout_start(seed);
        prop_assert!(start + CUTOUT_LEN <= SEGMENT_LEN);
        prop_assert_eq!(cut.label, seg.label);
        prop_assert!((0..6).all(|r| cut.row(r)[start..start + CUTOUT_LEN].iter().all(|&v| v == 0.0)));
        let pairs = make_pretext_set(std::slice::from_ref(seg), seed);
        prop_assert!(pairs.iter().all(|p| p.target == seg.tensor));
    }

    #[test]
    fn one_cycle_peaks_once(total in 3usize..5000, max_lr in 1e-4f32..1e-1) {
        let lrs: Vec<f32> = (0..total).map(|s| one_cycle(max_lr, s, total)).collect();
        prop_assert_eq!(lrs.iter().filter(|&&v| v == max_lr).count(), 1);
        prop_assert!(lrs.iter().all(|&v| v <= max_lr));
        prop_assert!(lrs[total - 1] < lrs[0]);
    }

    #[test]
    fn metrics_match_scalar_loop(rows in prop::collection::vec((50.0f64..300.0, 50.0f64..300.0, any::<bool>(), any::<bool>()), 1..60)) {
        let class = |b: bool| if b { GaitClass::Run } else { GaitClass::Walk };
        let p: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let g: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let pc: Vec<GaitClass> = rows.iter().map(|r| class(r.2)).collect();
        let tc: Vec<GaitClass> = rows.iter().map(|r| class(r.3)).collect();
        let m = metrics(&p, &g, &pc, &tc).unwrap();

        let (mut mae, mut pe, mut ok) = (0.0, 0.0, 0.0);
        for i in 0..rows.len() {
            mae += (p[i] - g[i]).abs();
            pe += 100.0 * (p[i] - g[i]).abs() / g[i];
            if pc[i] == tc[i] {
                ok += 1.0;
            }
        }
        let n = rows.len() as f64;
        prop_assert!((m.mae_cm.avg - mae / n).abs() < 1e-9);
        prop_assert!((m.pe.avg - pe / n).abs() < 1e-9);
        prop_assert!((m.accuracy.avg - ok / n).abs() < 1e-9);
        prop_assert_eq!(m.histogram.total(), rows.len() as u64);

        // the overall value is the support-weighted mean of the class values
        let weighted = m.pe.run.unwrap_or(0.0) * m.n_run as f64 + m.pe.walk.unwrap_or(0.0) * m.n_walk as f64;
        prop_assert!((weighted / n - m.pe.avg).abs() < 1e-9);
        let lo = m.pe.run.unwrap_or(f64::INFINITY).min(m.pe.walk.unwrap_or(f64::INFINITY));
        let hi = m.pe.run.unwrap_or(f64::NEG_INFINITY).max(m.pe.walk.unwrap_or(f64::NEG_INFINITY));
        prop_assert!(lo - 1e-9 <= m.pe.avg && m.pe.avg <= hi + 1e-9);
    }

    #[test]
    fn detected_boundaries_are_ordered(
        gyr in prop::collection::vec(prop::array::uniform3(-500.0f32..500.0), 1000..4000),
        bursts in prop::collection::vec((0usize..4000, 10usize..400, 100.0f32..1500.0), 0..12),
    ) {
        let mut gyr = gyr;
        let n = gyr.len();
        for (at, len, amp) in bursts {
            for g in gyr.iter_mut().skip(at.min(n)).take(len) {
                g[1] += amp;
            }
        }
        let rec = RawRecording {
            sample_rate: 500.0,
            samples: gyr
                .iter()
                .enumerate()
                .map(|(i, &g)| Sample { t_us: i as u64 * 2000, acc: [0.0, 0.0, 1.0], gyr: g })
                .collect(),
            subject_id: "p".into(),
            surface: None,
        };
        let found = detect_strides(&rec).unwrap();
        prop_assert!(found.iter().all(|b| b.start < b.end && b.end <= n));
        prop_assert!(found.windows(2).all(|w| w[0].end <= w[1].start));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn synthetic_segments_are_well_formed(
        speed in 4.5f32..19.5,
        noise in 0.0f32..3.0,
        profile_seed in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let subject = SubjectProfile::generate("p", profile_seed);
        let sc = GaitScenario::for_subject(speed, &subject).with_noise(noise);
        let out = synth_gait(&sc, 2, seed);
        let class = GaitClass::for_speed(speed);
        prop_assert_eq!(class == GaitClass::Run, speed >= 8.0);
        let (lo, hi) = class_range_cm(class);
        for seg in out.segments().unwrap() {
            prop_assert!(seg.is_well_formed());
            let label = seg.label.unwrap();
            prop_assert_eq!(label.class, class);
            prop_assert!(label.length_cm >= lo && label.length_cm <= hi);
        }
    }
}
