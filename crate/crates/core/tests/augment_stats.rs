use imu_stride::augment::{
    add_noise, add_noise_raw, cutout, cutout_start, default_segment_count, make_pretext_set, random_segments, CUTOUT_LEN,
};
use imu_stride::data::synth::{synth_gait, GaitScenario};
use imu_stride::data::{normalize, StrideSegment, SEGMENT_LEN, SENSOR_ROWS};
use imu_stride::tensor::Tensor;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn gait_segment() -> StrideSegment {
    synth_gait(&GaitScenario::new(9.0), 1, 2).segments().unwrap().remove(0)
}

#[test]
fn cutout_start_is_uniform() {
    // chi-square over 20 equal bins of the 481 admissible starts
    let n = 10_000;
    let bins = 20;
    let range = SEGMENT_LEN - CUTOUT_LEN + 1;
    let mut counts = vec![0f64; bins];
    for seed in 0..n {
        counts[cutout_start(seed) * bins / range] += 1.0;
    }
    let chi2: f64 = (0..bins)
        .map(|b| {
            let lo = (b * range).div_ceil(bins);
            let hi = ((b + 1) * range).div_ceil(bins);
            let expected = n as f64 * (hi - lo) as f64 / range as f64;
            (counts[b] - expected).powi(2) / expected
        })
        .sum();
    // 19 degrees of freedom, 0.999 quantile
    assert!(chi2 < 43.82, "chi2 {chi2}");
    let starts: Vec<usize> = (0..n).map(cutout_start).collect();
    assert_eq!(*starts.iter().min().unwrap(), 0);
    assert_eq!(*starts.iter().max().unwrap(), SEGMENT_LEN - CUTOUT_LEN);
}

#[test]
fn cutout_window_is_exactly_120_samples() {
    let seg = gait_segment();
    for seed in 0..200 {
        let cut = cutout(&seg, seed);
        let start = cutout_start(seed);
        let window = start..start + CUTOUT_LEN;
        assert!(window.end <= SEGMENT_LEN);
        for r in 0..SENSOR_ROWS {
            assert!(window.clone().all(|t| cut.row(r)[t] == 0.0));
            assert!((0..SEGMENT_LEN)
                .filter(|t| !window.contains(t))
                .all(|t| cut.row(r)[t] == seg.row(r)[t]));
        }
    }
}

#[test]
fn raw_noise_sigma_matches_physical_values() {
    let raw = Tensor::zeros(&[1, SENSOR_ROWS, SEGMENT_LEN]);
    let noisy = add_noise_raw(&raw, SEGMENT_LEN, 77);
    for (row, expected) in [(0, 0.16), (1, 0.16), (2, 0.16), (3, 20.0), (4, 20.0), (5, 20.0)] {
        let v: Vec<f64> = noisy.data()[row * SEGMENT_LEN..(row + 1) * SEGMENT_LEN]
            .iter()
            .map(|&x| x as f64)
            .collect();
        let (m, s) = mean_std(&v);
        assert!((s - expected).abs() <= 0.1 * expected, "row {row}: std {s}");
        assert!(m.abs() < 4.0 * expected / (v.len() as f64).sqrt(), "row {row}: mean {m}");
    }
    // 600 x 3 draws per sensor
    for rows in [0..3, 3..6] {
        let expected = if rows.start == 0 { 0.16 } else { 20.0 };
        let v: Vec<f64> = rows
            .flat_map(|r| noisy.data()[r * SEGMENT_LEN..(r + 1) * SEGMENT_LEN].to_vec())
            .map(|x| x as f64)
            .collect();
        assert_eq!(v.len(), 1800);
        let (_, s) = mean_std(&v);
        assert!((0.9 * expected..=1.1 * expected).contains(&s), "std {s}");
    }
}

#[test]
fn normalized_noise_sigma_is_one_percent() {
    let seg = StrideSegment::from_rows(std::array::from_fn(|_| &[0.0f32; SEGMENT_LEN][..]), None, "z").unwrap();
    let mut diffs = vec![Vec::new(); SENSOR_ROWS];
    for seed in 0..4 {
        let noisy = add_noise(&seg, seed);
        for (r, d) in diffs.iter_mut().enumerate() {
            d.extend(noisy.row(r).iter().map(|&x| x as f64));
        }
    }
    for (r, d) in diffs.iter().enumerate() {
        let (_, s) = mean_std(d);
        assert!((0.009..=0.011).contains(&s), "row {r}: std {s}");
    }
}

#[test]
fn noise_leaves_padding_untouched() {
    let seg = synth_gait(&GaitScenario::new(17.0), 1, 4).segments().unwrap().remove(0);
    assert!(seg.valid_len < SEGMENT_LEN);
    let noisy = add_noise(&seg, 3);
    for r in 0..SENSOR_ROWS {
        assert!(noisy.row(r)[seg.valid_len..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn pretext_expansion_is_threefold() {
    let out = synth_gait(&GaitScenario::new(7.0), 40, 8);
    let streams = normalize(&out.recording).unwrap();
    let n = default_segment_count(streams.len());
    let windows = random_segments(&streams, n, 1, "u").unwrap();
    let covered = (windows.len() * SEGMENT_LEN) as f64 / streams.len() as f64;
    assert!(
        (covered - 3.0).abs() < SEGMENT_LEN as f64 / streams.len() as f64,
        "expansion {covered}"
    );
    let pairs = make_pretext_set(&windows, 2);
    assert_eq!(pairs.len(), 3 * windows.len());
}

#[test]
fn augmentations_are_deterministic_and_independent() {
    let seg = gait_segment();
    assert_eq!(add_noise(&seg, 5), add_noise(&seg, 5));
    assert_ne!(add_noise(&seg, 5), add_noise(&seg, 6));
    let a = make_pretext_set(&[seg.clone(), seg.clone()], 9);
    assert_eq!(a, make_pretext_set(&[seg.clone(), seg.clone()], 9));
    assert_ne!(a[1].input, a[4].input);
}
