mod common;

use std::collections::BTreeSet;

use neurodram::volume::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume3D {
    let n = dims.iter().product();
    Volume3D::new(dims, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
}

#[test]
fn volume_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vol = random_volume(&mut rng, [8, 8, 8]);
    let path = dir.path().join("a.ndv");
    write_volume(&vol, &path).unwrap();
    let back = read_volume(&path).unwrap();
    assert_eq!(back.dims(), [8, 8, 8]);
    assert_eq!(back.voxels(), vol.voxels());
}

#[test]
fn volume_file_size_is_header_plus_payload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.ndv");
    write_volume(&Volume3D::filled([64, 64, 64], 0.5), &path).unwrap();
    let len = std::fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(HEADER_LEN, 16);
    assert_eq!(len, 16 + 64 * 64 * 64 * 4);
}

#[test]
fn wrong_magic_is_a_format_error() {
    let mut bytes = Volume3D::filled([2, 2, 2], 0.0).to_bytes();
    bytes[0] = b'X';
    let err = Volume3D::from_bytes(&bytes).unwrap_err();
    assert!(matches!(err, neurodram::Error::Format(_)), "{err}");
}

#[test]
fn loc_to_voxel_reference_points() {
    assert_eq!(loc_to_voxel([0.0; 3], [65, 65, 65]), [32, 32, 32]);
    assert_eq!(loc_to_voxel([-1.0; 3], [5, 17, 64]), [0, 0, 0]);
    assert_eq!(loc_to_voxel([1.0, 0.0, -1.0], [9, 9, 9]), [8, 4, 0]);
}

#[test]
fn loc_to_voxel_is_monotone_and_onto() {
    for n in [2usize, 7, 16, 64] {
        let mut hit = BTreeSet::new();
        let mut prev = 0;
        for i in 0..=4000 {
            let l = -1.0 + 2.0 * i as f64 / 4000.0;
            let v = loc_to_voxel([l, 0.0, 0.0], [n, n, n])[0];
            assert!(v >= prev && v < n);
            prev = v;
            hit.insert(v);
        }
        assert_eq!(hit.len(), n, "every index reachable for n = {n}");
    }
}

#[test]
fn glimpse_boxes_from_the_documented_examples() {
    let vol = Volume3D::filled([64, 64, 64], 0.0);
    let g = extract_glimpse(&vol, [0.0; 3], 16, 0).unwrap();
    assert_eq!(g.bbox, BoundingBox { start: [24; 3], end: [40; 3] });
    let g = extract_glimpse(&vol, [1.0; 3], 16, 0).unwrap();
    assert_eq!(g.bbox, BoundingBox { start: [48; 3], end: [64; 3] });
}

proptest! {
    #[test]
    fn glimpse_is_always_full_size_and_inside(
        l in prop::array::uniform3(-3.0f64..3.0),
        side in prop::sample::select(vec![2usize, 4, 8, 16]),
        d in prop::array::uniform3(16usize..40),
    ) {
        let vol = Volume3D::filled(d, 0.25);
        let g = extract_glimpse(&vol, l, side, 3).unwrap();
        prop_assert_eq!(g.voxels.len(), side * side * side);
        prop_assert!(g.voxels.iter().all(|&v| v == 0.25));
        prop_assert!(g.location.iter().all(|v| (-1.0..=1.0).contains(v)));
        for k in 0..3 {
            prop_assert_eq!(g.bbox.end[k] - g.bbox.start[k], side);
            prop_assert!(g.bbox.end[k] <= d[k]);
        }
    }

    #[test]
    fn glimpse_copies_the_boxed_voxels(seed in any::<u64>(), l in prop::array::uniform3(-1.0f64..1.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vol = random_volume(&mut rng, [12, 10, 14]);
        let g = extract_glimpse(&vol, l, 4, 0).unwrap();
        let mut i = 0;
        for z in g.bbox.start[0]..g.bbox.end[0] {
            for y in g.bbox.start[1]..g.bbox.end[1] {
                for x in g.bbox.start[2]..g.bbox.end[2] {
                    prop_assert_eq!(g.voxels[i], f64::from(vol.get(z, y, x)));
                    i += 1;
                }
            }
        }
    }
}

#[test]
fn split_of_ten_subjects_with_three_scans() {
    let ids: Vec<String> = (0..10).flat_map(|s| (0..3).map(move |_| format!("sub-{s}"))).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let a = split_by_subject(&refs, [0.8, 0.1, 0.1], 42).unwrap();
    assert_eq!(a, split_by_subject(&refs, [0.8, 0.1, 0.1], 42).unwrap());
    for split in Split::ALL {
        let subjects: BTreeSet<&str> = refs.iter().zip(&a).filter(|(_, &s)| s == split).map(|(id, _)| *id).collect();
        let expected = if split == Split::Train { 8 } else { 1 };
        assert_eq!(subjects.len(), expected, "{split}");
    }
    for chunk in a.chunks(3) {
        assert!(chunk.iter().all(|&s| s == chunk[0]), "scans of one subject share a split");
    }
}

#[test]
fn single_scan_split_is_a_plain_partition() {
    let ids: Vec<String> = (0..280).map(|s| format!("sub-{s}")).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let a = split_by_subject(&refs, [5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0], 3).unwrap();
    let count = |s: Split| a.iter().filter(|&&x| x == s).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (200, 40, 40));
    assert_ne!(a, split_by_subject(&refs, [5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0], 4).unwrap());
}

fn context_population(cfg: &SyntheticConfig, n: u64) -> Vec<LabeledCase> {
    let cfg = SyntheticConfig { volume_side: 16, glimpse_side: 16, signal_center: [0.0; 3], ..cfg.clone() };
    (0..n).map(|s| generate_case(&cfg, (s % 2) as u8, s)).collect()
}

fn octant_of(case: &LabeledCase, cfg: &SyntheticConfig) -> u8 {
    let center = case.signal_center.unwrap();
    let half = (cfg.volume_side - 1) as f64 / 2.0;
    octant([0, 1, 2].map(|k| center[k] / half - 1.0 - cfg.signal_center[k]))
}

fn chi_square_p(table: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            stat += (o - e).powi(2) / e;
        }
    }
    let dof = ((rows.len() - 1) * (cols.len() - 1)) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn without_hint_context_is_independent_of_the_signal_octant() {
    let cfg =
        SyntheticConfig { context_hint_strength: 0.0, volume_side: 16, signal_center: [0.0; 3], ..Default::default() };
    let cases = context_population(&cfg, 1000);
    let mut table = vec![vec![0.0; 8]; 8];
    for c in &cases {
        if let Some(race) = c.context.race {
            table[race as usize][octant_of(c, &cfg) as usize] += 1.0;
        }
    }
    let p = chi_square_p(&table);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn with_full_hint_race_is_the_octant() {
    let cfg = SyntheticConfig {
        context_hint_strength: 1.0,
        context_missing_rate: 0.0,
        volume_side: 16,
        signal_center: [0.0; 3],
        ..Default::default()
    };
    for c in context_population(&cfg, 200) {
        assert_eq!(c.context.race, Some(octant_of(&c, &cfg)));
    }
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[test]
fn context_fields_do_not_predict_the_label() {
    let cases = context_population(&SyntheticConfig::default(), 1000);
    for field in Field::ALL {
        let present: Vec<(&LabeledCase, FieldValue)> =
            cases.iter().filter_map(|c| c.context.get(field).map(|v| (c, v))).collect();
        let labels: Vec<f64> = present.iter().map(|(c, _)| f64::from(c.label)).collect();
        let columns: Vec<Vec<f64>> = match field.kind() {
            FieldKind::Numeric => vec![present
                .iter()
                .map(|(_, v)| match v {
                    FieldValue::Numeric(x) => *x,
                    FieldValue::Categorical(_) => unreachable!(),
                })
                .collect()],
            FieldKind::Categorical { levels } => (0..levels)
                .map(|lvl| {
                    present.iter().map(|(_, v)| f64::from(u8::from(*v == FieldValue::Categorical(lvl)))).collect()
                })
                .collect(),
        };
        for col in columns {
            let r = correlation(&col, &labels);
            assert!(r.abs() < 0.05, "{} correlates with the label: r = {r}", field.name());
        }
    }
}

#[test]
fn far_glimpses_carry_no_class_information() {
    let cfg = SyntheticConfig { distractor_count: 0, ..SyntheticConfig::default() };
    let cases = generate_dataset(&cfg, 60, 1);
    let corner = [-cfg.signal_center[0].signum(), -cfg.signal_center[1].signum(), -cfg.signal_center[2].signum()];
    let mut by_class = [Vec::new(), Vec::new()];
    for c in &cases {
        let g = extract_glimpse(&c.volume, corner, cfg.glimpse_side, 0).unwrap();
        by_class[c.label as usize].push(g.voxels.iter().sum::<f64>() / g.voxels.len() as f64);
    }
    let stats = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64 / x.len() as f64)
    };
    let ((m0, v0), (m1, v1)) = (stats(&by_class[0]), stats(&by_class[1]));
    let t = (m0 - m1) / (v0 + v1).sqrt();
    let p = 2.0 * StudentsT::new(0.0, 1.0, 118.0).unwrap().cdf(-t.abs());
    assert!(p > 0.01, "corner glimpse mean separates the classes: t = {t:.2}, p = {p:.2e}");
}

#[test]
fn imputation_matches_brute_force_on_100_partials() {
    assert_eq!(common::imputation_agreement(2024, 100), 100);
}

#[test]
fn orthogonal_record_loses_to_any_positive_match() {
    let bank = vec![
        ContextRecord { gender: Some(1), apoe4: Some(2), ..Default::default() },
        ContextRecord { gender: Some(0), apoe4: Some(0), age: Some(81.0), ..Default::default() },
    ];
    let partial = ContextRecord { gender: Some(0), apoe4: Some(2), ..Default::default() };
    let imp = impute_context(&partial, &bank).unwrap();
    assert!(imp.similarity > 0.0);
    let orthogonal = ContextRecord { gender: Some(1), apoe4: Some(1), ..Default::default() };
    let bank2 = vec![orthogonal, bank[1].clone()];
    let imp = impute_context(&partial, &bank2).unwrap();
    assert_eq!(imp.donor, 1);
    assert_eq!(imp.record.age, Some(81.0));
}

#[test]
fn three_record_bank_by_hand() {
    let bank = vec![
        ContextRecord { age: Some(60.0), gender: Some(0), ..Default::default() },
        ContextRecord { age: Some(70.0), gender: Some(1), ravlt: Some(22.0), ..Default::default() },
        ContextRecord { age: Some(80.0), gender: Some(1), ravlt: Some(41.0), ..Default::default() },
    ];
    // z(age) over the bank: -1.2247, 0, 1.2247. Query is (z = 1, gender 1).
    // rec0 scores below 0, rec1 1/sqrt(2) = 0.707,
    // rec2 (1.2247 + 1) / (sqrt(2) sqrt(2.5)) = 0.99494.
    let partial = ContextRecord { age: Some(70.0 + 8.164_965_809_277_26), gender: Some(1), ..Default::default() };
    let imp = impute_context(&partial, &bank).unwrap();
    assert_eq!(imp.donor, 2);
    assert!((imp.similarity - 0.994_936_153).abs() < 1e-8, "{}", imp.similarity);
    assert_eq!(imp.record.ravlt, Some(41.0));
}

#[test]
fn manifest_round_trip_and_bank() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { volume_side: 16, glimpse_side: 16, signal_center: [0.0; 3], ..Default::default() };
    let cases = generate_dataset(&cfg, 5, 1);
    let ids: Vec<&str> = cases.iter().map(|c| c.subject_id()).collect();
    let splits = split_by_subject(&ids, [0.8, 0.1, 0.1], 9).unwrap();
    write_dataset(dir.path(), &cases, &splits).unwrap();
    let m = Manifest::read(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.cases.len(), 10);
    assert_eq!(m.cases.iter().filter(|e| e.label == 0).count(), 5);
    let train = m.load(Some(Split::Train)).unwrap();
    assert_eq!(train.len(), 8);
    let orig = cases.iter().find(|c| c.case_id == train[0].case_id).unwrap();
    assert_eq!(train[0].volume.voxels(), orig.volume.voxels());
    assert_eq!(train[0].context, orig.context);
    assert_eq!(train[0].signal_center, orig.signal_center);
    assert_eq!(train[0].label, orig.label);
    assert_eq!(&train[0], orig);
    let bank = read_context_bank(dir.path().join(CONTEXT_BANK_FILE)).unwrap();
    assert_eq!(bank.len(), 8);
}
