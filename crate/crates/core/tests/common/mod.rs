use neurodram::volume::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_record(rng: &mut ChaCha8Rng) -> ContextRecord {
    let mut r = ContextRecord {
        age: Some(rng.random_range(55.0..90.0)),
        gender: Some(rng.random_range(0..2)),
        education: Some(rng.random_range(8.0..22.0)),
        cdrsb: Some(rng.random_range(0.0..8.0)),
        adas11: Some(rng.random_range(0.0..40.0)),
        adas13: Some(rng.random_range(0.0..60.0)),
        ravlt: Some(rng.random_range(10.0..70.0)),
        apoe4: Some(rng.random_range(0..3)),
        ethnicity: Some(rng.random_range(0..3)),
        race: Some(rng.random_range(0..8)),
    };
    for f in Field::ALL {
        if rng.random::<f64>() < 0.1 {
            r.clear(f);
        }
    }
    if r.present_fields().is_empty() {
        r.age = Some(70.0);
    }
    r
}

/// Independent re-derivation of the imputation rule: z-score numeric fields
/// with the bank's population statistics, one-hot categorical fields,
/// restrict to the partial's present fields, take the best cosine with ties
/// to the lowest index.
pub fn brute_force_donor(partial: &ContextRecord, bank: &[ContextRecord]) -> usize {
    let stats = |f: Field| {
        let vals: Vec<f64> = bank
            .iter()
            .filter_map(|r| match r.get(f) {
                Some(FieldValue::Numeric(v)) => Some(v),
                _ => None,
            })
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        (m, if sd > 0.0 { sd } else { 1.0 })
    };
    let fields = partial.present_fields();
    let vec_of = |r: &ContextRecord| -> Vec<f64> {
        let mut out = Vec::new();
        for &f in &fields {
            match (f.kind(), r.get(f)) {
                (FieldKind::Numeric, Some(FieldValue::Numeric(v))) => {
                    let (m, sd) = stats(f);
                    out.push((v - m) / sd);
                }
                (FieldKind::Numeric, _) => out.push(0.0),
                (FieldKind::Categorical { levels }, v) => {
                    for lvl in 0..levels {
                        out.push(f64::from(u8::from(v == Some(FieldValue::Categorical(lvl)))));
                    }
                }
            }
        }
        out
    };
    let q = vec_of(partial);
    let scores: Vec<f64> = bank
        .iter()
        .map(|r| {
            let b = vec_of(r);
            let dot: f64 = q.iter().zip(&b).map(|(x, y)| x * y).sum();
            let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nq == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (nq * nb)
            }
        })
        .collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().position(|&s| s == best).unwrap()
}

/// Number of `n` random partial records whose imputed donor matches
/// [`brute_force_donor`]. Panics if a present field is overwritten.
pub fn imputation_agreement(seed: u64, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank: Vec<ContextRecord> = (0..60).map(|_| random_record(&mut rng)).collect();
    let mut agree = 0;
    for _ in 0..n {
        let mut partial = random_record(&mut rng);
        let keep = rng.random_range(1..=4);
        let present = partial.present_fields();
        for &f in &present[keep.min(present.len())..] {
            partial.clear(f);
        }
        let imp = impute_context(&partial, &bank).unwrap();
        if imp.donor == brute_force_donor(&partial, &bank) {
            agree += 1;
        }
        for f in Field::ALL {
            if partial.is_present(f) {
                assert_eq!(imp.record.get(f), partial.get(f), "present field overwritten");
            } else {
                assert_eq!(imp.record.get(f), bank[imp.donor].get(f));
            }
        }
    }
    agree
}
