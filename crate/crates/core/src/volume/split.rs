use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Subjects per split by largest-remainder rounding of `ratios * n`.
/// Every split with a positive ratio receives at least one subject.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split_dataset", format!("ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let wanted = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < wanted {
        return Err(Error::invalid("split_dataset", format!("{n} subjects cannot fill {wanted} splits")));
    }
    let exact = ratios.map(|r| r * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Assigns each item to a split so that all items sharing a subject id land
/// in the same split. Subjects are shuffled with `seed`; returns one split
/// per input item.
pub fn split_by_subject<S: AsRef<str>>(subject_ids: &[S], ratios: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    let mut subjects: Vec<&str> = Vec::new();
    for s in subject_ids {
        if !subjects.contains(&s.as_ref()) {
            subjects.push(s.as_ref());
        }
    }
    let counts = split_counts(subjects.len(), ratios)?;
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut assignment = std::collections::HashMap::new();
    let mut cursor = 0;
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for s in &subjects[cursor..cursor + count] {
            assignment.insert(*s, split);
        }
        cursor += count;
    }
    Ok(subject_ids.iter().map(|s| assignment[s.as_ref()]).collect())
}
