use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Disjoint, exhaustive index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        groups[y].push(i);
    }
    groups
}

/// Largest-remainder apportionment of `n` over `fractions`; earlier parts win ties.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    Ok(())
}

/// Per-class train/val/test split; every class is apportioned separately so
/// each split keeps the global class mix to within one sample.
pub fn stratified_split(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<Split> {
    check_fractions(fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(Error::contract(format!(
                "grade {class} has only {} sample(s); stratified splitting needs at least 3 \
                 (add synthetic samples for rare grades)",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let c = apportion(members.len(), &fractions);
        split.train.extend_from_slice(&members[..c[0]]);
        split.val.extend_from_slice(&members[c[0]..c[0] + c[1]]);
        split.test.extend_from_slice(&members[c[0] + c[1]..]);
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_unstable();
    }
    Ok(split)
}

/// Stratified `k`-fold assignment: each class is dealt round-robin, starting
/// where the previous class stopped so fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config("cross-validation needs k ≥ 2"));
    }
    let groups = by_class(labels);
    if let Some(min) = groups.iter().map(Vec::len).filter(|&n| n > 0).min() {
        if k > min {
            return Err(Error::config(format!("k = {k} exceeds the smallest class count {min}")));
        }
    } else {
        return Err(Error::contract("cannot fold an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in groups {
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
