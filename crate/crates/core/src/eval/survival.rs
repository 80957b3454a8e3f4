use crate::error::{Error, Result};

/// Harrell's concordance index. A pair is comparable when the subject with the
/// strictly earlier time had an event; it is concordant when that subject has
/// the higher risk, and risk ties count one half.
pub fn c_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    let n = risks.len();
    if times.len() != n || events.len() != n {
        return Err(Error::contract("risks, times and events must be aligned"));
    }
    if risks.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("c-index inputs".into()));
    }
    // Compressed risk ranks for a Fenwick tree over "later" subjects.
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |r: f64| sorted.partition_point(|&v| v < r);
    let mut tree = vec![0u64; sorted.len() + 1];
    let add = |tree: &mut Vec<u64>, i: usize| {
        let mut i = i + 1;
        while i < tree.len() {
            tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    };
    // Number of inserted subjects with rank < i.
    let below = |tree: &Vec<u64>, i: usize| {
        let (mut i, mut s) = (i, 0u64);
        while i > 0 {
            s += tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let (mut concordant, mut comparable) = (0.0f64, 0u64);
    let mut inserted = 0u64;
    let mut g = 0;
    while g < n {
        let mut end = g;
        while end + 1 < n && times[order[end + 1]] == times[order[g]] {
            end += 1;
        }
        for &i in &order[g..=end] {
            if events[i] {
                let k = rank(risks[i]);
                let lower = below(&tree, k);
                let ties = below(&tree, k + 1) - lower;
                concordant += lower as f64 + 0.5 * ties as f64;
                comparable += inserted;
            }
        }
        for &i in &order[g..=end] {
            add(&mut tree, rank(risks[i]));
            inserted += 1;
        }
        g = end + 1;
    }
    if comparable == 0 {
        return Err(Error::contract("no comparable pairs for the concordance index"));
    }
    Ok(concordant / comparable as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(r: &[f64], t: &[f64], e: &[bool]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..r.len() {
            for j in 0..r.len() {
                if e[i] && t[i] < t[j] {
                    den += 1.0;
                    num += if r[i] > r[j] {
                        1.0
                    } else if r[i] == r[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn examples() {
        assert_eq!(c_index(&[0.9, 0.2], &[2.0, 5.0], &[true, true]).unwrap(), 1.0);
        assert_eq!(c_index(&[0.5; 4], &[1.0, 2.0, 3.0, 4.0], &[true; 4]).unwrap(), 0.5);
        // The censored-early subject anchors no pair.
        let (r, t, e) = ([0.1, 0.8, 0.5], [1.0, 2.0, 3.0], [false, true, true]);
        assert_eq!(c_index(&r, &t, &e).unwrap(), brute(&r, &t, &e).unwrap());
        assert_eq!(c_index(&r, &t, &e).unwrap(), 1.0);
        assert!(c_index(&[0.1, 0.2], &[1.0, 2.0], &[false, false]).is_err());
    }

    proptest! {
        #[test]
        fn matches_pair_enumeration(
            data in prop::collection::vec((0u8..5, 0u8..6, any::<bool>()), 2..30)
        ) {
            let r: Vec<f64> = data.iter().map(|d| f64::from(d.0)).collect();
            let t: Vec<f64> = data.iter().map(|d| f64::from(d.1)).collect();
            let e: Vec<bool> = data.iter().map(|d| d.2).collect();
            match brute(&r, &t, &e) {
                Some(b) => prop_assert!((c_index(&r, &t, &e).unwrap() - b).abs() < 1e-12),
                None => prop_assert!(c_index(&r, &t, &e).is_err()),
            }
        }

        #[test]
        fn negated_risk_complements(
            data in prop::collection::vec((0.0f64..1.0, 0u8..10, any::<bool>()), 2..30)
        ) {
            let r: Vec<f64> = data.iter().map(|d| d.0).collect();
            let mut u = r.clone();
            u.sort_by(f64::total_cmp);
            u.dedup();
            prop_assume!(u.len() == r.len());
            let t: Vec<f64> = data.iter().map(|d| f64::from(d.1)).collect();
            let e: Vec<bool> = data.iter().map(|d| d.2).collect();
            if let Ok(c) = c_index(&r, &t, &e) {
                let neg: Vec<f64> = r.iter().map(|v| -v).collect();
                prop_assert!((c + c_index(&neg, &t, &e).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
