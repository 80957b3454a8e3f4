use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C×C` counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if c == 0 || rows.iter().any(|r| r.len() != c) {
            return Err(Error::contract("confusion matrix must be square and non-empty"));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.classes).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes).map(|j| (0..self.classes).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    /// Collapses to 2×2 with `positive` classes mapped to 1 and the rest to 0.
    pub fn to_binary(&self, positive: &[usize]) -> Result<Self> {
        if let Some(&c) = positive.iter().find(|&&c| c >= self.classes) {
            return Err(Error::contract(format!("positive class {c} outside {} classes", self.classes)));
        }
        let side = |c: usize| usize::from(positive.contains(&c));
        let mut out = vec![vec![0u64; 2]; 2];
        for i in 0..self.classes {
            for j in 0..self.classes {
                out[side(i)][side(j)] += self.get(i, j);
            }
        }
        Self::from_counts(&out)
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::contract(format!("{} labels but {} predictions", truth.len(), pred.len())));
    }
    if classes == 0 {
        return Err(Error::contract("confusion matrix needs at least one class"));
    }
    let mut counts = vec![0u64; classes * classes];
    for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        if t >= classes || p >= classes {
            return Err(Error::contract(format!("sample {i}: label ({t}, {p}) outside 0..{classes}")));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// A ratio-type metric and whether its denominator was non-zero. Undefined
/// values are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub defined: bool,
}

impl Score {
    fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Self {
                value: 0.0,
                defined: false,
            }
        } else {
            Self {
                value: num / den,
                defined: true,
            }
        }
    }
}

fn check_nonempty(cm: &ConfusionMatrix) -> Result<()> {
    if cm.total() == 0 {
        return Err(Error::contract("confusion matrix is empty"));
    }
    Ok(())
}

/// Quadratic weighted kappa with weights `(i−j)²/(C−1)²` and expected counts
/// from the outer product of the marginals.
pub fn qwk(cm: &ConfusionMatrix) -> Result<Score> {
    check_nonempty(cm)?;
    let c = cm.classes();
    if c < 2 {
        return Ok(Score::ratio(0.0, 0.0));
    }
    let n = cm.total() as f64;
    let (rows, cols) = (cm.row_sums(), cm.col_sums());
    let (mut obs, mut exp) = (0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64 - j as f64) / (c - 1) as f64).powi(2);
            obs += w * cm.get(i, j) as f64;
            exp += w * rows[i] as f64 * cols[j] as f64 / n;
        }
    }
    let s = Score::ratio(obs, exp);
    Ok(Score {
        value: if s.defined { 1.0 - s.value } else { 0.0 },
        ..s
    })
}

/// Unweighted Cohen's kappa `(p_o − p_e)/(1 − p_e)`.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<Score> {
    check_nonempty(cm)?;
    let n = cm.total() as f64;
    let po = cm.trace() as f64 / n;
    let pe: f64 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as f64 * c as f64)
        .sum::<f64>()
        / (n * n);
    Ok(Score::ratio(po - pe, 1.0 - pe))
}

/// Matthews correlation in its multi-class form
/// `(c·s − Σp_k t_k) / sqrt((s² − Σp_k²)(s² − Σt_k²))`, which reduces to the
/// usual binary formula for 2×2.
pub fn mcc(cm: &ConfusionMatrix) -> Result<Score> {
    check_nonempty(cm)?;
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let t: Vec<f64> = cm.row_sums().iter().map(|&v| v as f64).collect();
    let p: Vec<f64> = cm.col_sums().iter().map(|&v| v as f64).collect();
    let cov = c * s - t.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
    let vp = s * s - p.iter().map(|v| v * v).sum::<f64>();
    let vt = s * s - t.iter().map(|v| v * v).sum::<f64>();
    Ok(Score::ratio(cov, (vp * vt).sqrt()))
}

/// How sensitivity-type metrics are reduced over classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// One-vs-rest per class, then the unweighted mean.
    Macro,
    /// Collapse to 2×2 with the listed classes positive.
    Binary { positive: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    pub npv: f64,
    pub f1: f64,
    pub mcc: f64,
    pub cohen_kappa: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Names of metrics with at least one 0/0 ratio (reported as 0).
    pub undefined: Vec<String>,
}

struct OneVsRest {
    sens: Score,
    spec: Score,
    ppv: Score,
    npv: Score,
    f1: Score,
}

fn one_vs_rest(cm: &ConfusionMatrix, k: usize) -> OneVsRest {
    let n = cm.total() as f64;
    let tp = cm.get(k, k) as f64;
    let fn_ = cm.row_sums()[k] as f64 - tp;
    let fp = cm.col_sums()[k] as f64 - tp;
    let tn = n - tp - fn_ - fp;
    OneVsRest {
        sens: Score::ratio(tp, tp + fn_),
        spec: Score::ratio(tn, tn + fp),
        ppv: Score::ratio(tp, tp + fp),
        npv: Score::ratio(tn, tn + fn_),
        f1: Score::ratio(2.0 * tp, 2.0 * tp + fp + fn_),
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix, averaging: &Averaging) -> Result<ClassificationMetrics> {
    check_nonempty(cm)?;
    let (cm, classes): (ConfusionMatrix, Vec<usize>) = match averaging {
        Averaging::Macro => (cm.clone(), (0..cm.classes()).collect()),
        Averaging::Binary { positive } => (cm.to_binary(positive)?, vec![1]),
    };
    let per: Vec<OneVsRest> = classes.iter().map(|&k| one_vs_rest(&cm, k)).collect();
    let mut undefined = Vec::new();
    let mut avg = |name: &str, pick: fn(&OneVsRest) -> Score| {
        let scores: Vec<Score> = per.iter().map(pick).collect();
        if scores.iter().any(|s| !s.defined) {
            undefined.push(name.to_string());
        }
        scores.iter().map(|s| s.value).sum::<f64>() / scores.len() as f64
    };
    let sensitivity = avg("sensitivity", |o| o.sens);
    let specificity = avg("specificity", |o| o.spec);
    let ppv = avg("ppv", |o| o.ppv);
    let npv = avg("npv", |o| o.npv);
    let f1 = avg("f1", |o| o.f1);
    let m = mcc(&cm)?;
    let k = cohen_kappa(&cm)?;
    for (name, s) in [("mcc", m), ("cohen_kappa", k)] {
        if !s.defined {
            undefined.push(name.to_string());
        }
    }
    Ok(ClassificationMetrics {
        accuracy: cm.trace() as f64 / cm.total() as f64,
        sensitivity,
        specificity,
        ppv,
        npv,
        f1,
        mcc: m.value,
        cohen_kappa: k.value,
        macro_precision: ppv,
        macro_recall: sensitivity,
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Weighted kappa straight from the definition, looping over every pair of samples' labels.
    fn brute_qwk(truth: &[usize], pred: &[usize], c: usize) -> f64 {
        let n = truth.len() as f64;
        let w = |i: usize, j: usize| ((i as f64 - j as f64) / (c as f64 - 1.0)).powi(2);
        let obs: f64 = truth.iter().zip(pred).map(|(&t, &p)| w(t, p)).sum::<f64>() / n;
        let mut exp = 0.0;
        for &t in truth {
            for &p in pred {
                exp += w(t, p);
            }
        }
        1.0 - obs / (exp / (n * n))
    }

    #[test]
    fn hand_tally() {
        let m = confusion(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(m.rows(), vec![vec![1, 0, 0], vec![0, 1, 1], vec![0, 0, 1]]);
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0, 1], &[0], 3).is_err());
        let all_zero = confusion(&[0, 1, 2], &[0, 0, 0], 3).unwrap();
        assert_eq!(all_zero.col_sums(), vec![3, 0, 0]);
    }

    #[test]
    fn qwk_examples() {
        let diag = cm(&[&[3, 0, 0], &[0, 2, 0], &[0, 0, 4]]);
        assert_eq!(qwk(&diag).unwrap().value, 1.0);
        // Independent marginals: O equals E.
        let indep = cm(&[&[1, 1], &[1, 1]]);
        assert!(qwk(&indep).unwrap().value.abs() < 1e-15);
        let m = cm(&[&[2, 1, 0], &[0, 2, 1], &[0, 0, 4]]);
        let (mut t, mut p) = (Vec::new(), Vec::new());
        for (i, row) in m.rows().iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    t.push(i);
                    p.push(j);
                }
            }
        }
        assert!((qwk(&m).unwrap().value - brute_qwk(&t, &p, 3)).abs() < 1e-12);
        let single = cm(&[&[5, 0], &[0, 0]]);
        assert_eq!(qwk(&single).unwrap(), Score { value: 0.0, defined: false });
    }

    #[test]
    fn binary_definitions() {
        let m = cm(&[&[50, 10], &[5, 35]]);
        let r = classification_metrics(&m, &Averaging::Binary { positive: vec![1] }).unwrap();
        assert!((r.sensitivity - 0.875).abs() < 1e-15);
        assert!((r.specificity - 50.0 / 60.0).abs() < 1e-15);
        assert!((r.ppv - 35.0 / 45.0).abs() < 1e-15);
        assert!((r.npv - 50.0 / 55.0).abs() < 1e-15);
        let direct = (35.0 * 50.0 - 10.0 * 5.0) / ((45.0f64) * 40.0 * 60.0 * 55.0).sqrt();
        assert!((r.mcc - direct).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.85);
        assert!(r.undefined.is_empty());
    }

    #[test]
    fn perfect_and_degenerate_predictors() {
        let diag = cm(&[&[4, 0, 0], &[0, 3, 0], &[0, 0, 2]]);
        let r = classification_metrics(&diag, &Averaging::Macro).unwrap();
        assert_eq!((r.accuracy, r.f1, r.mcc, r.cohen_kappa), (1.0, 1.0, 1.0, 1.0));
        let constant = cm(&[&[10, 0], &[10, 0]]);
        let r = classification_metrics(&constant, &Averaging::Binary { positive: vec![1] }).unwrap();
        assert_eq!(r.mcc, 0.0);
        assert!(r.undefined.contains(&"mcc".to_string()));
        assert!(r.undefined.contains(&"ppv".to_string()));
        assert!(classification_metrics(&cm(&[&[0, 0], &[0, 0]]), &Averaging::Macro).is_err());
    }

    #[test]
    fn binary_collapse() {
        let m = cm(&[&[5, 1, 0], &[1, 3, 1], &[0, 2, 4]]);
        let b = m.to_binary(&[1, 2]).unwrap();
        assert_eq!(b.rows(), vec![vec![5, 1], vec![1, 10]]);
        assert!(m.to_binary(&[3]).is_err());
    }

    proptest! {
        #[test]
        fn kappa_permutation_rules(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 2..40),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let base = confusion(&t, &p, 4).unwrap();
            let tp: Vec<usize> = t.iter().map(|&x| perm[x]).collect();
            let pp: Vec<usize> = p.iter().map(|&x| perm[x]).collect();
            let moved = confusion(&tp, &pp, 4).unwrap();
            prop_assert!((cohen_kappa(&base).unwrap().value - cohen_kappa(&moved).unwrap().value).abs() < 1e-12);
            // Order reversal preserves squared distances, so QWK is unchanged.
            let rev = |x: &usize| 3 - x;
            let rt: Vec<usize> = t.iter().map(rev).collect();
            let rp: Vec<usize> = p.iter().map(rev).collect();
            let reversed = confusion(&rt, &rp, 4).unwrap();
            prop_assert!((qwk(&base).unwrap().value - qwk(&reversed).unwrap().value).abs() < 1e-12);
        }
    }
}
