//! ROC/AUC and fixed-false-positive-rate detection metrics.

use serde::{Deserialize, Serialize};

use crate::detect::{BudgetSplit, DetectorThresholds};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn count_above(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= t)
}

/// ROC curve and the Mann-Whitney AUC `P(attack > normal) + P(tie) / 2`.
pub fn roc_auc(normal: &[f64], attack: &[f64]) -> Result<RocCurve> {
    if normal.is_empty() || attack.is_empty() {
        return Err(Error::EmptyInput("roc_auc needs normal and attack scores"));
    }
    let ns = sorted(normal);
    let as_ = sorted(attack);
    let (nn, na) = (ns.len() as f64, as_.len() as f64);

    let mut wins = 0.0;
    for &a in &as_ {
        let below = ns.partition_point(|&v| v < a);
        let not_above = ns.partition_point(|&v| v <= a);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }

    let mut thresholds: Vec<f64> = ns.iter().chain(&as_).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        // flag scores >= t
        let fp = ns.len() - ns.partition_point(|&v| v < t);
        let tp = as_.len() - as_.partition_point(|&v| v < t);
        points.push((fp as f64 / nn, tp as f64 / na));
    }
    Ok(RocCurve {
        points,
        auc: wins / (nn * na),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaTpr {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Smallest normal-score threshold whose strict-exceedance rate on the
/// normal scores is at most `alpha`.
pub fn alpha_threshold(normal: &[f64], alpha: f64) -> Result<f64> {
    if normal.is_empty() {
        return Err(Error::EmptyInput("alpha threshold needs normal scores"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadRange(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let ns = sorted(normal);
    let allowed = ((alpha * ns.len() as f64) + 1e-9).floor() as usize;
    Ok(ns[ns.len() - 1 - allowed.min(ns.len() - 1)])
}

/// TPR of attack scores strictly above the [`alpha_threshold`].
pub fn alpha_tpr(normal: &[f64], attack: &[f64], alpha: f64) -> Result<AlphaTpr> {
    if attack.is_empty() {
        return Err(Error::EmptyInput("alpha_tpr needs attack scores"));
    }
    let threshold = alpha_threshold(normal, alpha)?;
    Ok(AlphaTpr {
        threshold,
        tpr: count_above(&sorted(attack), threshold) as f64 / attack.len() as f64,
        fpr: count_above(&sorted(normal), threshold) as f64 / normal.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTpr {
    pub thresholds: DetectorThresholds,
    pub tpr: f64,
    pub fpr: f64,
    pub tpr_r: f64,
    pub tpr_f: f64,
    pub fpr_r: f64,
    pub fpr_f: f64,
}

fn flagged(scores: &[(f64, f64)], th: &DetectorThresholds) -> Vec<bool> {
    scores.iter().map(|&(r, f)| r > th.th_r || f > th.th_f).collect()
}

/// OR-ensemble at per-detector budgets from `split` (`alpha / 2` each for
/// the half-half split). Scores are `(delta_R, delta_F)` pairs.
pub fn ensemble_alpha_tpr(normal: &[(f64, f64)], attack: &[(f64, f64)], alpha: f64, split: BudgetSplit) -> Result<EnsembleTpr> {
    if normal.is_empty() || attack.is_empty() {
        return Err(Error::EmptyInput("ensemble_alpha_tpr needs normal and attack scores"));
    }
    let (budget_r, budget_f) = split.budgets(alpha)?;
    let col = |s: &[(f64, f64)], r: bool| -> Vec<f64> { s.iter().map(|p| if r { p.0 } else { p.1 }).collect() };
    let (nr, nf, ar, af) = (col(normal, true), col(normal, false), col(attack, true), col(attack, false));
    // a zero budget admits no exceedances: threshold at the maximum
    let th = |n: &[f64], b: f64| if b > 0.0 { alpha_threshold(n, b) } else { Ok(sorted(n)[n.len() - 1]) };
    let thresholds = DetectorThresholds {
        th_r: th(&nr, budget_r)?,
        th_f: th(&nf, budget_f)?,
        budget_r,
        budget_f,
    };
    let rate = |v: Vec<bool>| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
    let above = |v: &[f64], t: f64| v.iter().filter(|&&x| x > t).count() as f64 / v.len() as f64;
    Ok(EnsembleTpr {
        tpr: rate(flagged(attack, &thresholds)),
        fpr: rate(flagged(normal, &thresholds)),
        tpr_r: above(&ar, thresholds.th_r),
        tpr_f: above(&af, thresholds.th_f),
        fpr_r: above(&nr, thresholds.th_r),
        fpr_f: above(&nf, thresholds.th_f),
        thresholds,
    })
}

/// Exact `O(n m)` pairwise AUC, used as a test oracle.
pub fn pairwise_auc(normal: &[f64], attack: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in attack {
        for &n in normal {
            s += if a > n {
                1.0
            } else if a == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (normal.len() * attack.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trapezoid(points: &[(f64, f64)]) -> f64 {
        points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[0.8, 0.9]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.3, 0.1, 0.3], &[0.3, 0.1, 0.3]).unwrap().auc, 0.5);
        let r = roc_auc(&[0.2, 0.4, 0.6], &[0.3, 0.5, 0.7]).unwrap();
        assert!((r.auc - 6.0 / 9.0).abs() < 1e-15);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        assert!(matches!(roc_auc(&[], &[1.0]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn alpha_tpr_examples() {
        let normal: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = alpha_tpr(&normal, &[19.5, 25.0, 3.0, 19.0], 0.05).unwrap();
        assert_eq!(r.threshold, 19.0);
        assert_eq!(r.fpr, 0.05);
        assert_eq!(r.tpr, 0.5);
        let low = alpha_tpr(&normal, &[0.0, -1.0], 0.3).unwrap();
        assert_eq!(low.tpr, 0.0);
        // alpha close to 1 leaves only the minimum normal score as threshold
        let hi = alpha_tpr(&normal, &[0.5, 1.0, 1.5, 30.0], 0.99).unwrap();
        assert_eq!((hi.threshold, hi.tpr), (1.0, 0.5));
    }

    #[test]
    fn ensemble_budgets_and_union() {
        let normal: Vec<(f64, f64)> = (0..40).map(|i| ((i * 7 % 40) as f64, i as f64)).collect();
        // delta_F separates perfectly, delta_R is uninformative
        let attack: Vec<(f64, f64)> = (0..40).map(|i| ((i * 11 % 40) as f64, 100.0 + i as f64)).collect();
        let e = ensemble_alpha_tpr(&normal, &attack, 0.05, BudgetSplit::HalfHalf).unwrap();
        assert_eq!((e.thresholds.budget_r, e.thresholds.budget_f), (0.025, 0.025));
        let af: Vec<f64> = attack.iter().map(|p| p.1).collect();
        let nf: Vec<f64> = normal.iter().map(|p| p.1).collect();
        assert!(e.tpr >= alpha_tpr(&nf, &af, 0.025).unwrap().tpr);
        assert_eq!(e.tpr, 1.0);
        assert!(e.fpr <= 0.05);
    }

    #[test]
    fn ensemble_on_normal_only_stays_within_alpha() {
        use rand::Rng;
        let mut rng = crate::seed::rng(4);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, n| (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect::<Vec<_>>();
        let normal = draw(&mut rng, 400);
        let e = ensemble_alpha_tpr(&normal, &normal, 0.05, BudgetSplit::HalfHalf).unwrap();
        assert_eq!(e.tpr, e.fpr);
        assert!(e.fpr <= 0.05);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise(
            normal in proptest::collection::vec(0u8..20, 1..200),
            attack in proptest::collection::vec(0u8..25, 1..200),
        ) {
            let n: Vec<f64> = normal.iter().map(|&v| f64::from(v) / 4.0).collect();
            let a: Vec<f64> = attack.iter().map(|&v| f64::from(v) / 4.0).collect();
            let r = roc_auc(&n, &a).unwrap();
            prop_assert_eq!(r.auc, pairwise_auc(&n, &a));
            prop_assert!((trapezoid(&r.points) - r.auc).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_increasing_map(
            normal in proptest::collection::vec(-3.0f64..3.0, 1..60),
            attack in proptest::collection::vec(-3.0f64..3.0, 1..60),
        ) {
            let f = |v: &f64| v.exp() * 3.0 + 1.0;
            let a = roc_auc(&normal, &attack).unwrap().auc;
            let b = roc_auc(&normal.iter().map(f).collect::<Vec<_>>(), &attack.iter().map(f).collect::<Vec<_>>()).unwrap().auc;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn alpha_tpr_monotone(
            normal in proptest::collection::vec(0.0f64..1.0, 1..100),
            attack in proptest::collection::vec(0.0f64..1.5, 1..100),
            a1 in 0.001f64..0.99, a2 in 0.001f64..0.99,
        ) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let r_lo = alpha_tpr(&normal, &attack, lo).unwrap();
            let r_hi = alpha_tpr(&normal, &attack, hi).unwrap();
            prop_assert!(r_lo.tpr <= r_hi.tpr);
            prop_assert!(r_lo.fpr <= lo + 1e-12 && r_hi.fpr <= hi + 1e-12);
        }
    }
}
