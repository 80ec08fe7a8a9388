use serde::{Deserialize, Serialize};

use crate::data::{build_model_input, Example};
use crate::model::{argmax, cross_entropy, softmax, vectorize, FeatureVector, ModelParams, Probs};

use super::config::TrainConfig;
use super::threshold::ThresholdState;
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelDecision {
    pub weak_probs: Probs,
    pub pseudo_label: usize,
    pub confidence: f64,
    pub passed_fixed: bool,
    pub passed_adaptive: bool,
}

pub fn pseudo_label(
    weak_probs: Probs,
    config: &TrainConfig,
    state: &ThresholdState,
    head: usize,
) -> PseudoLabelDecision {
    decide(weak_probs, config.tau, state.tau_t(head))
}

/// [`pseudo_label`] with the thresholds passed directly.
pub fn decide(weak_probs: Probs, tau: f64, tau_t: [f64; 2]) -> PseudoLabelDecision {
    let pseudo_label = argmax(&weak_probs);
    let confidence = weak_probs[pseudo_label];
    PseudoLabelDecision {
        weak_probs,
        pseudo_label,
        confidence,
        passed_fixed: confidence > tau,
        passed_adaptive: confidence > tau_t[pseudo_label],
    }
}

pub fn marginmatch_mask(decision: &PseudoLabelDecision, apm: f64, gamma: f64) -> bool {
    decision.passed_fixed && apm > gamma
}

/// How many samples of one head passed each filter during a step or epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub seen: usize,
    pub fixed: usize,
    pub adaptive: usize,
    pub apm: usize,
    pub weighted: usize,
}

impl FilterCounts {
    pub fn add(&mut self, other: &FilterCounts) {
        self.seen += other.seen;
        self.fixed += other.fixed;
        self.adaptive += other.adaptive;
        self.apm += other.apm;
        self.weighted += other.weighted;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_u: f64,
    pub lambda_u: f64,
    pub total: f64,
    /// Unlabeled term of each head before summation.
    pub head_l_u: Vec<f64>,
    pub filters: Vec<FilterCounts>,
}

impl LossBreakdown {
    pub fn new(l_s: f64, l_u: f64, lambda_u: f64) -> Self {
        LossBreakdown {
            l_s,
            l_u,
            lambda_u,
            total: total_loss(l_s, l_u, lambda_u),
            head_l_u: Vec::new(),
            filters: Vec::new(),
        }
    }
}

pub fn total_loss(l_s: f64, l_u: f64, lambda_u: f64) -> f64 {
    l_s + lambda_u * l_u
}

/// Mean cross-entropy over featurized labeled inputs, summed over heads.
pub fn supervised_loss_features(params: &ModelParams, batch: &[(FeatureVector, usize)]) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Contract("supervised loss of an empty batch".into()));
    }
    let mut sum = 0.0;
    for (x, y) in batch {
        for z in params.logits(x)? {
            sum += cross_entropy(&softmax(&z), *y);
        }
    }
    Ok(sum / batch.len() as f64)
}

pub fn supervised_loss(params: &ModelParams, batch: &[Example]) -> Result<LossBreakdown, TrainError> {
    let featurized = batch
        .iter()
        .map(|ex| {
            let label = ex
                .label
                .ok_or_else(|| TrainError::Contract(format!("example {} has no label", ex.id)))?;
            Ok((vectorize(&build_model_input(ex)?, params.dim()), label.index()))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let l_s = supervised_loss_features(params, &featurized)?;
    Ok(LossBreakdown::new(l_s, 0.0, 0.0))
}

/// `(1/mu_b) * sum of mask_b * H(target_b, strong_b)`.
pub fn masked_unlabeled_loss(
    targets: &[usize],
    mask: &[bool],
    strong_probs: &[Probs],
    mu_b: usize,
) -> Result<f64, TrainError> {
    if targets.len() != mask.len() || targets.len() != strong_probs.len() || targets.len() != mu_b {
        return Err(TrainError::Contract(format!(
            "unlabeled batch misaligned: {} targets, {} mask, {} strong, mu*B = {mu_b}",
            targets.len(),
            mask.len(),
            strong_probs.len()
        )));
    }
    let sum: f64 = targets
        .iter()
        .zip(mask)
        .zip(strong_probs)
        .filter(|((_, &m), _)| m)
        .map(|((&t, _), p)| cross_entropy(p, t))
        .sum();
    Ok(sum / mu_b as f64)
}

pub fn fixmatch_unlabeled_loss(
    decisions: &[PseudoLabelDecision],
    strong_probs: &[Probs],
    mu_b: usize,
) -> Result<f64, TrainError> {
    let targets: Vec<usize> = decisions.iter().map(|d| d.pseudo_label).collect();
    let mask: Vec<bool> = decisions.iter().map(|d| d.passed_fixed).collect();
    masked_unlabeled_loss(&targets, &mask, strong_probs, mu_b)
}

pub fn multimatch_weight(m_i: bool, m_j: bool, agree: bool, free_i: bool, free_j: bool, w_d: f64) -> f64 {
    if !(free_i || free_j) {
        return 0.0;
    }
    let agreed = if m_i && m_j && agree { 1.0 } else { 0.0 };
    let single = if m_i ^ m_j { w_d } else { 0.0 };
    agreed + single
}

/// What one head contributes when it teaches another: its decision on the
/// weak view and whether that pseudo-label passed its APM filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadVote {
    pub decision: PseudoLabelDecision,
    pub apm_pass: bool,
}

/// Weight and target class for head `h` from the votes of the other heads.
///
/// The target is the pseudo-label the other heads agree on, or the one from
/// the only head that passed its APM filter. Whenever neither applies the
/// weight is zero and the returned target is unused.
pub fn plwm_assign(votes: &[HeadVote], h: usize, w_d: f64) -> (f64, usize) {
    assert_eq!(votes.len(), 3, "pseudo-label weighting needs three heads");
    let (i, j) = match h {
        0 => (1, 2),
        1 => (0, 2),
        2 => (0, 1),
        _ => panic!("head index {h} out of range"),
    };
    let (vi, vj) = (&votes[i], &votes[j]);
    let agree = vi.decision.pseudo_label == vj.decision.pseudo_label;
    let weight = multimatch_weight(
        vi.apm_pass,
        vj.apm_pass,
        agree,
        vi.decision.passed_adaptive,
        vj.decision.passed_adaptive,
        w_d,
    );
    let target = if !vi.apm_pass && vj.apm_pass {
        vj.decision.pseudo_label
    } else {
        vi.decision.pseudo_label
    };
    (weight, target)
}

/// Unlabeled terms of one head in a multi-head step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadTerms {
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
    pub strong_probs: Vec<Probs>,
}

/// Sum over heads of `(1/mu_b) * sum of W_b * H(target_b, strong_b)`.
/// Returns the total together with each head's term.
pub fn multimatch_unlabeled_loss(heads: &[HeadTerms], mu_b: usize) -> Result<(f64, Vec<f64>), TrainError> {
    if heads.is_empty() || heads.len() > 3 {
        return Err(TrainError::Contract(format!(
            "expected 1 to 3 heads, got {}",
            heads.len()
        )));
    }
    let mut per_head = Vec::with_capacity(heads.len());
    for (h, terms) in heads.iter().enumerate() {
        let n = terms.targets.len();
        if n != mu_b || terms.weights.len() != n || terms.strong_probs.len() != n {
            return Err(TrainError::Contract(format!(
                "head {h} misaligned: {} targets, {} weights, {} strong, mu*B = {mu_b}",
                n,
                terms.weights.len(),
                terms.strong_probs.len()
            )));
        }
        let sum: f64 = terms
            .targets
            .iter()
            .zip(&terms.weights)
            .zip(&terms.strong_probs)
            .filter(|((_, &w), _)| w != 0.0)
            .map(|((&t, &w), p)| w * cross_entropy(p, t))
            .sum();
        per_head.push(sum / mu_b as f64);
    }
    Ok((per_head.iter().sum(), per_head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use approx::assert_abs_diff_eq;

    const CE_09: f64 = 0.105_360_515_657_826_3;

    fn cfg(tau: f64) -> TrainConfig {
        TrainConfig {
            tau,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pseudo_label_examples() {
        let s = ThresholdState::new(1);
        let d = pseudo_label([0.97, 0.03], &cfg(0.95), &s, 0);
        assert_eq!(d.pseudo_label, 0);
        assert!(d.passed_fixed && d.passed_adaptive);
        assert!(!pseudo_label([0.6, 0.4], &cfg(0.95), &s, 0).passed_fixed);
        let tie = pseudo_label([0.5, 0.5], &cfg(0.95), &s, 0);
        assert_eq!((tie.pseudo_label, tie.confidence), (0, 0.5));
        // 0.5 is not strictly above the initial adaptive threshold
        assert!(!tie.passed_adaptive);
    }

    #[test]
    fn unit_threshold_blocks_everything() {
        assert!(!decide([1.0, 0.0], 1.0, [0.5, 0.5]).passed_fixed);
    }

    #[test]
    fn marginmatch_mask_examples() {
        let pass = decide([0.99, 0.01], 0.95, [0.5, 0.5]);
        let fail = decide([0.6, 0.4], 0.95, [0.5, 0.5]);
        assert!(marginmatch_mask(&pass, 2.0, 1.0));
        assert!(!marginmatch_mask(&pass, 0.5, 1.0));
        assert!(!marginmatch_mask(&fail, f64::INFINITY, 1.0));
        assert!(marginmatch_mask(&pass, -1e300, f64::NEG_INFINITY));
    }

    #[test]
    fn supervised_loss_by_hand() {
        // Hand oracle on probabilities: (H(0.9) + H(0.5)) / 2.
        let expected = (CE_09 + std::f64::consts::LN_2) / 2.0;
        assert_abs_diff_eq!(expected, 0.399_254, epsilon = 1e-6);
        let mut params = ModelParams::zeros(1024, 1, 1);
        // zero network gives uniform predictions
        let x = vectorize("anything", 1024);
        let l = supervised_loss_features(&params, &[(x.clone(), 0), (x.clone(), 1)]).unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-15);
        // b2 = [ln 9, 0] gives [0.9, 0.1] on any input
        params.set(crate::model::ParamRef::B2 { head: 0, class: 0 }, 9f64.ln());
        let l = supervised_loss_features(&params, &[(x.clone(), 0)]).unwrap();
        assert_abs_diff_eq!(l, CE_09, epsilon = 1e-12);
    }

    #[test]
    fn supervised_loss_sums_heads_and_rejects_unlabeled() {
        let params = ModelParams::zeros(1024, 2, 3);
        let ex = Example::prompt("a", "some text", Some(crate::Label::Harmful));
        let l = supervised_loss(&params, std::slice::from_ref(&ex)).unwrap();
        assert_abs_diff_eq!(l.l_s, 3.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!((l.l_u, l.total), (0.0, l.l_s));
        assert!(matches!(
            supervised_loss(&params, &[ex.masked()]),
            Err(TrainError::Contract(_))
        ));
        assert!(supervised_loss(&params, &[]).is_err());
    }

    #[test]
    fn fixmatch_examples() {
        let pass = decide([0.99, 0.01], 0.95, [0.5, 0.5]);
        let fail = decide([0.6, 0.4], 0.95, [0.5, 0.5]);
        assert_eq!(
            fixmatch_unlabeled_loss(&[fail, fail], &[[0.1, 0.9]; 2], 2).unwrap(),
            0.0
        );
        let l = fixmatch_unlabeled_loss(&[pass, fail], &[[0.9, 0.1], [0.0, 1.0]], 2).unwrap();
        assert_abs_diff_eq!(l, CE_09 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.052_680, epsilon = 1e-6);
        assert_eq!(
            fixmatch_unlabeled_loss(&[pass, pass], &[[1.0, 0.0]; 2], 2).unwrap(),
            0.0
        );
        assert!(fixmatch_unlabeled_loss(&[pass], &[[1.0, 0.0]; 2], 2).is_err());
        assert!(fixmatch_unlabeled_loss(&[pass], &[[1.0, 0.0]], 2).is_err());
    }

    #[test]
    fn total_loss_examples() {
        assert_abs_diff_eq!(total_loss(0.3, 0.1, 1.0), 0.4, epsilon = 1e-15);
        assert_eq!(total_loss(0.3, 7.0, 0.0), 0.3);
        assert_eq!(total_loss(0.0, 0.25, 2.0), 0.5);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(multimatch_weight(true, true, true, true, false, 0.5), 1.0);
        for agree in [false, true] {
            assert_eq!(multimatch_weight(true, false, agree, true, true, 0.5), 0.5);
        }
        assert_eq!(multimatch_weight(true, true, false, true, true, 0.5), 0.0);
        assert_eq!(multimatch_weight(true, true, true, false, false, 0.5), 0.0);
    }

    #[test]
    fn plwm_targets() {
        let vote = |label: usize, apm_pass: bool| HeadVote {
            decision: decide(if label == 0 { [0.9, 0.1] } else { [0.1, 0.9] }, 0.95, [0.5, 0.5]),
            apm_pass,
        };
        // head 0 is taught by heads 1 and 2
        assert_eq!(
            plwm_assign(&[vote(0, true), vote(1, true), vote(1, true)], 0, 0.5),
            (1.0, 1)
        );
        assert_eq!(
            plwm_assign(&[vote(1, true), vote(0, false), vote(1, true)], 0, 0.5),
            (0.5, 1)
        );
        assert_eq!(
            plwm_assign(&[vote(1, true), vote(0, true), vote(1, false)], 0, 0.5),
            (0.5, 0)
        );
        assert_eq!(
            plwm_assign(&[vote(1, true), vote(0, true), vote(1, true)], 0, 0.5).0,
            0.0
        );
        // head 2 is taught by heads 0 and 1
        assert_eq!(
            plwm_assign(&[vote(0, true), vote(0, true), vote(1, true)], 2, 0.5),
            (1.0, 0)
        );
    }

    #[test]
    fn multimatch_examples() {
        let zero = HeadTerms {
            targets: vec![0, 1],
            weights: vec![0.0, 0.0],
            strong_probs: vec![[0.5, 0.5]; 2],
        };
        assert_eq!(
            multimatch_unlabeled_loss(&[zero.clone(), zero.clone(), zero], 2)
                .unwrap()
                .0,
            0.0
        );
        let one = HeadTerms {
            targets: vec![0],
            weights: vec![1.0],
            strong_probs: vec![[0.9, 0.1]],
        };
        let (l, per) = multimatch_unlabeled_loss(std::slice::from_ref(&one), 1).unwrap();
        assert_abs_diff_eq!(l, CE_09, epsilon = 1e-15);
        assert_eq!(per, vec![l]);
        let half = HeadTerms {
            weights: vec![0.5],
            ..one.clone()
        };
        assert_eq!(multimatch_unlabeled_loss(&[half], 1).unwrap().0, l / 2.0);
        let bad = HeadTerms { weights: vec![], ..one };
        assert!(multimatch_unlabeled_loss(&[bad], 1).is_err());
        assert!(multimatch_unlabeled_loss(&[], 1).is_err());
    }

    #[test]
    fn param_free_model_losses_are_finite() {
        let params = init_params(1024, 4, 3, 1).unwrap();
        let x = vectorize("a b c", 1024);
        assert!(supervised_loss_features(&params, &[(x, 1)]).unwrap().is_finite());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn probs() -> impl Strategy<Value = Probs> {
            (0.0f64..=1.0).prop_map(|p| [p, 1.0 - p])
        }

        proptest! {
            #[test]
            fn decision_invariants(p in probs(), tau in 0.5001f64..=1.0, t0 in 0.5f64..1.0, t1 in 0.5f64..1.0) {
                let d = decide(p, tau, [t0, t1]);
                prop_assert_eq!(d.pseudo_label, argmax(&p));
                prop_assert_eq!(d.confidence, p[0].max(p[1]));
                prop_assert_eq!(d.passed_fixed, d.confidence > tau);
                prop_assert_eq!(d.passed_adaptive, d.confidence > [t0, t1][d.pseudo_label]);
            }

            #[test]
            fn raising_tau_shrinks_the_fixed_set(ps in prop::collection::vec(probs(), 1..30), a in 0.5001f64..=1.0, b in 0.5001f64..=1.0) {
                let (lo, hi) = (a.min(b), a.max(b));
                for p in ps {
                    if decide(p, hi, [0.5; 2]).passed_fixed {
                        prop_assert!(decide(p, lo, [0.5; 2]).passed_fixed);
                    }
                }
            }

            #[test]
            fn raising_gamma_shrinks_the_margin_set(p in probs(), apm in -10.0f64..10.0, g1 in -10.0f64..10.0, g2 in -10.0f64..10.0) {
                let d = decide(p, 0.9, [0.5; 2]);
                if marginmatch_mask(&d, apm, g1.max(g2)) {
                    prop_assert!(marginmatch_mask(&d, apm, g1.min(g2)));
                }
            }

            #[test]
            fn masked_samples_contribute_nothing(
                rows in prop::collection::vec((probs(), probs(), 0.5001f64..=1.0), 1..8),
                swap in probs(),
            ) {
                let decisions: Vec<_> = rows.iter().map(|(w, _, tau)| decide(*w, *tau, [0.5; 2])).collect();
                let strong: Vec<Probs> = rows.iter().map(|(_, s, _)| *s).collect();
                let mu_b = rows.len();
                let base = fixmatch_unlabeled_loss(&decisions, &strong, mu_b).unwrap();
                // replacing the strong view of a non-passing sample changes nothing
                if let Some(k) = decisions.iter().position(|d| !d.passed_fixed) {
                    let mut changed = strong.clone();
                    changed[k] = swap;
                    prop_assert_eq!(fixmatch_unlabeled_loss(&decisions, &changed, mu_b).unwrap(), base);
                }
            }

            #[test]
            fn weight_takes_three_values(bits in 0u8..32, w_d in 0.0f64..=1.0) {
                let b = |k: u8| bits >> k & 1 == 1;
                let w = multimatch_weight(b(0), b(1), b(2), b(3), b(4), w_d);
                prop_assert!(w == 0.0 || w == w_d || w == 1.0);
            }

            #[test]
            fn single_head_with_fixed_mask_reduces_to_fixmatch(
                rows in prop::collection::vec((probs(), probs()), 1..8),
                tau in 0.5001f64..=1.0,
            ) {
                let decisions: Vec<_> = rows.iter().map(|(w, _)| decide(*w, tau, [tau; 2])).collect();
                let strong: Vec<Probs> = rows.iter().map(|(_, s)| *s).collect();
                let n = rows.len();
                let terms = HeadTerms {
                    targets: decisions.iter().map(|d| d.pseudo_label).collect(),
                    weights: decisions.iter().map(|d| if d.passed_adaptive { 1.0 } else { 0.0 }).collect(),
                    strong_probs: strong.clone(),
                };
                let fm = fixmatch_unlabeled_loss(&decisions, &strong, n).unwrap();
                prop_assert_eq!(multimatch_unlabeled_loss(&[terms], n).unwrap().0, fm);
            }
        }
    }
}
