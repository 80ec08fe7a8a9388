use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    default_lexicon, select_strong, weak_augment, AugmentationCache, AugmentationKind, AugmentationRecord, Augmenter,
    MockAugmenter,
};
use crate::data::{build_model_input, DatasetSplits, Label};
use crate::harness::metrics::{evaluate_features, Evaluation};
use crate::model::{
    cross_entropy, cross_entropy_logit_grad, forward, init_params, sgd_step, softmax, vectorize, FeatureVector,
    GradientSet, Logits, ModelError, ModelParams, Probs, NUM_CLASSES,
};

use super::apm::{compute_gamma, APMTracker, ApmKey};
use super::config::{Algorithm, TrainConfig};
use super::history::EpochRecord;
use super::losses::{
    marginmatch_mask, masked_unlabeled_loss, multimatch_unlabeled_loss, plwm_assign, pseudo_label, FilterCounts,
    HeadTerms, HeadVote, LossBreakdown, PseudoLabelDecision,
};
use super::threshold::{freematch_threshold_update, ThresholdState};
use super::TrainError;

const STREAM_LABELED: u64 = 0x1a;
const STREAM_UNLABELED: u64 = 0x2b;
const STREAM_STRONG: u64 = 0x3c;
const STREAM_WEAK: u64 = 0x4d;
const FALLBACK_SEEDS: [(&str, u64); 2] = [("fallback-a", 0xa1), ("fallback-b", 0xb2)];

/// Where strong views come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationSource {
    Llm,
    Backtranslation,
    Mock,
    /// The strong view is the weak view.
    None,
}

impl AugmentationSource {
    pub fn kind(self) -> Option<AugmentationKind> {
        match self {
            AugmentationSource::Llm => Some(AugmentationKind::Llm),
            AugmentationSource::Backtranslation => Some(AugmentationKind::Backtranslation),
            AugmentationSource::Mock => Some(AugmentationKind::Mock),
            AugmentationSource::None => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationSource::Llm => "llm",
            AugmentationSource::Backtranslation => "backtranslation",
            AugmentationSource::Mock => "mock",
            AugmentationSource::None => "none",
        }
    }
}

impl fmt::Display for AugmentationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentationSource {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "llm" => Ok(AugmentationSource::Llm),
            "backtranslation" | "bt" => Ok(AugmentationSource::Backtranslation),
            "mock" => Ok(AugmentationSource::Mock),
            "none" => Ok(AugmentationSource::None),
            other => Err(TrainError::Config(format!("unknown augmentation source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub augmentation: AugmentationSource,
    /// Checkpoints and history go to `{run_dir}/{run_id}/`.
    pub run_dir: Option<PathBuf>,
    pub run_id: String,
    /// Lexicon for fallback mock augmentations.
    pub mock_lexicon: BTreeMap<String, String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            augmentation: AugmentationSource::Mock,
            run_dir: None,
            run_id: "run".into(),
            mock_lexicon: default_lexicon(),
        }
    }
}

impl TrainOptions {
    pub fn output_dir(&self) -> Option<PathBuf> {
        self.run_dir.as_ref().map(|d| d.join(&self.run_id))
    }
}

/// Unlabeled targets of one step in either single-mask or per-head weighted
/// form.
#[derive(Debug, Clone, PartialEq)]
pub enum UnlabeledTerm {
    Masked { targets: Vec<usize>, mask: Vec<bool> },
    Weighted { heads: Vec<(Vec<usize>, Vec<f64>)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch {
    pub strong: Vec<FeatureVector>,
    pub term: UnlabeledTerm,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: LossBreakdown,
    pub grads: GradientSet,
}

/// The total loss of one step and its gradient, with pseudo-labels and
/// weights held fixed.
pub fn objective(
    params: &ModelParams,
    labeled: &[(FeatureVector, usize)],
    unlabeled: Option<&UnlabeledBatch>,
    lambda_u: f64,
) -> Result<Objective, TrainError> {
    if labeled.is_empty() {
        return Err(TrainError::Contract("empty labeled batch".into()));
    }
    let heads = params.head_count();
    let mut grads = GradientSet::zeros(params);
    let b = labeled.len() as f64;
    let mut l_s = 0.0;
    let mut upstream = vec![[0.0; NUM_CLASSES]; heads];
    for (x, y) in labeled {
        let (logits, trace) = forward(params, x)?;
        for (up, z) in upstream.iter_mut().zip(&logits) {
            let p = softmax(z);
            l_s += cross_entropy(&p, *y);
            *up = cross_entropy_logit_grad(&p, *y).map(|g| g / b);
        }
        grads.accumulate(params, &trace, &upstream)?;
    }
    l_s /= b;

    let Some(batch) = unlabeled else {
        let mut loss = LossBreakdown::new(l_s, 0.0, lambda_u);
        loss.head_l_u = vec![0.0; heads];
        return Ok(Objective { loss, grads });
    };
    let mu_b = batch.strong.len();
    // Per head: (targets, weights) with weights in {0, 1} for the masked form.
    let per_head: Vec<(&[usize], Vec<f64>)> = match &batch.term {
        UnlabeledTerm::Masked { targets, mask } => {
            if heads != 1 {
                return Err(TrainError::Contract("masked unlabeled term needs a single head".into()));
            }
            vec![(
                targets.as_slice(),
                mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            )]
        }
        UnlabeledTerm::Weighted { heads: terms } => {
            if terms.len() != heads {
                return Err(TrainError::Contract(format!(
                    "{} weighted heads for a {heads}-head model",
                    terms.len()
                )));
            }
            terms.iter().map(|(t, w)| (t.as_slice(), w.clone())).collect()
        }
    };
    for (targets, weights) in &per_head {
        if targets.len() != mu_b || weights.len() != mu_b {
            return Err(TrainError::Contract(format!(
                "unlabeled targets cover {} samples, strong views {mu_b}",
                targets.len()
            )));
        }
    }

    let mut strong_probs: Vec<Vec<Probs>> = vec![Vec::with_capacity(mu_b); heads];
    for (k, x) in batch.strong.iter().enumerate() {
        let active = per_head.iter().any(|(_, w)| w[k] != 0.0);
        if !active {
            for probs in strong_probs.iter_mut() {
                probs.push([0.5; NUM_CLASSES]);
            }
            continue;
        }
        let (logits, trace) = forward(params, x)?;
        let mut any = false;
        for (h, z) in logits.iter().enumerate() {
            let p = softmax(z);
            strong_probs[h].push(p);
            let (targets, weights) = &per_head[h];
            let scale = lambda_u * weights[k] / mu_b as f64;
            upstream[h] = if scale == 0.0 {
                [0.0; NUM_CLASSES]
            } else {
                any = true;
                cross_entropy_logit_grad(&p, targets[k]).map(|g| g * scale)
            };
        }
        if any {
            grads.accumulate(params, &trace, &upstream)?;
        }
    }

    let (l_u, head_l_u) = match &batch.term {
        UnlabeledTerm::Masked { targets, mask } => {
            let l = masked_unlabeled_loss(targets, mask, &strong_probs[0], mu_b)?;
            (l, vec![l])
        }
        UnlabeledTerm::Weighted { heads: terms } => {
            let terms: Vec<HeadTerms> = terms
                .iter()
                .zip(strong_probs)
                .map(|((t, w), p)| HeadTerms {
                    targets: t.clone(),
                    weights: w.clone(),
                    strong_probs: p,
                })
                .collect();
            multimatch_unlabeled_loss(&terms, mu_b)?
        }
    };
    let mut loss = LossBreakdown::new(l_s, l_u, lambda_u);
    loss.head_l_u = head_l_u;
    Ok(Objective { loss, grads })
}

struct LabeledItem {
    text: String,
    x: Option<FeatureVector>,
    label: usize,
}

struct UnlabeledItem {
    id: String,
    text: String,
    weak_x: Option<FeatureVector>,
    strong: Vec<AugmentationRecord>,
}

/// Epoch-level summary: the mean loss breakdown plus the state after the
/// end-of-epoch updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub unlabeled_usage: f64,
    /// Loss of every step in order.
    pub steps: Vec<LossBreakdown>,
}

pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    thresholds: ThresholdState,
    apm: APMTracker,
    labeled: Vec<LabeledItem>,
    unlabeled: Vec<UnlabeledItem>,
    rng_labeled: ChaCha8Rng,
    rng_unlabeled: ChaCha8Rng,
    rng_strong: ChaCha8Rng,
    rng_weak: ChaCha8Rng,
    labeled_order: Vec<usize>,
    labeled_cursor: usize,
    epoch: usize,
    last_weak: Vec<Option<Vec<Logits>>>,
    /// Size of the unlabeled split, which sets the epoch length even when
    /// the algorithm ignores it.
    unlabeled_len: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        splits: &DatasetSplits,
        cache: &AugmentationCache,
        options: &TrainOptions,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if splits.labeled.is_empty() {
            return Err(TrainError::Config("the labeled split is empty".into()));
        }
        if config.algorithm.uses_unlabeled() && splits.unlabeled.is_empty() {
            return Err(TrainError::Config(format!("{} needs unlabeled data", config.algorithm)));
        }
        let dim = config.feature_dim;
        let identity_weak = config.weak_drop_probability == 0.0;
        let labeled = splits
            .labeled
            .iter()
            .map(|ex| {
                let label = ex
                    .label
                    .ok_or_else(|| TrainError::Contract(format!("labeled example {} has no label", ex.id)))?;
                let text = build_model_input(ex)?;
                let x = identity_weak.then(|| vectorize(&text, dim));
                Ok(LabeledItem {
                    text,
                    x,
                    label: label.index(),
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;

        let mut unlabeled = Vec::new();
        if config.algorithm.uses_unlabeled() {
            let fallback: Vec<MockAugmenter> = FALLBACK_SEEDS
                .iter()
                .map(|&(name, seed)| MockAugmenter::new(name, seed, options.mock_lexicon.clone()))
                .collect();
            for ex in &splits.unlabeled {
                let text = build_model_input(ex)?;
                let mut strong = match options.augmentation.kind() {
                    Some(kind) => cache.records_for(&ex.id, kind),
                    None => Vec::new(),
                };
                if strong.is_empty() && options.augmentation != AugmentationSource::None {
                    if !config.mock_fallback {
                        return Err(TrainError::Config(format!(
                            "no {} augmentation cached for {} and mock fallback is off",
                            options.augmentation, ex.id
                        )));
                    }
                    strong = fallback.iter().map(|m| m.augment(ex)).collect::<Result<_, _>>()?;
                }
                unlabeled.push(UnlabeledItem {
                    id: ex.id.clone(),
                    weak_x: identity_weak.then(|| vectorize(&text, dim)),
                    text,
                    strong,
                });
            }
        }

        let params = init_params(dim, config.hidden, config.head_count(), config.seed)?;
        let seed = config.seed;
        Ok(Trainer {
            thresholds: ThresholdState::new(config.head_count()),
            apm: APMTracker::new(config.delta)?,
            last_weak: vec![None; unlabeled.len()],
            unlabeled_len: splits.unlabeled.len(),
            labeled_order: Vec::new(),
            labeled_cursor: 0,
            epoch: 0,
            rng_labeled: stream(seed, STREAM_LABELED),
            rng_unlabeled: stream(seed, STREAM_UNLABELED),
            rng_strong: stream(seed, STREAM_STRONG),
            rng_weak: stream(seed, STREAM_WEAK),
            labeled,
            unlabeled,
            params,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn thresholds(&self) -> &ThresholdState {
        &self.thresholds
    }

    pub fn apm(&self) -> &APMTracker {
        &self.apm
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        let n_u = self.unlabeled_len;
        if n_u > 0 {
            n_u.div_ceil(self.config.unlabeled_batch())
        } else {
            self.labeled.len().div_ceil(self.config.batch_size)
        }
    }

    fn next_labeled(&mut self) -> usize {
        if self.labeled_cursor == self.labeled_order.len() {
            self.labeled_order = (0..self.labeled.len()).collect();
            self.labeled_order.shuffle(&mut self.rng_labeled);
            self.labeled_cursor = 0;
        }
        self.labeled_cursor += 1;
        self.labeled_order[self.labeled_cursor - 1]
    }

    fn weak_features(&mut self, text: &str, cached: Option<&FeatureVector>) -> FeatureVector {
        match cached {
            Some(x) => x.clone(),
            None => vectorize(
                &weak_augment(text, self.config.weak_drop_probability, &mut self.rng_weak),
                self.config.feature_dim,
            ),
        }
    }

    fn strong_features(&mut self, u: usize) -> Result<FeatureVector, TrainError> {
        let item = &self.unlabeled[u];
        if item.strong.is_empty() {
            let (text, cached) = (item.text.clone(), item.weak_x.clone());
            return Ok(self.weak_features(&text, cached.as_ref()));
        }
        let text = select_strong(&item.strong, &mut self.rng_strong)?;
        Ok(vectorize(text, self.config.feature_dim))
    }

    fn apm_pass(&self, u: usize, head: usize, d: &PseudoLabelDecision) -> bool {
        let key = ApmKey::new(self.unlabeled[u].id.as_str(), head, d.pseudo_label);
        self.apm.get(&key) > self.thresholds.gamma[head][d.pseudo_label]
    }

    fn step(
        &mut self,
        batch: usize,
        lab: &[usize],
        unl: &[usize],
        used: &mut [bool],
    ) -> Result<LossBreakdown, TrainError> {
        let heads = self.params.head_count();
        let labeled: Vec<(FeatureVector, usize)> = lab
            .iter()
            .map(|&i| {
                let (text, cached, y) = {
                    let item = &self.labeled[i];
                    (item.text.clone(), item.x.clone(), item.label)
                };
                (self.weak_features(&text, cached.as_ref()), y)
            })
            .collect();

        let mut filters = vec![FilterCounts::default(); heads];
        let unlabeled = if self.config.algorithm.uses_unlabeled() {
            let mut decisions: Vec<Vec<PseudoLabelDecision>> = Vec::with_capacity(unl.len());
            for &u in unl {
                let (text, cached) = (self.unlabeled[u].text.clone(), self.unlabeled[u].weak_x.clone());
                let x = self.weak_features(&text, cached.as_ref());
                let logits = self.params.logits(&x)?;
                decisions.push(
                    logits
                        .iter()
                        .enumerate()
                        .map(|(h, z)| pseudo_label(softmax(z), &self.config, &self.thresholds, h))
                        .collect(),
                );
                self.last_weak[u] = Some(logits);
            }
            let strong = unl
                .iter()
                .map(|&u| self.strong_features(u))
                .collect::<Result<Vec<_>, _>>()?;

            for (k, &u) in unl.iter().enumerate() {
                for (h, d) in decisions[k].iter().enumerate() {
                    let f = &mut filters[h];
                    f.seen += 1;
                    f.fixed += d.passed_fixed as usize;
                    f.adaptive += d.passed_adaptive as usize;
                    if self.config.algorithm.uses_apm() {
                        f.apm += self.apm_pass(u, h, d) as usize;
                    }
                }
            }

            let term = match self.config.algorithm {
                Algorithm::FixMatch | Algorithm::MarginMatch => {
                    let targets = decisions.iter().map(|d| d[0].pseudo_label).collect();
                    let mask: Vec<bool> = unl
                        .iter()
                        .zip(&decisions)
                        .map(|(&u, d)| {
                            let d = &d[0];
                            if self.config.algorithm == Algorithm::FixMatch {
                                d.passed_fixed
                            } else {
                                let key = ApmKey::new(self.unlabeled[u].id.as_str(), 0, d.pseudo_label);
                                marginmatch_mask(d, self.apm.get(&key), self.thresholds.gamma[0][d.pseudo_label])
                            }
                        })
                        .collect();
                    for (&u, &m) in unl.iter().zip(&mask) {
                        filters[0].weighted += m as usize;
                        used[u] |= m;
                    }
                    UnlabeledTerm::Masked { targets, mask }
                }
                Algorithm::MultiMatch => {
                    let mut terms = vec![(Vec::with_capacity(unl.len()), Vec::with_capacity(unl.len())); heads];
                    for (&u, d) in unl.iter().zip(&decisions) {
                        let votes: Vec<HeadVote> = d
                            .iter()
                            .enumerate()
                            .map(|(h, d)| HeadVote {
                                decision: *d,
                                apm_pass: self.apm_pass(u, h, d),
                            })
                            .collect();
                        for (h, (targets, weights)) in terms.iter_mut().enumerate() {
                            let (w, t) = plwm_assign(&votes, h, self.config.w_d);
                            targets.push(t);
                            weights.push(w);
                            if w != 0.0 {
                                filters[h].weighted += 1;
                                used[u] = true;
                            }
                        }
                    }
                    UnlabeledTerm::Weighted { heads: terms }
                }
                Algorithm::Supervised => unreachable!("supervised runs draw no unlabeled data"),
            };

            for h in 0..heads {
                let probs: Vec<Probs> = decisions.iter().map(|d| d[h].weak_probs).collect();
                freematch_threshold_update(&mut self.thresholds, h, &probs, self.config.ema_momentum);
            }
            Some(UnlabeledBatch { strong, term })
        } else {
            None
        };

        let lambda_u = self.config.lambda_u;
        let mut out = objective(&self.params, &labeled, unlabeled.as_ref(), lambda_u)?;
        out.loss.filters = filters;
        let divergence = TrainError::Divergence {
            epoch: self.epoch + 1,
            batch,
        };
        if !out.loss.total.is_finite() {
            return Err(divergence);
        }
        match sgd_step(
            &mut self.params,
            &out.grads,
            self.config.learning_rate,
            self.config.weight_decay,
        ) {
            Err(ModelError::NonFinite(_)) => Err(divergence),
            other => Ok(other?),
        }?;
        Ok(out.loss)
    }

    /// Runs one epoch and the end-of-epoch APM and threshold updates.
    pub fn run_epoch(&mut self) -> Result<EpochSummary, TrainError> {
        let steps = self.steps_per_epoch();
        let b = self.config.batch_size;
        let mu_b = self.config.unlabeled_batch();
        let n_u = self.unlabeled.len();
        let mut order: Vec<usize> = (0..n_u).collect();
        if self.config.algorithm.uses_unlabeled() {
            order.shuffle(&mut self.rng_unlabeled);
        }
        let mut used = vec![false; n_u];
        let mut seen = vec![false; n_u];
        let mut step_losses = Vec::with_capacity(steps);
        for step in 0..steps {
            let lab: Vec<usize> = (0..b).map(|_| self.next_labeled()).collect();
            let unl: Vec<usize> = if self.config.algorithm.uses_unlabeled() {
                (0..mu_b).map(|k| order[(step * mu_b + k) % n_u]).collect()
            } else {
                Vec::new()
            };
            for &u in &unl {
                seen[u] = true;
            }
            step_losses.push(self.step(step, &lab, &unl, &mut used)?);
        }

        if self.config.algorithm.uses_apm() {
            self.update_apm(&seen)?;
        }
        self.epoch += 1;

        let n = steps.max(1) as f64;
        let heads = self.params.head_count();
        let mean = |f: &dyn Fn(&LossBreakdown) -> f64| step_losses.iter().map(f).sum::<f64>() / n;
        let l_s = mean(&|l| l.l_s);
        let l_u = mean(&|l| l.l_u);
        let mut loss = LossBreakdown::new(l_s, l_u, self.config.lambda_u);
        loss.head_l_u = (0..heads)
            .map(|h| mean(&|l| l.head_l_u.get(h).copied().unwrap_or(0.0)))
            .collect();
        loss.filters = vec![FilterCounts::default(); heads];
        for l in &step_losses {
            for (acc, f) in loss.filters.iter_mut().zip(&l.filters) {
                acc.add(f);
            }
        }
        let unlabeled_usage = if n_u == 0 {
            0.0
        } else {
            used.iter().filter(|&&u| u).count() as f64 / n_u as f64
        };
        Ok(EpochSummary {
            epoch: self.epoch,
            loss,
            unlabeled_usage,
            steps: step_losses,
        })
    }

    fn update_apm(&mut self, seen: &[bool]) -> Result<(), TrainError> {
        let heads = self.params.head_count();
        let mut agreed: Vec<Vec<(usize, usize)>> = vec![Vec::new(); heads];
        for (u, item) in self.unlabeled.iter().enumerate() {
            if !seen[u] {
                continue;
            }
            let logits = self.last_weak[u].as_ref().expect("seen samples have weak logits");
            for (h, z) in logits.iter().enumerate() {
                self.apm.record_logits(&item.id, h, z)?;
            }
            let labels: Vec<usize> = logits.iter().map(|z| crate::model::argmax(&z.0)).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                for (h, a) in agreed.iter_mut().enumerate() {
                    a.push((u, labels[h]));
                }
            }
        }
        self.apm.finish_epoch();
        for (h, pairs) in agreed.iter().enumerate() {
            let pairs: Vec<(&str, usize)> = pairs.iter().map(|&(u, c)| (self.unlabeled[u].id.as_str(), c)).collect();
            self.thresholds.gamma[h] = compute_gamma(&self.apm, &pairs, self.config.gamma_percentile, h);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation harmful-F1, or the
    /// initial parameters when no epoch ran.
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), TrainError> {
    params.save(path).map_err(|e| match e {
        ModelError::Io(source) => TrainError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

fn epoch_record(summary: &EpochSummary, thresholds: &ThresholdState, eval: &Evaluation) -> EpochRecord {
    let finite = |g: f64| g.is_finite().then_some(g);
    EpochRecord {
        epoch: summary.epoch,
        l_s: summary.loss.l_s,
        l_u: summary.loss.l_u,
        lambda_u: summary.loss.lambda_u,
        total: summary.loss.total,
        head_l_u: summary.loss.head_l_u.clone(),
        filters: summary.loss.filters.clone(),
        unlabeled_usage: summary.unlabeled_usage,
        tau_t: thresholds.heads.iter().map(|t| t.tau_t).collect(),
        gamma: thresholds.gamma.iter().map(|g| g.map(finite)).collect(),
        val_f1: eval.f1,
        val_precision: eval.precision,
        val_recall: eval.recall,
    }
}

/// Trains for `config.epochs` epochs, keeping the parameters with the best
/// validation harmful-F1 (earliest epoch on ties).
pub fn train(
    config: &TrainConfig,
    splits: &DatasetSplits,
    cache: &AugmentationCache,
    options: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config.clone(), splits, cache, options)?;
    if config.epochs > 0 && splits.validation.is_empty() {
        return Err(TrainError::Config("the validation split is empty".into()));
    }
    let validation: Vec<(FeatureVector, Label)> = splits
        .validation
        .iter()
        .map(|ex| {
            let label = ex
                .label
                .ok_or_else(|| TrainError::Contract(format!("validation example {} has no label", ex.id)))?;
            Ok((vectorize(&build_model_input(ex)?, config.feature_dim), label))
        })
        .collect::<Result<_, TrainError>>()?;

    let out_dir = options.output_dir();
    let mut history_file = match &out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("history.jsonl");
            Some((BufWriter::new(File::create(&path).map_err(io_err(&path))?), path))
        }
        None => None,
    };

    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let summary = trainer.run_epoch()?;
        let eval = evaluate_features(trainer.params(), &validation).map_err(|e| TrainError::Contract(e.to_string()))?;
        let record = epoch_record(&summary, trainer.thresholds(), &eval);
        log::info!(
            "{} epoch {}: l_s={:.4} l_u={:.4} val_f1={:.4}",
            config.algorithm,
            record.epoch,
            record.l_s,
            record.l_u,
            record.val_f1
        );
        if let Some(dir) = &out_dir {
            save_checkpoint(trainer.params(), &dir.join(format!("epoch_{}.ckpt", summary.epoch)))?;
        }
        if best.as_ref().is_none_or(|(_, f1, _)| eval.f1 > *f1) {
            if let Some(dir) = &out_dir {
                save_checkpoint(trainer.params(), &dir.join("best.ckpt"))?;
            }
            best = Some((summary.epoch, eval.f1, trainer.params().clone()));
        }
        if let Some((file, path)) = &mut history_file {
            writeln!(file, "{}", record.to_json_line())
                .and_then(|_| file.flush())
                .map_err(io_err(path))?;
        }
        history.push(record);
    }

    let final_params = trainer.into_params();
    Ok(match best {
        Some((epoch, f1, params)) => TrainOutcome {
            params,
            final_params,
            history,
            best_epoch: Some(epoch),
            best_val_f1: Some(f1),
        },
        None => TrainOutcome {
            params: final_params.clone(),
            final_params,
            history,
            best_epoch: None,
            best_val_f1: None,
        },
    })
}
