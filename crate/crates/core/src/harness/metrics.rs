use serde::{Deserialize, Serialize};

use crate::data::{build_model_input, Example, Label};
use crate::model::{argmax, softmax, vectorize, FeatureVector, ModelError, ModelParams, Probs, NUM_CLASSES};

use super::HarnessError;

/// Binary confusion counts with Harmful as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Harmful, Label::Harmful) => self.tp += 1,
            (Label::Safe, Label::Harmful) => self.fp += 1,
            (Label::Harmful, Label::Safe) => self.fn_ += 1,
            (Label::Safe, Label::Safe) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_harmful(cm: &ConfusionMatrix) -> f64 {
    if cm.tp == 0 {
        return 0.0;
    }
    let (p, r) = (cm.precision(), cm.recall());
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Evaluation {
            f1: f1_harmful(&confusion),
            precision: confusion.precision(),
            recall: confusion.recall(),
            confusion,
        }
    }
}

/// Mean of the per-head distributions.
pub fn ensemble_probs(params: &ModelParams, x: &FeatureVector) -> Result<Probs, ModelError> {
    let logits = params.logits(x)?;
    let mut mean = [0.0; NUM_CLASSES];
    for z in &logits {
        for (m, p) in mean.iter_mut().zip(softmax(z)) {
            *m += p;
        }
    }
    Ok(mean.map(|m| m / logits.len() as f64))
}

pub fn predict(params: &ModelParams, x: &FeatureVector) -> Result<Label, ModelError> {
    let probs = ensemble_probs(params, x)?;
    Ok(Label::from_index(argmax(&probs)).expect("two classes"))
}

pub fn evaluate_features(params: &ModelParams, data: &[(FeatureVector, Label)]) -> Result<Evaluation, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::Contract("evaluation on an empty dataset".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (x, truth) in data {
        cm.record(*truth, predict(params, x)?);
    }
    Ok(Evaluation::from_confusion(cm))
}

pub fn featurize_labeled(examples: &[Example], dim: usize) -> Result<Vec<(FeatureVector, Label)>, HarnessError> {
    examples
        .iter()
        .map(|ex| {
            let label = ex
                .label
                .ok_or_else(|| HarnessError::Contract(format!("example {} has no label", ex.id)))?;
            Ok((vectorize(&build_model_input(ex)?, dim), label))
        })
        .collect()
}

pub fn evaluate(params: &ModelParams, dataset: &[Example]) -> Result<Evaluation, HarnessError> {
    evaluate_features(params, &featurize_labeled(dataset, params.dim())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamRef;
    use approx::assert_abs_diff_eq;

    fn cm(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    #[test]
    fn f1_examples() {
        assert_abs_diff_eq!(f1_harmful(&cm(8, 2, 2, 0)), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(f1_harmful(&cm(6, 2, 3, 9)), 0.705_882, epsilon = 1e-6);
        assert_abs_diff_eq!(f1_harmful(&cm(6, 2, 3, 9)), 12.0 / 17.0, epsilon = 1e-15);
        assert_eq!(f1_harmful(&cm(0, 5, 5, 5)), 0.0);
        assert_eq!(f1_harmful(&ConfusionMatrix::default()), 0.0);
    }

    fn constant_model(heads: usize, b2: &[[f64; 2]]) -> ModelParams {
        let mut params = ModelParams::zeros(1024, 1, heads);
        for (h, b) in b2.iter().enumerate() {
            for (c, &v) in b.iter().enumerate() {
                params.set(ParamRef::B2 { head: h, class: c }, v);
            }
        }
        params
    }

    fn dataset(labels: &[Label]) -> Vec<Example> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Example::prompt(format!("e{i}"), format!("text number {i}"), Some(l)))
            .collect()
    }

    #[test]
    fn constant_predictors() {
        let harmful = dataset(&[Label::Harmful; 4]);
        let all_h = constant_model(1, &[[0.0, 5.0]]);
        assert_eq!(evaluate(&all_h, &harmful).unwrap().f1, 1.0);
        let all_s = constant_model(1, &[[5.0, 0.0]]);
        let e = evaluate(&all_s, &harmful).unwrap();
        assert_eq!((e.f1, e.confusion.fn_), (0.0, 4));
        assert!(evaluate(&all_s, &[]).is_err());
        assert!(evaluate(&all_s, &[harmful[0].masked()]).is_err());
    }

    #[test]
    fn heads_vote_by_mean_probability() {
        // two heads at [0.25, 0.75] and one at [0.75, 0.25]: mean favors Harmful
        let l3 = 3f64.ln();
        let params = constant_model(3, &[[0.0, l3], [0.0, l3], [l3, 0.0]]);
        let x = vectorize("x", 1024);
        let p = ensemble_probs(&params, &x).unwrap();
        assert_abs_diff_eq!(p[1], 1.75 / 3.0, epsilon = 1e-12);
        assert_eq!(predict(&params, &x).unwrap(), Label::Harmful);
        // one Harmful vote and one exactly opposite Safe vote average to a tie
        let tie = constant_model(3, &[[0.0, l3], [l3, 0.0], [0.0, 0.0]]);
        let p = ensemble_probs(&tie, &x).unwrap();
        assert_abs_diff_eq!(p[0], p[1], epsilon = 1e-15);
        assert_eq!(predict(&tie, &x).unwrap(), Label::Safe);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let params = crate::model::init_params(1024, 8, 3, 5).unwrap();
        let data = dataset(&[Label::Harmful, Label::Safe, Label::Harmful, Label::Safe]);
        assert_eq!(evaluate(&params, &data).unwrap(), evaluate(&params, &data).unwrap());
    }
}
