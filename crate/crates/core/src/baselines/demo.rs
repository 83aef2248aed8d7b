use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Case, Recommender};
use crate::numcore::layers::tape_dropout;
use crate::numcore::{fit, Activation, DenseLayer, History, Mat, Mode, ParamSet, Tape, TrainConfig, Trainable, Var};
use crate::recmodels::FeatureScaler;

/// Feed-forward classifier over demographics and owned-item counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoModel {
    pub params: ParamSet,
    hidden: DenseLayer,
    out: DenseLayer,
    dropout_rate: f64,
    scaler: FeatureScaler,
}

/// Scaled features and multi-hot target.
pub type DemoExample = (Vec<f64>, Vec<f64>);

fn features(case: &Case) -> Result<&[f64]> {
    case.features.as_deref().ok_or_else(|| Error::ProfileRequired(case.user().to_string()))
}

fn target(case: &Case, n_items: usize) -> Vec<f64> {
    let mut t = vec![0.0; n_items];
    for &k in &case.task.purchase.items {
        t[k] = 1.0;
    }
    t
}

impl DemoModel {
    pub fn new(n_features: usize, n_items: usize, scaler: FeatureScaler, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        let hidden =
            DenseLayer::new(&mut params, "demo.hidden", n_features, cfg.hidden_units, Activation::Relu, &mut rng);
        let out = DenseLayer::new(&mut params, "demo.out", cfg.hidden_units, n_items, Activation::Sigmoid, &mut rng);
        DemoModel { params, hidden, out, dropout_rate: cfg.dropout_rate, scaler }
    }

    pub fn n_items(&self) -> usize {
        self.out.output_dim
    }

    pub fn examples(&self, cases: &[Case]) -> Result<Vec<DemoExample>> {
        cases.iter().map(|c| Ok((self.scaler.apply(features(c)?)?, target(c, self.out.output_dim)))).collect()
    }

    pub fn fit(train: &[Case], valid: &[Case], n_items: usize, cfg: &TrainConfig) -> Result<(Self, History)> {
        let rows: Vec<Vec<f64>> = train.iter().map(|c| features(c).map(<[f64]>::to_vec)).collect::<Result<_>>()?;
        let scaler = FeatureScaler::fit(&rows)?;
        let mut model = DemoModel::new(scaler.mean.len(), n_items, scaler, cfg);
        let (tr, va) = (model.examples(train)?, model.examples(valid)?);
        let history = fit(&mut model, &tr, &va, cfg)?;
        Ok((model, history))
    }

    pub fn predict(&self, raw_features: &[f64]) -> Result<Vec<f64>> {
        let h = self.hidden.apply(&self.params, &self.scaler.apply(raw_features)?)?;
        self.out.apply(&self.params, &h)
    }
}

impl Trainable for DemoModel {
    type Example = DemoExample;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn example_loss<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        (x, y): &DemoExample,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let x = tape.input(Mat::row(x.clone()));
        let h = self.hidden.forward(tape, x);
        let h = tape_dropout(tape, h, self.dropout_rate, mode, rng);
        let p = self.out.forward(tape, h);
        Ok(tape.bce(p, y.clone()))
    }
}

impl Recommender for DemoModel {
    fn name(&self) -> String {
        "demo".into()
    }

    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        self.predict(features(case)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PurchaseEvent;
    use crate::segmentation::Task;

    fn case(features: Option<Vec<f64>>, items: Vec<usize>) -> Case {
        Case {
            task: Task {
                user: "u".into(),
                sessions: Vec::new(),
                purchase: PurchaseEvent { user: "u".into(), time: 0, items },
            },
            portfolio: vec![0; 3],
            features,
            history: Vec::new(),
        }
    }

    #[test]
    fn zero_weights_give_one_half() {
        let scaler = FeatureScaler { mean: vec![0.0; 2], scale: vec![1.0; 2] };
        let mut m = DemoModel::new(2, 3, scaler, &TrainConfig { hidden_units: 4, ..Default::default() });
        for id in m.params.ids().collect::<Vec<_>>() {
            m.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.score(&case(Some(vec![3.0, -1.0]), vec![0])).unwrap(), vec![0.5; 3]);
        assert!(matches!(m.score(&case(None, vec![0])), Err(Error::ProfileRequired(_))));
    }

    #[test]
    fn learns_feature_to_item_rule() {
        let cases: Vec<Case> = (0..60).map(|i| case(Some(vec![(i % 3) as f64, 1.0]), vec![i % 3])).collect();
        let cfg = TrainConfig {
            hidden_units: 8,
            dropout_rate: 0.0,
            batch_size: 8,
            adam: crate::numcore::AdamConfig { learning_rate: 0.05, ..Default::default() },
            ..Default::default()
        };
        let (m, _) = DemoModel::fit(&cases, &cases, 3, &cfg).unwrap();
        for c in &cases[..3] {
            let s = m.score(c).unwrap();
            assert_eq!(crate::eval::rank(&s)[0], c.task.purchase.items[0], "{s:?}");
        }
    }
}
