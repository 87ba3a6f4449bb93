use rand::Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::Tensor;

use super::forward::{forward, Batch, Input, Target};
use super::spec::{Activation, NetworkSpec};

/// Synthetic training problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Inputs N(0, I) labelled by a frozen random tanh MLP.
    TeacherRegression {
        input_dim: usize,
        output_dim: usize,
        hidden: usize,
        train_samples: usize,
        eval_samples: usize,
        seed: u64,
    },
    /// Next-token prediction on sequences from a seeded Markov chain.
    ToySequenceLm {
        vocab: usize,
        seq_len: usize,
        train_samples: usize,
        eval_samples: usize,
        seed: u64,
    },
}

impl TaskSpec {
    pub fn seed(&self) -> u64 {
        match self {
            TaskSpec::TeacherRegression { seed, .. } | TaskSpec::ToySequenceLm { seed, .. } => *seed,
        }
    }
}

/// Teacher network that produced regression labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub net: NetworkSpec,
    pub params: ParamStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub eval: Batch,
    pub teacher: Option<Teacher>,
}

const TEACHER_SALT: u64 = 1;
const TRAIN_SALT: u64 = 2;
const EVAL_SALT: u64 = 3;
const CHAIN_SALT: u64 = 4;

pub fn make_task(spec: &TaskSpec) -> Result<Dataset> {
    match *spec {
        TaskSpec::TeacherRegression { input_dim, output_dim, hidden, train_samples, eval_samples, seed } => {
            if input_dim == 0 || output_dim == 0 || hidden == 0 || train_samples == 0 || eval_samples == 0 {
                return Err(Error::InvalidArgument("teacher task extents must be positive".into()));
            }
            let net = NetworkSpec::mlp(&[input_dim, hidden, output_dim], Activation::Tanh);
            let mut params = net.init_params(rng::derive(seed, TEACHER_SALT))?;
            // Stronger first layer so the labels are visibly non-linear.
            for v in params.view_mut("l0.kernel").expect("teacher kernel") {
                *v *= 2.0;
            }
            let label = |salt: u64, n: usize| -> Result<Batch> {
                let mut r = rng::stream(rng::derive(seed, salt));
                let x = Tensor::matrix(n, input_dim, rng::normal_vec(&mut r, n * input_dim, 1.0))?;
                let input = Input::features(x.clone());
                let y = forward(&net, &params, &input)?;
                Ok(Batch { input, target: Target::Regression(y) })
            };
            let train = label(TRAIN_SALT, train_samples)?;
            let eval = label(EVAL_SALT, eval_samples)?;
            Ok(Dataset { train, eval, teacher: Some(Teacher { net, params }) })
        }
        TaskSpec::ToySequenceLm { vocab, seq_len, train_samples, eval_samples, seed } => {
            if vocab < 2 || seq_len == 0 || train_samples == 0 || eval_samples == 0 {
                return Err(Error::InvalidArgument("sequence task needs vocab ≥ 2 and positive extents".into()));
            }
            let chain = MarkovChain::random(vocab, rng::derive(seed, CHAIN_SALT));
            let train = chain.batch(train_samples, seq_len, rng::derive(seed, TRAIN_SALT));
            let eval = chain.batch(eval_samples, seq_len, rng::derive(seed, EVAL_SALT));
            Ok(Dataset { train, eval, teacher: None })
        }
    }
}

/// Row-stochastic transition matrix with peaked rows.
struct MarkovChain {
    rows: Vec<WeightedIndex<f64>>,
    vocab: usize,
}

impl MarkovChain {
    fn random(vocab: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed);
        let rows = (0..vocab)
            .map(|_| {
                let logits = rng::normal_vec(&mut r, vocab, 2.0);
                let w: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
                WeightedIndex::new(w).expect("positive weights")
            })
            .collect();
        Self { rows, vocab }
    }

    fn batch(&self, samples: usize, seq_len: usize, seed: u64) -> Batch {
        let mut r = rng::stream(seed);
        let mut ids = Vec::with_capacity(samples * seq_len);
        let mut next = Vec::with_capacity(samples * seq_len);
        for _ in 0..samples {
            let mut tok = r.random_range(0..self.vocab);
            for _ in 0..seq_len {
                let nxt = self.rows[tok].sample(&mut r);
                ids.push(tok);
                next.push(nxt);
                tok = nxt;
            }
        }
        Batch { input: Input::tokens(ids, seq_len), target: Target::Classes(next) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn teacher_spec(seed: u64) -> TaskSpec {
        TaskSpec::TeacherRegression {
            input_dim: 3,
            output_dim: 2,
            hidden: 8,
            train_samples: 1000,
            eval_samples: 10,
            seed,
        }
    }

    #[test]
    fn same_seed_same_samples() {
        assert_eq!(make_task(&teacher_spec(5)).unwrap(), make_task(&teacher_spec(5)).unwrap());
        let lm = TaskSpec::ToySequenceLm { vocab: 6, seq_len: 5, train_samples: 4, eval_samples: 2, seed: 9 };
        assert_eq!(make_task(&lm).unwrap(), make_task(&lm).unwrap());
        assert_ne!(make_task(&teacher_spec(5)).unwrap().train, make_task(&teacher_spec(6)).unwrap().train);
    }

    #[test]
    fn teacher_reproduces_its_labels() {
        let d = make_task(&teacher_spec(3)).unwrap();
        let t = d.teacher.as_ref().unwrap();
        let Target::Regression(y) = &d.train.target else { panic!() };
        assert_eq!(&forward(&t.net, &t.params, &d.train.input).unwrap(), y);
    }

    #[test]
    fn labels_vary() {
        let d = make_task(&teacher_spec(3)).unwrap();
        let Target::Regression(y) = &d.train.target else { panic!() };
        let col: Vec<f64> = (0..1000).map(|r| y.at2(r, 0)).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(var > 1e-3, "variance {var}");
    }

    #[test]
    fn lm_targets_are_next_tokens() {
        let lm = TaskSpec::ToySequenceLm { vocab: 5, seq_len: 4, train_samples: 3, eval_samples: 1, seed: 2 };
        let d = make_task(&lm).unwrap();
        let (Input::Tokens { ids, .. }, Target::Classes(next)) = (&d.train.input, &d.train.target) else { panic!() };
        for s in 0..3 {
            for t in 0..3 {
                assert_eq!(next[s * 4 + t], ids[s * 4 + t + 1]);
            }
        }
    }
}
