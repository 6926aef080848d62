//! The joint model: shared ID tables, language model and task weights, with
//! the batch objective used by training, validation and gradient checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Vocabulary};
use crate::embeddings::{assemble_prompt, EmbeddingTables, PromptSequence};
use crate::error::{Error, Result};
use crate::lm::{dropout_rng, Lm, LmConfig, LmParameters};
use crate::mtl::{LossForm, TaskWeights};
use crate::rec_head::{rating_sq_error_backward, RatingTarget};
use crate::scalar::{c, Scalar};
use crate::tensor::{axpy, dot, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: LmConfig,
    pub tables: EmbeddingTables<T>,
    pub lm: LmParameters<T>,
    pub weights: TaskWeights<T>,
}

/// A record reduced to dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub tokens: Vec<usize>,
}

impl EncodedRecord {
    pub fn rating_target(&self) -> RatingTarget {
        RatingTarget {
            user: self.user,
            item: self.item,
            rating: self.rating,
        }
    }
}

/// Encodes every corpus record against `vocab`.
pub fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Vec<EncodedRecord> {
    corpus
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let (user, item) = corpus.pair(k);
            EncodedRecord {
                user,
                item,
                rating: r.rating,
                tokens: vocab.tokenize(&r.explanation),
            }
        })
        .collect()
}

/// Which task losses enter the objective and how they are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub form: LossForm,
    pub sequence_task: bool,
    pub rating_task: bool,
    /// Multiplier applied to `L_R` before combination.
    pub rating_scale: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            form: LossForm::Positive,
            sequence_task: true,
            rating_task: true,
            rating_scale: 1.0,
        }
    }
}

/// Batch losses. `rating` already includes the configured scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub joint: f64,
    pub sequence: f64,
    pub rating: f64,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters for `n_users × n_items` and `config`; weights start at 1.
    pub fn init(config: LmConfig, n_users: usize, n_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = EmbeddingTables::init(n_users, n_items, config.d_model, &mut rng);
        let lm = LmParameters::init(&config, &mut rng);
        Ok(Self {
            config,
            tables,
            lm,
            weights: TaskWeights::default(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            tables: EmbeddingTables::zeros(self.tables.n_users(), self.tables.n_items(), self.config.d_model),
            lm: self.lm.zeros_like(),
            weights: TaskWeights::zero(),
        }
    }

    pub fn lm(&self) -> Lm<'_, T> {
        Lm::new(&self.config, &self.lm)
    }

    pub fn prompt(&self, user: usize, item: usize, tokens: &[usize]) -> Result<PromptSequence<T>> {
        assemble_prompt(user, item, tokens, &self.tables, &self.lm.word, &self.lm.position)
    }

    /// Visits every tensor (ID tables first, then the LM).
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f("users".into(), &self.tables.users);
        f("items".into(), &self.tables.items);
        self.lm.visit(&mut |n, t| f(n, t));
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f("users".into(), &mut self.tables.users);
        f("items".into(), &mut self.tables.items);
        self.lm.visit_mut(&mut |n, t| f(n, t));
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, t| out.push(t));
        out
    }

    /// Tensor names in visiting order for a model of configuration `cfg`.
    pub fn init_names(out: &mut Vec<String>, cfg: &LmConfig) {
        let shell = Model::<T> {
            config: cfg.clone(),
            tables: EmbeddingTables::zeros(0, 0, cfg.d_model),
            lm: LmParameters::zeros(&LmConfig { vocab_size: 0, max_len: 0, ..cfg.clone() }),
            weights: TaskWeights::default(),
        };
        shell.visit(&mut |n, _| out.push(n));
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 2;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = self.weights.sequence.is_finite() && self.weights.rating.is_finite();
        self.visit(&mut |_, t| ok &= t.all_finite());
        ok
    }

    /// Adds `other` into `self` tensor by tensor (weights included).
    pub fn accumulate(&mut self, other: &Model<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
        self.weights.sequence += other.weights.sequence;
        self.weights.rating += other.weights.rating;
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            tables: EmbeddingTables {
                users: self.tables.users.cast(),
                items: self.tables.items.cast(),
            },
            lm: self.lm.cast(),
            weights: self.weights.cast(),
        }
    }

    fn check_record(&self, r: &EncodedRecord) -> Result<()> {
        self.tables.lookup_user(r.user)?;
        self.tables.lookup_item(r.item)?;
        Ok(())
    }

    /// Joint objective on `batch`, without gradients.
    pub fn batch_loss(&self, batch: &[EncodedRecord], obj: &Objective) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::UndefinedInput("empty batch"));
        }
        let lm = self.lm();
        let mut seq_sum = T::zero();
        let mut rating_sum = T::zero();
        for r in batch {
            self.check_record(r)?;
            if obj.sequence_task {
                seq_sum += lm.record_nll(&self.prompt(r.user, r.item, &r.tokens)?)?;
            }
            if obj.rating_task {
                let pred = dot(self.tables.users.row(r.user), self.tables.items.row(r.item));
                let e = c::<T>(r.rating) - pred;
                rating_sum += e * e;
            }
        }
        self.finish(seq_sum, rating_sum, batch.len(), obj)
    }

    fn finish(&self, seq_sum: T, rating_sum: T, n: usize, obj: &Objective) -> Result<BatchLoss> {
        let n = c::<T>(n as f64);
        let l_s = seq_sum / n;
        let l_r = rating_sum / n * c(obj.rating_scale);
        let joint = obj.form.combine(l_s, l_r, &self.weights)?;
        Ok(BatchLoss {
            joint: joint.value.as_f64(),
            sequence: l_s.as_f64(),
            rating: l_r.as_f64(),
        })
    }

    /// Joint objective and its gradient, accumulated into `grads` (which
    /// must have this model's layout). With `dropout = Some((seed, stream))`
    /// each record draws its masks from stream `stream + k`.
    pub fn batch_loss_backward(
        &self,
        batch: &[EncodedRecord],
        obj: &Objective,
        grads: &mut Model<T>,
        dropout: Option<(u64, u64)>,
    ) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::UndefinedInput("empty batch"));
        }
        let (scale_s, scale_r) = obj.form.task_scales(&self.weights)?;
        let n = c::<T>(batch.len() as f64);
        let seq_scale = scale_s / n;
        let rating_scale = scale_r * c(obj.rating_scale) / n;
        let lm = self.lm();

        let mut seq_sum = T::zero();
        let mut rating_sum = T::zero();
        for (k, r) in batch.iter().enumerate() {
            self.check_record(r)?;
            if obj.sequence_task {
                let seq = self.prompt(r.user, r.item, &r.tokens)?;
                let mut rng = dropout.map(|(seed, stream)| dropout_rng(seed, stream + k as u64));
                let (nll, d_user, d_item) = lm.record_nll_backward(&seq, seq_scale, &mut grads.lm, rng.as_mut())?;
                seq_sum += nll;
                axpy(T::one(), &d_user, grads.tables.users.row_mut(r.user));
                axpy(T::one(), &d_item, grads.tables.items.row_mut(r.item));
            }
            if obj.rating_task {
                rating_sum += rating_sq_error_backward(&r.rating_target(), &self.tables, rating_scale, &mut grads.tables)?;
            }
        }

        let loss = self.finish(seq_sum, rating_sum, batch.len(), obj)?;
        if obj.form.trains_weights() {
            let joint = obj
                .form
                .combine(c::<T>(loss.sequence), c::<T>(loss.rating), &self.weights)?;
            if obj.sequence_task {
                grads.weights.sequence += joint.d_weights.sequence;
            }
            if obj.rating_task {
                grads.weights.rating += joint.d_weights.rating;
            }
        }
        Ok(loss)
    }
}
