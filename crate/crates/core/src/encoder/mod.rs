//! Dual-tower encoder.
//!
//! The item tower is `normalize(item_table[v] + category_table[cat(v)])`.
//! The user tower is a pre-LN transformer over
//! `[CLS, profile_1..profile_K, behavior_1..behavior_L]`, where each token is
//! its content embedding plus a learned positional row plus a token-type row
//! (cls / profile / behavior). A behavior token's content is
//! `item + category + recency_bucket`. Padded behavior slots never enter the
//! attention, so only the occupied prefix of the subsequence is materialized.
//! The final `[CLS]` state goes through a last layer norm and is then
//! L2-normalized.
//!
//! All arithmetic is generic over [`Real`]: training runs in `f32`, gradient
//! checks in `f64`.

mod checkpoint;
mod forward;
pub(crate) mod ops;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{ItemForward, UserForward};

use crate::seqstore::SubSequence;
use crate::{CategoryId, Day, Error, ItemId, Result};

/// Floating-point element type of the model.
pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Profile tokens per user (K).
    pub profile_tokens: usize,
    /// Behavior slots per subsequence (L_sub).
    pub max_seq_len: usize,
    pub ffn_mult: usize,
    pub temperature: f64,
    /// L2-normalize both towers. `false` with `temperature = 1` gives raw dot products.
    pub normalize: bool,
    pub num_items: usize,
    pub num_categories: usize,
    pub profile_vocab: usize,
    pub recency_buckets: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            heads: 2,
            profile_tokens: 4,
            max_seq_len: crate::seqstore::DEFAULT_MAX_LEN,
            ffn_mult: 2,
            temperature: 0.05,
            normalize: true,
            num_items: 0,
            num_categories: 0,
            profile_vocab: 0,
            recency_buckets: 10,
            init_seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("max_seq_len", self.max_seq_len),
            ("ffn_mult", self.ffn_mult),
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
            ("recency_buckets", self.recency_buckets),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config("model.dim must be divisible by model.heads".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("model.temperature must be positive".into()));
        }
        if self.profile_tokens > 0 && self.profile_vocab == 0 {
            return Err(Error::Config("model.profile_vocab must be at least 1".into()));
        }
        Ok(())
    }

    /// Positional rows: `[CLS] + K + L_sub`.
    pub fn max_tokens(&self) -> usize {
        1 + self.profile_tokens + self.max_seq_len
    }

    pub fn ffn_dim(&self) -> usize {
        self.dim * self.ffn_mult
    }
}

/// Log-spaced recency bucket of an event `age` days old: 0 for same day,
/// then `floor(log2 age) + 1`, saturating at `buckets - 1`.
pub fn recency_bucket(age: Day, buckets: usize) -> usize {
    if age <= 0 {
        return 0;
    }
    let b = (63 - (age as u64).leading_zeros()) as usize + 1;
    b.min(buckets - 1)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect() }
    }
}

/// Weights of one pre-LN transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: Matrix<T>,
    pub ln1_bias: Matrix<T>,
    pub wq: Matrix<T>,
    pub bq: Matrix<T>,
    pub wk: Matrix<T>,
    pub bk: Matrix<T>,
    pub wv: Matrix<T>,
    pub bv: Matrix<T>,
    pub wo: Matrix<T>,
    pub bo: Matrix<T>,
    pub ln2_gain: Matrix<T>,
    pub ln2_bias: Matrix<T>,
    pub w1: Matrix<T>,
    pub b1: Matrix<T>,
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2)
    };
}

/// All learnable state of both towers plus the item -> category map.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub item_category: Vec<CategoryId>,
    pub item_table: Matrix<T>,
    pub category_table: Matrix<T>,
    pub profile_table: Matrix<T>,
    pub recency_table: Matrix<T>,
    pub cls: Matrix<T>,
    pub positional: Matrix<T>,
    pub token_type: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_ln_gain: Matrix<T>,
    pub final_ln_bias: Matrix<T>,
}

/// Gradients share the parameter layout.
pub type ParamGrads<T> = ModelParams<T>;

pub const TOKEN_CLS: usize = 0;
pub const TOKEN_PROFILE: usize = 1;
pub const TOKEN_BEHAVIOR: usize = 2;

impl<T: Real> ModelParams<T> {
    /// Embeddings ~ N(0, 0.02^2); projections ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    /// biases 0; layer-norm gains 1.
    pub fn init(config: &ModelConfig, item_category: Vec<CategoryId>) -> Result<Self> {
        config.validate()?;
        if item_category.len() != config.num_items {
            return Err(Error::Shape(format!(
                "item_category has {} entries, model expects {}",
                item_category.len(),
                config.num_items
            )));
        }
        if let Some(&c) = item_category.iter().find(|&&c| c as usize >= config.num_categories) {
            return Err(Error::Shape(format!("category {c} out of range")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let d = config.dim;
        let f = config.ffn_dim();
        let mut emb = |rows: usize| Matrix {
            rows,
            cols: d,
            data: (0..rows * d).map(|_| T::lit(normal.sample(&mut rng))).collect::<Vec<T>>(),
        };
        let item_table = emb(config.num_items);
        let category_table = emb(config.num_categories);
        let profile_table = emb(config.profile_vocab.max(1));
        let recency_table = emb(config.recency_buckets);
        let cls = emb(1);
        let positional = emb(config.max_tokens());
        let token_type = emb(3);

        let mut dense = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let u = Uniform::new(-bound, bound).expect("valid uniform");
            Matrix { rows, cols, data: (0..rows * cols).map(|_| T::lit(u.sample(&mut rng))).collect::<Vec<T>>() }
        };
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gain: Matrix::filled(1, d, T::one()),
                ln1_bias: Matrix::zeros(1, d),
                wq: dense(d, d),
                bq: Matrix::zeros(1, d),
                wk: dense(d, d),
                bk: Matrix::zeros(1, d),
                wv: dense(d, d),
                bv: Matrix::zeros(1, d),
                wo: dense(d, d),
                bo: Matrix::zeros(1, d),
                ln2_gain: Matrix::filled(1, d, T::one()),
                ln2_bias: Matrix::zeros(1, d),
                w1: dense(d, f),
                b1: Matrix::zeros(1, f),
                w2: dense(f, d),
                b2: Matrix::zeros(1, d),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            item_category,
            item_table,
            category_table,
            profile_table,
            recency_table,
            cls,
            positional,
            token_type,
            layers,
            final_ln_gain: Matrix::filled(1, d, T::one()),
            final_ln_bias: Matrix::zeros(1, d),
        })
    }

    /// Same layout, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, m| m.data.iter_mut().for_each(|v| *v = T::zero()));
        z
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        macro_rules! cast_layer {
            ($l:ident; $($f:ident),*) => { LayerParams { $($f: $l.$f.cast()),* } };
        }
        ModelParams {
            config: self.config.clone(),
            item_category: self.item_category.clone(),
            item_table: self.item_table.cast(),
            category_table: self.category_table.cast(),
            profile_table: self.profile_table.cast(),
            recency_table: self.recency_table.cast(),
            cls: self.cls.cast(),
            positional: self.positional.cast(),
            token_type: self.token_type.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    macro_rules! go { ($($f:ident),*) => { cast_layer!(l; $($f),*) }; }
                    layer_fields!(go)
                })
                .collect(),
            final_ln_gain: self.final_ln_gain.cast(),
            final_ln_bias: self.final_ln_bias.cast(),
        }
    }

    /// Every tensor with a stable dotted name, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out: Vec<(String, &Matrix<T>)> = vec![
            ("item_table".into(), &self.item_table),
            ("category_table".into(), &self.category_table),
            ("profile_table".into(), &self.profile_table),
            ("recency_table".into(), &self.recency_table),
            ("cls".into(), &self.cls),
            ("positional".into(), &self.positional),
            ("token_type".into(), &self.token_type),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            macro_rules! go {
                ($($field:ident),*) => { $( out.push((format!("layers.{i}.{}", stringify!($field)), &l.$field)); )* };
            }
            layer_fields!(go);
        }
        out.push(("final_ln_gain".into(), &self.final_ln_gain));
        out.push(("final_ln_bias".into(), &self.final_ln_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out: Vec<(String, &mut Matrix<T>)> = vec![
            ("item_table".into(), &mut self.item_table),
            ("category_table".into(), &mut self.category_table),
            ("profile_table".into(), &mut self.profile_table),
            ("recency_table".into(), &mut self.recency_table),
            ("cls".into(), &mut self.cls),
            ("positional".into(), &mut self.positional),
            ("token_type".into(), &mut self.token_type),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            macro_rules! go {
                ($($field:ident),*) => { $( out.push((format!("layers.{i}.{}", stringify!($field)), &mut l.$field)); )* };
            }
            layer_fields!(go);
        }
        out.push(("final_ln_gain".into(), &mut self.final_ln_gain));
        out.push(("final_ln_bias".into(), &mut self.final_ln_bias));
        out
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Matrix<T>)) {
        for (name, m) in self.tensors_mut() {
            f(&name, m);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.data.iter().all(|v| v.is_finite()))
    }

    pub fn category_of(&self, item: ItemId) -> Result<CategoryId> {
        self.item_category.get(item as usize).copied().ok_or(Error::UnknownItem(item))
    }
}

/// Unit-norm user embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct UserVector<T = f32>(pub Vec<T>);

/// Unit-norm item embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemVector<T = f32>(pub Vec<T>);

impl<T> UserVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

impl<T> ItemVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// Everything the user tower sees for one request. Candidate-item features
/// are deliberately absent.
#[derive(Clone, Copy, Debug)]
pub struct UserInput<'a> {
    pub profile: &'a [u32],
    pub subseq: &'a SubSequence,
    /// Request time; behavior recency is measured against it.
    pub now: Day,
}

pub fn encode_item<T: Real>(params: &ModelParams<T>, item: ItemId) -> Result<ItemVector<T>> {
    Ok(ItemVector(ItemForward::run(params, item)?.output))
}

pub fn encode_user<T: Real>(params: &ModelParams<T>, input: UserInput<'_>) -> Result<UserVector<T>> {
    Ok(UserVector(UserForward::run(params, input)?.output().to_vec()))
}

/// Encodes every catalog item into one `num_items x dim` row-major buffer.
pub fn encode_all_items<T: Real>(params: &ModelParams<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(params.config.num_items * params.config.dim);
    for item in 0..params.config.num_items as ItemId {
        out.extend(ItemForward::run(params, item).expect("catalog item").output);
    }
    out
}

/// `(u . v) / temperature`, accumulated in `f64`.
pub fn score<T: Real>(user: &[T], item: &[T], temperature: f64) -> f64 {
    user.iter().zip(item).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum::<f64>() / temperature
}
