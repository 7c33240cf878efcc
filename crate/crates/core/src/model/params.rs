use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::data::Catalog;
use crate::scalar::{lit, Scalar};
use crate::{seed, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub n_items: usize,
    pub n_categories: usize,
    pub n_brands: usize,
}

impl VocabSizes {
    pub fn of(catalog: &Catalog) -> Self {
        VocabSizes {
            n_items: catalog.n_items,
            n_categories: catalog.n_categories,
            n_brands: catalog.n_brands,
        }
    }
}

/// One transformer layer. `w_q`, `w_k` and `w_v` hold all heads side by
/// side: head `a` owns columns `a*e/h .. (a+1)*e/h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
    pub w_h: Array2<T>,
    pub w_f1: Array2<T>,
    pub b_f1: Array1<T>,
    pub w_f2: Array2<T>,
    pub b_f2: Array1<T>,
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
}

/// All trainable tensors plus the frozen missing-text vector.
///
/// Matrices use the column-per-vocabulary-entry layout: `item_emb` is
/// `e x (N_i+1)` and column 0 is the missing-item embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub vocab: VocabSizes,
    pub item_emb: Array2<T>,
    pub category_emb: Array2<T>,
    pub brand_emb: Array2<T>,
    pub title_proj: Array2<T>,
    pub desc_proj: Array2<T>,
    pub title_out: Array2<T>,
    pub desc_out: Array2<T>,
    /// Rows in field order (i, c, b, t, d).
    pub field_emb: Array2<T>,
    /// Row `k` is the embedding of 1-based position `k + 1`.
    pub pos_emb: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    /// Not trained; the input vector standing in for a missing title or
    /// description.
    pub miss_text: Array1<T>,
}

fn xavier<T: Scalar>(rows: usize, cols: usize, fan: usize, rng: &mut impl Rng) -> Array2<T> {
    let bound = (6.0 / fan as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || lit(rng.random_range(-bound..=bound)))
}

pub fn init_params<T: Scalar>(config: &ModelConfig, catalog: &Catalog, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    if catalog.text_dim != config.text_dim {
        return Err(crate::Error::Config(format!(
            "catalog text dimension {} differs from model text_dim {}",
            catalog.text_dim, config.text_dim
        )));
    }
    let mut p = ModelParams::zeros(config, VocabSizes::of(catalog));
    p.miss_text = catalog.miss_text.iter().map(|&v| T::from_f32(v)).collect();
    let e = config.embedding_size;
    let dh = config.head_dim();
    for (idx, (name, mut t)) in p.tensors_mut().into_iter().enumerate() {
        let mut rng = seed::rng(seed, "init", &[idx as u64]);
        let shape = t.shape().to_vec();
        if shape.len() == 1 {
            if name.ends_with("_gain") {
                t.fill(T::one());
            }
            continue;
        }
        let fan = if name.ends_with("w_q") || name.ends_with("w_k") || name.ends_with("w_v") {
            e + dh
        } else {
            shape[0] + shape[1]
        };
        let m = xavier::<T>(shape[0], shape[1], fan, &mut rng);
        t.assign(&m.into_dyn());
    }
    Ok(p)
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(e: usize) -> Self {
        LayerParams {
            w_q: Array2::zeros((e, e)),
            w_k: Array2::zeros((e, e)),
            w_v: Array2::zeros((e, e)),
            w_h: Array2::zeros((e, e)),
            w_f1: Array2::zeros((e, 4 * e)),
            b_f1: Array1::zeros(4 * e),
            w_f2: Array2::zeros((4 * e, e)),
            b_f2: Array1::zeros(e),
            ln1_gain: Array1::zeros(e),
            ln1_bias: Array1::zeros(e),
            ln2_gain: Array1::zeros(e),
            ln2_bias: Array1::zeros(e),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero tensors of the right shapes; also used as a gradient buffer.
    pub fn zeros(config: &ModelConfig, vocab: VocabSizes) -> Self {
        let e = config.embedding_size;
        let d = config.text_dim;
        ModelParams {
            config: config.clone(),
            vocab,
            item_emb: Array2::zeros((e, vocab.n_items + 1)),
            category_emb: Array2::zeros((e, vocab.n_categories)),
            brand_emb: Array2::zeros((e, vocab.n_brands + 1)),
            title_proj: Array2::zeros((e, d)),
            desc_proj: Array2::zeros((e, d)),
            title_out: Array2::zeros((d, e)),
            desc_out: Array2::zeros((d, e)),
            field_emb: Array2::zeros((5, e)),
            pos_emb: Array2::zeros((config.max_len, e)),
            layers: (0..config.layers).map(|_| LayerParams::zeros(e)).collect(),
            miss_text: Array1::zeros(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config, self.vocab)
    }

    /// Trainable tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![
            ("item_emb".to_string(), self.item_emb.view().into_dyn()),
            ("category_emb".to_string(), self.category_emb.view().into_dyn()),
            ("brand_emb".to_string(), self.brand_emb.view().into_dyn()),
            ("title_proj".to_string(), self.title_proj.view().into_dyn()),
            ("desc_proj".to_string(), self.desc_proj.view().into_dyn()),
            ("title_out".to_string(), self.title_out.view().into_dyn()),
            ("desc_out".to_string(), self.desc_out.view().into_dyn()),
            ("field_emb".to_string(), self.field_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            let name = |n: &str| format!("layers.{l}.{n}");
            out.extend([
                (name("w_q"), layer.w_q.view().into_dyn()),
                (name("w_k"), layer.w_k.view().into_dyn()),
                (name("w_v"), layer.w_v.view().into_dyn()),
                (name("w_h"), layer.w_h.view().into_dyn()),
                (name("w_f1"), layer.w_f1.view().into_dyn()),
                (name("b_f1"), layer.b_f1.view().into_dyn()),
                (name("w_f2"), layer.w_f2.view().into_dyn()),
                (name("b_f2"), layer.b_f2.view().into_dyn()),
                (name("ln1_gain"), layer.ln1_gain.view().into_dyn()),
                (name("ln1_bias"), layer.ln1_bias.view().into_dyn()),
                (name("ln2_gain"), layer.ln2_gain.view().into_dyn()),
                (name("ln2_bias"), layer.ln2_bias.view().into_dyn()),
            ]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![
            ("item_emb".to_string(), self.item_emb.view_mut().into_dyn()),
            ("category_emb".to_string(), self.category_emb.view_mut().into_dyn()),
            ("brand_emb".to_string(), self.brand_emb.view_mut().into_dyn()),
            ("title_proj".to_string(), self.title_proj.view_mut().into_dyn()),
            ("desc_proj".to_string(), self.desc_proj.view_mut().into_dyn()),
            ("title_out".to_string(), self.title_out.view_mut().into_dyn()),
            ("desc_out".to_string(), self.desc_out.view_mut().into_dyn()),
            ("field_emb".to_string(), self.field_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let name = |n: &str| format!("layers.{l}.{n}");
            out.extend([
                (name("w_q"), layer.w_q.view_mut().into_dyn()),
                (name("w_k"), layer.w_k.view_mut().into_dyn()),
                (name("w_v"), layer.w_v.view_mut().into_dyn()),
                (name("w_h"), layer.w_h.view_mut().into_dyn()),
                (name("w_f1"), layer.w_f1.view_mut().into_dyn()),
                (name("b_f1"), layer.b_f1.view_mut().into_dyn()),
                (name("w_f2"), layer.w_f2.view_mut().into_dyn()),
                (name("b_f2"), layer.b_f2.view_mut().into_dyn()),
                (name("ln1_gain"), layer.ln1_gain.view_mut().into_dyn()),
                (name("ln1_bias"), layer.ln1_bias.view_mut().into_dyn()),
                (name("ln2_gain"), layer.ln2_gain.view_mut().into_dyn()),
                (name("ln2_bias"), layer.ln2_bias.view_mut().into_dyn()),
            ]);
        }
        out
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams<T>) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, mut a) in self.tensors_mut() {
            a.mapv_inplace(|v| v * factor);
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config, self.vocab);
        for ((_, mut dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            dst.zip_mut_with(&src, |d, s| *d = U::from_f64(s.as_f64()));
        }
        out.miss_text = self.miss_text.mapv(|v| U::from_f64(v.as_f64()));
        out
    }
}
