use ndarray::Zip;

use crate::model::ModelParams;
use crate::scalar::{lit, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam moments for every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, learning_rate: f64) {
        self.step += 1;
        let b1 = lit::<T>(BETA1);
        let b2 = lit::<T>(BETA2);
        let c1 = lit::<T>(1.0 - BETA1.powi(self.step as i32));
        let c2 = lit::<T>(1.0 - BETA2.powi(self.step as i32));
        let lr = lit::<T>(learning_rate);
        let eps = lit::<T>(EPSILON);
        let one = T::one();
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in tensors.zip(moments) {
            Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

/// Clamps every gradient entry into `[lo, hi]`.
pub fn clip_gradients<T: Scalar>(grads: &mut ModelParams<T>, lo: f64, hi: f64) {
    let (lo, hi) = (lit::<T>(lo), lit::<T>(hi));
    for (_, mut g) in grads.tensors_mut() {
        g.mapv_inplace(|v| if v < lo { lo } else if v > hi { hi } else { v });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticSpec};
    use crate::model::{init_params, ModelConfig};

    fn params() -> ModelParams<f32> {
        let cat = synth_generate(&SyntheticSpec { text_dim: 4, ..Default::default() }).unwrap().0;
        let cfg = ModelConfig { embedding_size: 4, heads: 2, layers: 1, max_len: 3, text_dim: 4, ..Default::default() };
        init_params(&cfg, &cat, 2).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.item_emb.fill(0.3);
        g.layers[0].w_f1.fill(-2.0);
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            adam.update(&mut p, &g, 0.0);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params();
        let before = p.item_emb[[0, 0]];
        let mut g = p.zeros_like();
        g.item_emb[[0, 0]] = 0.25;
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &g, 1e-3);
        assert!((before - p.item_emb[[0, 0]] - 1e-3).abs() < 1e-7);
        assert_eq!(p.item_emb[[1, 0]], params().item_emb[[1, 0]]);
    }

    #[test]
    fn clipping_bounds_entries() {
        let p = params();
        let mut g = p.zeros_like();
        g.item_emb[[0, 0]] = 7.3;
        g.item_emb[[0, 1]] = -9.0;
        g.item_emb[[0, 2]] = 1.5;
        clip_gradients(&mut g, -5.0, 5.0);
        assert_eq!(g.item_emb[[0, 0]], 5.0);
        assert_eq!(g.item_emb[[0, 1]], -5.0);
        assert_eq!(g.item_emb[[0, 2]], 1.5);
    }
}
