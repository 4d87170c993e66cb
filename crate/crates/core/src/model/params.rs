use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Pooling};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Every trainable tensor of the network. Vectors are stored as `1×k` rows
/// except `attn_w` and `pool_l`, which are `k×1` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embed_w: Matrix,
    pub embed_b: Matrix,
    pub attn_v: Matrix,
    pub attn_u: Matrix,
    pub attn_w: Matrix,
    pub pool_l: Option<Matrix>,
    pub rnn_wn: Option<Matrix>,
    pub rnn_wh: Option<Matrix>,
    pub clf_c: Matrix,
    pub clf_b: Matrix,
}

/// Expected `(name, rows, cols)` for every parameter under `config`, in
/// checkpoint order.
pub fn param_layout(config: &ModelConfig) -> Vec<(&'static str, usize, usize)> {
    let (d, e, a, n, z) = (
        config.feature_dim,
        config.embed_dim,
        config.attn_dim,
        config.n_classes,
        config.context_dim(),
    );
    let mut out = vec![
        ("embed_W", d, e),
        ("embed_b", 1, e),
        ("attn_V", e, a),
        ("attn_U", e, a),
        ("attn_W", a, 1),
    ];
    match config.pooling {
        Pooling::WeightedAverage => out.push(("pool_L", e, 1)),
        Pooling::Rnn => {
            out.push(("rnn_Wn", e, e));
            out.push(("rnn_Wh", e, e));
        }
        _ => {}
    }
    out.push(("clf_C", z, n));
    out.push(("clf_b", 1, n));
    out
}

impl ModelParams {
    /// Uniform in `±sqrt(1/fan_in)` per tensor, where fan_in is the input
    /// width of the layer the tensor belongs to.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = param_layout(config);
        let fan_in = |name: &str| -> usize {
            match name {
                "embed_W" | "embed_b" => config.feature_dim,
                "attn_V" | "attn_U" | "pool_L" | "rnn_Wn" | "rnn_Wh" => config.embed_dim,
                "attn_W" => config.attn_dim,
                _ => config.context_dim(),
            }
        };
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, r, c) in layout {
            let bound = (1.0 / fan_in(name) as f64).sqrt();
            let data = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
            tensors.push((name, Matrix::new(r, c, data)?));
        }
        Self::from_named(config, tensors)
    }

    /// Assembles parameters from `(name, matrix)` pairs, checking every
    /// shape against `config`.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(&str, Matrix)>) -> Result<Self> {
        let layout = param_layout(config);
        if tensors.len() != layout.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors for pooling {}, got {}",
                layout.len(),
                config.pooling,
                tensors.len()
            )));
        }
        let mut slots: Vec<Option<Matrix>> = vec![None; layout.len()];
        for (name, m) in tensors {
            let pos = layout
                .iter()
                .position(|(n, _, _)| *n == name)
                .ok_or_else(|| Error::Config(format!("unexpected parameter {name:?}")))?;
            let (_, r, c) = layout[pos];
            if m.shape() != (r, c) {
                return Err(Error::dim(
                    "ModelParams",
                    format!("{name} is {}x{}, expected {r}x{c}", m.rows(), m.cols()),
                ));
            }
            if slots[pos].replace(m).is_some() {
                return Err(Error::Config(format!("duplicate parameter {name:?}")));
            }
        }
        let mut take = |name: &str| -> Option<Matrix> {
            layout
                .iter()
                .position(|(n, _, _)| *n == name)
                .and_then(|i| slots[i].take())
        };
        let missing = |name: &str| Error::Config(format!("missing parameter {name:?}"));
        Ok(Self {
            embed_w: take("embed_W").ok_or_else(|| missing("embed_W"))?,
            embed_b: take("embed_b").ok_or_else(|| missing("embed_b"))?,
            attn_v: take("attn_V").ok_or_else(|| missing("attn_V"))?,
            attn_u: take("attn_U").ok_or_else(|| missing("attn_U"))?,
            attn_w: take("attn_W").ok_or_else(|| missing("attn_W"))?,
            pool_l: take("pool_L"),
            rnn_wn: take("rnn_Wn"),
            rnn_wh: take("rnn_Wh"),
            clf_c: take("clf_C").ok_or_else(|| missing("clf_C"))?,
            clf_b: take("clf_b").ok_or_else(|| missing("clf_b"))?,
        })
    }

    /// Parameters in checkpoint order.
    pub fn named(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = vec![
            ("embed_W", &self.embed_w),
            ("embed_b", &self.embed_b),
            ("attn_V", &self.attn_v),
            ("attn_U", &self.attn_u),
            ("attn_W", &self.attn_w),
        ];
        if let Some(l) = &self.pool_l {
            out.push(("pool_L", l));
        }
        if let (Some(wn), Some(wh)) = (&self.rnn_wn, &self.rnn_wh) {
            out.push(("rnn_Wn", wn));
            out.push(("rnn_Wh", wh));
        }
        out.push(("clf_C", &self.clf_c));
        out.push(("clf_b", &self.clf_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = vec![
            ("embed_W", &mut self.embed_w),
            ("embed_b", &mut self.embed_b),
            ("attn_V", &mut self.attn_v),
            ("attn_U", &mut self.attn_u),
            ("attn_W", &mut self.attn_w),
        ];
        if let Some(l) = &mut self.pool_l {
            out.push(("pool_L", l));
        }
        if let (Some(wn), Some(wh)) = (&mut self.rnn_wn, &mut self.rnn_wh) {
            out.push(("rnn_Wn", wn));
            out.push(("rnn_Wh", wh));
        }
        out.push(("clf_C", &mut self.clf_c));
        out.push(("clf_b", &mut self.clf_b));
        out
    }

    /// Same structure, every entry zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            embed_w: z(&self.embed_w),
            embed_b: z(&self.embed_b),
            attn_v: z(&self.attn_v),
            attn_u: z(&self.attn_u),
            attn_w: z(&self.attn_w),
            pool_l: self.pool_l.as_ref().map(z),
            rnn_wn: self.rnn_wn.as_ref().map(z),
            rnn_wh: self.rnn_wh.as_ref().map(z),
            clf_c: z(&self.clf_c),
            clf_b: z(&self.clf_b),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let layout = param_layout(config);
        let named = self.named();
        if named.len() != layout.len() {
            return Err(Error::Config(format!(
                "parameter set does not match pooling {}",
                config.pooling
            )));
        }
        for ((name, m), (lname, r, c)) in named.iter().zip(&layout) {
            if name != lname || m.shape() != (*r, *c) {
                return Err(Error::dim(
                    "ModelParams",
                    format!("{name} is {}x{}, expected {lname} {r}x{c}", m.rows(), m.cols()),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NeighborhoodSpec;

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig::new(1024, Pooling::WeightedAverage, NeighborhoodSpec::soi_only());
        let p = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(p.embed_w.shape(), (1024, 512));
        assert_eq!(p.attn_v.shape(), (512, 256));
        assert_eq!(p.attn_u.shape(), (512, 256));
        assert_eq!(p.attn_w.shape(), (256, 1));
        assert_eq!(p.pool_l.as_ref().unwrap().shape(), (512, 1));
        assert_eq!(p.clf_c.shape(), (512, 2));
        assert!(p.rnn_wn.is_none());
    }

    #[test]
    fn rnn_shapes() {
        let cfg = ModelConfig::new(16, Pooling::Rnn, NeighborhoodSpec::soi_only());
        let p = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(p.rnn_wn.as_ref().unwrap().shape(), (512, 512));
        assert_eq!(p.clf_c.shape(), (1024, 2));
        p.validate(&cfg).unwrap();
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::new(16, Pooling::Average, NeighborhoodSpec::soi_only()).with_dims(8, 4);
        let a = ModelParams::init(&cfg, 9).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 9).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 10).unwrap());
        let bound = (1.0f64 / 16.0).sqrt();
        assert!(a.embed_w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn from_named_rejects_bad_shape() {
        let cfg = ModelConfig::new(4, Pooling::None, NeighborhoodSpec::soi_only()).with_dims(3, 2);
        let p = ModelParams::init(&cfg, 1).unwrap();
        let mut named: Vec<(&str, Matrix)> = p.named().into_iter().map(|(n, m)| (n, m.clone())).collect();
        named[0].1 = Matrix::zeros(5, 3);
        assert!(ModelParams::from_named(&cfg, named).is_err());
    }
}
