//! Shared-weight perceptrons and parameter binding.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Parameters of one forward pass, entered on a tape either as trainable
/// leaves or as constants.
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    pub fn new(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Self { vars }
    }

    /// Binds names to vars already on a tape.
    pub fn from_vars(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    /// Gradient for every bound parameter (zeros where nothing flowed).
    pub fn collect_grads(&self, tape: &Tape, grads: &Gradients) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            let g = grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
            out.insert(name.clone(), g);
        }
        out
    }
}

/// Weight initialisation. Both draw from the same uniform stream; `He`
/// widens the weight bound to √(6/fan_in) and leaves biases alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    FanIn,
    #[default]
    He,
}

impl InitScheme {
    pub fn weight_gain(self) -> f64 {
        match self {
            InitScheme::FanIn => 1.0,
            InitScheme::He => 6f64.sqrt(),
        }
    }

    /// Rescales every weight matrix (`*.w<j>`) in place.
    pub fn apply(self, params: &mut ParamSet) {
        let gain = self.weight_gain();
        if gain == 1.0 {
            return;
        }
        let names: Vec<String> = params.names().filter(|n| is_weight_name(n)).cloned().collect();
        for name in names {
            if let Some(t) = params.get_mut(&name) {
                t.data_mut().iter_mut().for_each(|x| *x *= gain);
            }
        }
    }
}

fn is_weight_name(name: &str) -> bool {
    name.rsplit_once('.')
        .and_then(|(_, last)| last.strip_prefix('w'))
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Per-row perceptron `widths[0] → widths[1] → … → widths[n]`, with ReLU
/// after every hidden layer and optionally after the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub widths: Vec<usize>,
    pub relu_output: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, widths: &[usize], relu_output: bool) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        Self {
            prefix: prefix.into(),
            widths: widths.to_vec(),
            relu_output,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight_name(&self, j: usize) -> String {
        format!("{}.w{j}", self.prefix)
    }

    pub fn bias_name(&self, j: usize) -> String {
        format!("{}.b{j}", self.prefix)
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        for j in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[j], self.widths[j + 1]);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            params.insert(self.weight_name(j), Tensor::new(vec![fan_in, fan_out], w).unwrap());
            params.insert(self.bias_name(j), Tensor::vector(b));
        }
    }

    /// Zeroes the output layer so the MLP starts as the constant 0 map.
    pub fn zero_output(&self, params: &mut ParamSet) {
        let j = self.layers() - 1;
        let (fi, fo) = (self.widths[j], self.widths[j + 1]);
        params.insert(self.weight_name(j), Tensor::zeros(&[fi, fo]));
        params.insert(self.bias_name(j), Tensor::zeros(&[fo]));
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        for j in 0..self.layers() {
            let w = bind.get(&self.weight_name(j))?;
            let b = bind.get(&self.bias_name(j))?;
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if j + 1 < self.layers() || self.relu_output {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_scheme_scales_weights_only() {
        let mlp = Mlp::new("a.b", &[6, 4], false);
        let mut p = ParamSet::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(3));
        let before = p.clone();
        InitScheme::He.apply(&mut p);
        let g = 6f64.sqrt();
        for (x, y) in before.get("a.b.w0").unwrap().data().iter().zip(p.get("a.b.w0").unwrap().data()) {
            assert!((x * g - y).abs() < 1e-15);
        }
        assert_eq!(before.get("a.b.b0"), p.get("a.b.b0"));
        assert!(!is_weight_name("x.w"));
        assert!(is_weight_name("rpn.vote.w12"));
    }

    #[test]
    fn init_respects_fan_in_bound_and_names() {
        let mlp = Mlp::new("x.mini", &[16, 8, 2], false);
        let mut p = ParamSet::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<_> = p.names().cloned().collect();
        assert_eq!(names, vec!["x.mini.b0", "x.mini.b1", "x.mini.w0", "x.mini.w1"]);
        assert!(p.get("x.mini.w0").unwrap().data().iter().all(|v| v.abs() <= 0.25));
        assert_eq!(p.get("x.mini.w1").unwrap().shape(), &[8, 2]);
    }

    #[test]
    fn zero_output_gives_zero_map() {
        let mlp = Mlp::new("v", &[3, 4, 2], false);
        let mut p = ParamSet::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        mlp.zero_output(&mut p);
        let mut tape = Tape::new();
        let bind = Binding::new(&mut tape, &p, false);
        let x = tape.constant(Tensor::filled(&[5, 3], 0.7));
        let y = mlp.forward(&mut tape, &bind, x).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }
}
