use rand::Rng as _;

use crate::autodiff::{Graph, IdGen, Params, Parameter, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Negative slope of the leaky rectifier used by critics and encoders.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Affine layer `x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, ids: &mut IdGen, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("weight");
        let b = Tensor::matrix(1, fan_out, draw(fan_out)).expect("bias");
        Self {
            weight: Parameter::new(ids.next_id(), format!("{name}.weight"), w),
            bias: Parameter::new(ids.next_id(), format!("{name}.bias"), b),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let w = g.param(&self.weight, trainable);
        let b = g.param(&self.bias, trainable);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

impl Params for Linear {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of leaky-rectified affine layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

impl Mlp {
    pub fn new(name: &str, widths: &[usize], slope: f64, ids: &mut IdGen, rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.l{}", i + 1), w[0], w[1], ids, rng))
            .collect();
        Self { layers, slope }
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    /// Post-activation outputs of every layer.
    pub fn forward_all(&self, g: &mut Graph, x: Var, trainable: bool) -> Vec<Var> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a = layer.forward(g, h, trainable);
            h = g.leaky_relu(a, self.slope);
            outs.push(h);
        }
        outs
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        *self.forward_all(g, x, trainable).last().expect("non-empty mlp")
    }

    /// Gradient of the scalar head `head(mlp(x))` with respect to the input
    /// rows, expressed as a graph over the parameters so it can itself be
    /// differentiated. Exact almost everywhere because the rectifier's
    /// derivative is piecewise constant.
    pub fn input_gradient(&self, g: &mut Graph, x: Var, head: &Linear, trainable: bool) -> Var {
        assert_eq!(head.fan_out(), 1, "input_gradient needs a scalar head");
        let n = g.value(x).rows();
        let slope = self.slope;
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut h = g.value(x).clone();
        for layer in &self.layers {
            let mut a = crate::autodiff::matmul(&h, &layer.weight.value);
            let m = a.cols();
            for row in a.data_mut().chunks_mut(m) {
                for (v, b) in row.iter_mut().zip(layer.bias.value.data()) {
                    *v += b;
                }
            }
            masks.push(a.map(|v| if v > 0.0 { 1.0 } else { slope }));
            h = a.map(|v| if v > 0.0 { v } else { slope * v });
        }

        let ones = g.constant(Tensor::full(&[n, 1], 1.0));
        let w_head = g.param(&head.weight, trainable);
        let w_head_t = g.transpose(w_head);
        let mut upstream = g.matmul(ones, w_head_t);
        for (layer, mask) in self.layers.iter().zip(masks).rev() {
            let mask = g.constant(mask);
            let local = g.mul(upstream, mask);
            let w = g.param(&layer.weight, trainable);
            let wt = g.transpose(w);
            upstream = g.matmul(local, wt);
        }
        upstream
    }

    /// Plain forward pass without a graph, returning every activation.
    pub fn eval_all(&self, x: &Tensor) -> Vec<Tensor> {
        let mut h = x.clone();
        let mut outs = Vec::new();
        for layer in &self.layers {
            let mut a = crate::autodiff::matmul(&h, &layer.weight.value);
            let m = a.cols();
            for row in a.data_mut().chunks_mut(m) {
                for (v, b) in row.iter_mut().zip(layer.bias.value.data()) {
                    *v += b;
                }
            }
            h = a.map(|v| if v > 0.0 { v } else { self.slope * v });
            outs.push(h.clone());
        }
        outs
    }
}

impl Params for Mlp {
    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(5, "t");
        let mut ids = IdGen::new();
        let mlp = Mlp::new("m", &[3, 6, 5], LEAKY_SLOPE, &mut ids, &mut rng);
        let head = Linear::new("h", 5, 1, &mut ids, &mut rng);
        let x = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, -0.2, 0.5, 0.9]).unwrap();
        let score = |x: &Tensor| -> Vec<f64> {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let h = mlp.forward(&mut g, xv, false);
            let s = head.forward(&mut g, h, false);
            g.value(s).data().to_vec()
        };
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let grad = mlp.input_gradient(&mut g, xv, &head, false);
        let analytic = g.value(grad).clone();
        let eps = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp.data_mut()[r * 3 + c] += eps;
                let mut xm = x.clone();
                xm.data_mut()[r * 3 + c] -= eps;
                let fd = (score(&xp)[r] - score(&xm)[r]) / (2.0 * eps);
                assert!((fd - analytic.get(r, c)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn input_gradient_norm_is_differentiable_in_params() {
        let mut rng = crate::rng::stream(6, "t");
        let mut ids = IdGen::new();
        let mut model = (
            Mlp::new("m", &[2, 4, 4], LEAKY_SLOPE, &mut ids, &mut rng),
            Linear::new("h", 4, 1, &mut ids, &mut rng),
        );
        let x = Tensor::matrix(3, 2, vec![0.1, 0.4, -0.9, 0.2, 0.7, -0.3]).unwrap();
        let err = grad_check(&mut model, 1e-6, |g, (mlp, head)| {
            let xv = g.constant(x.clone());
            let gx = mlp.input_gradient(g, xv, head, true);
            let norm = g.row_norm(gx, 1e-12);
            let d = g.add_scalar(norm, -1.0);
            let sq = g.square(d);
            Ok(g.mean(sq))
        })
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }
}
