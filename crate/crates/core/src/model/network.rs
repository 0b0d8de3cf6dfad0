//! Fully connected ReLU network with a softmax head, trained by minibatch SGD.
//! With no hidden layers it is multinomial logistic regression.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn from_rows(rows: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        let outputs = rows.len();
        let inputs = rows.first().map_or(0, Vec::len);
        Dense { inputs, outputs, weights: rows.into_iter().flatten().collect(), bias }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs).max(1) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.gen_range(-limit..=limit)).collect();
        Dense { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
            out.push(z);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Network {
    pub fn new(layers: Vec<Dense>) -> Self {
        Network { layers }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn glorot<R: Rng>(input: usize, hidden: &[usize], classes: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(Dense::glorot(prev, h, rng));
            prev = h;
        }
        layers.push(Dense::glorot(prev, classes, rng));
        Network { layers }
    }

    /// Class probabilities for one input vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        softmax_in_place(&mut cur);
        cur
    }

    /// One pass over `order` in minibatches; returns mean cross-entropy.
    pub fn sgd_epoch(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[usize],
        order: &[usize],
        batch: usize,
        lr: f64,
        l2: f64,
    ) -> f64 {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense { inputs: l.inputs, outputs: l.outputs, weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.outputs] })
            .collect();
        let mut total_loss = 0.0;
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len() + 1];
        for chunk in order.chunks(batch) {
            for g in grads.iter_mut() {
                g.weights.iter_mut().for_each(|v| *v = 0.0);
                g.bias.iter_mut().for_each(|v| *v = 0.0);
            }
            for &i in chunk {
                total_loss += self.backprop(&xs[i], ys[i], &mut acts, &mut grads);
            }
            let scale = lr / chunk.len() as f64;
            for (layer, g) in self.layers.iter_mut().zip(&grads) {
                for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= scale * gw + lr * l2 * *w;
                }
                for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= scale * gb;
                }
            }
        }
        total_loss / order.len().max(1) as f64
    }

    fn backprop(&self, x: &[f64], y: usize, acts: &mut [Vec<f64>], grads: &mut [Dense]) -> f64 {
        let last = self.layers.len() - 1;
        acts[0].clear();
        acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(i + 1);
            layer.apply(&head[i], &mut tail[0]);
            if i < last {
                for v in tail[0].iter_mut() {
                    *v = v.max(0.0);
                }
            } else {
                softmax_in_place(&mut tail[0]);
            }
        }
        let probs = &acts[last + 1];
        let loss = if probs[y].is_nan() { f64::NAN } else { -probs[y].max(1e-300).ln() };
        let mut delta: Vec<f64> = probs.clone();
        delta[y] -= 1.0;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &acts[i];
            let g = &mut grads[i];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, v) in row.iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU derivative at the previous layer's output.
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss_at(net: &Network, x: &[f64], y: usize) -> f64 {
        -net.forward(x)[y].ln()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::glorot(3, &[4, 4], 3, &mut rng);
        let x = [0.3, -0.7, 0.9];
        let y = 2;
        let mut grads: Vec<Dense> = net
            .layers
            .iter()
            .map(|l| Dense { inputs: l.inputs, outputs: l.outputs, weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.outputs] })
            .collect();
        let mut acts = vec![Vec::new(); net.layers.len() + 1];
        net.backprop(&x, y, &mut acts, &mut grads);
        let h = 1e-6;
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].weights.len() {
                let mut plus = net.clone();
                plus.layers[li].weights[wi] += h;
                let mut minus = net.clone();
                minus.layers[li].weights[wi] -= h;
                let numeric = (loss_at(&plus, &x, y) - loss_at(&minus, &x, y)) / (2.0 * h);
                assert!((numeric - grads[li].weights[wi]).abs() < 1e-5, "layer {li} weight {wi}");
            }
        }
    }

    #[test]
    fn learns_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::glorot(2, &[], 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 20) as f64 / 20.0, (i / 20) as f64 / 10.0]).collect();
        let ys: Vec<usize> = xs.iter().map(|x| usize::from(x[0] + x[1] > 0.8)).collect();
        let order: Vec<usize> = (0..xs.len()).collect();
        for _ in 0..500 {
            net.sgd_epoch(&xs, &ys, &order, 16, 2.0, 0.0);
        }
        let correct = xs.iter().zip(&ys).filter(|(x, y)| crate::model::argmax(&net.forward(x)) == **y).count();
        assert!(correct as f64 / xs.len() as f64 >= 0.97);
    }
}
