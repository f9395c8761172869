//! Small differentiable classifiers over flat parameter vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Layer layout of a model. Parameters are stored row-major, weights before
/// biases, layer by layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Multinomial logistic regression: `W (classes x features)`, `b`.
    Logistic { features: usize, classes: usize },
    /// One hidden layer: `W1 (hidden x features)`, `b1`, `W2 (classes x hidden)`, `b2`.
    Mlp { features: usize, hidden: usize, classes: usize, activation: Activation },
}

impl Architecture {
    pub fn features(&self) -> usize {
        match *self {
            Architecture::Logistic { features, .. } | Architecture::Mlp { features, .. } => features,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Logistic { classes, .. } | Architecture::Mlp { classes, .. } => classes,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Logistic { features, classes } => classes * features + classes,
            Architecture::Mlp { features, hidden, classes, .. } => {
                hidden * features + hidden + classes * hidden + classes
            }
        }
    }

    /// Zeros for logistic regression; scaled uniform (Glorot) weights and
    /// zero biases for the MLP.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.param_count()];
        if let Architecture::Mlp { features, hidden, classes, .. } = *self {
            let a1 = (6.0 / (features + hidden) as f64).sqrt();
            let a2 = (6.0 / (hidden + classes) as f64).sqrt();
            let (w1, rest) = p.split_at_mut(hidden * features);
            for w in w1 {
                *w = T::lit(rng.gen_range(-a1..a1));
            }
            let w2 = &mut rest[hidden..hidden + classes * hidden];
            for w in w2 {
                *w = T::lit(rng.gen_range(-a2..a2));
            }
        }
        p
    }

    pub fn logits<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        match *self {
            Architecture::Logistic { features, classes } => {
                let (w, b) = params.split_at(classes * features);
                affine(w, b, x, classes)
            }
            Architecture::Mlp { features, hidden, classes, activation } => {
                let (w1, rest) = params.split_at(hidden * features);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let h: Vec<T> =
                    affine(w1, b1, x, hidden).into_iter().map(|z| activate(activation, z)).collect();
                affine(w2, b2, &h, classes)
            }
        }
    }

    pub fn predict<T: Scalar>(&self, params: &[T], x: &[T]) -> usize {
        argmax(&self.logits(params, x))
    }

    /// Cross-entropy of one example.
    pub fn example_loss<T: Scalar>(&self, params: &[T], x: &[T], label: usize) -> T {
        let logits = self.logits(params, x);
        log_sum_exp(&logits) - logits[label]
    }

    /// Mean cross-entropy over `batch`; the mean gradient is accumulated
    /// into `grad`, which is overwritten.
    pub fn loss_and_grad<'a, T: Scalar>(
        &self,
        params: &[T],
        batch: impl ExactSizeIterator<Item = (&'a [T], usize)>,
        grad: &mut [T],
    ) -> T {
        debug_assert_eq!(grad.len(), self.param_count());
        grad.iter_mut().for_each(|g| *g = T::zero());
        let n = batch.len();
        if n == 0 {
            return T::zero();
        }
        let mut total = T::zero();
        match *self {
            Architecture::Logistic { features, classes } => {
                let (w, b) = params.split_at(classes * features);
                let (gw, gb) = grad.split_at_mut(classes * features);
                for (x, y) in batch {
                    let logits = affine(w, b, x, classes);
                    let (loss, dz) = softmax_xent(&logits, y);
                    total = total + loss;
                    accumulate_affine(gw, gb, &dz, x);
                }
            }
            Architecture::Mlp { features, hidden, classes, activation } => {
                let (w1, rest) = params.split_at(hidden * features);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let (gw1, grest) = grad.split_at_mut(hidden * features);
                let (gb1, grest) = grest.split_at_mut(hidden);
                let (gw2, gb2) = grest.split_at_mut(classes * hidden);
                for (x, y) in batch {
                    let pre = affine(w1, b1, x, hidden);
                    let h: Vec<T> = pre.iter().map(|&z| activate(activation, z)).collect();
                    let logits = affine(w2, b2, &h, classes);
                    let (loss, dz) = softmax_xent(&logits, y);
                    total = total + loss;
                    accumulate_affine(gw2, gb2, &dz, &h);
                    // Back through W2 and the activation.
                    let dh: Vec<T> = (0..hidden)
                        .map(|j| {
                            let back: T = (0..classes).map(|c| w2[c * hidden + j] * dz[c]).sum();
                            back * activate_grad(activation, pre[j], h[j])
                        })
                        .collect();
                    accumulate_affine(gw1, gb1, &dh, x);
                }
            }
        }
        let inv = T::one() / T::from_usize(n).unwrap();
        grad.iter_mut().for_each(|g| *g = *g * inv);
        total * inv
    }
}

fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T], rows: usize) -> Vec<T> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>() + b[r]
        })
        .collect()
}

fn accumulate_affine<T: Scalar>(gw: &mut [T], gb: &mut [T], dz: &[T], x: &[T]) {
    let cols = x.len();
    for (r, &d) in dz.iter().enumerate() {
        gb[r] = gb[r] + d;
        for (g, &v) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *g = *g + d * v;
        }
    }
}

fn activate<T: Scalar>(a: Activation, z: T) -> T {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(T::zero()),
    }
}

fn activate_grad<T: Scalar>(a: Activation, pre: T, post: T) -> T {
    match a {
        Activation::Tanh => T::one() - post * post,
        Activation::Relu => {
            if pre > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Loss and d(loss)/d(logits) for softmax cross-entropy.
fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let lse = log_sum_exp(logits);
    let mut dz: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
    dz[label] = dz[label] - T::one();
    (lse - logits[label], dz)
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
