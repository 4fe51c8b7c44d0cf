//! One-hidden-layer tanh network with a softmax head, no biases.
//!
//! Parameter layout: `W1` (`hidden × inputs`, row-major) followed by `W2`
//! (`classes × hidden`, row-major).

use crate::scalar::{dot, softmax_into, Scalar};

pub(crate) struct Dims {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Dims {
    fn split<'a, T>(&self, values: &'a [T]) -> (&'a [T], &'a [T]) {
        values.split_at(self.hidden * self.inputs)
    }
}

/// Hidden activations and class probabilities for one input.
pub(crate) fn forward<T: Scalar>(dims: &Dims, values: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
    let (w1, w2) = dims.split(values);
    let hidden: Vec<T> = (0..dims.hidden)
        .map(|k| dot(&w1[k * dims.inputs..(k + 1) * dims.inputs], x).tanh())
        .collect();
    let logits: Vec<T> = (0..dims.classes)
        .map(|c| dot(&w2[c * dims.hidden..(c + 1) * dims.hidden], &hidden))
        .collect();
    let mut probs = vec![T::zero(); dims.classes];
    softmax_into(&logits, &mut probs);
    (hidden, probs)
}

/// Adds the gradient of `-log p_label` to `out`.
pub(crate) fn backward_into<T: Scalar>(
    dims: &Dims,
    values: &[T],
    x: &[T],
    label: usize,
    out: &mut [T],
) {
    let (hidden, mut delta) = forward(dims, values, x);
    delta[label] -= T::one();
    let (_, w2) = dims.split(values);
    let (g1, g2) = out.split_at_mut(dims.hidden * dims.inputs);
    let mut back = vec![T::zero(); dims.hidden];
    for (c, &dc) in delta.iter().enumerate() {
        let row = &w2[c * dims.hidden..(c + 1) * dims.hidden];
        let grow = &mut g2[c * dims.hidden..(c + 1) * dims.hidden];
        for k in 0..dims.hidden {
            grow[k] += dc * hidden[k];
            back[k] += dc * row[k];
        }
    }
    for k in 0..dims.hidden {
        let pre = back[k] * (T::one() - hidden[k] * hidden[k]);
        if pre == T::zero() {
            continue;
        }
        let grow = &mut g1[k * dims.inputs..(k + 1) * dims.inputs];
        for (g, &xj) in grow.iter_mut().zip(x) {
            *g += pre * xj;
        }
    }
}
