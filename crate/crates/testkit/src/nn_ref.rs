//! Scalar-loop network evaluation and numerical gradients.
//!
//! The flat parameter layout matches the production network: for each
//! layer, the weight matrix in row-major output-by-input order, followed
//! by the biases. Hidden layers apply ReLU; the output layer is linear.

/// Number of parameters a network with the given layer sizes carries.
pub fn flat_len(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Forward pass written as nested loops over an explicit flat buffer.
pub fn naive_forward(dims: &[usize], flat: &[f64], input: &[f64]) -> Vec<f64> {
    assert_eq!(input.len(), dims[0], "input width");
    assert_eq!(flat.len(), flat_len(dims), "parameter count");
    let mut activ = input.to_vec();
    let mut offset = 0;
    for l in 0..dims.len() - 1 {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let mut next = vec![0.0; n_out];
        for (o, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &a) in activ.iter().enumerate() {
                acc += flat[offset + o * n_in + i] * a;
            }
            acc += flat[offset + n_in * n_out + o];
            *slot = if l + 2 < dims.len() { acc.max(0.0) } else { acc };
        }
        offset += n_in * n_out + n_out;
        activ = next;
    }
    activ
}

/// Central-difference gradient of a scalar function of the parameters.
pub fn central_diff_grad(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], eps: f64) -> Vec<f64> {
    let mut scratch = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let keep = scratch[i];
        scratch[i] = keep + eps;
        let hi = f(&scratch);
        scratch[i] = keep - eps;
        let lo = f(&scratch);
        scratch[i] = keep;
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_len_counts_weights_and_biases() {
        assert_eq!(flat_len(&[18, 64, 64, 3]), 18 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
        assert_eq!(flat_len(&[2, 1]), 3);
    }

    #[test]
    fn hand_network_forward() {
        // dims [2, 2, 1]:
        //   hidden: W = [[1, -1], [2, 0]], b = [0, -1]  (ReLU)
        //   output: W = [[1, 1]], b = [0.5]
        let flat = [1.0, -1.0, 2.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.5];
        // input (1, 2): hidden pre = [-1, 1] -> ReLU [0, 1] -> out 1.5
        let out = naive_forward(&[2, 2, 1], &flat, &[1.0, 2.0]);
        assert_eq!(out, vec![1.5]);
        // input (3, 1): hidden pre = [2, 5] -> out 7.5
        let out = naive_forward(&[2, 2, 1], &flat, &[3.0, 1.0]);
        assert_eq!(out, vec![7.5]);
    }

    #[test]
    fn central_diff_matches_quadratic_gradient() {
        let coeff = [1.0, -2.0, 0.5];
        let f = |p: &[f64]| p.iter().zip(&coeff).map(|(p, c)| c * p * p).sum::<f64>();
        let params = [0.3, -0.7, 2.0];
        let grad = central_diff_grad(f, &params, 1e-6);
        for ((g, p), c) in grad.iter().zip(&params).zip(&coeff) {
            assert!((g - 2.0 * c * p).abs() < 1e-8);
        }
    }
}
