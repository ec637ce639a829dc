//! Central finite-difference verification of backpropagated gradients.

use rand::seq::index::sample;

use super::rng::rng_from_seed;
use super::{LayerSpec, Network, NnError, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many entries per parameter tensor (chosen with
    /// `seed`); `None` checks every parameter.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(layer, tensor, index, backprop, numeric)` at the worst entry.
    pub worst: Option<(usize, usize, usize, f64, f64)>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn loss(net: &Network, x: &Tensor, label: usize) -> Result<f64, NnError> {
    let p = net.forward(x)?;
    Ok(-p.data()[label].ln())
}

/// Compares backprop gradients of the softmax cross-entropy loss at
/// `(input, label)` against central differences for every parameter
/// (or a seeded subset, see [`GradCheckOptions::max_per_tensor`]).
pub fn grad_check(
    net: &Network,
    input: &Tensor,
    label: usize,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let mut net = net.clone();
    for l in net.layers_mut() {
        l.trainable = true;
    }
    net.zero_grads();
    let x = input.batched();
    net.accumulate_gradients(&x, &[label])?;
    let analytic: Vec<Vec<Tensor>> = net.layers().iter().map(|l| l.grads.clone()).collect();

    let mut rng = rng_from_seed(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for li in net.param_layer_indices() {
        for ti in 0..net.layers()[li].params.len() {
            let len = net.layers()[li].params[ti].len();
            let indices: Vec<usize> = match opts.max_per_tensor {
                Some(m) if m < len => {
                    let mut v = sample(&mut rng, len, m).into_vec();
                    v.sort_unstable();
                    v
                }
                _ => (0..len).collect(),
            };
            for idx in indices {
                let orig = net.layers()[li].params[ti].data()[idx];
                net.layers_mut()[li].params[ti].data_mut()[idx] = orig + opts.eps;
                let up = loss(&net, &x, label)?;
                net.layers_mut()[li].params[ti].data_mut()[idx] = orig - opts.eps;
                let down = loss(&net, &x, label)?;
                net.layers_mut()[li].params[ti].data_mut()[idx] = orig;

                let numeric = (up - down) / (2.0 * opts.eps);
                let a = analytic[li][ti].data()[idx];
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some((li, ti, idx, a, numeric));
                }
            }
        }
    }
    Ok(report)
}

/// Distance of `input` from the non-differentiable points of the network:
/// the smallest `|pre-activation|` feeding a ReLU and the smallest gap
/// between the largest and second-largest value of any pooling window
/// (windows tied at exactly zero are skipped).
/// Central differences are only trustworthy when this exceeds the step.
pub fn kink_margin(net: &Network, input: &Tensor) -> Result<f64, NnError> {
    let x = input.batched();
    let trace = net.forward_trace(&x)?;
    let mut margin = f64::INFINITY;
    for (i, layer) in net.layers().iter().enumerate() {
        let pre = if i == 0 { &x } else { &trace[i - 1] };
        match layer.spec {
            LayerSpec::Relu => {
                margin = pre.data().iter().map(|v| v.abs()).fold(margin, f64::min);
            }
            LayerSpec::MaxPool2x2 => {
                let rank = pre.shape().len();
                let (h, w) = (pre.shape()[rank - 2], pre.shape()[rank - 1]);
                for plane in pre.data().chunks(h * w) {
                    for y in (0..h).step_by(2) {
                        for xx in (0..w).step_by(2) {
                            let mut v = [
                                plane[y * w + xx],
                                plane[y * w + xx + 1],
                                plane[(y + 1) * w + xx],
                                plane[(y + 1) * w + xx + 1],
                            ];
                            v.sort_by(|a, b| b.total_cmp(a));
                            // all-zero windows behind a ReLU stay tied at zero
                            // unless a pre-activation crosses, which the ReLU
                            // term already measures
                            if v[0] != 0.0 || v[1] != 0.0 {
                                margin = margin.min(v[0] - v[1]);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(margin)
}
