//! Differentiable-computation kernel for the character-level models.
//!
//! Losses are accumulated in nats; conversion to bits happens once, when
//! surprisals are reported ([`NATS_TO_BITS`]).

mod graph;
mod optim;
mod tensor;

pub use graph::{Gradients, Graph, ParamSet, SeqLayout, Var};
pub use optim::{AdamConfig, OptimizerState, StepStats};
pub use tensor::Tensor;

pub(crate) use graph::softmax_into;

/// `log2(e)`: multiply nats by this to get bits.
pub const NATS_TO_BITS: f64 = std::f64::consts::LOG2_E;

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    out
}

/// `-log2 dist[target]`. A zero probability yields `f64::INFINITY`, which
/// callers must treat as a flagged value rather than a number to average.
pub fn cross_entropy_bits(dist: &[f64], target: usize) -> f64 {
    let p = dist[target];
    if p <= 0.0 {
        f64::INFINITY
    } else {
        -p.log2()
    }
}

/// Denominator floor for relative errors, so that gradients that are zero
/// analytically compare by absolute error instead of dividing by ~0.
const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central finite differences over every parameter value and returns the
/// largest relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<F>(params: &ParamSet, f: F, eps: f64) -> f64
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g);
        g.backward(loss).params()
    };
    let eval = |p: &ParamSet| {
        let mut g = Graph::new(p);
        let loss = f(&mut g);
        g.value(loss).data()[0]
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        for j in 0..params.get(i).len() {
            let orig = params.get(i).data()[j];
            probe.get_mut(i).data_mut()[j] = orig + eps;
            let up = eval(&probe);
            probe.get_mut(i).data_mut()[j] = orig - eps;
            let down = eval(&probe);
            probe.get_mut(i).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
