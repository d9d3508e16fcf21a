//! Skip-gram negative-sampling loss for a single (input, context) pair.

/// Logits are clamped to this magnitude before the logistic function.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    fn target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// `-ln σ(x)` evaluated without forming σ, on the clamped logit.
fn neg_log_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `-ln σ(v_a·v_b)` for positives, `-ln σ(-v_a·v_b)` for negatives.
pub fn sgns_loss(a: &[f64], b: &[f64], label: Label) -> f64 {
    let s = dot(a, b);
    match label {
        Label::Positive => neg_log_sigmoid(s),
        Label::Negative => neg_log_sigmoid(-s),
    }
}

/// Gradients of [`sgns_loss`] with respect to `a` and `b`:
/// `(σ(a·b) - y)·b` and `(σ(a·b) - y)·a`.
pub fn sgns_gradient(a: &[f64], b: &[f64], label: Label) -> (Vec<f64>, Vec<f64>) {
    let g = sigmoid(dot(a, b)) - label.target();
    (
        b.iter().map(|x| g * x).collect(),
        a.iter().map(|x| g * x).collect(),
    )
}
