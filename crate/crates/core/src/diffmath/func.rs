use serde::{Deserialize, Serialize};

/// Highest derivative order an elementwise function can be evaluated at.
///
/// Second-order objectives (a parameter gradient of a Jacobian-vector
/// product) reach order 2; one spare order covers a jvp taken inside such
/// an objective.
pub const MAX_ORDER: u8 = 4;

/// Smooth scalar functions applied elementwise on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Elementwise {
    Tanh,
    Softplus,
    Identity,
    Sin,
}

impl Elementwise {
    /// `order`-th derivative at `x`, in closed form.
    ///
    /// Panics if `order > MAX_ORDER`.
    pub fn eval(self, order: u8, x: f64) -> f64 {
        assert!(order <= MAX_ORDER, "derivative order {order} not supported");
        match self {
            Elementwise::Identity => match order {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
            Elementwise::Sin => match order % 4 {
                0 => x.sin(),
                1 => x.cos(),
                2 => -x.sin(),
                _ => -x.cos(),
            },
            Elementwise::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                match order {
                    0 => t,
                    1 => s,
                    2 => -2.0 * t * s,
                    3 => -2.0 * s * (1.0 - 3.0 * t * t),
                    _ => 8.0 * t * s * (2.0 - 3.0 * t * t),
                }
            }
            Elementwise::Softplus => {
                if order == 0 {
                    return if x > 0.0 {
                        x + (-x).exp().ln_1p()
                    } else {
                        x.exp().ln_1p()
                    };
                }
                let p = logistic(x);
                let q = p * (1.0 - p);
                match order {
                    1 => p,
                    2 => q,
                    3 => q * (1.0 - 2.0 * p),
                    _ => q * (1.0 - 6.0 * p + 6.0 * p * p),
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Elementwise::Tanh => "tanh",
            Elementwise::Softplus => "softplus",
            Elementwise::Identity => "identity",
            Elementwise::Sin => "sin",
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
