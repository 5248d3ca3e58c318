use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Self::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Identity => 1.0,
        }
    }

    pub(crate) fn apply_slice(self, xs: &mut [f64]) {
        if self == Self::Relu {
            for x in xs {
                *x = x.max(0.0);
            }
        }
    }

    /// Multiplies `grad` by the activation derivative at `out`.
    pub(crate) fn backprop_slice(self, out: &[f64], grad: &mut [f64]) {
        if self == Self::Relu {
            for (g, &o) in grad.iter_mut().zip(out) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}
