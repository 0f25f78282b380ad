//! Floating-point contract, escape-aware evaluation results, and the stable
//! complex kernels (`expm1`, `log1p`, log-form magnitudes) the tower
//! recursions are built on.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Precision and overflow conventions shared by every numeric operation.
///
/// All error statements elsewhere in the crate are in units of `epsilon`
/// (one unit of relative binary64 precision). Magnitudes whose natural log
/// exceeds `ln(overflow_threshold)` are reported as escaped rather than
/// silently turned into infinities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericContract {
    pub epsilon: f64,
    pub overflow_threshold: f64,
}

impl Default for NumericContract {
    fn default() -> Self {
        NumericContract {
            epsilon: f64::EPSILON,
            overflow_threshold: 1e300,
        }
    }
}

impl NumericContract {
    pub const DEFAULT: NumericContract = NumericContract {
        epsilon: f64::EPSILON,
        overflow_threshold: 1e300,
    };

    pub fn ln_overflow(&self) -> f64 {
        self.overflow_threshold.ln()
    }

    /// Values this close to 0 are treated as exact punctures by the
    /// logarithms; perturbing them would silently corrupt branch selection.
    pub fn log_puncture(&self) -> f64 {
        self.epsilon
    }
}

/// Largest exponent real part fed to `exp` directly; above this we switch
/// to log-magnitude bookkeeping or report an escape.
pub(crate) const MAX_EXP_ARG: f64 = 700.0;

/// Cap on ln|b_0⋯b_{n-1}|. Beyond this the deviation z/(b_0⋯b_{n-1})
/// underflows and evaluations lose their z-dependence, so builds refuse
/// deeper levels.
pub(crate) const PRODUCT_LOG_CAP: f64 = 500.0;

/// Result of an evaluation that may overflow: a finite value, or an escape
/// marker carrying the stage index and a log-magnitude estimate of the
/// value that would have been produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eval {
    Value(Complex64),
    Escaped(EscapeInfo),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EscapeInfo {
    /// Index of the map application at which the overflow occurred.
    pub stage: usize,
    /// Estimate of ln|value| at the point of escape.
    pub log_magnitude: f64,
}

impl Eval {
    pub fn value(&self) -> Option<Complex64> {
        match self {
            Eval::Value(v) => Some(*v),
            Eval::Escaped(_) => None,
        }
    }

    pub fn is_escaped(&self) -> bool {
        matches!(self, Eval::Escaped(_))
    }

    /// Unwraps the finite value; panics on an escape. For call sites that
    /// have already established boundedness.
    pub fn expect_value(&self, context: &str) -> Complex64 {
        match self {
            Eval::Value(v) => *v,
            Eval::Escaped(e) => panic!("unexpected escape ({context}): {e:?}"),
        }
    }
}

/// Normalizes an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % TAU;
    if t > PI {
        t -= TAU;
    } else if t <= -PI {
        t += TAU;
    }
    t
}

/// A nonzero complex number kept as (ln-magnitude, argument). Backbone
/// products overflow binary64 after a handful of levels, so they are
/// tracked in this form and never materialized unless provably small.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogScale {
    pub ln_mag: f64,
    pub arg: f64,
}

impl LogScale {
    pub const ONE: LogScale = LogScale { ln_mag: 0.0, arg: 0.0 };

    pub fn from_complex(w: Complex64) -> Self {
        LogScale {
            ln_mag: w.norm().ln(),
            arg: w.arg(),
        }
    }

    pub fn mul_complex(self, w: Complex64) -> Self {
        LogScale {
            ln_mag: self.ln_mag + w.norm().ln(),
            arg: wrap_angle(self.arg + w.arg()),
        }
    }

    /// |self| as f64; infinite when the log-magnitude overflows.
    pub fn magnitude(&self) -> f64 {
        self.ln_mag.exp()
    }

    /// May be infinite; callers that need finiteness must check first.
    pub fn materialize(&self) -> Complex64 {
        Complex64::from_polar(self.ln_mag.exp(), self.arg)
    }

    /// z / self, underflowing gracefully to 0.
    pub fn div_into(&self, z: Complex64) -> Complex64 {
        if z == Complex64::new(0.0, 0.0) {
            return z;
        }
        let mag = (z.norm().ln() - self.ln_mag).exp();
        Complex64::from_polar(mag, wrap_angle(z.arg() - self.arg))
    }
}

/// e^z - 1 without cancellation for small z.
pub fn cexpm1(z: Complex64) -> Complex64 {
    let ex = z.re.exp_m1();
    let (sin_y, cos_y) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    // Re(e^z - 1) = (e^x - 1) cos y - 2 sin^2(y/2)
    Complex64::new(ex * cos_y - 2.0 * half * half, (ex + 1.0) * sin_y)
}

/// Principal Log(1 + z), stable for small z. Argument convention (-pi, pi].
pub fn clog1p(z: Complex64) -> Complex64 {
    // |1+z|^2 - 1 = 2x + x^2 + y^2
    let t = 2.0 * z.re + z.re * z.re + z.im * z.im;
    let mut arg = z.im.atan2(1.0 + z.re);
    if arg == -PI {
        arg = PI;
    }
    Complex64::new(0.5 * t.ln_1p(), arg)
}

/// Log(1 + z) / z extended by its limit 1 at z = 0.
pub fn log1p_ratio(z: Complex64) -> Complex64 {
    if z == Complex64::new(0.0, 0.0) {
        Complex64::new(1.0, 0.0)
    } else {
        clog1p(z) / z
    }
}

/// Relative distance in units of `contract.epsilon`.
pub fn units_of_precision(a: Complex64, b: Complex64, contract: &NumericContract) -> f64 {
    let scale = a.norm().max(b.norm()).max(1.0);
    (a - b).norm() / (scale * contract.epsilon)
}
