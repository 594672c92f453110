//! Hierarchical cross-entropy over the fine three-class head.
//!
//! The loss blends a coarse SE/NS cross-entropy with the fine three-class
//! cross-entropy:
//!
//! ```text
//! L = alpha * -ln p(group(target)) + (1 - alpha) * -ln p(target)
//! ```
//!
//! The coarse distribution is the marginal of the fine one: `p(SE)` is the
//! sum of the activity and posing probabilities. Probabilities are clamped to
//! [`PROB_EPS`] before the logarithm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::taxonomy::{BinaryLabel, FineLabel};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Default coarse/fine blend.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Distribution over the fine labels, in [`FineLabel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prob3<T> {
    pub p_activity: T,
    pub p_posing: T,
    pub p_neutral: T,
}

impl<T: Scalar> Prob3<T> {
    pub fn new(p_activity: T, p_posing: T, p_neutral: T) -> Result<Self> {
        let d = Prob3 {
            p_activity,
            p_posing,
            p_neutral,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn from_array(p: [T; 3]) -> Result<Self> {
        Self::new(p[0], p[1], p[2])
    }

    pub fn one_hot(label: FineLabel) -> Self {
        let mut p = [T::zero(); 3];
        p[label.index()] = T::one();
        Prob3 {
            p_activity: p[0],
            p_posing: p[1],
            p_neutral: p[2],
        }
    }

    pub fn uniform() -> Self {
        let third = T::one() / T::lit(3.0);
        Prob3 {
            p_activity: third,
            p_posing: third,
            p_neutral: third,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.to_array(), "Prob3")
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.p_activity, self.p_posing, self.p_neutral]
    }

    pub fn get(&self, label: FineLabel) -> T {
        self.to_array()[label.index()]
    }

    /// Most probable label; exact ties go to the more severe label.
    pub fn argmax(&self) -> FineLabel {
        // ALL is ordered by descending severity, so a strict comparison keeps
        // the first (most severe) of tied entries.
        let p = self.to_array();
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        FineLabel::ALL[best]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prob2<T> {
    pub p_se: T,
    pub p_ns: T,
}

impl<T: Scalar> Prob2<T> {
    pub fn new(p_se: T, p_ns: T) -> Result<Self> {
        check_simplex(&[p_se, p_ns], "Prob2")?;
        Ok(Prob2 { p_se, p_ns })
    }

    pub fn get(&self, label: BinaryLabel) -> T {
        match label {
            BinaryLabel::SE => self.p_se,
            BinaryLabel::NS => self.p_ns,
        }
    }
}

fn check_simplex<T: Scalar>(p: &[T], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < T::zero() || *v > T::one()) {
        return Err(Error::input(format!("{what} component outside [0, 1]: {p:?}")));
    }
    let sum: T = p.iter().copied().sum();
    if (sum - T::one()).abs() > T::simplex_tol() {
        return Err(Error::input(format!("{what} does not sum to 1 (sum = {sum})")));
    }
    Ok(())
}

/// Pre-softmax scores, in [`FineLabel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logits3<T> {
    pub z_activity: T,
    pub z_posing: T,
    pub z_neutral: T,
}

impl<T: Scalar> Logits3<T> {
    pub fn new(z_activity: T, z_posing: T, z_neutral: T) -> Result<Self> {
        let z = Logits3 {
            z_activity,
            z_posing,
            z_neutral,
        };
        z.validate()?;
        Ok(z)
    }

    pub fn from_array(z: [T; 3]) -> Result<Self> {
        Self::new(z[0], z[1], z[2])
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.z_activity, self.z_posing, self.z_neutral]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|z| z.is_finite()) {
            Ok(())
        } else {
            Err(Error::input(format!("non-finite logits: {:?}", self.to_array())))
        }
    }

    pub fn softmax(&self) -> Prob3<T> {
        let p = softmax(&self.to_array());
        Prob3 {
            p_activity: p[0],
            p_posing: p[1],
            p_neutral: p[2],
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar, const N: usize>(z: &[T; N]) -> [T; N] {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out = [T::zero(); N];
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum = sum + *o;
    }
    for o in &mut out {
        *o = *o / sum;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue<T> {
    pub total: T,
    pub coarse_term: T,
    pub fine_term: T,
    pub alpha: T,
}

/// Marginalizes the fine distribution onto SE/NS.
pub fn project_fine_to_coarse<T: Scalar>(d: &Prob3<T>) -> Prob2<T> {
    Prob2 {
        p_se: d.p_activity + d.p_posing,
        p_ns: d.p_neutral,
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha >= T::zero() && alpha <= T::one() {
        Ok(())
    } else {
        Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

fn neg_log_clamped<T: Scalar>(p: T) -> T {
    -(p.max(T::lit(PROB_EPS))).ln()
}

pub fn hierarchical_ce<T: Scalar>(d: &Prob3<T>, target: FineLabel, alpha: T) -> Result<LossValue<T>> {
    check_alpha(alpha)?;
    d.validate()?;
    let coarse = project_fine_to_coarse(d);
    let fine_term = neg_log_clamped(d.get(target));
    let coarse_term = neg_log_clamped(coarse.get(target.to_binary()));
    Ok(LossValue {
        total: alpha * coarse_term + (T::one() - alpha) * fine_term,
        coarse_term,
        fine_term,
        alpha,
    })
}

pub fn hierarchical_ce_from_logits<T: Scalar>(
    z: &Logits3<T>,
    target: FineLabel,
    alpha: T,
) -> Result<LossValue<T>> {
    z.validate()?;
    hierarchical_ce(&z.softmax(), target, alpha)
}

/// Gradient of [`hierarchical_ce_from_logits`] with respect to the logits.
///
/// The fine term contributes `softmax(z) - onehot(target)`. The coarse term
/// contributes `softmax(z) - q`, where `q` is the softmax restricted to the
/// members of the target's SE/NS group (zero outside it).
pub fn hierarchical_ce_grad<T: Scalar>(z: &Logits3<T>, target: FineLabel, alpha: T) -> Result<[T; 3]> {
    check_alpha(alpha)?;
    z.validate()?;
    let zs = z.to_array();
    let p = softmax(&zs);
    let group = target.to_binary();

    let in_group = |i: usize| FineLabel::ALL[i].to_binary() == group;
    let gmax = (0..3)
        .filter(|&i| in_group(i))
        .map(|i| zs[i])
        .fold(T::neg_infinity(), T::max);
    let mut q = [T::zero(); 3];
    let mut qsum = T::zero();
    for i in (0..3).filter(|&i| in_group(i)) {
        q[i] = (zs[i] - gmax).exp();
        qsum = qsum + q[i];
    }

    let t = target.index();
    let mut grad = [T::zero(); 3];
    for i in 0..3 {
        let fine = p[i] - if i == t { T::one() } else { T::zero() };
        let coarse = p[i] - q[i] / qsum;
        grad[i] = alpha * coarse + (T::one() - alpha) * fine;
    }
    Ok(grad)
}
