//! Two-component vectors in the synchronous d–q frame.
//!
//! The power-invariant transform is used throughout: `|v| = V_LL` (RMS line
//! voltage), `|i| = √3 I_ph` and three-phase real power is `v · i`.

use nalgebra::Complex;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DqVec {
    pub d: f64,
    pub q: f64,
}

impl DqVec {
    pub const ZERO: DqVec = DqVec { d: 0.0, q: 0.0 };

    pub fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }

    pub fn magnitude(&self) -> f64 {
        self.d.hypot(self.q)
    }

    pub fn dot(&self, other: &DqVec) -> f64 {
        self.d * other.d + self.q * other.q
    }

    /// Reactive power `v_q i_d − v_d i_q` delivered by a source at voltage
    /// `self` with current `i`.
    pub fn reactive(&self, i: &DqVec) -> f64 {
        self.q * i.d - self.d * i.q
    }

    pub fn to_complex(self) -> Complex<f64> {
        Complex::new(self.d, self.q)
    }

    pub fn from_complex(c: Complex<f64>) -> Self {
        Self { d: c.re, q: c.im }
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite() && self.q.is_finite()
    }
}

/// Splits an interleaved `[d₀, q₀, d₁, q₁, …]` slice into vectors.
pub fn unstack(v: &[f64]) -> Vec<DqVec> {
    v.chunks_exact(2).map(|c| DqVec::new(c[0], c[1])).collect()
}

pub fn stack(v: &[DqVec]) -> Vec<f64> {
    v.iter().flat_map(|x| [x.d, x.q]).collect()
}
