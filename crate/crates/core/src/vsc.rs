//! Static converter model: inductor current and input voltage as linear maps
//! of the stacked output voltages, DC-side power and its linearization.

use nalgebra::{DMatrix, DVector};

use crate::dq::DqVec;
use crate::netmodel::{capacitor_block, LclParams, StaticGains};

#[derive(Debug, Clone, PartialEq)]
pub struct VscStaticModel {
    pub index: usize,
    /// 2 × 2N inductor-current gain.
    pub g_il: DMatrix<f64>,
    /// 2 × 2N input-voltage gain.
    pub g_u: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLinearization {
    /// W per V, length 2N.
    pub coeff: DVector<f64>,
    pub offset: f64,
    pub nominal_i_l: DqVec,
    pub nominal_u: DqVec,
}

impl PowerLinearization {
    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        self.coeff.dot(v) + self.offset
    }
}

fn selector(n_vsc: usize, i: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2, 2 * n_vsc);
    m[(0, 2 * i)] = 1.0;
    m[(1, 2 * i + 1)] = 1.0;
    m
}

pub fn vsc_static_gains(gains: &StaticGains, params: &LclParams, index: usize, omega: f64) -> VscStaticModel {
    let n = gains.n_vsc();
    assert!(index < n, "VSC index {index} out of range ({n})");
    let g_il = capacitor_block(n, index, omega, params.c_f) + gains.io_block(index);
    let z = DMatrix::from_row_slice(2, 2, &[params.r_f, -omega * params.l_f, omega * params.l_f, params.r_f]);
    let g_u = &z * &g_il + selector(n, index);
    VscStaticModel { index, g_il, g_u }
}

impl VscStaticModel {
    pub fn inductor_current(&self, v: &DVector<f64>) -> DqVec {
        let i = &self.g_il * v;
        DqVec::new(i[0], i[1])
    }

    pub fn input_voltage(&self, v: &DVector<f64>) -> DqVec {
        let u = &self.g_u * v;
        DqVec::new(u[0], u[1])
    }

    /// Exact bilinear DC-side power at stacked output voltages `v`.
    pub fn power(&self, v: &DVector<f64>) -> f64 {
        dc_power(self.input_voltage(v), self.inductor_current(v))
    }
}

/// Real power drawn from the DC side.
pub fn dc_power(u: DqVec, i_l: DqVec) -> f64 {
    u.d * i_l.d + u.q * i_l.q
}

/// First-order expansion of the DC power about `nominal_v`.
pub fn linearize_power(model: &VscStaticModel, nominal_v: &DVector<f64>) -> PowerLinearization {
    let i_l = model.inductor_current(nominal_v);
    let u = model.input_voltage(nominal_v);
    let uv = DVector::from_vec(vec![u.d, u.q]);
    let iv = DVector::from_vec(vec![i_l.d, i_l.q]);
    let coeff = model.g_il.transpose() * &uv + model.g_u.transpose() * &iv;
    PowerLinearization {
        coeff,
        offset: -dc_power(u, i_l),
        nominal_i_l: i_l,
        nominal_u: u,
    }
}

/// PWM modulation signal recovered from the input voltage.
pub fn control_signal(u: DqVec, params: &LclParams, v_dc: f64) -> DqVec {
    let k = params.a_m * v_dc;
    DqVec::new(u.d / k, u.q / k)
}
