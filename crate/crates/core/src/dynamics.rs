//! Benchmark plants, their linearizing input maps `u = Φ(z, v)`, and the
//! Brunovsky integrator chains they reduce to.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relu_net::ExactMap;

/// Guard band on `|ζ|` below the `asin` singularity of the quadrotor map.
pub const SINGULARITY_GUARD: f64 = 1e-6;

/// Stribeck friction `s(x) = (0.8 + 0.2 e^{-100|x|}) tanh(10x) + x`.
pub fn stribeck(x: f64) -> f64 {
    (0.8 + 0.2 * (-100.0 * x.abs()).exp()) * (10.0 * x).tanh() + x
}

/// `Φ(z, v) = v + s(z_2) + z_1` for the mass-spring-damper.
pub fn msd_phi(z: &[f64], v: f64) -> f64 {
    v + stribeck(z[1]) + z[0]
}

/// Chain-of-integrators model `ż = Az + Bv` and its sampled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BrunovskyModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sample_time: f64,
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
}

impl BrunovskyModel {
    /// Single-input chain of `order` integrators sampled at `sample_time`.
    pub fn chain(order: usize, sample_time: f64) -> Result<Self> {
        let a = DMatrix::from_fn(order, order, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        let b = DMatrix::from_fn(order, 1, |i, _| if i + 1 == order { 1.0 } else { 0.0 });
        let (a_d, b_d) = discretize(&a, &b, sample_time)?;
        Ok(Self {
            a,
            b,
            sample_time,
            a_d,
            b_d,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `ż = Az + Bv`.
    pub fn derivative(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let dz = &self.a * DVector::from_column_slice(z) + &self.b * DVector::from_column_slice(v);
        dz.as_slice().to_vec()
    }

    /// `z⁺ = A_d z + B_d v`.
    pub fn step(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let next =
            &self.a_d * DVector::from_column_slice(z) + &self.b_d * DVector::from_column_slice(v);
        next.as_slice().to_vec()
    }
}

/// One RK4 step of `ż = Az + Bv` with `v` held constant, written as
/// matrices. For nilpotent `A` of index ≤ 4 this is the exact exponential.
pub fn discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sample_time: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Dimension {
            context: "discretize (A, B)",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    if !(sample_time >= 0.0) || !sample_time.is_finite() {
        return Err(Error::Argument(format!(
            "sample time must be finite and non-negative, got {sample_time}"
        )));
    }
    let n = a.nrows();
    let h = sample_time;
    let ha = a * h;
    let ha2 = &ha * &ha;
    let ha3 = &ha2 * &ha;
    let ha4 = &ha3 * &ha;
    let eye = DMatrix::<f64>::identity(n, n);
    let a_d = &eye + &ha + &ha2 / 2.0 + &ha3 / 6.0 + &ha4 / 24.0;
    let b_d = (&eye + &ha / 2.0 + &ha2 / 6.0 + &ha3 / 24.0) * b * h;
    Ok((a_d, b_d))
}

/// Classic RK4 step of `ẋ = f(x)`.
pub fn rk4_step(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let axpy = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, k)| b + s * k).collect()
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, &k1, 0.5 * h));
    let k3 = f(&axpy(x, &k2, 0.5 * h));
    let k4 = f(&axpy(x, &k3, h));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Nonlinear mass-spring-damper `ẋ_1 = x_2, ẋ_2 = −s(x_2) − x_1 + u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsdPlant {
    pub u_max: f64,
}

impl Default for MsdPlant {
    fn default() -> Self {
        Self { u_max: 5.0 }
    }
}

/// Horizontal 1-D quadrotor `ẍ = Γ sin θ − γẋ, θ̇ = (u − θ)/τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadPlant {
    pub gain: f64,
    pub drag: f64,
    pub time_constant: f64,
    pub u_max: f64,
}

impl Default for QuadPlant {
    fn default() -> Self {
        Self {
            gain: 10.0,
            drag: 0.3,
            time_constant: 0.2,
            u_max: 0.1745,
        }
    }
}

impl QuadPlant {
    /// `ζ(z) = (z_3 + γ z_2)/Γ`, the sine of the pitch angle.
    pub fn zeta(&self, z: &[f64]) -> f64 {
        (z[2] + self.drag * z[1]) / self.gain
    }

    /// `Φ(z, v) = τ(v + γ z_3) / (Γ √(1 − ζ²)) + asin ζ`.
    pub fn phi(&self, z: &[f64], v: f64) -> Result<f64> {
        let zeta = self.zeta(z);
        if !(zeta.abs() <= 1.0 - SINGULARITY_GUARD) {
            return Err(Error::Singularity { zeta });
        }
        Ok(
            self.time_constant * (v + self.drag * z[2]) / (self.gain * (1.0 - zeta * zeta).sqrt())
                + zeta.asin(),
        )
    }
}

/// Free-function form of [`QuadPlant::phi`] with the nominal parameters.
pub fn quad_phi(z: &[f64], v: f64) -> Result<f64> {
    QuadPlant::default().phi(z, v)
}

/// The two benchmark plants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    Msd(MsdPlant),
    Quad(QuadPlant),
}

impl Plant {
    pub fn msd() -> Self {
        Plant::Msd(MsdPlant::default())
    }

    pub fn quad() -> Self {
        Plant::Quad(QuadPlant::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Plant::Msd(_) => "msd",
            Plant::Quad(_) => "quad1d",
        }
    }

    /// Dimension `n_z` of the flat state (also of the physical state).
    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Msd(_) => 2,
            Plant::Quad(_) => 3,
        }
    }

    pub fn input_dim(&self) -> usize {
        1
    }

    pub fn u_max(&self) -> f64 {
        match self {
            Plant::Msd(p) => p.u_max,
            Plant::Quad(p) => p.u_max,
        }
    }

    pub fn brunovsky(&self, sample_time: f64) -> Result<BrunovskyModel> {
        BrunovskyModel::chain(self.state_dim(), sample_time)
    }

    /// Physical input `u = Φ(z, v)`.
    pub fn phi(&self, z: &[f64], v: f64) -> Result<f64> {
        self.check_dim(z)?;
        match self {
            Plant::Msd(_) => Ok(msd_phi(z, v)),
            Plant::Quad(p) => p.phi(z, v),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "plant state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Continuous-time derivative of the physical state. The quadrotor state
    /// is `(x, ẋ, θ)`.
    pub fn rhs(&self, x: &[f64], u: f64) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            Plant::Msd(_) => vec![x[1], -stribeck(x[1]) - x[0] + u],
            Plant::Quad(p) => vec![
                x[1],
                p.gain * x[2].sin() - p.drag * x[1],
                (u - x[2]) / p.time_constant,
            ],
        })
    }

    /// Flat coordinates of a physical state; for the quadrotor
    /// `z_3 = Γ sin θ − γ ẋ`.
    pub fn flat_from_physical(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            Plant::Msd(_) => x.to_vec(),
            Plant::Quad(p) => vec![x[0], x[1], p.gain * x[2].sin() - p.drag * x[1]],
        })
    }

    pub fn physical_from_flat(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        match self {
            Plant::Msd(_) => Ok(z.to_vec()),
            Plant::Quad(p) => {
                let zeta = p.zeta(z);
                if !(zeta.abs() <= 1.0 - SINGULARITY_GUARD) {
                    return Err(Error::Singularity { zeta });
                }
                Ok(vec![z[0], z[1], zeta.asin()])
            }
        }
    }

    /// Integrates the physical plant over `duration` with `u` held constant,
    /// using `substeps` RK4 steps.
    pub fn integrate(&self, x: &[f64], u: f64, duration: f64, substeps: usize) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let h = duration / substeps.max(1) as f64;
        let mut state = x.to_vec();
        for _ in 0..substeps.max(1) {
            state = rk4_step(|s| self.rhs(s, u).expect("dimension checked"), &state, h);
        }
        Ok(state)
    }

    /// `Φ` as an [`ExactMap`] over inputs `[z, v]`.
    pub fn phi_map(&self) -> PhiMap {
        PhiMap(*self)
    }
}

/// `[z, v] ↦ Φ(z, v)` for a plant.
#[derive(Debug, Clone, Copy)]
pub struct PhiMap(pub Plant);

impl ExactMap for PhiMap {
    fn input_dim(&self) -> usize {
        self.0.state_dim() + self.0.input_dim()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval_into(&self, input: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.0.state_dim();
        if input.len() != n + 1 {
            return Err(Error::Dimension {
                context: "Φ input [z, v]",
                expected: n + 1,
                got: input.len(),
            });
        }
        out[0] = self.0.phi(&input[..n], input[n])?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msd_phi_examples() {
        assert_eq!(msd_phi(&[0.0, 0.0], 0.0), 0.0);
        assert_eq!(msd_phi(&[1.0, 0.0], 2.0), 3.0);
        // 0.8 tanh(10) + 1 with e^{-100} negligible.
        let expected = 0.8 * 10f64.tanh() + 0.2 * (-100f64).exp() * 10f64.tanh() + 1.0;
        assert!((msd_phi(&[0.0, 1.0], 0.0) - expected).abs() < 1e-15);
        assert!((msd_phi(&[0.0, 1.0], 0.0) - 1.8).abs() < 1e-4);
    }

    #[test]
    fn quad_phi_examples() {
        assert_eq!(quad_phi(&[3.0, 0.0, 0.0], 0.0).unwrap(), 0.0);
        let hand = 0.2 * 1.5 / (10.0 * 0.75f64.sqrt()) + 0.5f64.asin();
        let got = quad_phi(&[0.0, 0.0, 5.0], 0.0).unwrap();
        assert!((got - hand).abs() < 1e-14);
        assert!((got - 0.55824).abs() < 1e-5);
        match quad_phi(&[0.0, 0.0, 10.0], 0.0) {
            Err(Error::Singularity { zeta }) => assert_eq!(zeta, 1.0),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn plant_rhs_examples() {
        let msd = Plant::msd();
        assert_eq!(msd.rhs(&[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(msd.rhs(&[1.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        let quad = Plant::quad();
        let d = quad.rhs(&[0.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 0.5).abs() < 1e-15);
        assert!(matches!(
            quad.rhs(&[0.0, 0.0], 0.1),
            Err(Error::Dimension {
                expected: 3,
                got: 2,
                ..
            })
        ));
    }

    #[test]
    fn triple_integrator_discretization() {
        let m = BrunovskyModel::chain(3, 0.1).unwrap();
        let a_expected =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.005, 0.0, 1.0, 0.1, 0.0, 0.0, 1.0]);
        let b_expected = DMatrix::from_column_slice(3, 1, &[0.1f64.powi(3) / 6.0, 0.005, 0.1]);
        assert!((&m.a_d - a_expected).amax() < 1e-12);
        assert!((&m.b_d - b_expected).amax() < 1e-12);
        assert!((m.b_d[(0, 0)] - 1.6667e-4).abs() < 1e-8);
    }

    #[test]
    fn double_integrator_unit_step() {
        let m = BrunovskyModel::chain(2, 1.0).unwrap();
        assert_eq!(m.a_d, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(m.b_d, DMatrix::from_column_slice(2, 1, &[0.5, 1.0]));
    }

    #[test]
    fn zero_step_is_identity() {
        let m = BrunovskyModel::chain(3, 0.0).unwrap();
        assert_eq!(m.a_d, DMatrix::identity(3, 3));
        assert_eq!(m.b_d, DMatrix::zeros(3, 1));
        assert!(BrunovskyModel::chain(3, -0.1).is_err());
    }

    #[test]
    fn flat_state_round_trip() {
        let quad = Plant::quad();
        let x = [0.3, -0.2, 0.1];
        let z = quad.flat_from_physical(&x).unwrap();
        let back = quad.physical_from_flat(&z).unwrap();
        for i in 0..3 {
            assert!((back[i] - x[i]).abs() < 1e-14);
        }
    }
}
