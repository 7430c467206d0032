//! Small linear time-invariant toolkit: polynomials in `s`, rational transfer
//! functions, observable canonical realizations and bilinear discretization.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Polynomial with ascending coefficients: `c[0] + c[1] s + c[2] s^2 + ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        Poly(coeffs.into())
    }

    /// Degree ignoring trailing zero coefficients; the zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn coeff(&self, i: usize) -> f64 {
        self.0.get(i).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, s: C64) -> C64 {
        self.0
            .iter()
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, &c| acc * s + c)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.0.is_empty() || other.0.is_empty() {
            return Poly(Vec::new());
        }
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferFunction {
    pub num: Poly,
    pub den: Poly,
}

impl TransferFunction {
    pub fn new(num: Poly, den: Poly) -> Self {
        TransferFunction { num, den }
    }

    pub fn eval(&self, s: C64) -> C64 {
        self.num.eval(s) / self.den.eval(s)
    }
}

/// Continuous-time state-space system `x' = A x + B u`, `y = C x + D u`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    /// Observable canonical realization of `y = sum_i num_i(s)/den(s) * u_i`.
    ///
    /// Every numerator must have degree <= the denominator degree; a
    /// numerator of equal degree contributes a direct feedthrough term. The
    /// expanded-denominator form has no trouble with repeated poles.
    pub fn from_common_denominator(nums: &[Poly], den: &Poly) -> Result<Self> {
        let n = den.degree();
        let lead = den.coeff(n);
        if lead == 0.0 || !lead.is_finite() {
            return Err(Error::invalid("denominator has a zero or non-finite leading coefficient"));
        }
        if nums.is_empty() {
            return Err(Error::invalid("at least one input channel is required"));
        }
        let monic: Vec<f64> = (0..=n).map(|i| den.coeff(i) / lead).collect();
        let m = nums.len();
        let mut a = DMatrix::zeros(n, n);
        for row in 0..n {
            a[(row, 0)] = -monic[n - 1 - row];
            if row + 1 < n {
                a[(row, row + 1)] = 1.0;
            }
        }
        let mut b = DMatrix::zeros(n, m);
        let mut d = DMatrix::zeros(1, m);
        for (col, num) in nums.iter().enumerate() {
            if num.degree() > n && num.coeff(num.degree()) != 0.0 {
                return Err(Error::invalid(format!(
                    "numerator {col} has degree {} above denominator degree {n}",
                    num.degree()
                )));
            }
            let feedthrough = num.coeff(n) / lead;
            d[(0, col)] = feedthrough;
            for row in 0..n {
                let power = n - 1 - row;
                b[(row, col)] = num.coeff(power) / lead - feedthrough * monic[power];
            }
        }
        let mut c = DMatrix::zeros(1, n);
        if n > 0 {
            c[(0, 0)] = 1.0;
        }
        Ok(StateSpace { a, b, c, d })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `C (sI - A)^-1 B + D`, one column per input.
    pub fn freq_response(&self, s: C64) -> DMatrix<C64> {
        let n = self.n_states();
        let a = self.a.map(|v| C64::new(v, 0.0));
        let b = self.b.map(|v| C64::new(v, 0.0));
        let c = self.c.map(|v| C64::new(v, 0.0));
        let d = self.d.map(|v| C64::new(v, 0.0));
        if n == 0 {
            return d;
        }
        let si_a = DMatrix::<C64>::identity(n, n) * s - a;
        let x = si_a
            .lu()
            .solve(&b)
            .unwrap_or_else(|| DMatrix::from_element(n, b.ncols(), C64::new(f64::NAN, f64::NAN)));
        c * x + d
    }

    /// Trapezoidal (Tustin) discretization at sampling time `t_s`.
    pub fn bilinear(&self, t_s: f64) -> Result<DiscreteStateSpace> {
        if !(t_s.is_finite() && t_s > 0.0) {
            return Err(Error::invalid(format!("sampling time must be > 0, got {t_s}")));
        }
        let n = self.n_states();
        let eye = DMatrix::<f64>::identity(n, n);
        let half = 0.5 * t_s;
        let ima = &eye - &self.a * half;
        let lu = ima.clone().lu();
        let ad = lu
            .solve(&(&eye + &self.a * half))
            .ok_or_else(|| Error::invalid("I - A*t_s/2 is singular"))?;
        let bd = lu
            .solve(&(&self.b * t_s))
            .ok_or_else(|| Error::invalid("I - A*t_s/2 is singular"))?;
        let cd = ima
            .transpose()
            .lu()
            .solve(&self.c.transpose())
            .ok_or_else(|| Error::invalid("I - A*t_s/2 is singular"))?
            .transpose();
        let dd = &self.d + &self.c * &bd * 0.5;
        Ok(DiscreteStateSpace {
            a: ad,
            b: bd,
            c: cd,
            d: dd,
            t_s,
        })
    }
}

/// Discrete-time system `x[k+1] = A x[k] + B u[k]`, `y[k] = C x[k] + D u[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub t_s: f64,
}

impl DiscreteStateSpace {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// Output for the current state and input, then advances `x` in place.
    pub fn step(&self, x: &mut DVector<f64>, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        let y = (&self.c * &*x + &self.d * &u)[(0, 0)];
        *x = &self.a * &*x + &self.b * u;
        y
    }

    pub fn freq_response(&self, z: C64) -> DMatrix<C64> {
        let n = self.n_states();
        let a = self.a.map(|v| C64::new(v, 0.0));
        let b = self.b.map(|v| C64::new(v, 0.0));
        let c = self.c.map(|v| C64::new(v, 0.0));
        let d = self.d.map(|v| C64::new(v, 0.0));
        let zi_a = DMatrix::<C64>::identity(n, n) * z - a;
        let x = zi_a
            .lu()
            .solve(&b)
            .unwrap_or_else(|| DMatrix::from_element(n, b.ncols(), C64::new(f64::NAN, f64::NAN)));
        c * x + d
    }

    /// Largest eigenvalue modulus of the transition matrix.
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max)
    }
}
