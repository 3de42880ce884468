//! The piecewise-smooth agent and its pointwise Filippov calculus.
//!
//! An agent is `x' = f⁻(x)` where `h(x) < 0` and `x' = f⁺(x)` where `h(x) > 0`.
//! On the switching manifold `Σ = {h = 0}` attractive points slide with the
//! Filippov convex combination `f_Σ = (1-α) f⁻ + α f⁺`, where α makes `f_Σ`
//! tangent to `Σ`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::EventKind;

pub type State = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub type VectorFn = Arc<dyn Fn(&State) -> State + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&State) -> Matrix + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&State) -> f64 + Send + Sync>;

/// Relative width of the band inside which `∇hᵀf±` counts as zero.
pub const CLASSIFY_TOL: f64 = 1e-9;
/// Largest `|h(x)|` accepted by [`AgentModel::classify_point`].
pub const ON_MANIFOLD_TOL: f64 = 1e-8;

/// Which dynamics currently govern an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    MinusRegion,
    PlusRegion,
    Sliding,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::MinusRegion => "minus",
            Mode::PlusRegion => "plus",
            Mode::Sliding => "sliding",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingDirection {
    MinusToPlus,
    PlusToMinus,
}

/// Sign pattern of `(∇hᵀf⁻, ∇hᵀf⁺)` at a point of `Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointKind {
    TransversalCrossingUp,
    TransversalCrossingDown,
    AttractiveSliding,
    TangentialExitMinus,
    TangentialExitPlus,
    Repulsive,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointClass {
    pub kind: PointKind,
    /// `∇h(x)ᵀ f⁻(x)`
    pub minus_normal: f64,
    /// `∇h(x)ᵀ f⁺(x)`
    pub plus_normal: f64,
}

/// Classify a pair of normal components. `band` is the absolute zero band.
pub fn classify_normals(minus_normal: f64, plus_normal: f64, band: f64) -> PointKind {
    let sign = |s: f64| {
        if s.abs() <= band {
            0
        } else if s > 0.0 {
            1
        } else {
            -1
        }
    };
    match (sign(minus_normal), sign(plus_normal)) {
        (1, 1) => PointKind::TransversalCrossingUp,
        (-1, -1) => PointKind::TransversalCrossingDown,
        (1, -1) => PointKind::AttractiveSliding,
        (-1, 1) => PointKind::Repulsive,
        (0, -1) => PointKind::TangentialExitMinus,
        (1, 0) => PointKind::TangentialExitPlus,
        _ => PointKind::Degenerate,
    }
}

/// Zero band for normal components, `CLASSIFY_TOL·(1 + max ‖f±‖)`.
pub fn normal_band(f_minus: &State, f_plus: &State) -> f64 {
    CLASSIFY_TOL * (1.0 + f_minus.norm().max(f_plus.norm()))
}

/// A single piecewise-smooth agent with one switching function.
///
/// Immutable after construction; cloning shares the underlying evaluators.
#[derive(Clone)]
pub struct AgentModel {
    name: String,
    dim: usize,
    params: BTreeMap<String, f64>,
    field_minus: VectorFn,
    field_plus: VectorFn,
    jac_minus: Option<MatrixFn>,
    jac_plus: Option<MatrixFn>,
    switch: ScalarFn,
    switch_grad: VectorFn,
    switch_hess: Option<MatrixFn>,
}

impl fmt::Debug for AgentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("analytic_jacobians", &self.jac_minus.is_some())
            .finish()
    }
}

impl AgentModel {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        field_minus: VectorFn,
        field_plus: VectorFn,
        switch: ScalarFn,
        switch_grad: VectorFn,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            params: BTreeMap::new(),
            field_minus,
            field_plus,
            jac_minus: None,
            jac_plus: None,
            switch,
            switch_grad,
            switch_hess: None,
        }
    }

    pub fn with_jacobians(mut self, jac_minus: MatrixFn, jac_plus: MatrixFn) -> Self {
        self.jac_minus = Some(jac_minus);
        self.jac_plus = Some(jac_plus);
        self
    }

    /// Hessian of `h`. Without it the Hessian is taken to be zero, which is exact for affine `h`.
    pub fn with_switch_hessian(mut self, hess: MatrixFn) -> Self {
        self.switch_hess = Some(hess);
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jac_minus.is_some() && self.jac_plus.is_some()
    }

    pub fn check_dim(&self, x: &State) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn f_minus(&self, x: &State) -> State {
        (self.field_minus)(x)
    }

    pub fn f_plus(&self, x: &State) -> State {
        (self.field_plus)(x)
    }

    pub fn h(&self, x: &State) -> f64 {
        (self.switch)(x)
    }

    pub fn grad_h(&self, x: &State) -> State {
        (self.switch_grad)(x)
    }

    pub fn hess_h(&self, x: &State) -> Matrix {
        match &self.switch_hess {
            Some(hess) => hess(x),
            None => Matrix::zeros(self.dim, self.dim),
        }
    }

    pub fn jac_minus(&self, x: &State) -> Matrix {
        match &self.jac_minus {
            Some(jac) => jac(x),
            None => central_difference(&*self.field_minus, x),
        }
    }

    pub fn jac_plus(&self, x: &State) -> Matrix {
        match &self.jac_plus {
            Some(jac) => jac(x),
            None => central_difference(&*self.field_plus, x),
        }
    }

    /// `f⁻`, `f⁺` or the Filippov sliding field, depending on `mode`.
    ///
    /// In `Sliding` mode `x` is expected to lie on `Σ` (up to drift); the formula
    /// itself is evaluated wherever its denominator is nonzero.
    pub fn eval_field(&self, mode: Mode, x: &State) -> Result<State> {
        self.check_dim(x)?;
        match mode {
            Mode::MinusRegion => Ok(self.f_minus(x)),
            Mode::PlusRegion => Ok(self.f_plus(x)),
            Mode::Sliding => {
                let fm = self.f_minus(x);
                let fp = self.f_plus(x);
                if fm == fp {
                    // every convex combination of equal vectors is the same vector
                    return Ok(fm);
                }
                let alpha = self.alpha_from(&self.grad_h(x), &fm, &fp)?;
                Ok(convex(&fm, &fp, alpha))
            }
        }
    }

    /// Filippov coefficient `α = ∇hᵀf⁻ / ∇hᵀ(f⁻ - f⁺)`.
    pub fn sliding_alpha(&self, x: &State) -> Result<f64> {
        self.check_dim(x)?;
        self.alpha_from(&self.grad_h(x), &self.f_minus(x), &self.f_plus(x))
    }

    fn alpha_from(&self, grad: &State, fm: &State, fp: &State) -> Result<f64> {
        let numer = grad.dot(fm);
        let denom = grad.dot(fm) - grad.dot(fp);
        if denom.abs() <= normal_band(fm, fp) {
            return Err(Error::DegenerateDenominator { value: denom });
        }
        Ok(numer / denom)
    }

    /// Jacobian of the sliding field,
    /// `Df_Σ = (1-α) Df⁻ + α Df⁺ + (f⁺ - f⁻) ∇αᵀ`,
    /// with `∇α` from the quotient rule (the Hessian of `h` enters through `∇(∇h)`).
    pub fn sliding_jacobian(&self, x: &State) -> Result<Matrix> {
        self.check_dim(x)?;
        let grad = self.grad_h(x);
        let hess = self.hess_h(x);
        let fm = self.f_minus(x);
        let fp = self.f_plus(x);
        let dfm = self.jac_minus(x);
        let dfp = self.jac_plus(x);
        if fm == fp && dfm == dfp {
            return Ok(dfm);
        }

        let numer = grad.dot(&fm);
        let denom = numer - grad.dot(&fp);
        if denom.abs() <= normal_band(&fm, &fp) {
            return Err(Error::DegenerateDenominator { value: denom });
        }
        let alpha = numer / denom;

        let diff = &fm - &fp;
        let grad_numer = dfm.tr_mul(&grad) + &hess * &fm;
        let grad_denom = (&dfm - &dfp).tr_mul(&grad) + &hess * &diff;
        let grad_alpha = (grad_numer * denom - grad_denom * numer) / (denom * denom);

        Ok(dfm * (1.0 - alpha) + dfp * alpha + (&fp - &fm) * grad_alpha.transpose())
    }

    /// Classify an on-manifold point by the signs of `∇hᵀf⁻` and `∇hᵀf⁺`.
    ///
    /// Tangential exits are only candidates here; the time-derivative
    /// condition is checked by the integrator.
    pub fn classify_point(&self, x: &State) -> Result<PointClass> {
        self.check_dim(x)?;
        let residual = self.h(x);
        if residual.abs() > ON_MANIFOLD_TOL * (1.0 + x.norm()) {
            return Err(Error::OffManifold { residual });
        }
        let grad = self.grad_h(x);
        let fm = self.f_minus(x);
        let fp = self.f_plus(x);
        let minus_normal = grad.dot(&fm);
        let plus_normal = grad.dot(&fp);
        Ok(PointClass {
            kind: classify_normals(minus_normal, plus_normal, normal_band(&fm, &fp)),
            minus_normal,
            plus_normal,
        })
    }

    /// Saltation matrix of a transversal crossing,
    /// `S = I + (f_out - f_in) ∇hᵀ / ∇hᵀf_in`.
    pub fn saltation_crossing(&self, x: &State, direction: CrossingDirection) -> Result<Matrix> {
        let class = self.classify_point(x)?;
        let (expected, f_in, f_out) = match direction {
            CrossingDirection::MinusToPlus => {
                (PointKind::TransversalCrossingUp, self.f_minus(x), self.f_plus(x))
            }
            CrossingDirection::PlusToMinus => {
                (PointKind::TransversalCrossingDown, self.f_plus(x), self.f_minus(x))
            }
        };
        if class.kind != expected {
            return Err(Error::WrongClassification {
                expected: format!("{expected:?}"),
                found: format!("{:?}", class.kind),
            });
        }
        Ok(rank_one_saltation(&self.grad_h(x), &f_in, &f_out))
    }

    /// Saltation matrix for reaching an attractive sliding point from `from`,
    /// `S = I + (f_Σ - f_in) ∇hᵀ / ∇hᵀf_in`. Its rows are annihilated by `∇hᵀ`.
    pub fn saltation_slide_entry(&self, x: &State, from: Mode) -> Result<Matrix> {
        let class = self.classify_point(x)?;
        if class.kind != PointKind::AttractiveSliding {
            return Err(Error::WrongClassification {
                expected: format!("{:?}", PointKind::AttractiveSliding),
                found: format!("{:?}", class.kind),
            });
        }
        let f_in = match from {
            Mode::MinusRegion => self.f_minus(x),
            Mode::PlusRegion => self.f_plus(x),
            Mode::Sliding => {
                return Err(Error::InvalidInput(
                    "sliding entry must come from a region".into(),
                ))
            }
        };
        let grad = self.grad_h(x);
        let fm = self.f_minus(x);
        let fp = self.f_plus(x);
        let normal_in = grad.dot(&f_in);
        if normal_in.abs() <= normal_band(&fm, &fp) {
            return Err(Error::DegenerateDenominator { value: normal_in });
        }
        let f_sliding = self.eval_field(Mode::Sliding, x)?;
        Ok(rank_one_saltation(&grad, &f_in, &f_sliding))
    }

    /// Saltation matrix attached to an event of the given kind.
    /// Tangential exits need none: the sliding and exit fields agree there.
    pub fn saltation_for(&self, kind: EventKind, x: &State) -> Result<Matrix> {
        match kind {
            EventKind::CrossMinusToPlus => self.saltation_crossing(x, CrossingDirection::MinusToPlus),
            EventKind::CrossPlusToMinus => self.saltation_crossing(x, CrossingDirection::PlusToMinus),
            EventKind::SlideEntryFromMinus => self.saltation_slide_entry(x, Mode::MinusRegion),
            EventKind::SlideEntryFromPlus => self.saltation_slide_entry(x, Mode::PlusRegion),
            EventKind::TangentialExitToMinus | EventKind::TangentialExitToPlus => {
                Ok(Matrix::identity(self.dim, self.dim))
            }
        }
    }

    /// Jacobian of the field governing `mode`.
    pub fn mode_jacobian(&self, mode: Mode, x: &State) -> Result<Matrix> {
        match mode {
            Mode::MinusRegion => Ok(self.jac_minus(x)),
            Mode::PlusRegion => Ok(self.jac_plus(x)),
            Mode::Sliding => self.sliding_jacobian(x),
        }
    }

    /// Time derivative of `∇h(x)ᵀ (g(x) + c)` along `x' = v`, `c' = c_dot`,
    /// where `g` is `f⁻` (`toward_minus`) or `f⁺`.
    pub(crate) fn normal_rate(
        &self,
        x: &State,
        offset: &State,
        velocity: &State,
        offset_rate: &State,
        toward_minus: bool,
    ) -> f64 {
        let grad = self.grad_h(x);
        let (f, df) = if toward_minus {
            (self.f_minus(x), self.jac_minus(x))
        } else {
            (self.f_plus(x), self.jac_plus(x))
        };
        let gradient = df.tr_mul(&grad) + self.hess_h(x) * (f + offset);
        gradient.dot(velocity) + grad.dot(offset_rate)
    }
}

/// `I + (f_out - f_in) ∇hᵀ / (∇hᵀ f_in)`
pub fn rank_one_saltation(grad: &State, f_in: &State, f_out: &State) -> Matrix {
    let n = grad.len();
    let denom = grad.dot(f_in);
    Matrix::identity(n, n) + (f_out - f_in) * grad.transpose() / denom
}

pub(crate) fn convex(fm: &State, fp: &State, alpha: f64) -> State {
    fm * (1.0 - alpha) + fp * alpha
}

/// Central finite-difference Jacobian with step `ε^(1/3)·(1 + ‖x‖)`.
pub fn central_difference(f: &(dyn Fn(&State) -> State + Send + Sync), x: &State) -> Matrix {
    let n = x.len();
    let step = f64::EPSILON.cbrt() * (1.0 + x.norm());
    let mut jac = Matrix::zeros(n, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for j in 0..n {
        xp[j] = x[j] + step;
        xm[j] = x[j] - step;
        let col = (f(&xp) - f(&xm)) / (2.0 * step);
        jac.set_column(j, &col);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::galvanetto;
    use nalgebra::dvector;

    fn affine_model(fm: State, fp: State, grad: State) -> AgentModel {
        let n = grad.len();
        let g = grad.clone();
        let g2 = grad.clone();
        AgentModel::new(
            "affine",
            n,
            Arc::new(move |_x: &State| fm.clone()),
            Arc::new(move |_x: &State| fp.clone()),
            Arc::new(move |x: &State| g.dot(x)),
            Arc::new(move |_x: &State| g2.clone()),
        )
    }

    #[test]
    fn galvanetto_sliding_field_at_stick_point() {
        let m = galvanetto(3.0, 0.15);
        let f = m.eval_field(Mode::Sliding, &dvector![0.0, 0.15]).unwrap();
        assert!((f[0] - 0.15).abs() < 1e-15);
        assert!(f[1].abs() < 1e-15);
    }

    #[test]
    fn galvanetto_plus_field() {
        let m = galvanetto(3.0, 0.15);
        let f = m.eval_field(Mode::PlusRegion, &dvector![0.0, 0.15]).unwrap();
        assert_eq!(f, dvector![0.15, -1.0]);
    }

    #[test]
    fn equal_fields_slide_as_either() {
        let v = dvector![0.3, 1.0];
        let m = affine_model(v.clone(), v.clone(), dvector![0.0, 1.0]);
        assert_eq!(m.eval_field(Mode::Sliding, &dvector![0.0, 0.0]).unwrap(), v);
        assert!(matches!(
            m.sliding_alpha(&dvector![0.0, 0.0]),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn alpha_values() {
        let m = galvanetto(3.0, 0.15);
        assert!((m.sliding_alpha(&dvector![0.0, 0.15]).unwrap() - 0.5).abs() < 1e-15);
        // ∇hᵀf⁻ = 0
        let m2 = affine_model(dvector![1.0, 0.0], dvector![0.0, -1.0], dvector![0.0, 1.0]);
        assert_eq!(m2.sliding_alpha(&dvector![0.0, 0.0]).unwrap(), 0.0);
        // symmetric normals
        let m3 = affine_model(dvector![2.0, 3.0], dvector![-1.0, -3.0], dvector![0.0, 1.0]);
        assert_eq!(m3.sliding_alpha(&dvector![0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn sliding_jacobian_matches_finite_differences() {
        let m = galvanetto(3.0, 0.15);
        for y1 in [-0.7, 0.0, 0.4] {
            let x = dvector![y1, 0.15];
            let analytic = m.sliding_jacobian(&x).unwrap();
            let step = 1e-6;
            for j in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += step;
                xm[j] -= step;
                let col = (m.eval_field(Mode::Sliding, &xp).unwrap()
                    - m.eval_field(Mode::Sliding, &xm).unwrap())
                    / (2.0 * step);
                for i in 0..2 {
                    assert!((analytic[(i, j)] - col[i]).abs() < 1e-8, "{i},{j}");
                }
            }
            assert_eq!(analytic[(1, 0)], 0.0);
        }
    }

    #[test]
    fn sliding_jacobian_equal_fields_is_field_jacobian() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.5]);
        let (a1, a2, a3, a4) = (a.clone(), a.clone(), a.clone(), a.clone());
        let m = AgentModel::new(
            "linear",
            2,
            Arc::new(move |x: &State| &a1 * x + dvector![0.0, 1.0]),
            Arc::new(move |x: &State| &a2 * x + dvector![0.0, 1.0]),
            Arc::new(|x: &State| x[1]),
            Arc::new(|_x: &State| dvector![0.0, 1.0]),
        )
        .with_jacobians(Arc::new(move |_| a3.clone()), Arc::new(move |_| a4.clone()));
        assert_eq!(m.sliding_jacobian(&dvector![0.2, 0.0]).unwrap(), a);
    }

    #[test]
    fn sliding_jacobian_shared_linear_part() {
        // Df⁺ = Df⁻ and f⁺ - f⁻ constant: the α-gradient term removes the normal row
        let b = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.5]);
        let (b1, b2, b3, b4) = (b.clone(), b.clone(), b.clone(), b.clone());
        let m = AgentModel::new(
            "linear",
            2,
            Arc::new(move |x: &State| &b1 * x + dvector![0.0, 1.0]),
            Arc::new(move |x: &State| &b2 * x + dvector![0.0, -1.0]),
            Arc::new(|x: &State| x[1]),
            Arc::new(|_x: &State| dvector![0.0, 1.0]),
        )
        .with_jacobians(Arc::new(move |_| b3.clone()), Arc::new(move |_| b4.clone()));
        let j = m.sliding_jacobian(&dvector![0.2, 0.0]).unwrap();
        assert!((j[(0, 1)] - 1.0).abs() < 1e-14 && j[(0, 0)].abs() < 1e-14);
        assert!(j[(1, 0)].abs() < 1e-14 && j[(1, 1)].abs() < 1e-14);
    }

    #[test]
    fn constant_fields_affine_switch_give_zero_sliding_jacobian() {
        let m = affine_model(dvector![1.0, 2.0], dvector![3.0, -1.0], dvector![0.0, 1.0]);
        let j = m.sliding_jacobian(&dvector![0.3, 0.0]).unwrap();
        assert!(j.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn classification_of_galvanetto_points() {
        let m = galvanetto(3.0, 0.15);
        let c = m.classify_point(&dvector![0.0, 0.15]).unwrap();
        assert_eq!(c.kind, PointKind::AttractiveSliding);
        assert_eq!((c.minus_normal, c.plus_normal), (1.0, -1.0));
        let c = m.classify_point(&dvector![-3.0, 0.15]).unwrap();
        assert_eq!(c.kind, PointKind::TransversalCrossingUp);
        assert_eq!((c.minus_normal, c.plus_normal), (4.0, 2.0));
        let c = m.classify_point(&dvector![1.0, 0.15]).unwrap();
        assert_eq!(c.kind, PointKind::TangentialExitMinus);
        assert_eq!((c.minus_normal, c.plus_normal), (0.0, -2.0));
        assert!(matches!(
            m.classify_point(&dvector![0.0, 0.3]),
            Err(Error::OffManifold { .. })
        ));
    }

    #[test]
    fn classification_sign_table() {
        assert_eq!(classify_normals(-1.0, 1.0, 1e-9), PointKind::Repulsive);
        assert_eq!(classify_normals(-1.0, -1.0, 1e-9), PointKind::TransversalCrossingDown);
        assert_eq!(classify_normals(1.0, 1e-12, 1e-9), PointKind::TangentialExitPlus);
        assert_eq!(classify_normals(0.0, 1.0, 1e-9), PointKind::Degenerate);
        assert_eq!(classify_normals(0.0, 0.0, 1e-9), PointKind::Degenerate);
        assert_eq!(classify_normals(-1.0, 0.0, 1e-9), PointKind::Degenerate);
    }

    #[test]
    fn crossing_saltation_galvanetto() {
        let m = galvanetto(3.0, 0.15);
        let s = m
            .saltation_crossing(&dvector![-3.0, 0.15], CrossingDirection::MinusToPlus)
            .unwrap();
        assert_eq!(s, Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]));
        assert!(matches!(
            m.saltation_crossing(&dvector![-3.0, 0.15], CrossingDirection::PlusToMinus),
            Err(Error::WrongClassification { .. })
        ));
    }

    #[test]
    fn crossing_saltation_with_equal_fields_is_identity() {
        let m = affine_model(dvector![1.0, 2.0], dvector![1.0, 2.0], dvector![0.0, 1.0]);
        let s = m
            .saltation_crossing(&dvector![0.0, 0.0], CrossingDirection::MinusToPlus)
            .unwrap();
        assert_eq!(s, Matrix::identity(2, 2));
    }

    #[test]
    fn slide_entry_saltation_galvanetto() {
        let m = galvanetto(3.0, 0.15);
        for y1 in [-0.9, -0.2, 0.0, 0.6] {
            let x = dvector![y1, 0.15];
            let s = m.saltation_slide_entry(&x, Mode::PlusRegion).unwrap();
            let expected = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
            assert!((s - expected).norm() < 1e-12);
            let s = m.saltation_slide_entry(&x, Mode::MinusRegion).unwrap();
            assert!((m.grad_h(&x).transpose() * s).norm() < 1e-12);
        }
        assert_eq!(
            m.saltation_for(EventKind::TangentialExitToMinus, &dvector![1.0, 0.15])
                .unwrap(),
            Matrix::identity(2, 2)
        );
    }

    #[test]
    fn dimension_mismatch() {
        let m = galvanetto(3.0, 0.15);
        assert!(matches!(
            m.eval_field(Mode::MinusRegion, &dvector![0.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        let m = galvanetto(3.0, 0.15);
        let x = dvector![0.3, -0.1];
        let fd = central_difference(&|x: &State| m.f_minus(x), &x);
        assert!((fd - m.jac_minus(&x)).norm() < 1e-8);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn random_affine(
            am: [f64; 4],
            ap: [f64; 4],
            bm: [f64; 2],
            bp: [f64; 2],
            c: [f64; 2],
        ) -> AgentModel {
            let amat = Matrix::from_row_slice(2, 2, &am);
            let pmat = Matrix::from_row_slice(2, 2, &ap);
            let bm = State::from_row_slice(&bm);
            let bp = State::from_row_slice(&bp);
            let c = State::from_row_slice(&c);
            let c2 = c.clone();
            AgentModel::new(
                "random",
                2,
                Arc::new(move |x: &State| &amat * x + &bm),
                Arc::new(move |x: &State| &pmat * x + &bp),
                Arc::new(move |x: &State| c.dot(x)),
                Arc::new(move |_x: &State| c2.clone()),
            )
        }

        proptest! {
            #[test]
            fn saltation_maps_incoming_to_outgoing_field(
                am in prop::array::uniform4(-2.0..2.0f64),
                ap in prop::array::uniform4(-2.0..2.0f64),
                bm in prop::array::uniform2(-2.0..2.0f64),
                bp in prop::array::uniform2(-2.0..2.0f64),
                c in prop::array::uniform2(0.2..2.0f64),
                t in -1.0..1.0f64,
            ) {
                let m = random_affine(am, ap, bm, bp, c);
                // a point on cᵀx = 0
                let x = dvector![-c[1] * t, c[0] * t];
                let class = m.classify_point(&x).unwrap();
                let grad = m.grad_h(&x);
                match class.kind {
                    PointKind::TransversalCrossingUp => {
                        let s = m.saltation_crossing(&x, CrossingDirection::MinusToPlus).unwrap();
                        let err = (&s * m.f_minus(&x) - m.f_plus(&x)).norm();
                        prop_assert!(err <= 1e-12 * (1.0 + m.f_plus(&x).norm()));
                    }
                    PointKind::TransversalCrossingDown => {
                        let s = m.saltation_crossing(&x, CrossingDirection::PlusToMinus).unwrap();
                        let err = (&s * m.f_plus(&x) - m.f_minus(&x)).norm();
                        prop_assert!(err <= 1e-12 * (1.0 + m.f_minus(&x).norm()));
                    }
                    PointKind::AttractiveSliding => {
                        let fs = m.eval_field(Mode::Sliding, &x).unwrap();
                        prop_assert!(grad.dot(&fs).abs() <= 1e-12 * (1.0 + fs.norm()));
                        for from in [Mode::MinusRegion, Mode::PlusRegion] {
                            let s = m.saltation_slide_entry(&x, from).unwrap();
                            let f_in = m.eval_field(from, &x).unwrap();
                            let scale = 1.0 + f_in.norm() / grad.dot(&f_in).abs();
                            prop_assert!((&s * &f_in - &fs).norm() <= 1e-12 * scale * (1.0 + fs.norm()));
                            prop_assert!((grad.transpose() * &s).norm() <= 1e-12 * scale);
                        }
                    }
                    _ => {}
                }
            }

            #[test]
            fn sliding_field_is_convex_combination(
                am in prop::array::uniform4(-2.0..2.0f64),
                ap in prop::array::uniform4(-2.0..2.0f64),
                bm in prop::array::uniform2(-2.0..2.0f64),
                bp in prop::array::uniform2(-2.0..2.0f64),
                c in prop::array::uniform2(0.2..2.0f64),
                t in -1.0..1.0f64,
            ) {
                let m = random_affine(am, ap, bm, bp, c);
                let x = dvector![-c[1] * t, c[0] * t];
                if let Ok(alpha) = m.sliding_alpha(&x) {
                    let fs = m.eval_field(Mode::Sliding, &x).unwrap();
                    prop_assert_eq!(fs, convex(&m.f_minus(&x), &m.f_plus(&x), alpha));
                }
            }
        }
    }
}
