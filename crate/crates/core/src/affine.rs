//! Rotation-less motion of a homogeneously deformable (affinely rigid) body.
//!
//! Configurations are `ξ = r + φ·a`. The constraint asks the affine
//! velocity `Ω = φ̇φ⁻¹` to be `g`-symmetric. Two dynamics are offered:
//!
//! * vakonomic: substitute the constraint into `T_int` through the polar
//!   decomposition `φ = UA` and vary the resulting Lagrangian over
//!   `η`-symmetric `A`;
//! * d'Alembert: vary the unconstrained Lagrangian over `φ` and impose the
//!   symmetry of `gΩ` with ideal (Appell-Chetaev) reactions.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::constraints::{ConstraintKind, ConstraintSet};
use crate::dalembert::DalembertSystem;
use crate::integrate::{self, Dynamics, IntegratorConfig, SimulationResult, Unconstrained};
use crate::kernel::{constant, inverse_hd, lift_matrix, matmul_hd, Args, Field, HD};
use crate::lagrangian::LagrangianModel;
use crate::vakonomic::AugmentedState;
use crate::{Error, Matrix, Result, Vector};

/// Smallest accepted `det φ`.
pub const DET_MIN: f64 = 1e-10;
/// Tolerance of the structural checks on metrics and factors.
const STRUCTURE_TOL: f64 = 1e-8;

/// Mass, co-moving inertia `J` and the spatial and material metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaData {
    pub mass: f64,
    pub j: Matrix,
    pub g: Matrix,
    pub eta: Matrix,
}

fn require_spd(m: &Matrix, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{what} must be square")));
    }
    if (m - m.transpose()).amax() > STRUCTURE_TOL * m.amax().max(1.0) {
        return Err(Error::Config(format!("{what} must be symmetric")));
    }
    let min_eigenvalue = m.clone().symmetric_eigen().eigenvalues.min();
    if !(min_eigenvalue > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue });
    }
    Ok(())
}

impl InertiaData {
    pub fn new(mass: f64, j: Matrix, g: Matrix, eta: Matrix) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::Config(format!("total mass must be positive, got {mass}")));
        }
        let n = j.nrows();
        if g.shape() != (n, n) || eta.shape() != (n, n) {
            return Err(Error::Dimension("J, g and η must have the same size".into()));
        }
        require_spd(&j, "J")?;
        require_spd(&g, "g")?;
        require_spd(&eta, "η")?;
        Ok(InertiaData { mass, j, g, eta })
    }

    /// Unit mass, `J = g = η = I`.
    pub fn isotropic(n: usize) -> Self {
        InertiaData {
            mass: 1.0,
            j: Matrix::identity(n, n),
            g: Matrix::identity(n, n),
            eta: Matrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }
}

type EnergyFn = dyn Fn(&DMatrix<HD>) -> HD + Send + Sync;

/// Potential energy as a function of the Green tensor `G`.
#[derive(Clone)]
pub struct GreenPotential(Arc<EnergyFn>);

impl std::fmt::Debug for GreenPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("GreenPotential")
    }
}

impl GreenPotential {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&DMatrix<HD>) -> HD + Send + Sync + 'static,
    {
        GreenPotential(Arc::new(f))
    }

    /// `(k/4)·tr((G − η)η⁻¹(G − η)η⁻¹)`, minimal at `G = η`.
    pub fn saint_venant(k: f64, eta: &Matrix) -> Result<Self> {
        let eta_inv = eta.clone().try_inverse().ok_or(Error::SingularMatrix)?;
        let eta_hd = lift_matrix(eta);
        let eta_inv = lift_matrix(&eta_inv);
        Ok(GreenPotential::new(move |g| {
            let e = g - &eta_hd;
            let p = matmul_hd(&matmul_hd(&matmul_hd(&e, &eta_inv), &e), &eta_inv);
            trace_hd(&p) * (0.25 * k)
        }))
    }

    pub fn eval_hd(&self, g: &DMatrix<HD>) -> HD {
        (self.0)(g)
    }

    pub fn eval(&self, g: &Matrix) -> f64 {
        (self.0)(&lift_matrix(g)).re
    }
}

fn trace_hd(m: &DMatrix<HD>) -> HD {
    (0..m.nrows()).fold(constant(0.0), |acc, i| acc + m[(i, i)])
}

/// `η_KL X^K_A Y^L_B J^{AB} = tr(Xᵀ η Y J)`.
fn contract_hd(x: &DMatrix<HD>, y: &DMatrix<HD>, eta: &DMatrix<HD>, j: &DMatrix<HD>) -> HD {
    trace_hd(&matmul_hd(&matmul_hd(&matmul_hd(&x.transpose(), eta), y), j))
}

fn contract(x: &Matrix, y: &Matrix, eta: &Matrix, j: &Matrix) -> f64 {
    (x.transpose() * eta * y * j).trace()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineConfiguration {
    pub r: Vector,
    pub phi: Matrix,
    pub r_dot: Vector,
    pub phi_dot: Matrix,
}

impl AffineConfiguration {
    pub fn new(r: Vector, phi: Matrix, r_dot: Vector, phi_dot: Matrix) -> Result<Self> {
        let n = r.len();
        if phi.shape() != (n, n) || phi_dot.shape() != (n, n) || r_dot.len() != n {
            return Err(Error::Dimension("r, ṙ, φ and φ̇ must agree in size".into()));
        }
        if r.iter().chain(r_dot.iter()).chain(phi.iter()).chain(phi_dot.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Config("affine configuration has non-finite entries".into()));
        }
        let det = phi.determinant();
        if !(det > DET_MIN) {
            return Err(Error::NonPositiveDeterminant { det });
        }
        Ok(AffineConfiguration { r, phi, r_dot, phi_dot })
    }

    /// Rotation-less configuration with polar factor `A`, rate `Ȧ` and the
    /// rotator at the canonical isometry `U₀ = g^{-1/2}η^{1/2}` (the identity
    /// when `g = η`). The velocity `φ̇ = U₀(Ȧ + ω̂A)` with `ω̂ = ½[A⁻¹, Ȧ]`
    /// satisfies the symmetry constraint by construction.
    pub fn from_symmetric(body: &InertiaData, a: &Matrix, a_dot: &Matrix) -> Result<Self> {
        let n = body.dim();
        check_eta_symmetric(a, &body.eta, "A")?;
        check_eta_symmetric(a_dot, &body.eta, "Ȧ")?;
        let u0 = canonical_isometry(&body.g, &body.eta)?;
        let omega_hat = omega_hat_from_constraint(a, a_dot)?;
        let phi = &u0 * a;
        let phi_dot = &u0 * (a_dot + &omega_hat * a);
        Self::new(Vector::zeros(n), phi, Vector::zeros(n), phi_dot)
    }

    pub fn with_translation(mut self, r: Vector, r_dot: Vector) -> Result<Self> {
        if r.len() != self.r.len() || r_dot.len() != self.r.len() {
            return Err(Error::Dimension("translation has the wrong size".into()));
        }
        self.r = r;
        self.r_dot = r_dot;
        Ok(self)
    }
}

fn check_eta_symmetric(a: &Matrix, eta: &Matrix, what: &str) -> Result<()> {
    let s = eta * a;
    if (&s - s.transpose()).amax() > STRUCTURE_TOL * s.amax().max(1.0) {
        return Err(Error::Config(format!("{what} must be η-symmetric")));
    }
    Ok(())
}

/// Symmetric positive-definite square root and the eigen data behind it.
fn sym_sqrt(h: &Matrix) -> Result<(Matrix, Matrix, Vector)> {
    let h = (h + h.transpose()) * 0.5;
    let eig = h.symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.min();
    if !(min_eigenvalue > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue });
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let q = eig.eigenvectors;
    let r = &q * Matrix::from_diagonal(&roots) * q.transpose();
    Ok((r, q, roots))
}

/// `U₀ = g^{-1/2} η^{1/2}`, an `(η, g)`-isometry.
fn canonical_isometry(g: &Matrix, eta: &Matrix) -> Result<Matrix> {
    let (g_half, _, _) = sym_sqrt(g)?;
    let (eta_half, _, _) = sym_sqrt(eta)?;
    let g_half_inv = g_half.try_inverse().ok_or(Error::SingularMatrix)?;
    Ok(g_half_inv * eta_half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarFactors {
    pub u: Matrix,
    pub a: Matrix,
}

/// `φ = UA` with `UᵀgU = η` and `ηA` symmetric positive definite.
///
/// With `S = η^{1/2}` and `H = S⁻¹GS⁻¹` for the Green tensor `G = φᵀgφ`,
/// `A = S⁻¹H^{1/2}S` solves `A² = η⁻¹G` and is `η`-symmetric.
pub fn polar_decompose(phi: &Matrix, g: &Matrix, eta: &Matrix) -> Result<PolarFactors> {
    let det = phi.determinant();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let (s, _, _) = sym_sqrt(eta)?;
    let s_inv = s.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let green = green_tensor(phi, g);
    let (root, _, _) = sym_sqrt(&(&s_inv * green * &s_inv))?;
    let a = &s_inv * root * &s;
    let a_inv = a.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    Ok(PolarFactors { u: phi * a_inv, a })
}

/// Polar factors of `φ` together with `Ȧ` induced by `φ̇`.
pub fn polar_rate(phi: &Matrix, phi_dot: &Matrix, g: &Matrix, eta: &Matrix) -> Result<(PolarFactors, Matrix)> {
    let factors = polar_decompose(phi, g, eta)?;
    let (s, _, _) = sym_sqrt(eta)?;
    let s_inv = s.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let h = &s_inv * green_tensor(phi, g) * &s_inv;
    let g_dot = phi_dot.transpose() * g * phi + phi.transpose() * g * phi_dot;
    let h_dot = &s_inv * g_dot * &s_inv;
    // R Ṙ + Ṙ R = Ḣ for R = H^{1/2}, diagonal in the eigenbasis of H.
    let (_, q, roots) = sym_sqrt(&h)?;
    let hd = q.transpose() * h_dot * &q;
    let n = roots.len();
    let rd = Matrix::from_fn(n, n, |i, j| hd[(i, j)] / (roots[i] + roots[j]));
    let r_dot = &q * rd * q.transpose();
    Ok((factors, &s_inv * r_dot * &s))
}

/// Green deformation tensor `G = φᵀgφ`.
pub fn green_tensor(phi: &Matrix, g: &Matrix) -> Matrix {
    phi.transpose() * g * phi
}

/// Spatial and co-moving affine velocities `(φ̇φ⁻¹, φ⁻¹φ̇)`.
pub fn affine_velocity(phi: &Matrix, phi_dot: &Matrix) -> Result<(Matrix, Matrix)> {
    let inv = phi.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    Ok((phi_dot * &inv, inv * phi_dot))
}

/// `Ω − g⁻¹Ωᵀg`; zero exactly when `Ω` is `g`-symmetric.
pub fn symmetry_residual(omega: &Matrix, g: &Matrix) -> Result<Matrix> {
    let g_inv = g.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    Ok(omega - g_inv * omega.transpose() * g)
}

/// Co-moving angular velocity of the rotator, `U⁻¹U̇`.
pub fn omega_hat_from_rotator(u: &Matrix, u_dot: &Matrix, g: &Matrix, eta: &Matrix) -> Result<Matrix> {
    let defect = (u.transpose() * g * u - eta).amax();
    if defect > STRUCTURE_TOL * eta.amax().max(1.0) {
        return Err(Error::NotOrthogonal { defect });
    }
    let inv = u.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    Ok(inv * u_dot)
}

/// The constraint-implied angular velocity `½[A⁻¹, Ȧ]`.
pub fn omega_hat_from_constraint(a: &Matrix, a_dot: &Matrix) -> Result<Matrix> {
    let inv = a.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    Ok((&inv * a_dot - a_dot * &inv) * 0.5)
}

/// Internal kinetic energy in polar variables, term by term:
/// `½η(Ȧ,Ȧ)J + η(ω̂A,Ȧ)J + ½η(ω̂A,ω̂A)J`.
pub fn kinetic_internal(a: &Matrix, a_dot: &Matrix, omega_hat: &Matrix, j: &Matrix, eta: &Matrix) -> f64 {
    let wa = omega_hat * a;
    0.5 * contract(a_dot, a_dot, eta, j) + contract(&wa, a_dot, eta, j) + 0.5 * contract(&wa, &wa, eta, j)
}

/// Kinetic part of the vakonomic Lagrangian with `B = A⁻¹ȦA`:
/// `⅛η(Ȧ,Ȧ)J + ¼η(B,Ȧ)J + ⅛η(B,B)J`.
pub fn vakonomic_kinetic(a: &Matrix, a_dot: &Matrix, j: &Matrix, eta: &Matrix) -> Result<f64> {
    let inv = a.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let b = inv * a_dot * a;
    Ok(0.125 * contract(a_dot, a_dot, eta, j) + 0.25 * contract(&b, a_dot, eta, j) + 0.125 * contract(&b, &b, eta, j))
}

/// `L^vak = T^vak(A, Ȧ) − 𝒱(G)` with `G = AᵀηA`.
pub fn vakonomic_lagrangian(a: &Matrix, a_dot: &Matrix, j: &Matrix, eta: &Matrix, potential: &GreenPotential) -> Result<f64> {
    let green = a.transpose() * eta * a;
    Ok(vakonomic_kinetic(a, a_dot, j, eta)? - potential.eval(&green))
}

/// Derived kinematic quantities of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    /// Spatial affine velocity `Ω = φ̇φ⁻¹`.
    pub omega: Matrix,
    /// Co-moving affine velocity `Ω̂ = φ⁻¹φ̇`.
    pub omega_co: Matrix,
    /// Rotator angular velocity `ω̂ = U⁻¹U̇`.
    pub omega_hat: Matrix,
    pub green: Matrix,
}

pub fn deformation_state(body: &InertiaData, c: &AffineConfiguration) -> Result<DeformationState> {
    let (omega, omega_co) = affine_velocity(&c.phi, &c.phi_dot)?;
    let (factors, a_dot) = polar_rate(&c.phi, &c.phi_dot, &body.g, &body.eta)?;
    // φ̇ = U̇A + UȦ ⇒ U̇ = (φ̇ − UȦ)A⁻¹
    let a_inv = factors.a.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let u_dot = (&c.phi_dot - &factors.u * a_dot) * a_inv;
    let omega_hat = omega_hat_from_rotator(&factors.u, &u_dot, &body.g, &body.eta)?;
    Ok(DeformationState { omega, omega_co, omega_hat, green: green_tensor(&c.phi, &body.g) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AffineFormulation {
    Vakonomic,
    Dalembert,
}

/// Index pairs `(i, j)`, `i ≤ j`, of the independent entries of a symmetric
/// matrix.
fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

fn symmetric_from(entries: &[HD], pairs: &[(usize, usize)], n: usize) -> DMatrix<HD> {
    let mut m = DMatrix::from_element(n, n, constant(0.0));
    for (k, &(i, j)) in pairs.iter().enumerate() {
        m[(i, j)] = entries[k];
        m[(j, i)] = entries[k];
    }
    m
}

fn nan_hd() -> HD {
    constant(f64::NAN)
}

fn translational(x: &Args<'_>, n: usize, mass: f64, g: &Matrix) -> HD {
    let mut t = constant(0.0);
    for i in 0..n {
        for j in 0..n {
            t += x.v[i] * x.v[j] * (0.5 * mass * g[(i, j)]);
        }
    }
    t
}

/// `L^vak` over `(r, S)` with `S = ηA` symmetric, parametrized by its upper
/// triangle.
struct VakonomicLagrangian {
    body: InertiaData,
    potential: GreenPotential,
    pairs: Vec<(usize, usize)>,
    eta_inv: Matrix,
}

impl Field for VakonomicLagrangian {
    fn outputs(&self) -> usize {
        1
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        let n = self.body.dim();
        let eta_inv = lift_matrix(&self.eta_inv);
        let a = matmul_hd(&eta_inv, &symmetric_from(&x.q[n..], &self.pairs, n));
        let a_dot = matmul_hd(&eta_inv, &symmetric_from(&x.v[n..], &self.pairs, n));
        let Some(a_inv) = inverse_hd(&a) else {
            out[0] = nan_hd();
            return;
        };
        let eta = lift_matrix(&self.body.eta);
        let j = lift_matrix(&self.body.j);
        let b = matmul_hd(&matmul_hd(&a_inv, &a_dot), &a);
        let kinetic = contract_hd(&a_dot, &a_dot, &eta, &j) * 0.125
            + contract_hd(&b, &a_dot, &eta, &j) * 0.25
            + contract_hd(&b, &b, &eta, &j) * 0.125;
        let green = matmul_hd(&matmul_hd(&a.transpose(), &eta), &a);
        out[0] = translational(x, n, self.body.mass, &self.body.g) + kinetic - self.potential.eval_hd(&green);
    }
}

/// `L = T_tr + ½tr(φ̇ᵀgφ̇J) − 𝒱(φᵀgφ)` over `(r, φ)` with `φ` row-major.
struct FreeAffineLagrangian {
    body: InertiaData,
    potential: GreenPotential,
}

fn matrix_from(entries: &[HD], n: usize) -> DMatrix<HD> {
    DMatrix::from_fn(n, n, |i, j| entries[i * n + j])
}

impl Field for FreeAffineLagrangian {
    fn outputs(&self) -> usize {
        1
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        let n = self.body.dim();
        let phi = matrix_from(&x.q[n..], n);
        let phi_dot = matrix_from(&x.v[n..], n);
        let g = lift_matrix(&self.body.g);
        let j = lift_matrix(&self.body.j);
        let kinetic = contract_hd(&phi_dot, &phi_dot, &g, &j) * 0.5;
        let green = matmul_hd(&matmul_hd(&phi.transpose(), &g), &phi);
        out[0] = translational(x, n, self.body.mass, &self.body.g) + kinetic - self.potential.eval_hd(&green);
    }
}

/// Skew part of `gΩ`: `(gφ̇φ⁻¹)_ij − (gφ̇φ⁻¹)_ji` for `i < j`.
struct SymmetryConstraint {
    n: usize,
    g: Matrix,
}

impl Field for SymmetryConstraint {
    fn outputs(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        let n = self.n;
        let phi = matrix_from(&x.q[n..], n);
        let phi_dot = matrix_from(&x.v[n..], n);
        let Some(inv) = inverse_hd(&phi) else {
            out.iter_mut().for_each(|o| *o = nan_hd());
            return;
        };
        let lowered = matmul_hd(&matmul_hd(&lift_matrix(&self.g), &phi_dot), &inv);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                out[k] = lowered[(i, j)] - lowered[(j, i)];
                k += 1;
            }
        }
    }
}

/// The vakonomic model in `(r, upper(ηA))` coordinates.
pub fn vakonomic_model(body: &InertiaData, potential: &GreenPotential) -> Result<LagrangianModel> {
    let n = body.dim();
    let pairs = upper_pairs(n);
    let eta_inv = body.eta.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let mut labels: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    labels.extend(pairs.iter().map(|(i, j)| format!("S{i}{j}")));
    let field = Arc::new(VakonomicLagrangian { body: body.clone(), potential: potential.clone(), pairs, eta_inv });
    LagrangianModel::new(labels.len(), field)?.with_labels(labels)
}

/// The d'Alembert system in `(r, φ)` coordinates with the symmetry
/// constraint as a Pfaffian set.
pub fn dalembert_system(body: &InertiaData, potential: &GreenPotential) -> Result<DalembertSystem> {
    let n = body.dim();
    if n < 2 {
        return Err(Error::Dimension("the symmetry constraint needs n ≥ 2".into()));
    }
    let mut labels: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    labels.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("phi{i}{j}"))));
    let field = Arc::new(FreeAffineLagrangian { body: body.clone(), potential: potential.clone() });
    let model = LagrangianModel::new(labels.len(), field)?.with_labels(labels)?;
    let cs = ConstraintSet::new(
        ConstraintKind::LinearPfaffian,
        n + n * n,
        Arc::new(SymmetryConstraint { n, g: body.g.clone() }),
    )?;
    DalembertSystem::new(model, cs)
}

/// Polar factor `A` encoded in a vakonomic coordinate vector.
fn decode_vakonomic(body: &InertiaData, x: &[f64]) -> Result<Matrix> {
    let n = body.dim();
    let pairs = upper_pairs(n);
    let mut s = Matrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        s[(i, j)] = x[n + k];
        s[(j, i)] = x[n + k];
    }
    let eta_inv = body.eta.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    Ok(eta_inv * s)
}

fn encode_symmetric(body: &InertiaData, a: &Matrix) -> Vec<f64> {
    let s = &body.eta * a;
    upper_pairs(body.dim()).iter().map(|&(i, j)| 0.5 * (s[(i, j)] + s[(j, i)])).collect()
}

/// Wraps the vakonomic model so that losing positive-definiteness of `A`
/// ends the run.
struct VakonomicAffine {
    inner: Unconstrained,
    body: InertiaData,
}

impl VakonomicAffine {
    fn check(&self, s: &AugmentedState) -> Result<()> {
        let a = decode_vakonomic(&self.body, s.q.as_slice())?;
        let sym = &self.body.eta * a;
        let min_eigenvalue = ((&sym + sym.transpose()) * 0.5).symmetric_eigen().eigenvalues.min();
        if !(min_eigenvalue > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        Ok(())
    }
}

impl Dynamics for VakonomicAffine {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn multiplier_count(&self) -> usize {
        0
    }
    fn multiplier_order(&self) -> usize {
        0
    }
    fn constraints(&self) -> Option<&ConstraintSet> {
        None
    }
    fn default_projection(&self) -> bool {
        false
    }
    fn manifold_residual(&self, _: &AugmentedState) -> Result<f64> {
        Ok(0.0)
    }
    fn rates(&self, s: &AugmentedState) -> Result<integrate::Rates> {
        self.check(s)?;
        self.inner.rates(s)
    }
    fn observe(&self, s: &AugmentedState) -> Result<integrate::Observation> {
        self.check(s)?;
        self.inner.observe(s)
    }
}

/// A run of either formulation with the Green tensor and internal kinetic
/// energy recorded at every sample.
#[derive(Debug, Clone)]
pub struct AffineRun {
    pub formulation: AffineFormulation,
    pub result: SimulationResult,
    pub green: Vec<Matrix>,
    pub kinetic_internal: Vec<f64>,
}

impl AffineRun {
    pub fn times(&self) -> Vec<f64> {
        self.result.samples.iter().map(|s| s.t).collect()
    }
}

/// Initial state of either formulation in its own coordinates.
pub fn initial_state(body: &InertiaData, formulation: AffineFormulation, init: &AffineConfiguration) -> Result<AugmentedState> {
    let n = body.dim();
    if init.r.len() != n {
        return Err(Error::Dimension(format!("configuration of size {} for a body in {n} dimensions", init.r.len())));
    }
    match formulation {
        AffineFormulation::Vakonomic => {
            let (factors, a_dot) = polar_rate(&init.phi, &init.phi_dot, &body.g, &body.eta)?;
            let mut q: Vec<f64> = init.r.iter().copied().collect();
            q.extend(encode_symmetric(body, &factors.a));
            let mut v: Vec<f64> = init.r_dot.iter().copied().collect();
            v.extend(encode_symmetric(body, &a_dot));
            Ok(AugmentedState::from_slices(&q, &v, 0.0))
        }
        AffineFormulation::Dalembert => {
            let mut q: Vec<f64> = init.r.iter().copied().collect();
            q.extend(init.phi.transpose().iter());
            let mut v: Vec<f64> = init.r_dot.iter().copied().collect();
            v.extend(init.phi_dot.transpose().iter());
            Ok(AugmentedState::from_slices(&q, &v, 0.0))
        }
    }
}

/// Integrate the body under one formulation.
///
/// The vakonomic pathway starts from the polar factors of `init` (`A` and
/// the `Ȧ` induced by `φ̇`); the d'Alembert pathway starts from `(φ, φ̇)`
/// directly and needs `Ω` to be `g`-symmetric initially.
pub fn simulate_affine(
    body: &InertiaData,
    potential: &GreenPotential,
    formulation: AffineFormulation,
    init: &AffineConfiguration,
    cfg: &IntegratorConfig,
) -> Result<AffineRun> {
    let n = body.dim();
    let s0 = initial_state(body, formulation, init)?;
    let (result, green, kinetic_internal) = match formulation {
        AffineFormulation::Vakonomic => {
            let sys = VakonomicAffine { inner: Unconstrained(vakonomic_model(body, potential)?), body: body.clone() };
            let result = integrate::simulate(&sys, &s0, cfg)?;
            let mut green = Vec::with_capacity(result.samples.len());
            let mut kinetic = Vec::with_capacity(result.samples.len());
            for s in &result.samples {
                let a = decode_vakonomic(body, s.q.as_slice())?;
                let a_dot = decode_vakonomic(body, s.v.as_slice())?;
                green.push(a.transpose() * &body.eta * &a);
                kinetic.push(vakonomic_kinetic(&a, &a_dot, &body.j, &body.eta)?);
            }
            (result, green, kinetic)
        }
        AffineFormulation::Dalembert => {
            let sys = dalembert_system(body, potential)?;
            let result = integrate::simulate(&sys, &s0, cfg)?;
            let mut green = Vec::with_capacity(result.samples.len());
            let mut kinetic = Vec::with_capacity(result.samples.len());
            for s in &result.samples {
                let phi = Matrix::from_row_slice(n, n, &s.q.as_slice()[n..]);
                let phi_dot = Matrix::from_row_slice(n, n, &s.v.as_slice()[n..]);
                green.push(green_tensor(&phi, &body.g));
                kinetic.push(0.5 * contract(&phi_dot, &phi_dot, &body.g, &body.j));
            }
            (result, green, kinetic)
        }
    };
    Ok(AffineRun { formulation, result, green, kinetic_internal })
}
