//! Fixed-step integration of assembled dynamics with drift monitoring,
//! optional projection and per-step energy and reaction diagnostics.

use crate::constraints::{ConstraintKind, ConstraintSet};
use crate::dalembert::{DalembertSystem, PenaltyRealization};
use crate::kernel::{self, Point, Slot};
use crate::lagrangian::LagrangianModel;
use crate::vakonomic::{AugmentedState, VakonomicSystem};
use crate::{Error, Matrix, Result, Vector};

/// Default run-time drift at which a run is aborted.
pub const DEFAULT_DRIFT_ABORT: f64 = 1e-6;
/// Newton iterations allowed in [`project_to_manifold`].
pub const PROJECTION_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Rk4,
    SemiImplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// `None` picks the system's default: on for d'Alembert systems, off
    /// for vakonomic ones.
    pub projection: Option<bool>,
    /// The initial state must be this close to the manifold.
    pub drift_tolerance: f64,
    /// Runs stop with [`Status::DriftExceeded`] beyond this residual.
    pub drift_abort: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        let cfg = IntegratorConfig {
            dt,
            t_end,
            scheme: Scheme::Rk4,
            projection: None,
            drift_tolerance: crate::constraints::DEFAULT_DRIFT_TOLERANCE,
            drift_abort: DEFAULT_DRIFT_ABORT,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_projection(mut self, projection: bool) -> Self {
        self.projection = Some(projection);
        self
    }

    pub fn with_drift_tolerance(mut self, tol: f64) -> Self {
        self.drift_tolerance = tol;
        self
    }

    pub fn with_drift_abort(mut self, abort: f64) -> Self {
        self.drift_abort = abort;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.dt < self.t_end) {
            return Err(Error::Config(format!("dt = {} must be below t_end = {}", self.dt, self.t_end)));
        }
        if !(self.drift_tolerance > 0.0) || !(self.drift_abort > 0.0) {
            return Err(Error::Config("drift tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub q: Vector,
    pub v: Vector,
    /// State multipliers (vakonomic) or instantaneous ones (d'Alembert).
    pub lambda: Vector,
    pub a: Vector,
    pub lambda_dot: Option<Vector>,
    pub e_l: f64,
    pub e_m: f64,
    pub reaction_power: f64,
    pub dissipation_power: f64,
    /// Accumulated work of the non-conservative powers the energy audit
    /// accounts for (dissipation, plus reactions for d'Alembert systems).
    pub work: f64,
    pub residuals: Vector,
    pub reaction: Vector,
}

impl TrajectorySample {
    pub fn residual_max(&self) -> f64 {
        self.residuals.amax()
    }

    /// `E_L + E_M − work`, constant up to integration error.
    pub fn audited_energy(&self) -> f64 {
        self.e_l + self.e_m - self.work
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Completed,
    SingularSystem,
    DriftExceeded,
    EffectiveMassSingular,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Completed => "Completed",
            Status::SingularSystem => "SingularSystem",
            Status::DriftExceeded => "DriftExceeded",
            Status::EffectiveMassSingular => "EffectiveMassSingular",
        }
    }

    fn of(err: &Error) -> Status {
        match err {
            Error::EffectiveMassSingular { .. } => Status::EffectiveMassSingular,
            Error::ProjectionDiverged { .. } | Error::OffManifold { .. } => Status::DriftExceeded,
            _ => Status::SingularSystem,
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub samples: Vec<TrajectorySample>,
    pub status: Status,
    /// Set whenever `status` is not `Completed`.
    pub message: Option<String>,
    /// Largest constraint residual over the recorded samples.
    pub max_drift: f64,
    /// Largest `|audited_energy(t) − audited_energy(t₀)|`, relative to
    /// `|E(t₀)|` (absolute when that vanishes).
    pub energy_drift: f64,
}

impl SimulationResult {
    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }

    pub fn is_completed(&self) -> bool {
        self.status == Status::Completed
    }
}

/// Accelerations and multiplier rates at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub a: Vector,
    /// `λ̇` when the state carries `λ`, `λ̈` when it also carries `λ̇`.
    pub multiplier_rate: Vector,
    /// Power that the energy audit integrates.
    pub audit_power: f64,
}

/// Everything recorded about an accepted state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub a: Vector,
    pub lambda: Vector,
    pub lambda_dot: Option<Vector>,
    pub reaction: Vector,
    pub e_l: f64,
    pub e_m: f64,
    pub dissipation_power: f64,
    pub reaction_power: f64,
    pub residuals: Vector,
}

/// A system the integrator can advance.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    /// Multipliers reported per sample.
    fn multiplier_count(&self) -> usize;
    /// 0: no multipliers in the state; 1: `λ`; 2: `λ` and `λ̇`.
    fn multiplier_order(&self) -> usize;
    fn constraints(&self) -> Option<&ConstraintSet>;
    fn default_projection(&self) -> bool;
    /// Multipliers to start from when the initial state carries none.
    fn default_multipliers(&self) -> (Vector, Vector) {
        (Vector::zeros(0), Vector::zeros(0))
    }
    /// Largest violation of the constraints a valid initial state must meet.
    fn manifold_residual(&self, s: &AugmentedState) -> Result<f64>;
    fn rates(&self, s: &AugmentedState) -> Result<Rates>;
    fn observe(&self, s: &AugmentedState) -> Result<Observation>;
}

/// An unconstrained model (including penalty realizations).
#[derive(Debug, Clone)]
pub struct Unconstrained(pub LagrangianModel);

fn unconstrained_rates(model: &LagrangianModel, s: &AugmentedState) -> Result<Rates> {
    let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
    let a = model.unconstrained_accel(q, v, t)?;
    let audit_power = model.dissipation(q, v, t)?.dot(&s.v);
    Ok(Rates { a, multiplier_rate: Vector::zeros(0), audit_power })
}

fn unconstrained_observation(model: &LagrangianModel, s: &AugmentedState, residuals: Vector) -> Result<Observation> {
    let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
    let rates = unconstrained_rates(model, s)?;
    Ok(Observation {
        a: rates.a,
        lambda: Vector::zeros(0),
        lambda_dot: None,
        reaction: Vector::zeros(model.dim()),
        e_l: model.energy(q, v, t)?,
        e_m: 0.0,
        dissipation_power: rates.audit_power,
        reaction_power: 0.0,
        residuals,
    })
}

impl Dynamics for Unconstrained {
    fn dim(&self) -> usize {
        self.0.dim()
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
    fn rates(&self, s: &AugmentedState) -> Result<Rates> {
        unconstrained_rates(&self.0, s)
    }
    fn observe(&self, s: &AugmentedState) -> Result<Observation> {
        unconstrained_observation(&self.0, s, Vector::zeros(0))
    }
}

/// Penalty runs are unconstrained; the holonomic residual is still reported.
impl Dynamics for PenaltyRealization {
    fn dim(&self) -> usize {
        self.base().dim()
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
    fn rates(&self, s: &AugmentedState) -> Result<Rates> {
        unconstrained_rates(self.penalized_model(), s)
    }
    fn observe(&self, s: &AugmentedState) -> Result<Observation> {
        let residuals = self.constraints().evaluate(s.q.as_slice(), s.v.as_slice(), None, s.t)?;
        unconstrained_observation(self.penalized_model(), s, residuals)
    }
}

fn holonomic_rate(cs: &ConstraintSet, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
    let p = Point::new(q, v, t);
    let c = kernel::jacobian(&**cs.field(), &p, Slot::Q(0))?;
    let ft = kernel::jacobian(&**cs.field(), &p, Slot::T)?;
    Ok(c * Vector::from_column_slice(v) + ft.column(0))
}

impl Dynamics for DalembertSystem {
    fn dim(&self) -> usize {
        self.model().dim()
    }
    fn multiplier_count(&self) -> usize {
        self.constraints().count()
    }
    fn multiplier_order(&self) -> usize {
        0
    }
    fn constraints(&self) -> Option<&ConstraintSet> {
        Some(DalembertSystem::constraints(self))
    }
    fn default_projection(&self) -> bool {
        true
    }
    fn manifold_residual(&self, s: &AugmentedState) -> Result<f64> {
        let cs = DalembertSystem::constraints(self);
        let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
        let mut r = cs.max_residual(q, v, None, t)?;
        if cs.kind() == ConstraintKind::Holonomic {
            r = r.max(holonomic_rate(cs, q, v, t)?.amax());
        }
        Ok(r)
    }
    fn rates(&self, s: &AugmentedState) -> Result<Rates> {
        let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
        let sol = self.solve(q, v, t)?;
        let audit_power = (self.model().dissipation(q, v, t)? + &sol.reaction).dot(&s.v);
        Ok(Rates { a: sol.a, multiplier_rate: Vector::zeros(0), audit_power })
    }
    fn observe(&self, s: &AugmentedState) -> Result<Observation> {
        let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
        let sol = self.solve(q, v, t)?;
        let residuals = DalembertSystem::constraints(self).evaluate(q, v, None, t)?;
        Ok(Observation {
            e_l: self.model().energy(q, v, t)?,
            e_m: 0.0,
            dissipation_power: self.model().dissipation(q, v, t)?.dot(&s.v),
            reaction_power: sol.reaction.dot(&s.v),
            a: sol.a,
            lambda: sol.lambda,
            lambda_dot: None,
            reaction: sol.reaction,
            residuals,
        })
    }
}

impl Dynamics for VakonomicSystem {
    fn dim(&self) -> usize {
        self.model().dim()
    }
    fn multiplier_count(&self) -> usize {
        VakonomicSystem::constraints(self).count()
    }
    fn multiplier_order(&self) -> usize {
        if self.is_second_order() {
            2
        } else {
            1
        }
    }
    fn constraints(&self) -> Option<&ConstraintSet> {
        Some(VakonomicSystem::constraints(self))
    }
    fn default_projection(&self) -> bool {
        false
    }
    fn default_multipliers(&self) -> (Vector, Vector) {
        let rates = if self.is_second_order() { self.initial_multiplier_rates().clone() } else { Vector::zeros(0) };
        (self.initial_multipliers().clone(), rates)
    }
    fn manifold_residual(&self, s: &AugmentedState) -> Result<f64> {
        if self.is_second_order() {
            // F = 0 is solved for the acceleration at every state.
            return Ok(0.0);
        }
        Ok(VakonomicSystem::constraints(self)
            .evaluate_velocity(s.q.as_slice(), s.v.as_slice(), s.t)?
            .amax())
    }
    fn rates(&self, s: &AugmentedState) -> Result<Rates> {
        let sol = self.solve(s)?;
        let audit_power = self.model().dissipation(s.q.as_slice(), s.v.as_slice(), s.t)?.dot(&s.v);
        let multiplier_rate = match sol.lambda_ddot {
            Some(l) => l,
            None => sol.lambda_dot,
        };
        Ok(Rates { a: sol.a, multiplier_rate, audit_power })
    }
    fn observe(&self, s: &AugmentedState) -> Result<Observation> {
        let sol = self.solve(s)?;
        let report = self.energy_report_with(s, &sol)?;
        let residuals = if self.is_second_order() {
            self.residuals(s, &sol)?
        } else {
            VakonomicSystem::constraints(self).evaluate_velocity(s.q.as_slice(), s.v.as_slice(), s.t)?
        };
        Ok(Observation {
            lambda: s.lambda.clone(),
            lambda_dot: Some(sol.lambda_dot.clone()),
            a: sol.a,
            reaction: sol.reaction,
            e_l: report.mechanical,
            e_m: report.constraint,
            dissipation_power: report.dissipation_power,
            reaction_power: report.reaction_power,
            residuals,
        })
    }
}

/// Flat layout `[q, v, λ?, λ̇?, work]`.
struct Layout {
    n: usize,
    m: usize,
    order: usize,
}

impl Layout {
    fn len(&self) -> usize {
        2 * self.n + self.order * self.m + 1
    }

    fn pack(&self, s: &AugmentedState, work: f64) -> Vector {
        let mut y = Vector::zeros(self.len());
        y.rows_mut(0, self.n).copy_from(&s.q);
        y.rows_mut(self.n, self.n).copy_from(&s.v);
        if self.order >= 1 {
            y.rows_mut(2 * self.n, self.m).copy_from(&s.lambda);
        }
        if self.order == 2 {
            y.rows_mut(2 * self.n + self.m, self.m).copy_from(&s.lambda_dot);
        }
        y[self.len() - 1] = work;
        y
    }

    fn unpack(&self, y: &Vector, t: f64) -> (AugmentedState, f64) {
        let mut s = AugmentedState::new(y.rows(0, self.n).into_owned(), y.rows(self.n, self.n).into_owned(), t);
        if self.order >= 1 {
            s.lambda = y.rows(2 * self.n, self.m).into_owned();
        }
        if self.order == 2 {
            s.lambda_dot = y.rows(2 * self.n + self.m, self.m).into_owned();
        }
        (s, y[self.len() - 1])
    }

    fn derivative(&self, s: &AugmentedState, r: &Rates) -> Vector {
        let mut d = Vector::zeros(self.len());
        d.rows_mut(0, self.n).copy_from(&s.v);
        d.rows_mut(self.n, self.n).copy_from(&r.a);
        match self.order {
            1 => d.rows_mut(2 * self.n, self.m).copy_from(&r.multiplier_rate),
            2 => {
                d.rows_mut(2 * self.n, self.m).copy_from(&s.lambda_dot);
                d.rows_mut(2 * self.n + self.m, self.m).copy_from(&r.multiplier_rate);
            }
            _ => {}
        }
        d[self.len() - 1] = r.audit_power;
        d
    }
}

fn step(sys: &dyn Dynamics, layout: &Layout, scheme: Scheme, y: &Vector, t: f64, h: f64) -> Result<Vector> {
    let eval = |y: &Vector, t: f64| -> Result<Vector> {
        let (s, _) = layout.unpack(y, t);
        let r = sys.rates(&s)?;
        Ok(layout.derivative(&s, &r))
    };
    match scheme {
        Scheme::Rk4 => {
            let k1 = eval(y, t)?;
            let k2 = eval(&(y + &k1 * (0.5 * h)), t + 0.5 * h)?;
            let k3 = eval(&(y + &k2 * (0.5 * h)), t + 0.5 * h)?;
            let k4 = eval(&(y + &k3 * h), t + h)?;
            Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
        }
        Scheme::SemiImplicitEuler => {
            // Velocity-like components first, then positions with the new
            // velocities.
            let (s, work) = layout.unpack(y, t);
            let r = sys.rates(&s)?;
            let v = &s.v + &r.a * h;
            let q = &s.q + &v * h;
            let mut next = AugmentedState::new(q, v, t + h);
            match layout.order {
                1 => next.lambda = &s.lambda + &r.multiplier_rate * h,
                2 => {
                    next.lambda_dot = &s.lambda_dot + &r.multiplier_rate * h;
                    next.lambda = &s.lambda + &next.lambda_dot * h;
                }
                _ => {}
            }
            Ok(layout.pack(&next, work + r.audit_power * h))
        }
    }
}

fn sample(sys: &dyn Dynamics, s: &AugmentedState, work: f64) -> Result<TrajectorySample> {
    let o = sys.observe(s)?;
    Ok(TrajectorySample {
        t: s.t,
        q: s.q.clone(),
        v: s.v.clone(),
        lambda: o.lambda,
        a: o.a,
        lambda_dot: o.lambda_dot,
        e_l: o.e_l,
        e_m: o.e_m,
        reaction_power: o.reaction_power,
        dissipation_power: o.dissipation_power,
        work,
        residuals: o.residuals,
        reaction: o.reaction,
    })
}

/// Advance `init` to `cfg.t_end`, recording one sample per step.
///
/// Precondition failures (bad dimensions, initial state off the manifold,
/// invalid configuration) are returned as errors; everything that happens
/// during the run ends up in [`SimulationResult::status`].
pub fn simulate(sys: &dyn Dynamics, init: &AugmentedState, cfg: &IntegratorConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let n = sys.dim();
    let order = sys.multiplier_order();
    let m = sys.multiplier_count();
    let mut s0 = init.clone();
    if s0.q.len() != n || s0.v.len() != n {
        return Err(Error::Dimension(format!("initial state (q {}, v {}) for n = {n}", s0.q.len(), s0.v.len())));
    }
    if order >= 1 && s0.lambda.is_empty() {
        let (l, ld) = sys.default_multipliers();
        s0.lambda = l;
        if order == 2 && s0.lambda_dot.is_empty() {
            s0.lambda_dot = ld;
        }
    }
    if order >= 1 && s0.lambda.len() != m {
        return Err(Error::Dimension(format!("{} initial multipliers for {m} constraints", s0.lambda.len())));
    }
    if order == 2 && s0.lambda_dot.len() != m {
        return Err(Error::Dimension(format!("{} initial multiplier rates for {m} constraints", s0.lambda_dot.len())));
    }
    if order < 1 {
        s0.lambda = Vector::zeros(0);
    }
    if order < 2 {
        s0.lambda_dot = Vector::zeros(0);
    }
    if !(cfg.t_end > s0.t) {
        return Err(Error::Config(format!("t_end = {} leaves no step after t0 = {}", cfg.t_end, s0.t)));
    }
    let residual = sys.manifold_residual(&s0)?;
    if !(residual < cfg.drift_tolerance) {
        return Err(Error::OffManifold { residual });
    }

    let layout = Layout { n, m, order };
    let project = cfg.projection.unwrap_or(sys.default_projection());
    let span = cfg.t_end - s0.t;
    let ratio = span / cfg.dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) { ratio.round() } else { ratio.ceil() } as usize;
    let t0 = s0.t;

    let mut samples = Vec::with_capacity(steps + 1);
    let finish = |samples: Vec<TrajectorySample>, status: Status, message: Option<String>| {
        let max_drift = samples.iter().map(|s| s.residual_max()).fold(0.0, f64::max);
        let energy_drift = match samples.first() {
            Some(first) => {
                let e0 = first.audited_energy();
                let scale = if e0 != 0.0 { e0.abs() } else { 1.0 };
                samples.iter().map(|s| (s.audited_energy() - e0).abs()).fold(0.0, f64::max) / scale
            }
            None => 0.0,
        };
        SimulationResult { samples, status, message, max_drift, energy_drift }
    };

    match sample(sys, &s0, 0.0) {
        Ok(first) => samples.push(first),
        Err(e) => return Ok(finish(samples, Status::of(&e), Some(e.to_string()))),
    }
    let mut y = layout.pack(&s0, 0.0);
    for k in 0..steps {
        let t = t0 + k as f64 * cfg.dt;
        let t_next = if k + 1 == steps { cfg.t_end } else { t0 + (k + 1) as f64 * cfg.dt };
        let next = match step(sys, &layout, cfg.scheme, &y, t, t_next - t) {
            Ok(next) => next,
            Err(e) => return Ok(finish(samples, Status::of(&e), Some(format!("at t = {t}: {e}")))),
        };
        let (mut s, work) = layout.unpack(&next, t_next);
        if project {
            if let Some(cs) = sys.constraints() {
                match project_to_manifold(cs, &s.q, &s.v, t_next, cfg.drift_tolerance) {
                    Ok((q, v)) => {
                        s.q = q;
                        s.v = v;
                    }
                    Err(e) => return Ok(finish(samples, Status::of(&e), Some(format!("at t = {t_next}: {e}")))),
                }
            }
        }
        let rec = match sample(sys, &s, work) {
            Ok(rec) => rec,
            Err(e) => return Ok(finish(samples, Status::of(&e), Some(format!("at t = {t_next}: {e}")))),
        };
        let drift = rec.residual_max();
        let non_finite = rec.q.iter().chain(rec.v.iter()).chain(rec.lambda.iter()).any(|x| !x.is_finite());
        samples.push(rec);
        if non_finite {
            return Ok(finish(samples, Status::SingularSystem, Some(format!("non-finite state at t = {t_next}"))));
        }
        // Penalty runs report their residual but are never held to it.
        if sys.constraints().is_some() && !(drift <= cfg.drift_abort) {
            return Ok(finish(
                samples,
                Status::DriftExceeded,
                Some(format!("constraint residual {drift:e} exceeds {:e} at t = {t_next}", cfg.drift_abort)),
            ));
        }
        y = layout.pack(&s, work);
    }
    Ok(finish(samples, Status::Completed, None))
}

/// Minimal-norm Newton correction `x ← x − Jᵀ(JJᵀ)⁻¹F(x)`.
fn newton<F>(x: &Vector, tol: f64, residual: F) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<(Vector, Matrix)>,
{
    let mut x = x.clone();
    let mut last = f64::INFINITY;
    for _ in 0..PROJECTION_ITERATIONS {
        let (r, j) = residual(&x)?;
        last = r.amax();
        if last < tol {
            return Ok(x);
        }
        let jjt = &j * j.transpose();
        let y = jjt.lu().solve(&r).ok_or(Error::ProjectionDiverged { iterations: 0, residual: last })?;
        x -= j.transpose() * y;
    }
    let (r, _) = residual(&x)?;
    if r.amax() < tol {
        return Ok(x);
    }
    Err(Error::ProjectionDiverged { iterations: PROJECTION_ITERATIONS, residual: last.min(r.amax()) })
}

/// Pull `(q, v)` back onto the constraint manifold, to `tol / 10`.
///
/// Holonomic sets correct `q` and then make `v` tangent; first-order sets
/// correct `v` only. States already within the target are returned
/// unchanged. Acceleration-dependent sets carry no velocity-level manifold
/// and are left alone.
pub fn project_to_manifold(cs: &ConstraintSet, q: &Vector, v: &Vector, t: f64, tol: f64) -> Result<(Vector, Vector)> {
    let target = tol / 10.0;
    match cs.kind() {
        ConstraintKind::Holonomic => {
            let q_new = newton(q, target, |x| {
                let f = cs.evaluate(x.as_slice(), v.as_slice(), None, t)?;
                let j = cs.position_jacobian(x.as_slice(), v.as_slice(), t)?;
                Ok((f, j))
            })?;
            let rate = holonomic_rate(cs, q_new.as_slice(), v.as_slice(), t)?;
            if rate.amax() < target {
                return Ok((q_new, v.clone()));
            }
            // Ḟ is affine in v, so one minimal-norm step is exact.
            let c = cs.position_jacobian(q_new.as_slice(), v.as_slice(), t)?;
            let y = (&c * c.transpose())
                .lu()
                .solve(&rate)
                .ok_or(Error::ProjectionDiverged { iterations: 1, residual: rate.amax() })?;
            let v_new = v - c.transpose() * y;
            Ok((q_new, v_new))
        }
        ConstraintKind::SecondOrder if !cs.is_acceleration_free() => Ok((q.clone(), v.clone())),
        _ => {
            let v_new = newton(v, target, |x| {
                let f = cs.evaluate_velocity(q.as_slice(), x.as_slice(), t)?;
                let j = cs.velocity_jacobian(q.as_slice(), x.as_slice(), t)?;
                Ok((f, j))
            })?;
            Ok((q.clone(), v_new))
        }
    }
}
