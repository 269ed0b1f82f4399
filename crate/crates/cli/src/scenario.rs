//! Scenario files: TOML tables plus expressions, validated into runnable
//! systems.
//!
//! A file may start from a built-in with `builtin = "<name>"`; its own
//! tables then override the built-in field by field.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nonholonomic::affine::{AffineConfiguration, GreenPotential, InertiaData};
use nonholonomic::constraints::{ConstraintKind, ConstraintSet};
use nonholonomic::dalembert::Stabilization;
use nonholonomic::integrate::{IntegratorConfig, Scheme};
use nonholonomic::kernel::{Args, Field, HD};
use nonholonomic::lagrangian::LagrangianModel;
use nonholonomic::{Matrix, Vector};
use serde::{Deserialize, Deserializer};
use toml::Spanned;

use crate::expr::{self, Expr, Params, Var};
use crate::registry;

/// A validation or parse problem, located as precisely as the input allows.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub origin: String,
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if !self.field.is_empty() {
            write!(f, ": field `{}`", self.field)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for Diagnostic {}

/// Expression text with the place it came from.
#[derive(Debug, Clone)]
pub struct Src {
    pub text: String,
    start: usize,
    origin: usize,
}

impl<'de> Deserialize<'de> for Src {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = Spanned::<String>::deserialize(d)?;
        Ok(Src { start: s.span().start, text: s.into_inner(), origin: 0 })
    }
}

trait Merge {
    fn merge(self, over: Self) -> Self;
}

impl<T: Merge> Merge for Option<T> {
    fn merge(self, over: Self) -> Self {
        match (self, over) {
            (Some(base), Some(over)) => Some(base.merge(over)),
            (base, over) => over.or(base),
        }
    }
}

macro_rules! table {
    ($name:ident { $($field:ident: $ty:ty),* $(,)? }) => {
        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct $name {
            $($field: Option<$ty>,)*
        }

        impl Merge for $name {
            fn merge(self, over: Self) -> Self {
                $name { $($field: over.$field.or(self.$field),)* }
            }
        }
    };
}

table!(RawSystem { dim: usize, lagrangian: Src, dissipation: Vec<Src> });
table!(RawConstraints { kind: String, expressions: Vec<Src>, alpha: f64, beta: f64, drift_tolerance: f64 });
table!(RawInitial { t: f64, q: Vec<f64>, v: Vec<f64>, lambda: Vec<f64>, lambda_dot: Vec<f64> });
table!(RawIntegrator {
    dt: f64,
    t_end: f64,
    scheme: String,
    projection: bool,
    drift_tolerance: f64,
    drift_abort: f64,
});
table!(RawPenalty { kappas: Vec<f64> });
table!(RawComparison { threshold: f64 });
table!(RawOutput { dir: String });
table!(RawAffine {
    dim: usize,
    mass: f64,
    k: f64,
    inertia: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    eta: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    a_dot: Vec<Vec<f64>>,
    r: Vec<f64>,
    r_dot: Vec<f64>,
});

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    builtin: Option<String>,
    name: Option<String>,
    description: Option<String>,
    formulation: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    system: Option<RawSystem>,
    constraints: Option<RawConstraints>,
    initial: Option<RawInitial>,
    integrator: Option<RawIntegrator>,
    penalty: Option<RawPenalty>,
    comparison: Option<RawComparison>,
    affine: Option<RawAffine>,
    output: Option<RawOutput>,
}

impl RawScenario {
    fn tag(&mut self, origin: usize) {
        let mut srcs: Vec<&mut Src> = Vec::new();
        if let Some(s) = &mut self.system {
            srcs.extend(s.lagrangian.iter_mut());
            srcs.extend(s.dissipation.iter_mut().flatten());
        }
        if let Some(c) = &mut self.constraints {
            srcs.extend(c.expressions.iter_mut().flatten());
        }
        for s in srcs {
            s.origin = origin;
        }
    }

    fn merge(self, over: Self) -> Self {
        let mut params = self.params;
        params.extend(over.params);
        RawScenario {
            builtin: over.builtin.or(self.builtin),
            name: over.name.or(self.name),
            description: over.description.or(self.description),
            formulation: over.formulation.or(self.formulation),
            params,
            system: self.system.merge(over.system),
            constraints: self.constraints.merge(over.constraints),
            initial: self.initial.merge(over.initial),
            integrator: self.integrator.merge(over.integrator),
            penalty: self.penalty.merge(over.penalty),
            comparison: self.comparison.merge(over.comparison),
            affine: self.affine.merge(over.affine),
            output: self.output.merge(over.output),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    Dalembert,
    Vakonomic,
    Both,
    PenaltySweep,
}

impl Formulation {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dalembert" | "d'alembert" => Some(Formulation::Dalembert),
            "vakonomic" => Some(Formulation::Vakonomic),
            "both" => Some(Formulation::Both),
            "penalty_sweep" | "penaltysweep" | "penalty" => Some(Formulation::PenaltySweep),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Dalembert => "dalembert",
            Formulation::Vakonomic => "vakonomic",
            Formulation::Both => "both",
            Formulation::PenaltySweep => "penalty_sweep",
        }
    }
}

/// Expressions compiled into a kernel field.
#[derive(Debug)]
pub struct ExprField(pub Vec<Expr>);

impl Field for ExprField {
    fn outputs(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        for (o, e) in out.iter_mut().zip(&self.0) {
            *o = e.eval(x);
        }
    }
}

/// A point-mass style system given by expressions.
#[derive(Clone)]
pub struct ParticleSpec {
    pub model: LagrangianModel,
    pub constraints: Option<ConstraintSet>,
    pub stabilization: Stabilization,
    pub q0: Vector,
    pub v0: Vector,
    pub t0: f64,
    pub lambda0: Vector,
    pub lambda_dot0: Vector,
}

#[derive(Clone)]
pub struct AffineSpec {
    pub body: InertiaData,
    pub potential: GreenPotential,
    pub init: AffineConfiguration,
}

#[derive(Clone)]
pub enum SystemSpec {
    Particle(ParticleSpec),
    Affine(AffineSpec),
}

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub formulation: Formulation,
    pub system: SystemSpec,
    pub integrator: IntegratorConfig,
    pub kappas: Vec<f64>,
    pub threshold: f64,
    pub output_dir: Option<PathBuf>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("formulation", &self.formulation)
            .field("integrator", &self.integrator)
            .finish_non_exhaustive()
    }
}

/// Gap above which a comparison flags the two formulations as different.
pub const DEFAULT_THRESHOLD: f64 = 1e-6;

struct Ctx {
    sources: Vec<(String, String)>,
}

impl Ctx {
    fn origin(&self) -> String {
        self.sources.last().map(|s| s.0.clone()).unwrap_or_default()
    }

    fn err(&self, field: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        Diagnostic { origin: self.origin(), line: None, field: field.into(), message: message.into() }
    }

    fn at(&self, src: &Src, field: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        let (origin, text) = &self.sources[src.origin];
        let line = text[..src.start.min(text.len())].matches('\n').count() + 1;
        Diagnostic { origin: origin.clone(), line: Some(line), field: field.into(), message: message.into() }
    }
}

fn parse_raw(origin: &str, text: &str, index: usize) -> Result<RawScenario, Diagnostic> {
    let mut raw: RawScenario = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Diagnostic { origin: origin.to_string(), line, field: String::new(), message: e.message().trim().to_string() }
    })?;
    raw.tag(index);
    Ok(raw)
}

/// Parse and validate scenario text. `origin` names the source in
/// diagnostics.
pub fn load_str(origin: &str, text: &str) -> Result<Scenario, Diagnostic> {
    let mut ctx = Ctx { sources: Vec::new() };
    let mut user = parse_raw(origin, text, 0)?;
    let raw = match user.builtin.take() {
        Some(base) => {
            let Some(entry) = registry::find(&base) else {
                return Err(Diagnostic {
                    origin: origin.to_string(),
                    line: None,
                    field: "builtin".into(),
                    message: format!("unknown built-in scenario '{base}'"),
                });
            };
            let base_origin = format!("builtin:{}", entry.name);
            ctx.sources.push((base_origin.clone(), entry.toml.to_string()));
            let base = parse_raw(&base_origin, entry.toml, 0)?;
            user.tag(1);
            base.merge(user)
        }
        None => user,
    };
    ctx.sources.push((origin.to_string(), text.to_string()));
    build(&ctx, raw)
}

pub fn load_file(path: &Path) -> Result<Scenario, Diagnostic> {
    let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
        origin: path.display().to_string(),
        line: None,
        field: String::new(),
        message: format!("cannot read scenario: {e}"),
    })?;
    load_str(&path.display().to_string(), &text)
}

/// A file path, or the name of a built-in when no such file exists.
pub fn load(target: &str) -> Result<Scenario, Diagnostic> {
    let path = Path::new(target);
    if !path.exists() {
        if let Some(entry) = registry::find(target) {
            return load_str(&format!("builtin:{}", entry.name), entry.toml);
        }
    }
    load_file(path)
}

fn compile(ctx: &Ctx, src: &Src, field: &str, params: &Params) -> Result<Expr, Diagnostic> {
    expr::parse(&src.text, params).map_err(|e| ctx.at(src, field, e.to_string()))
}

fn check_indices(ctx: &Ctx, src: &Src, e: &Expr, field: &str, dim: usize, accel: bool) -> Result<(), Diagnostic> {
    for (var, name) in [(Var::Q, "q"), (Var::V, "v"), (Var::A, "a")] {
        if let Some(i) = e.max_index(var) {
            if var == Var::A && !accel {
                return Err(ctx.at(src, field, "accelerations a[i] are only allowed in second_order constraints"));
            }
            if i >= dim {
                return Err(ctx.at(src, field, format!("{name}[{i}] is out of range for dim = {dim}")));
            }
        }
    }
    Ok(())
}

fn matrix(ctx: &Ctx, rows: &[Vec<f64>], n: usize, field: &str) -> Result<Matrix, Diagnostic> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ctx.err(field, format!("expected a {n}×{n} matrix")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn vector(ctx: &Ctx, v: Option<Vec<f64>>, n: usize, field: &str) -> Result<Vector, Diagnostic> {
    match v {
        None => Ok(Vector::zeros(n)),
        Some(v) if v.len() == n => Ok(Vector::from_vec(v)),
        Some(v) => Err(ctx.err(field, format!("expected {n} entries, got {}", v.len()))),
    }
}

fn engine<'a>(ctx: &'a Ctx, field: &'a str) -> impl Fn(nonholonomic::Error) -> Diagnostic + 'a {
    let field = field.to_string();
    move |e| ctx.err(field.clone(), e.to_string())
}

fn build(ctx: &Ctx, raw: RawScenario) -> Result<Scenario, Diagnostic> {
    let name = raw.name.clone().ok_or_else(|| ctx.err("name", "missing scenario name"))?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(ctx.err("name", "names may only use letters, digits, '_' and '-'"));
    }
    let formulation = match &raw.formulation {
        None => return Err(ctx.err("formulation", "missing formulation")),
        Some(f) => Formulation::parse(f).ok_or_else(|| {
            ctx.err("formulation", format!("unknown formulation '{f}' (dalembert, vakonomic, both, penalty_sweep)"))
        })?,
    };

    let ri = raw.integrator.clone().unwrap_or_default();
    let dt = ri.dt.ok_or_else(|| ctx.err("integrator.dt", "missing time step"))?;
    let t_end = ri.t_end.ok_or_else(|| ctx.err("integrator.t_end", "missing end time"))?;
    let mut integrator = IntegratorConfig::new(dt, t_end).map_err(engine(ctx, "integrator"))?;
    if let Some(s) = &ri.scheme {
        integrator = integrator.with_scheme(match s.as_str() {
            "rk4" => Scheme::Rk4,
            "semi_implicit_euler" | "symplectic_euler" => Scheme::SemiImplicitEuler,
            _ => return Err(ctx.err("integrator.scheme", format!("unknown scheme '{s}' (rk4, semi_implicit_euler)"))),
        });
    }
    if let Some(p) = ri.projection {
        integrator = integrator.with_projection(p);
    }
    if let Some(tol) = ri.drift_tolerance {
        integrator = integrator.with_drift_tolerance(tol);
    }
    if let Some(abort) = ri.drift_abort {
        integrator = integrator.with_drift_abort(abort);
    }
    integrator.validate().map_err(engine(ctx, "integrator"))?;

    let system = match (&raw.system, &raw.affine) {
        (Some(_), Some(_)) => return Err(ctx.err("affine", "a scenario has either [system] or [affine], not both")),
        (None, None) => return Err(ctx.err("system", "missing [system] (or [affine]) table")),
        (Some(_), None) => SystemSpec::Particle(build_particle(ctx, &raw)?),
        (None, Some(a)) => {
            if raw.constraints.is_some() {
                return Err(ctx.err("constraints", "affine scenarios carry their own symmetry constraint"));
            }
            if formulation == Formulation::PenaltySweep {
                return Err(ctx.err("formulation", "penalty sweeps need a holonomic [system]"));
            }
            SystemSpec::Affine(build_affine(ctx, a)?)
        }
    };

    let kappas = raw.penalty.as_ref().and_then(|p| p.kappas.clone()).unwrap_or_default();
    if kappas.iter().any(|k| !(*k > 0.0)) {
        return Err(ctx.err("penalty.kappas", "stiffnesses must be positive"));
    }
    if formulation == Formulation::PenaltySweep {
        if kappas.is_empty() {
            return Err(ctx.err("penalty.kappas", "penalty_sweep needs at least one stiffness"));
        }
        match &system {
            SystemSpec::Particle(p) if p.constraints.as_ref().map(|c| c.kind()) == Some(ConstraintKind::Holonomic) => {}
            _ => return Err(ctx.err("formulation", "penalty_sweep needs holonomic constraints")),
        }
    }
    let threshold = raw.comparison.as_ref().and_then(|c| c.threshold).unwrap_or(DEFAULT_THRESHOLD);
    if !(threshold > 0.0) {
        return Err(ctx.err("comparison.threshold", "threshold must be positive"));
    }

    Ok(Scenario {
        name,
        description: raw.description.clone().unwrap_or_default(),
        formulation,
        system,
        integrator,
        kappas,
        threshold,
        output_dir: raw.output.as_ref().and_then(|o| o.dir.clone()).map(PathBuf::from),
    })
}

fn build_particle(ctx: &Ctx, raw: &RawScenario) -> Result<ParticleSpec, Diagnostic> {
    let sys = raw.system.clone().unwrap_or_default();
    let dim = sys.dim.ok_or_else(|| ctx.err("system.dim", "missing dimension"))?;
    if dim == 0 {
        return Err(ctx.err("system.dim", "dimension must be positive"));
    }
    let l_src = sys.lagrangian.ok_or_else(|| ctx.err("system.lagrangian", "missing Lagrangian"))?;
    let l = compile(ctx, &l_src, "system.lagrangian", &raw.params)?;
    check_indices(ctx, &l_src, &l, "system.lagrangian", dim, false)?;
    let field: Arc<dyn Field> = Arc::new(ExprField(vec![l]));
    let mut model = LagrangianModel::new(dim, field).map_err(engine(ctx, "system.lagrangian"))?;
    if let Some(d) = &sys.dissipation {
        if d.len() != dim {
            return Err(ctx.err("system.dissipation", format!("expected {dim} components, got {}", d.len())));
        }
        let mut exprs = Vec::with_capacity(dim);
        for (i, src) in d.iter().enumerate() {
            let field = format!("system.dissipation[{i}]");
            let e = compile(ctx, src, &field, &raw.params)?;
            check_indices(ctx, src, &e, &field, dim, false)?;
            exprs.push(e);
        }
        model = model.with_dissipation(Arc::new(ExprField(exprs))).map_err(engine(ctx, "system.dissipation"))?;
    }

    let mut stabilization = Stabilization::default();
    let constraints = match &raw.constraints {
        None => None,
        Some(c) => {
            let kind = match c.kind.as_deref() {
                Some("holonomic") => ConstraintKind::Holonomic,
                Some("pfaffian") | Some("linear_pfaffian") => ConstraintKind::LinearPfaffian,
                Some("nonlinear") | Some("nonlinear_first_order") => ConstraintKind::NonlinearFirstOrder,
                Some("second_order") => ConstraintKind::SecondOrder,
                Some(k) => {
                    return Err(ctx.err("constraints.kind", format!(
                        "unknown kind '{k}' (holonomic, pfaffian, nonlinear, second_order)"
                    )))
                }
                None => return Err(ctx.err("constraints.kind", "missing constraint kind")),
            };
            let srcs = c.expressions.clone().unwrap_or_default();
            if srcs.is_empty() {
                return Err(ctx.err("constraints.expressions", "at least one constraint expression is needed"));
            }
            let mut exprs = Vec::with_capacity(srcs.len());
            for (i, src) in srcs.iter().enumerate() {
                let field = format!("constraints.expressions[{i}]");
                let e = compile(ctx, src, &field, &raw.params)?;
                check_indices(ctx, src, &e, &field, dim, kind == ConstraintKind::SecondOrder)?;
                exprs.push(e);
            }
            let mut cs = ConstraintSet::new(kind, dim, Arc::new(ExprField(exprs))).map_err(engine(ctx, "constraints"))?;
            if let Some(tol) = c.drift_tolerance {
                if !(tol > 0.0) {
                    return Err(ctx.err("constraints.drift_tolerance", "tolerance must be positive"));
                }
                cs = cs.with_drift_tolerance(tol);
            }
            if let Some(alpha) = c.alpha {
                stabilization.alpha = alpha;
            }
            if let Some(beta) = c.beta {
                stabilization.beta = beta;
            }
            Some(cs)
        }
    };

    let m = constraints.as_ref().map_or(0, |c| c.count());
    let init = raw.initial.clone().unwrap_or_default();
    let q0 = vector(ctx, init.q, dim, "initial.q")?;
    let v0 = vector(ctx, init.v, dim, "initial.v")?;
    let lambda0 = vector(ctx, init.lambda, m, "initial.lambda")?;
    let lambda_dot0 = vector(ctx, init.lambda_dot, m, "initial.lambda_dot")?;
    let t0 = init.t.unwrap_or(0.0);
    if q0.iter().chain(v0.iter()).chain(lambda0.iter()).chain(lambda_dot0.iter()).any(|x| !x.is_finite()) || !t0.is_finite() {
        return Err(ctx.err("initial", "initial state must be finite"));
    }
    Ok(ParticleSpec { model, constraints, stabilization, q0, v0, t0, lambda0, lambda_dot0 })
}

fn build_affine(ctx: &Ctx, a: &RawAffine) -> Result<AffineSpec, Diagnostic> {
    let n = a.dim.ok_or_else(|| ctx.err("affine.dim", "missing dimension"))?;
    if !(2..=3).contains(&n) {
        return Err(ctx.err("affine.dim", "affine scenarios support n = 2 or 3"));
    }
    let id = Matrix::identity(n, n);
    let opt = |m: &Option<Vec<Vec<f64>>>, field: &str| -> Result<Matrix, Diagnostic> {
        match m {
            Some(rows) => matrix(ctx, rows, n, field),
            None => Ok(id.clone()),
        }
    };
    let j = opt(&a.inertia, "affine.inertia")?;
    let g = opt(&a.g, "affine.g")?;
    let eta = opt(&a.eta, "affine.eta")?;
    let body = InertiaData::new(a.mass.unwrap_or(1.0), j, g, eta).map_err(engine(ctx, "affine"))?;
    let potential = GreenPotential::saint_venant(a.k.unwrap_or(1.0), &body.eta).map_err(engine(ctx, "affine.eta"))?;
    let a_mat = opt(&a.a, "affine.a")?;
    let a_dot = match &a.a_dot {
        Some(rows) => matrix(ctx, rows, n, "affine.a_dot")?,
        None => Matrix::zeros(n, n),
    };
    let r = vector(ctx, a.r.clone(), n, "affine.r")?;
    let r_dot = vector(ctx, a.r_dot.clone(), n, "affine.r_dot")?;
    let init = AffineConfiguration::from_symmetric(&body, &a_mat, &a_dot)
        .and_then(|c| c.with_translation(r, r_dot))
        .map_err(engine(ctx, "affine.a"))?;
    Ok(AffineSpec { body, potential, init })
}
