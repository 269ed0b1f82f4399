//! Built-in scenario gallery. Each entry is an ordinary scenario file, so
//! built-ins go through the same parser and validation as user files.

pub struct Builtin {
    pub name: &'static str,
    /// One-line provenance shown by `list`.
    pub summary: &'static str,
    pub toml: &'static str,
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "speed_free",
        summary: "speed constraint g(v,v) = c² without potential; both formulations coincide",
        toml: r#"
name = "speed_free"
description = "Free particle with the speed constraint g(v,v) - c^2 = 0 and no potential"
formulation = "both"

[params]
c = 1.0

[system]
dim = 2
lagrangian = "0.5*(v[0]^2 + v[1]^2)"

[constraints]
kind = "nonlinear"
expressions = ["v[0]^2 + v[1]^2 - c^2"]

[initial]
q = [0.0, 0.0]
v = [0.6, 0.8]
lambda = [0.0]

[integrator]
dt = 1e-3
t_end = 10.0
"#,
    },
    Builtin {
        name: "speed_potential",
        summary: "speed constraint in V = |q|²; d'Alembert and vakonomic separate for λ0 ≠ 0",
        toml: r#"
name = "speed_potential"
description = "Speed-constrained particle in the potential V = q.q with initial multiplier 0.5"
formulation = "both"

[params]
c = 1.0

[system]
dim = 2
lagrangian = "0.5*(v[0]^2 + v[1]^2) - (q[0]^2 + q[1]^2)"

[constraints]
kind = "nonlinear"
expressions = ["v[0]^2 + v[1]^2 - c^2"]

[initial]
q = [1.0, 0.0]
v = [0.6, 0.8]
lambda = [0.5]

[integrator]
dt = 1e-3
t_end = 10.0

[comparison]
threshold = 1e-3
"#,
    },
    Builtin {
        name: "speed_drag",
        summary: "speed_potential with linear drag D = -0.1 v; energy balance with constraint energy",
        toml: r#"
name = "speed_drag"
description = "Vakonomic speed-constrained particle with linear drag, for the energy audit"
formulation = "vakonomic"

[params]
c = 1.0
gamma = 0.1

[system]
dim = 2
lagrangian = "0.5*(v[0]^2 + v[1]^2) - (q[0]^2 + q[1]^2)"
dissipation = ["-gamma*v[0]", "-gamma*v[1]"]

[constraints]
kind = "nonlinear"
expressions = ["v[0]^2 + v[1]^2 - c^2"]

[initial]
q = [1.0, 0.0]
v = [0.6, 0.8]
lambda = [0.5]

[integrator]
dt = 1e-3
t_end = 10.0
"#,
    },
    Builtin {
        name: "contact_pfaffian",
        summary: "Pfaffian contact form ω = dz - y dx, non-integrable; magnetic-like vakonomic term",
        toml: r#"
name = "contact_pfaffian"
description = "Particle in R^3 under the contact constraint dz - y dx = 0"
formulation = "both"

[system]
dim = 3
lagrangian = "0.5*(v[0]^2 + v[1]^2 + v[2]^2) - 0.5*q[1]^2"

[constraints]
kind = "pfaffian"
expressions = ["v[2] - q[1]*v[0]"]

[initial]
q = [0.0, 0.5, 0.0]
v = [1.0, 0.0, 0.5]
lambda = [0.2]

[integrator]
dt = 1e-3
t_end = 10.0
"#,
    },
    Builtin {
        name: "direction_only",
        summary: "homogeneous constraint fixing only the direction of v; adiabatic reactions",
        toml: r#"
name = "direction_only"
description = "Nonlinear constraint (v1 - q0 v0)/|v| = 0, invariant under v -> e^tau v"
formulation = "both"

[system]
dim = 2
lagrangian = "0.5*(v[0]^2 + v[1]^2)"

[constraints]
kind = "nonlinear"
expressions = ["(v[1] - q[0]*v[0]) / sqrt(v[0]^2 + v[1]^2)"]

[initial]
q = [0.5, 0.0]
v = [0.8, 0.4]
lambda = [0.3]

[integrator]
dt = 1e-3
t_end = 10.0
"#,
    },
    Builtin {
        name: "circle_pendulum",
        summary: "holonomic circle pendulum, multipliers against penalty κ ∈ {1e2, 1e3, 1e4}",
        toml: r#"
name = "circle_pendulum"
description = "Holonomic circle |q| = 1 under gravity: multiplier solution against stiff penalty potentials"
formulation = "penalty_sweep"

[params]
grav = 1.0

[system]
dim = 2
lagrangian = "0.5*(v[0]^2 + v[1]^2) - grav*q[1]"

[constraints]
kind = "holonomic"
expressions = ["q[0]^2 + q[1]^2 - 1"]

[initial]
q = [1.0, 0.0]
v = [0.0, 0.0]

[integrator]
dt = 1e-4
t_end = 1.0

[penalty]
kappas = [1e2, 1e3, 1e4]
"#,
    },
    Builtin {
        name: "accel_constraint_n2",
        summary: "acceleration constraint a0 + ω² q0 = 0 (second order, vakonomic only)",
        toml: r#"
name = "accel_constraint_n2"
description = "Acceleration constraint a0 + omega^2 q0 = 0 with a free second coordinate"
formulation = "vakonomic"

[params]
omega = 1.0

[system]
dim = 2
lagrangian = "0.5*(v[0]^2 + v[1]^2)"

[constraints]
kind = "second_order"
expressions = ["a[0] + omega^2*q[0]"]

[initial]
q = [1.0, 0.0]
v = [0.0, 0.5]
lambda = [0.0]
lambda_dot = [0.0]

[integrator]
dt = 1e-3
t_end = 5.0
"#,
    },
    Builtin {
        name: "affine_isotropic",
        summary: "rotation-less affine body in pure dilatation A = I, Ȧ = αI; formulations agree",
        toml: r#"
name = "affine_isotropic"
description = "Rotation-less affine body started in pure dilatation"
formulation = "both"

[affine]
dim = 2
k = 1.0
a = [[1.0, 0.0], [0.0, 1.0]]
a_dot = [[0.2, 0.0], [0.0, 0.2]]

[integrator]
dt = 1e-3
t_end = 1.0
"#,
    },
    Builtin {
        name: "affine_aniso",
        summary: "rotation-less affine body with shearing start; vakonomic and d'Alembert do not commute",
        toml: r#"
name = "affine_aniso"
description = "Rotation-less affine body with anisotropic A and off-diagonal deformation rate"
formulation = "both"

[affine]
dim = 2
k = 1.0
a = [[1.2, 0.0], [0.0, 0.9]]
a_dot = [[0.1, 0.3], [0.3, -0.2]]

[integrator]
dt = 1e-3
t_end = 1.0

[comparison]
threshold = 1e-3
"#,
    },
];

pub fn find(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}
