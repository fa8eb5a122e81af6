//! Registered model and cost forms with their numeric parameter ranges.
//!
//! The configuration schema refers to these by name; anything outside the
//! registered ranges is rejected during validation.

/// One numeric parameter with its valid closed range.
pub struct ParamDesc {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
}

/// One named form in a catalog group.
pub struct FormDesc {
    pub group: &'static str,
    pub name: &'static str,
    pub params: &'static [ParamDesc],
    pub note: &'static str,
}

const COEFF: (f64, f64) = (-100.0, 100.0);

pub const FORMS: &[FormDesc] = &[
    FormDesc {
        group: "drift",
        name: "zero",
        params: &[],
        note: "b = 0",
    },
    FormDesc {
        group: "drift",
        name: "linear",
        params: &[
            ParamDesc { name: "state_coeff", min: COEFF.0, max: COEFF.1 },
            ParamDesc { name: "control_coeff", min: COEFF.0, max: COEFF.1 },
        ],
        note: "b = state_coeff * x + control_coeff * u (Ornstein-Uhlenbeck and LQ forms)",
    },
    FormDesc {
        group: "drift",
        name: "sine",
        params: &[],
        note: "b = sin(x); bounded, 1-Lipschitz (diagnostics)",
    },
    FormDesc {
        group: "drift",
        name: "quadratic_state",
        params: &[],
        note: "b = x^2; non-Lipschitz (diagnostics)",
    },
    FormDesc {
        group: "meanfield_drift",
        name: "linear_meanfield",
        params: &[
            ParamDesc { name: "state_coeff", min: COEFF.0, max: COEFF.1 },
            ParamDesc { name: "mean_coeff", min: COEFF.0, max: COEFF.1 },
            ParamDesc { name: "control_coeff", min: COEFF.0, max: COEFF.1 },
        ],
        note: "b = state_coeff * x + mean_coeff * mean(law) + control_coeff * u",
    },
    FormDesc {
        group: "diffusion",
        name: "constant",
        params: &[ParamDesc { name: "sigma", min: 1e-6, max: 100.0 }],
        note: "sigma(x) = sigma > 0",
    },
    FormDesc {
        group: "diffusion",
        name: "affine",
        params: &[
            ParamDesc { name: "base", min: 1e-6, max: 100.0 },
            ParamDesc { name: "slope", min: 0.0, max: 100.0 },
        ],
        note: "sigma(x) = base + slope * |x|",
    },
    FormDesc {
        group: "interaction",
        name: "none",
        params: &[],
        note: "v = 0 (the nominal model itself)",
    },
    FormDesc {
        group: "interaction",
        name: "constant",
        params: &[ParamDesc { name: "level", min: COEFF.0, max: COEFF.1 }],
        note: "v^i = level for every agent",
    },
    FormDesc {
        group: "interaction",
        name: "per_agent",
        params: &[],
        note: "v^i = levels[i]; set levels = [..] (finite-energy families)",
    },
    FormDesc {
        group: "interaction",
        name: "time_piecewise",
        params: &[],
        note: "v(t) = levels[j] on the j-th equal sub-interval; set levels = [..]",
    },
    FormDesc {
        group: "interaction",
        name: "mean_field_attraction",
        params: &[ParamDesc { name: "kappa", min: -10.0, max: 10.0 }],
        note: "v^i = kappa * (ensemble mean - x^i); variant A only",
    },
    FormDesc {
        group: "interaction",
        name: "state_proportional",
        params: &[ParamDesc { name: "gain", min: -10.0, max: 10.0 }],
        note: "v^i = gain * x^i; variant A only",
    },
    FormDesc {
        group: "interaction",
        name: "control_scaled",
        params: &[ParamDesc { name: "eps", min: 0.0, max: 10.0 }],
        note: "v^i = eps * u^i; variant A only (stability sweeps rescale eps)",
    },
    FormDesc {
        group: "interaction",
        name: "noise_proportional",
        params: &[ParamDesc { name: "gain", min: -10.0, max: 10.0 }],
        note: "v^i = gain * B^i_t (accumulated own noise); variant B only",
    },
    FormDesc {
        group: "running_cost",
        name: "constant",
        params: &[ParamDesc { name: "level", min: -100.0, max: 100.0 }],
        note: "g = level",
    },
    FormDesc {
        group: "running_cost",
        name: "quadratic",
        params: &[
            ParamDesc { name: "x_weight", min: 0.0, max: 100.0 },
            ParamDesc { name: "u_weight", min: 0.0, max: 100.0 },
        ],
        note: "g = x_weight * x^2 + u_weight * u^2",
    },
    FormDesc {
        group: "running_cost",
        name: "squared_deviation_from_mean",
        params: &[],
        note: "g = (x - ensemble mean)^2; mean-aware cost variants only",
    },
    FormDesc {
        group: "terminal_cost",
        name: "linear_state",
        params: &[ParamDesc { name: "weight", min: -100.0, max: 100.0 }],
        note: "weight * X_T per agent, aggregated like the running cost",
    },
    FormDesc {
        group: "alpha_rule",
        name: "identity",
        params: &[],
        note: "alpha(eps) = eps (default; satisfies the vanishing conditions)",
    },
    FormDesc {
        group: "alpha_rule",
        name: "scaled",
        params: &[ParamDesc { name: "factor", min: 1e-6, max: 100.0 }],
        note: "alpha(eps) = factor * eps",
    },
    FormDesc {
        group: "alpha_rule",
        name: "power",
        params: &[ParamDesc { name: "exponent", min: 0.0, max: 4.0 }],
        note: "alpha(eps) = eps^exponent (exponent >= 2 fails the precondition)",
    },
];

/// Render the catalog as the `list-catalog` output.
pub fn render() -> String {
    let mut out = String::new();
    let mut group = "";
    for form in FORMS {
        if form.group != group {
            group = form.group;
            out.push_str(&format!("\n[{group}]\n"));
        }
        let params: Vec<String> = form
            .params
            .iter()
            .map(|p| format!("{} in [{}, {}]", p.name, p.min, p.max))
            .collect();
        let params = if params.is_empty() {
            String::new()
        } else {
            format!(" ({})", params.join(", "))
        };
        out.push_str(&format!("  {}{params}\n      {}\n", form.name, form.note));
    }
    out.push_str(
        "\nScenario alpha_grid defaults to [1.0]; the recommended sweep for bound scenarios \
         is [0.125, 0.25, 0.5, 1, 2, 4, 8].\n",
    );
    out
}

/// Range lookup used by the validator.
pub fn param_range(group: &str, form: &str, param: &str) -> Option<(f64, f64)> {
    FORMS
        .iter()
        .find(|f| f.group == group && f.name == form)?
        .params
        .iter()
        .find(|p| p.name == param)
        .map(|p| (p.min, p.max))
}

/// Whether a form exists in a group.
pub fn has_form(group: &str, form: &str) -> bool {
    FORMS.iter().any(|f| f.group == group && f.name == form)
}
