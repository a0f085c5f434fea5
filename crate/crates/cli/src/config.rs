//! Experiment configuration: TOML schema, kernel strings and up-front validation.

use std::collections::BTreeMap;

use koopman_rkhs::dynamics::{linearize, SystemDef};
use koopman_rkhs::kernels::KernelSpec;
use koopman_rkhs::variational::PenaltyConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(default, skip_serializing_if = "EigenSection::is_empty")]
    pub eigen: EigenSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub penalties: PenaltySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_integral: Option<PathIntegralSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mkl: Option<MklSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mercer: Option<MercerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unify: Option<UnifySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
}

/// `name` plus the system's own parameters as flat keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSection {
    pub name: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

/// Exactly one of `lambda` (explicit value) or `index` (into the descending
/// linearization spectrum).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

impl EigenSection {
    fn is_empty(&self) -> bool {
        self.lambda.is_none() && self.index.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub spec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub kernels: Vec<String>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    /// Domain for the boundary-layer predicate; defaults to the grid's bounding box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub eta: f64,
    pub mu_grad: f64,
    pub mu_trace: f64,
    pub mu_layer: f64,
    pub layer_fraction: f64,
    pub exact_anchor: bool,
}

impl Default for PenaltySection {
    fn default() -> Self {
        PenaltySection::from(&PenaltyConfig::default())
    }
}

impl From<&PenaltyConfig> for PenaltySection {
    fn from(p: &PenaltyConfig) -> Self {
        Self {
            eta: p.eta,
            mu_grad: p.mu_grad,
            mu_trace: p.mu_trace,
            mu_layer: p.mu_layer,
            layer_fraction: p.layer_fraction,
            exact_anchor: p.exact_anchor,
        }
    }
}

impl PenaltySection {
    pub fn to_config(&self) -> PenaltyConfig {
        PenaltyConfig {
            eta: self.eta,
            mu_grad: self.mu_grad,
            mu_trace: self.mu_trace,
            mu_layer: self.mu_layer,
            layer_fraction: self.layer_fraction,
            exact_anchor: self.exact_anchor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathIntegralSection {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Extra evaluation points for the `path-integral` subcommand.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<Vec<f64>>,
}

fn default_fd_step() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MklSection {
    pub kernels: Vec<String>,
    pub lambda_l1: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MklSection {
    fn default() -> Self {
        let d = koopman_rkhs::mkl::MklConfig::default();
        Self {
            kernels: d.base_kernels.iter().map(|k| k.to_string()).collect(),
            lambda_l1: d.lambda_l1,
            tau: d.tau,
            max_iter: d.optimizer.max_iter,
            grad_tol: d.optimizer.grad_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MercerSection {
    /// Number of modes written to the modes table.
    pub modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnifySection {
    pub c: f64,
    pub lambda: f64,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_order() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.message().trim().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses `family` or `family(key=value,...)`. `rank_one` is resolved later
/// because it needs a path-integral evaluator.
pub fn parse_kernel(text: &str) -> Result<KernelSpec, CliError> {
    let text = text.trim();
    let (family, args) = match text.find('(') {
        Some(open) => {
            let inner = text[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| CliError::config(format!("kernel '{text}' is missing ')'")))?;
            (&text[..open], inner)
        }
        None => (text, ""),
    };
    let mut kv = BTreeMap::new();
    for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| {
            CliError::config(format!("kernel '{text}': expected key=value, got '{part}'"))
        })?;
        let v: f64 = v.trim().parse().map_err(|_| {
            CliError::config(format!("kernel '{text}': '{}' is not a number", v.trim()))
        })?;
        kv.insert(k.trim().to_string(), v);
    }
    let mut take = |key: &str, default: f64| kv.remove(key).unwrap_or(default);
    let spec = match family.trim() {
        "gaussian" => {
            let ell = take("length_scale", f64::NAN);
            let gamma = take("gamma", f64::NAN);
            match (ell.is_nan(), gamma.is_nan()) {
                (false, false) => {
                    return Err(CliError::config(format!(
                        "kernel '{text}': give gamma or length_scale, not both"
                    )))
                }
                (false, true) => KernelSpec::gaussian_length_scale(ell),
                (true, false) => KernelSpec::gaussian(gamma),
                (true, true) => KernelSpec::gaussian(1.0),
            }
        }
        "exponential" => KernelSpec::Exponential {
            gamma: take("gamma", 1.0),
        },
        "laplacian" => KernelSpec::Laplacian {
            gamma: take("gamma", 1.0),
        },
        "cauchy" => KernelSpec::Cauchy {
            gamma: take("gamma", 1.0),
        },
        "inverse_quadratic" => KernelSpec::InverseQuadratic {
            gamma: take("gamma", 1.0),
        },
        "triangular" => KernelSpec::Triangular {
            sigma: take("sigma", 2.0),
        },
        "sigmoid" => KernelSpec::Sigmoid {
            gamma: take("gamma", 0.5),
            coef0: take("coef0", 0.0),
        },
        "polynomial" => {
            let d = take("degree", 2.0);
            if d.fract() != 0.0 || !(1.0..=64.0).contains(&d) {
                return Err(CliError::config(format!(
                    "kernel '{text}': degree must be an integer in 1..=64"
                )));
            }
            KernelSpec::polynomial(d as u32, take("coef0", 1.0))
        }
        "singular_1d" => KernelSpec::Singular1d,
        other => return Err(CliError::config(format!("unknown kernel family '{other}'"))),
    };
    if let Some(k) = kv.keys().next() {
        return Err(CliError::config(format!(
            "kernel '{text}': unknown parameter '{k}'"
        )));
    }
    spec.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(spec)
}

/// Subcommands that run an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Mkl,
    PathIntegral,
    Mercer,
    Unify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Mkl => "mkl",
            Command::PathIntegral => "path-integral",
            Command::Mercer => "mercer",
            Command::Unify => "unify",
        }
    }
}

/// What a kernel section resolves to before any numerics run.
#[derive(Debug, Clone)]
pub enum KernelChoice {
    Single(KernelSpec),
    RankOne,
    Mixture(Vec<KernelSpec>, Vec<f64>),
}

/// Everything a run needs, checked against the schema and the system.
#[derive(Debug, Clone)]
pub struct Plan {
    pub command: Command,
    pub system: Option<SystemDef>,
    pub lambda: Option<f64>,
    pub kernel: Option<KernelChoice>,
    pub points: Vec<Vec<f64>>,
    pub penalties: PenaltyConfig,
}

impl ExperimentConfig {
    fn section<'a, T>(
        &self,
        s: &'a Option<T>,
        name: &str,
        cmd: Command,
    ) -> Result<&'a T, CliError> {
        s.as_ref().ok_or_else(|| {
            CliError::config(format!("`{}` requires a [{name}] section", cmd.name()))
        })
    }

    fn system_def(&self, cmd: Command) -> Result<SystemDef, CliError> {
        let s = self.section(&self.system, "system", cmd)?;
        SystemDef::from_name(&s.name, &s.params).map_err(|e| CliError::config(e.to_string()))
    }

    fn eigenvalue(&self, sys: &SystemDef) -> Result<f64, CliError> {
        let lin = linearize(sys).map_err(|e| CliError::config(e.to_string()))?;
        match (self.eigen.lambda, self.eigen.index) {
            (Some(l), None) => {
                let i = lin
                    .index_of(l)
                    .map_err(|e| CliError::config(e.to_string()))?;
                Ok(lin.eigenvalues[i])
            }
            (None, Some(i)) => lin.eigenvalues.get(i).copied().ok_or_else(|| {
                CliError::config(format!(
                    "eigen index {i} out of range for {} eigenvalues",
                    lin.eigenvalues.len()
                ))
            }),
            _ => Err(CliError::config(
                "[eigen] needs exactly one of `lambda` or `index`",
            )),
        }
    }

    fn grid_points(&self, cmd: Command, dim: Option<usize>) -> Result<Vec<Vec<f64>>, CliError> {
        let g = self.section(&self.grid, "grid", cmd)?;
        if g.counts.iter().any(|&c| c < 2) {
            return Err(CliError::config("grid counts must be at least 2 per axis"));
        }
        if let Some(d) = dim {
            if g.counts.len() != d {
                return Err(CliError::config(format!(
                    "grid has {} axes but the system has dimension {d}",
                    g.counts.len()
                )));
            }
        }
        if g.counts.iter().product::<usize>() > 10_000 {
            return Err(CliError::config("grids are capped at 10000 points"));
        }
        if g.domain_lower.is_some() != g.domain_upper.is_some() {
            return Err(CliError::config(
                "give both domain_lower and domain_upper, or neither",
            ));
        }
        koopman_rkhs::grid::uniform_grid(&g.lower, &g.upper, &g.counts)
            .map_err(|e| CliError::config(e.to_string()))
    }

    fn kernel_choice(&self, cmd: Command, allow_rank_one: bool) -> Result<KernelChoice, CliError> {
        match (&self.kernel, &self.mixture) {
            (Some(k), None) => {
                if k.spec.trim() == "rank_one" {
                    if !allow_rank_one {
                        return Err(CliError::config(format!(
                            "`{}` does not support the rank_one kernel",
                            cmd.name()
                        )));
                    }
                    self.section(&self.path_integral, "path_integral", cmd)?;
                    return Ok(KernelChoice::RankOne);
                }
                Ok(KernelChoice::Single(parse_kernel(&k.spec)?))
            }
            (None, Some(m)) => {
                if m.kernels.len() != m.weights.len() || m.kernels.is_empty() {
                    return Err(CliError::config(
                        "[mixture] needs matching, nonempty kernels and weights",
                    ));
                }
                let ks = m
                    .kernels
                    .iter()
                    .map(|s| parse_kernel(s))
                    .collect::<Result<Vec<_>, _>>()?;
                koopman_rkhs::kernels::KernelMixture::new(ks.clone(), m.weights.clone())
                    .map_err(|e| CliError::config(e.to_string()))?;
                Ok(KernelChoice::Mixture(ks, m.weights.clone()))
            }
            (Some(_), Some(_)) => Err(CliError::config(
                "give either [kernel] or [mixture], not both",
            )),
            (None, None) => Err(CliError::config(format!(
                "`{}` requires a [kernel] or [mixture] section",
                cmd.name()
            ))),
        }
    }

    fn check_path_integral(&self, cmd: Command, dim: usize) -> Result<(), CliError> {
        let p = self.section(&self.path_integral, "path_integral", cmd)?;
        if !(p.horizon > 0.0 && p.horizon.is_finite()) || p.steps == 0 || !(p.fd_step > 0.0) {
            return Err(CliError::config(
                "[path_integral] needs horizon > 0, steps >= 1 and fd_step > 0",
            ));
        }
        if p.probes.iter().any(|x| x.len() != dim) {
            return Err(CliError::config(format!(
                "path_integral probes must have dimension {dim}"
            )));
        }
        Ok(())
    }

    /// Validates the whole config for `cmd` without running any solver.
    pub fn plan(&self, cmd: Command) -> Result<Plan, CliError> {
        if self.experiment.name.is_empty()
            || !self
                .experiment
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(CliError::config(
                "experiment name must be nonempty [A-Za-z0-9_-]",
            ));
        }
        let penalties = self.penalties.to_config();
        penalties
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        let mut plan = Plan {
            command: cmd,
            system: None,
            lambda: None,
            kernel: None,
            points: Vec::new(),
            penalties,
        };
        match cmd {
            Command::Solve => {
                let sys = self.system_def(cmd)?;
                plan.lambda = Some(self.eigenvalue(&sys)?);
                plan.points = self.grid_points(cmd, Some(sys.dim()))?;
                plan.kernel = Some(self.kernel_choice(cmd, true)?);
                if matches!(plan.kernel, Some(KernelChoice::RankOne)) {
                    self.check_path_integral(cmd, sys.dim())?;
                }
                plan.system = Some(sys);
            }
            Command::Mkl => {
                let sys = self.system_def(cmd)?;
                plan.lambda = Some(self.eigenvalue(&sys)?);
                plan.points = self.grid_points(cmd, Some(sys.dim()))?;
                let m = self.section(&self.mkl, "mkl", cmd)?;
                let ks = m
                    .kernels
                    .iter()
                    .map(|s| parse_kernel(s))
                    .collect::<Result<Vec<_>, _>>()?;
                self.mkl_config(ks)
                    .validate()
                    .map_err(|e| CliError::config(e.to_string()))?;
                plan.system = Some(sys);
            }
            Command::PathIntegral => {
                let sys = self.system_def(cmd)?;
                plan.lambda = Some(self.eigenvalue(&sys)?);
                self.check_path_integral(cmd, sys.dim())?;
                if self.grid.is_some() {
                    plan.points = self.grid_points(cmd, Some(sys.dim()))?;
                }
                plan.system = Some(sys);
            }
            Command::Mercer => {
                self.section(&self.mercer, "mercer", cmd)?;
                plan.points = self.grid_points(cmd, None)?;
                plan.kernel = Some(self.kernel_choice(cmd, false)?);
                if let Some(KernelChoice::Single(KernelSpec::Singular1d)) = &plan.kernel {
                    if plan
                        .points
                        .iter()
                        .any(|p| p.len() != 1 || p[0].abs() >= 1.0)
                    {
                        return Err(CliError::config(
                            "singular_1d needs a 1D grid inside (-1, 1)",
                        ));
                    }
                }
            }
            Command::Unify => {
                let u = self.section(&self.unify, "unify", cmd)?;
                if u.c == 0.0
                    || !u.c.is_finite()
                    || !(u.lambda > 0.0)
                    || !(u.lower < u.upper)
                    || u.count < 2
                    || u.order < 1
                {
                    return Err(CliError::config(
                        "[unify] needs c != 0, lambda > 0, lower < upper, count >= 2, order >= 1",
                    ));
                }
            }
        }
        Ok(plan)
    }

    pub fn mkl_config(&self, base_kernels: Vec<KernelSpec>) -> koopman_rkhs::mkl::MklConfig {
        let m = self.mkl.clone().unwrap_or_default();
        let mut cfg = koopman_rkhs::mkl::MklConfig {
            base_kernels,
            eta: self.penalties.eta,
            mu_grad: self.penalties.mu_grad,
            lambda_l1: m.lambda_l1,
            tau: m.tau,
            seed: self.experiment.seed,
            ..Default::default()
        };
        cfg.optimizer.max_iter = m.max_iter;
        cfg.optimizer.grad_tol = m.grad_tol;
        cfg
    }
}
