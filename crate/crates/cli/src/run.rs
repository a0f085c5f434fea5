//! Subcommand runners. Each takes a validated config and returns an [`Outcome`].

use std::sync::Arc;

use koopman_rkhs::dynamics::{linearize, SystemDef};
use koopman_rkhs::grid::{uniform_weights, Domain};
use koopman_rkhs::kernels::{gram, Kernel, KernelMixture};
use koopman_rkhs::mkl::{mkl_solve, refit_pruned};
use koopman_rkhs::path_integral::{mode_kernel_select, rank_one_kernel, XiEvaluator};
use koopman_rkhs::spectral::mercer_decompose;
use koopman_rkhs::transport::{unification_check, AdvectionProblem};
use koopman_rkhs::variational::{rescale_rmse, CollocationProblem, Solution};

use crate::config::{parse_kernel, Command, ExperimentConfig, KernelChoice, Plan};
use crate::error::CliError;
use crate::output::{Outcome, Table, Value};

/// Validates `cfg` for `cmd`, then runs it.
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let plan = cfg.plan(cmd)?;
    let mut out = Outcome::new(&cfg.experiment.name, cmd.name());
    out.put("seed", cfg.experiment.seed as usize);
    match cmd {
        Command::Solve => solve(cfg, &plan, &mut out)?,
        Command::Mkl => mkl(cfg, &plan, &mut out)?,
        Command::PathIntegral => path_integral(cfg, &plan, &mut out)?,
        Command::Mercer => mercer(cfg, &plan, &mut out)?,
        Command::Unify => unify(cfg, &mut out)?,
    }
    Ok(out)
}

fn evaluator(
    cfg: &ExperimentConfig,
    sys: &SystemDef,
    lambda: f64,
) -> Result<XiEvaluator, CliError> {
    let p = cfg.path_integral.as_ref().expect("validated");
    let lin = linearize(sys)?;
    let pic = mode_kernel_select(&lin, lambda, p.horizon, p.steps)?;
    Ok(XiEvaluator::new(sys.clone(), lin, pic)?.with_fd_step(p.fd_step))
}

fn put_penalties(out: &mut Outcome, plan: &Plan) {
    let p = &plan.penalties;
    out.put("penalty.eta", p.eta);
    out.put("penalty.mu_grad", p.mu_grad);
    out.put("penalty.mu_trace", p.mu_trace);
    out.put("penalty.mu_layer", p.mu_layer);
    out.put("penalty.layer_fraction", p.layer_fraction);
    out.put("penalty.exact_anchor", p.exact_anchor);
}

fn coord_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

/// Solution table and fit metrics, shared by `solve` and `mkl`.
fn report_solution(out: &mut Outcome, sol: &Solution, points: &[Vec<f64>]) -> Result<(), CliError> {
    let d = &sol.diagnostics;
    out.put("lambda", sol.lambda);
    out.put("n_points", points.len());
    out.put("kernel", sol.kernel.label());
    out.put("residual_norm", d.residual_norm);
    out.put("anchor_error", d.anchor_error);
    for (i, g) in d.derivative_at_anchor.iter().enumerate() {
        out.put(format!("derivative_at_anchor.{}", i + 1), *g);
    }
    out.put("jitter", d.jitter);
    out.put("non_smooth_evaluations", d.non_smooth_evaluations);
    out.put_opt("rmse_raw", d.rmse_raw);
    out.put_opt("rmse_rescaled", d.rmse_rescaled);
    out.put_opt("c_star", d.rescale_factor);

    let phi = sol.evaluate(points)?;
    let res = sol.residual_field(points)?;
    let n = points.len() as f64;
    let mean_res = res.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_phi = phi.iter().map(|v| v.abs()).sum::<f64>() / n;
    out.put("mean_abs_residual", mean_res);
    out.put("mean_abs_phi", mean_phi);
    if mean_phi > 0.0 {
        out.put("residual_ratio", mean_res / mean_phi);
    }

    let dim = points[0].len();
    let mut header = coord_header(dim);
    header.push("phi".into());
    let reference = sol.system.reference_for(sol.lambda);
    let exact: Option<Vec<f64>> = reference.map(|r| points.iter().map(|p| (r.phi)(p)).collect());
    let scale = match &exact {
        Some(e) => Some(rescale_rmse(&phi, e)?.0),
        None => None,
    };
    if exact.is_some() {
        header.extend(["phi_ref".into(), "abs_err".into()]);
    } else {
        header.push("residual".into());
    }
    let mut t = Table::new("solution", header);
    for (i, p) in points.iter().enumerate() {
        let mut row: Vec<Value> = p.iter().map(|&v| v.into()).collect();
        row.push(phi[i].into());
        match (&exact, scale) {
            (Some(e), Some(c)) => {
                row.push(e[i].into());
                row.push((c * phi[i] - e[i]).abs().into());
            }
            _ => row.push(res[i].into()),
        }
        t.rows.push(row);
    }
    out.tables.push(t);
    Ok(())
}

fn solve(cfg: &ExperimentConfig, plan: &Plan, out: &mut Outcome) -> Result<(), CliError> {
    let sys = plan.system.clone().expect("validated");
    let lambda = plan.lambda.expect("validated");
    let kernel: Arc<dyn Kernel> = match plan.kernel.clone().expect("validated") {
        KernelChoice::Single(k) => {
            for (i, w) in k.validate()?.into_iter().enumerate() {
                out.put(format!("warning.{}", i + 1), w);
            }
            Arc::new(k)
        }
        KernelChoice::Mixture(ks, ws) => Arc::new(KernelMixture::new(ks, ws)?),
        KernelChoice::RankOne => {
            let ev = evaluator(cfg, &sys, lambda)?;
            let p = ev.config();
            out.put("path_integral.horizon", p.horizon);
            out.put("path_integral.steps", p.steps);
            out.put(
                "path_integral.direction",
                format!("{:?}", p.direction).to_lowercase(),
            );
            Arc::new(rank_one_kernel(Arc::new(ev)))
        }
    };
    let mut problem = CollocationProblem::with_left_eigenvector_arc(
        sys,
        lambda,
        kernel,
        plan.points.clone(),
        plan.penalties.clone(),
    )?;
    let g = cfg.grid.as_ref().expect("validated");
    if let (Some(lo), Some(hi)) = (&g.domain_lower, &g.domain_upper) {
        problem = problem.with_domain(Domain::new(lo.clone(), hi.clone())?)?;
    }
    put_penalties(out, plan);
    out.put("trace_points", problem.trace_points().len());
    out.put("layer_points", problem.layer_points().len());
    let sol = problem.solve()?;
    report_solution(out, &sol, &plan.points)
}

fn mkl(cfg: &ExperimentConfig, plan: &Plan, out: &mut Outcome) -> Result<(), CliError> {
    let sys = plan.system.as_ref().expect("validated");
    let lambda = plan.lambda.expect("validated");
    let section = cfg.mkl.as_ref().expect("validated");
    let kernels = section
        .kernels
        .iter()
        .map(|s| parse_kernel(s))
        .collect::<Result<Vec<_>, _>>()?;
    let mcfg = cfg.mkl_config(kernels);
    let result = mkl_solve(sys, lambda, &plan.points, &mcfg)?;
    let diag = &result.diagnostics;

    put_penalties(out, plan);
    out.put("mkl.lambda_l1", mcfg.lambda_l1);
    out.put("mkl.tau", mcfg.tau);
    out.put("mkl.mode", diag.mode);
    out.put("mkl.iterations", diag.iterations);
    out.put("mkl.converged", diag.converged);
    out.put("mkl.grad_norm", diag.grad_norm);
    out.put("mkl.loss_initial", diag.loss_trace[0]);
    out.put("mkl.loss_final", *diag.loss_trace.last().unwrap());
    out.put("mkl.raw_weight_sum", diag.raw_weight_sum);
    let bmin = result.beta.iter().copied().fold(f64::INFINITY, f64::min);
    let bmax = result
        .beta
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    out.put("beta_min", bmin);
    out.put("beta_max", bmax);
    let kept = result.pruned_beta.iter().filter(|&&b| b > 0.0).count();
    out.put("pruned_kernels", kept);
    out.put(
        "pruned_model",
        if result.pruned_beta.is_empty() {
            "empty"
        } else {
            "nonempty"
        },
    );
    if let Some(mix) = result.pruned_mixture() {
        let refit = refit_pruned(sys, lambda, &plan.points, Some(mix), plan.penalties.clone())?;
        out.put_opt("pruned_rmse", refit.diagnostics.rmse_rescaled);
    }

    let mut w = Table::new(
        "weights",
        vec!["kernel".into(), "beta".into(), "beta_pruned".into()],
    );
    for (i, k) in result.kernels.iter().enumerate() {
        let pruned = result.pruned_beta.get(i).copied().unwrap_or(0.0);
        w.rows.push(vec![
            k.to_string().into(),
            result.beta[i].into(),
            pruned.into(),
        ]);
    }
    out.tables.push(w);
    let mut lt = Table::new("loss", vec!["iteration".into(), "loss".into()]);
    for (i, l) in diag.loss_trace.iter().enumerate() {
        lt.rows.push(vec![i.into(), (*l).into()]);
    }
    out.tables.push(lt);
    report_solution(out, &result.solution, &plan.points)
}

fn path_integral(cfg: &ExperimentConfig, plan: &Plan, out: &mut Outcome) -> Result<(), CliError> {
    let sys = plan.system.as_ref().expect("validated");
    let lambda = plan.lambda.expect("validated");
    let ev = evaluator(cfg, sys, lambda)?;
    let p = ev.config().clone();
    out.put("lambda", p.lambda);
    out.put("path_integral.horizon", p.horizon);
    out.put("path_integral.steps", p.steps);
    out.put(
        "path_integral.direction",
        format!("{:?}", p.direction).to_lowercase(),
    );
    for (i, w) in p.w.iter().enumerate() {
        out.put(format!("w.{}", i + 1), *w);
    }
    if let Some(x0) = sys.equilibrium() {
        out.put("xi_at_equilibrium", ev.xi_truncated(x0)?);
        let g = ev.xi_gradient(x0, cfg.path_integral.as_ref().unwrap().fd_step)?;
        let err = g
            .iter()
            .zip(&p.w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        out.put("gradient_anchor_error", err);
    }

    let mut points = plan.points.clone();
    points.extend(cfg.path_integral.as_ref().unwrap().probes.iter().cloned());
    if points.is_empty() {
        return Ok(());
    }
    let xi: Vec<f64> = ev.xi_batch(&points).into_iter().collect::<Result<_, _>>()?;
    let resid: Vec<f64> = points
        .iter()
        .map(|x| ev.residual_theory(x))
        .collect::<Result<_, _>>()?;
    let reference = sys.reference_for(p.lambda);
    let mut header = coord_header(sys.dim());
    header.extend(["xi".into(), "residual".into()]);
    if reference.is_some() {
        header.extend(["phi_ref".into(), "abs_err".into()]);
    }
    let mut t = Table::new("xi", header);
    let mut max_err = 0.0_f64;
    for (i, x) in points.iter().enumerate() {
        let mut row: Vec<Value> = x.iter().map(|&v| v.into()).collect();
        row.push(xi[i].into());
        row.push(resid[i].into());
        if let Some(r) = reference {
            let e = (r.phi)(x);
            max_err = max_err.max((xi[i] - e).abs());
            row.push(e.into());
            row.push((xi[i] - e).abs().into());
        }
        t.rows.push(row);
    }
    let n = points.len() as f64;
    out.put("n_points", points.len());
    out.put("mean_abs_xi", xi.iter().map(|v| v.abs()).sum::<f64>() / n);
    out.put(
        "mean_abs_residual",
        resid.iter().map(|v| v.abs()).sum::<f64>() / n,
    );
    if reference.is_some() {
        out.put("max_abs_err", max_err);
    }
    out.tables.push(t);
    Ok(())
}

fn mercer(cfg: &ExperimentConfig, plan: &Plan, out: &mut Outcome) -> Result<(), CliError> {
    let kernel: Box<dyn Kernel> = match plan.kernel.clone().expect("validated") {
        KernelChoice::Single(k) => Box::new(k),
        KernelChoice::Mixture(ks, ws) => Box::new(KernelMixture::new(ks, ws)?),
        KernelChoice::RankOne => unreachable!("rejected by validation"),
    };
    let pts = &plan.points;
    let w = uniform_weights(pts.len());
    let dec = mercer_decompose(kernel.as_ref(), pts, &w)?;
    let k = gram(kernel.as_ref(), pts)?.values;
    let recon = (dec.reconstruct(pts.len()) - &k).amax() / k.amax().max(f64::MIN_POSITIVE);
    out.put("kernel", kernel.label());
    out.put("n_points", pts.len());
    out.put("mu_1", dec.eigenvalues[0]);
    out.put("min_relative_eigenvalue", dec.min_relative_eigenvalue);
    out.put("reconstruction_error", recon);
    out.put("orthonormality_error", dec.orthonormality_error());
    for (i, msg) in dec.warnings.iter().enumerate() {
        out.put(format!("warning.{}", i + 1), msg.clone());
    }

    let mut s = Table::new("spectrum", vec!["n".into(), "mu".into()]);
    for (i, mu) in dec.eigenvalues.iter().enumerate() {
        s.rows.push(vec![(i + 1).into(), (*mu).into()]);
    }
    out.tables.push(s);
    let kmodes = cfg.mercer.as_ref().unwrap().modes.min(dec.modes.len());
    let mut header = coord_header(pts[0].len());
    header.extend((1..=kmodes).map(|i| format!("psi_{i}")));
    let mut m = Table::new("modes", header);
    for (i, p) in pts.iter().enumerate() {
        let mut row: Vec<Value> = p.iter().map(|&v| v.into()).collect();
        row.extend(dec.modes.iter().take(kmodes).map(|psi| Value::Num(psi[i])));
        m.rows.push(row);
    }
    out.tables.push(m);
    Ok(())
}

fn unify(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), CliError> {
    let u = cfg.unify.as_ref().expect("validated");
    let grid: Vec<f64> = (0..u.count)
        .map(|i| u.lower + (u.upper - u.lower) * i as f64 / (u.count - 1) as f64)
        .collect();
    let p = AdvectionProblem::for_grid(u.c, u.lambda, &grid)?;
    let q = p.rule_for(&grid, u.order)?;
    let rep = unification_check(&p, &grid, &q)?;
    out.put("c", u.c);
    out.put("lambda", u.lambda);
    out.put("quadrature.a", p.a);
    out.put("quadrature.b", p.b);
    out.put("quadrature.nodes", q.nodes.len());
    out.put("scale_green", rep.scale_green);
    out.put("scale_resolvent", rep.scale_resolvent);
    out.put("max_rel_dev", rep.max_rel_dev);
    out.put("diagonal_law_error", rep.diagonal_law_error);
    let mut t = Table::new(
        "unify",
        [
            "x",
            "y",
            "K_green",
            "K_analytic",
            "K_resolvent_sym",
            "rel_dev",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    );
    for r in &rep.rows {
        t.rows.push(vec![
            r.x.into(),
            r.y.into(),
            r.k_green.into(),
            r.k_analytic.into(),
            r.k_resolvent_sym.into(),
            r.rel_dev.into(),
        ]);
    }
    out.tables.push(t);
    Ok(())
}

/// The built-in systems with their default parameters.
pub fn list_systems() -> String {
    let mut s = String::new();
    for (name, desc) in koopman_rkhs::dynamics::BUILTIN_SYSTEMS {
        let sys = SystemDef::from_name(name, &Default::default()).expect("built-in");
        let params: Vec<String> = sys
            .params()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        s.push_str(&format!(
            "{name}\tdim={}\t{}\t{desc}\n",
            sys.dim(),
            params.join(",")
        ));
    }
    s
}
