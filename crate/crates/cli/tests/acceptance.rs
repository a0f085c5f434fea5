//! Acceptance criteria. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

#![allow(
    clippy::redundant_closure_call,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command as Process;
use std::time::Instant;

use koopman_rkhs::dynamics::{
    characteristic_identity_residual, flow, linearize, Direction, IntegratorConfig, SystemDef,
};
use koopman_rkhs::grid::{uniform_grid, uniform_weights};
use koopman_rkhs::kernels::{gram, Kernel, KernelSpec};
use koopman_rkhs::mkl::{mkl_solve, MklConfig};
use koopman_rkhs::path_integral::{mode_kernel_select, XiEvaluator};
use koopman_rkhs::spectral::{
    koopman_mode_check, mercer_decompose, trajectory_eigenrelation_check,
};
use koopman_rkhs::variational::{
    normal_equations, rescale_rmse, CollocationProblem, PenaltyConfig,
};
use koopman_rkhs_cli::config::{KernelSection, MixtureSection, PathIntegralSection};
use koopman_rkhs_cli::{execute, preset, Command, ExperimentConfig, Outcome};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn run_preset(name: &str, cmd: Command) -> (Outcome, f64) {
    let cfg = preset(name).expect("preset exists");
    run_cfg(&cfg, cmd)
}

fn run_cfg(cfg: &ExperimentConfig, cmd: Command) -> (Outcome, f64) {
    let t = Instant::now();
    let out = execute(cmd, cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.experiment.name));
    (out, t.elapsed().as_secs_f64())
}

fn metric(o: &Outcome, key: &str) -> f64 {
    o.num(key).unwrap_or_else(|| panic!("metric {key} missing"))
}

fn criterion_1() -> Verdict {
    let (sing, t_sing) = run_preset("cubic1d_singular", Command::Solve);
    let (rbf, _) = run_preset("cubic1d_rbf", Command::Solve);
    let (a, b) = (
        metric(&sing, "rmse_rescaled"),
        metric(&rbf, "rmse_rescaled"),
    );
    let pass = a <= 5e-4 && b >= 0.5 && b / a >= 1e3 && t_sing < 5.0;
    verdict(pass, format!("singular rmse={a:.3e} (<=5e-4, {t_sing:.2}s <5s); rbf rmse={b:.3e} (>=0.5); gap {:.1e}x", b / a))
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let (poly, _) = run_preset("poly2d_kernel_study", Command::Solve);
    let mut cfg = preset("poly2d_kernel_study").unwrap();
    cfg.kernel = Some(KernelSection {
        spec: "gaussian(gamma=1)".into(),
    });
    let (gauss, _) = run_cfg(&cfg, Command::Solve);
    let secs = t.elapsed().as_secs_f64();
    let (p, g) = (
        metric(&poly, "rmse_rescaled"),
        metric(&gauss, "rmse_rescaled"),
    );
    let pass = p <= 1e-4 && g <= 1e-2 && g / p >= 10.0 && secs < 10.0;
    verdict(
        pass,
        format!(
            "polynomial rmse={p:.3e} (<=1e-4); gaussian rmse={g:.3e} (<=1e-2); ratio {:.1e} (>=10); {secs:.2}s (<10s)",
            g / p
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, bound) in [("poly2d_mkl_l1", 0.25), ("poly2d_mkl_l2eig", 0.15)] {
        let (o, secs) = run_preset(name, Command::Mkl);
        let (lo, hi, r) = (
            metric(&o, "beta_min"),
            metric(&o, "beta_max"),
            metric(&o, "rmse_rescaled"),
        );
        pass &= lo >= 0.08 && hi <= 0.10 && r <= bound && secs < 60.0;
        parts.push(format!(
            "lambda={}: beta in [{lo:.4}, {hi:.4}] (within [0.08, 0.10]), rmse={r:.3e} (<={bound}), {secs:.2}s",
            metric(&o, "lambda")
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_4() -> Verdict {
    let (o, _) = run_preset("poly2d_mkl_l1", Command::Mkl);
    let empty = o.text("pruned_model") == Some("empty");
    let mut cfg = preset("poly2d_kernel_study").unwrap();
    cfg.experiment.name = "poly2d_pruned_refit".into();
    cfg.kernel = None;
    cfg.mixture = Some(MixtureSection {
        kernels: (2..=4)
            .map(|d| format!("polynomial(degree={d},coef0=1)"))
            .collect(),
        weights: vec![0.331, 0.378, 0.291],
    });
    let (refit, _) = run_cfg(&cfg, Command::Solve);
    let r = metric(&refit, "rmse_rescaled");
    verdict(empty && r <= 0.2, format!("uniform solution pruned to empty model: {empty}; hand-set mixture refit rmse={r:.3e} (<=0.2)"))
}

fn criterion_5() -> Verdict {
    let (o, secs) = run_preset("unify_advection", Command::Unify);
    let (dev, diag) = (metric(&o, "max_rel_dev"), metric(&o, "diagonal_law_error"));
    let rows = o.table("unify").map_or(0, |t| t.rows.len());
    verdict(
        dev <= 1e-3 && diag <= 1e-3 && secs < 1.0 && rows == 400,
        format!("max_rel_dev={dev:.3e} (<=1e-3); diagonal law error={diag:.3e} (<=1e-3); {rows} pairs; {secs:.3}s (<1s)"),
    )
}

fn criterion_6() -> Verdict {
    let sys = SystemDef::poly2d(-1.0, 3.0);
    let pair = sys.reference_for(3.0).unwrap().clone();
    // Probes hug the curve x1 = x2², near which backward orbits stay bounded
    // for the whole horizon.
    let mut probes = Vec::new();
    for x2 in [-0.35, -0.2, 0.15, 0.25, 0.4] {
        for off in [-2e-3, -1e-3, 0.0, 1e-3, 2e-3] {
            probes.push(vec![x2 * x2 + off, x2]);
        }
    }
    let r =
        trajectory_eigenrelation_check(&sys, &|x: &[f64]| (pair.phi)(x), 3.0, &probes, 6.0, 4000)
            .unwrap();
    verdict(
        r.max_deviation <= 1e-2 && r.excluded == 0,
        format!(
            "max deviation={:.3e} (<=1e-2) over {} probes, truncation bound {:.1e}",
            r.max_deviation,
            probes.len(),
            r.truncation_bound
        ),
    )
}

fn criterion_7() -> Verdict {
    let sys = SystemDef::poly2d(-1.0, 3.0);
    let grid = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[21, 21]).unwrap();
    let funcs: Vec<Vec<f64>> = sys
        .reference_eigenpairs()
        .iter()
        .map(|p| grid.iter().map(|x| (p.phi)(x)).collect())
        .collect();
    let r = koopman_mode_check(&funcs, &uniform_weights(grid.len())).unwrap();
    verdict(
        r.max_deviation <= 1e-8 && r.subspace_angle <= 1e-6,
        format!(
            "spectrum deviation from (1,1,0,...)={:.3e} (<=1e-8); subspace angle={:.3e} (<=1e-6)",
            r.max_deviation, r.subspace_angle
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut notes = Vec::new();
    let sys = SystemDef::poly2d(-1.0, 3.0);
    let exact = sys.reference_for(-1.0).unwrap().clone();

    // Path-integral value at T = 10 against the closed form, through the CLI runner.
    let mut cfg = preset("poly2d_kernel_study").unwrap();
    cfg.experiment.name = "poly2d_path_integral".into();
    cfg.kernel = None;
    cfg.grid = None;
    let probe = vec![0.4, 0.3];
    cfg.path_integral = Some(PathIntegralSection {
        horizon: 10.0,
        steps: 2000,
        fd_step: 1e-5,
        probes: vec![probe.clone()],
    });
    let value_ok = match execute(Command::PathIntegral, &cfg) {
        Ok(o) => {
            let err = metric(&o, "max_abs_err");
            notes.push(format!(
                "xi_10{probe:?} error vs closed form={err:.3e} (<=1e-3)"
            ));
            err <= 1e-3
        }
        Err(e) => {
            notes.push(format!(
                "xi_10{probe:?} vs closed form {:.4}: run failed ({}: {})",
                (exact.phi)(&probe),
                e.kind,
                e.reason
            ));
            false
        }
    };

    // Residual decay rate over T in {2, 4, 6, 8}.
    let lin = linearize(&sys).unwrap();
    let horizons = [2.0, 4.0, 6.0, 8.0];
    let mut logs = Vec::new();
    let mut failure = None;
    for &t in &horizons {
        let pic = mode_kernel_select(&lin, -1.0, t, (250.0 * t) as usize).unwrap();
        let ev = XiEvaluator::new(sys.clone(), lin.clone(), pic).unwrap();
        match ev.koopman_residual_t(&probe, 1e-5) {
            Ok(r) => logs.push((t, r.abs().ln())),
            Err(e) => {
                failure = Some(format!("T={t}: {e}"));
                break;
            }
        }
    }
    let target = -1.0_f64.abs();
    let slope_ok = if logs.len() == horizons.len() {
        let n = logs.len() as f64;
        let mt = logs.iter().map(|p| p.0).sum::<f64>() / n;
        let ml = logs.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = logs.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum::<f64>()
            / logs.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
        notes.push(format!(
            "log|R_T| slope={slope:.3} (target {target} within 20%)"
        ));
        (slope - target).abs() <= 0.2 * target.abs()
    } else {
        let seen: Vec<String> = logs
            .iter()
            .map(|(t, l)| format!("T={t}: |R|={:.3e}", l.exp()))
            .collect();
        notes.push(format!(
            "log|R_T| slope: unavailable [{}; {}]",
            seen.join(", "),
            failure.unwrap_or_default()
        ));
        false
    };

    // Duffing preset: mean PDE residual relative to mean |phi| on the training grid.
    let (duff, _) = run_preset("duffing_char", Command::Solve);
    let ratio = metric(&duff, "residual_ratio");
    notes.push(format!("duffing mean|res|/mean|phi|={ratio:.3e} (<=1e-2)"));

    verdict(value_ok && slope_ok && ratio <= 1e-2, notes.join("; "))
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_koopman-rkhs"))
}

fn cli_round_trip_and_determinism() -> Result<String, String> {
    let base = std::env::temp_dir().join(format!("koopman-rkhs-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).map_err(|e| e.to_string())?;
    for name in ["cubic1d_singular", "poly2d_kernel_study", "unify_advection"] {
        let shown = Process::new(bin())
            .args(["preset", name])
            .output()
            .map_err(|e| e.to_string())?;
        let text = String::from_utf8(shown.stdout).map_err(|e| e.to_string())?;
        if ExperimentConfig::from_toml_str(&text).ok() != preset(name) {
            return Err(format!("{name}: preset TOML does not round-trip"));
        }
        let cfg_path = base.join(format!("{name}.toml"));
        std::fs::write(&cfg_path, &text).map_err(|e| e.to_string())?;
        let sub = koopman_rkhs_cli::preset_command(name).unwrap().name();
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let dir = base.join(format!("{name}-{run}"));
            let st = Process::new(bin())
                .args([
                    sub,
                    "--config",
                    cfg_path.to_str().unwrap(),
                    "--out",
                    dir.to_str().unwrap(),
                    "--seed",
                    "7",
                ])
                .output()
                .map_err(|e| e.to_string())?;
            if !st.status.success() {
                return Err(format!("{name}: exit status {}", st.status));
            }
            let mut files: Vec<_> = std::fs::read_dir(&dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            files.sort();
            outputs.push(
                files
                    .iter()
                    .map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(f).unwrap()))
                    .collect::<Vec<_>>(),
            );
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{name}: outputs differ between identical runs"));
        }
    }
    let _ = std::fs::remove_dir_all(&base);
    Ok("3 presets round-trip and rerun byte-identically".into())
}

fn criterion_9() -> Verdict {
    let mut lines = Vec::new();
    let mut all = true;
    let mut check = |name: &str, r: Result<String, String>| match &r {
        Ok(m) => lines.push(format!("{name} ok ({m})")),
        Err(m) => {
            all = false;
            lines.push(format!("{name} FAILED ({m})"));
        }
    };

    check(
        "kernels",
        (|| {
            let pts = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[6, 6]).unwrap();
            for k in koopman_rkhs::kernels::default_base_kernels() {
                let g = gram(&k, &pts).unwrap();
                if koopman_rkhs::linalg::max_asymmetry(&g.values) > 1e-12 {
                    return Err(format!("{k} asymmetric"));
                }
                if !k.is_indefinite()
                    && !matches!(k, KernelSpec::Triangular { .. })
                    && g.min_eigenvalue() < -1e-8 * g.values.diagonal().amax()
                {
                    return Err(format!("{k} not PSD"));
                }
                let (x, y) = ([0.3, -0.4], [-0.5, 0.2]);
                let gr = k.grad_x(&x, &y).unwrap();
                for i in 0..2 {
                    let (mut xp, mut xm) = (x, x);
                    xp[i] += 1e-5;
                    xm[i] -= 1e-5;
                    let fd = (k.eval(&xp, &y).unwrap() - k.eval(&xm, &y).unwrap()) / 2e-5;
                    if (fd - gr[i]).abs() > 1e-5 * gr[i].abs().max(1e-4) {
                        return Err(format!("{k} gradient axis {i}"));
                    }
                }
            }
            Ok("11 base kernels: symmetry, PSD, gradient".into())
        })(),
    );

    check(
        "dynamics",
        (|| {
            let decay = SystemDef::new("decay", 1, |x, o| o[0] = -x[0]).unwrap();
            let err = |dt: f64| {
                let c = IntegratorConfig::from_step(dt, 1.0).unwrap();
                (flow(&decay, &[1.0], &c, Direction::Forward)
                    .unwrap()
                    .final_state()[0]
                    - (-1.0f64).exp())
                .abs()
            };
            let ratio = err(0.05) / err(0.025);
            if !(12.0..=20.0).contains(&ratio) {
                return Err(format!("RK4 ratio {ratio}"));
            }
            let lin_sys = SystemDef::linear_test(-1.0, -2.0);
            let c = |t| IntegratorConfig::from_step(1e-3, t).unwrap();
            let whole = flow(&lin_sys, &[0.5, 0.5], &c(1.0), Direction::Forward).unwrap();
            let half = flow(&lin_sys, &[0.5, 0.5], &c(0.5), Direction::Forward).unwrap();
            let two = flow(&lin_sys, half.final_state(), &c(0.5), Direction::Forward).unwrap();
            let gap = (whole.final_state()[0] - two.final_state()[0])
                .abs()
                .max((whole.final_state()[1] - two.final_state()[1]).abs());
            let single = (whole.final_state()[0] - 0.5 * (-1.0f64).exp())
                .abs()
                .max((whole.final_state()[1] - 0.5 * (-2.0f64).exp()).abs());
            if gap > 5.0 * single.max(1e-15) {
                return Err(format!("semigroup gap {gap:e}"));
            }
            Ok(format!("RK4 ratio {ratio:.2}, semigroup gap {gap:.1e}"))
        })(),
    );

    check(
        "characteristic identity",
        (|| {
            let sys = SystemDef::poly2d(-1.0, 3.0);
            let mut worst = 0.0_f64;
            for pair in sys.reference_eigenpairs() {
                for x0 in uniform_grid(&[-0.5, -0.5], &[0.5, 0.5], &[5, 5]).unwrap() {
                    let r = characteristic_identity_residual(
                        &sys,
                        &|x: &[f64]| (pair.phi)(x),
                        pair.lambda,
                        &x0,
                        0.5,
                        1e-3,
                    )
                    .unwrap();
                    worst = worst.max(r);
                }
            }
            if worst <= 1e-4 {
                Ok(format!("max {worst:.1e}"))
            } else {
                Err(format!("max {worst:.1e}"))
            }
        })(),
    );

    check(
        "variational",
        (|| {
            let pts = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[11, 11]).unwrap();
            let p = CollocationProblem::with_left_eigenvector(
                SystemDef::poly2d(-1.0, 3.0),
                -1.0,
                KernelSpec::polynomial(2, 0.5),
                pts,
                PenaltyConfig::default(),
            )
            .unwrap();
            let asm = p.assemble().unwrap();
            let (a, _) = normal_equations(&asm, &p.penalties, &p.anchor.target);
            let min_eig = koopman_rkhs::linalg::min_eigenvalue(&a);
            if !(min_eig > 0.0) {
                return Err(format!("normal matrix min eigenvalue {min_eig:e}"));
            }
            let s1 = p.solve().unwrap();
            let mut p2 = p.clone();
            p2.anchor.target = p.anchor.target.iter().map(|v| 2.0 * v).collect();
            let s2 = p2.solve().unwrap();
            let rel = (&s2.alpha - &s1.alpha * 2.0).norm() / (2.0 * s1.alpha.norm());
            if rel > 1e-10 {
                return Err(format!("scale covariance {rel:e}"));
            }
            let l = s1.evaluate(&p.points).unwrap();
            let r: Vec<f64> = p.points.iter().map(|x| x[0] - x[1] * x[1]).collect();
            let a1 = rescale_rmse(&l, &r).unwrap().1;
            let a2 = rescale_rmse(&l.iter().map(|v| -3.7 * v).collect::<Vec<_>>(), &r)
                .unwrap()
                .1;
            if (a1 - a2).abs() > 1e-12 {
                return Err("rescaled rmse not scale invariant".into());
            }
            Ok(format!(
                "min eigenvalue {min_eig:.1e}, covariance {rel:.1e}"
            ))
        })(),
    );

    check(
        "mkl",
        (|| {
            let pts = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[7, 7]).unwrap();
            let sys = SystemDef::poly2d(-1.0, 3.0);
            let a = mkl_solve(&sys, 3.0, &pts, &MklConfig::default()).unwrap();
            let b = mkl_solve(&sys, 3.0, &pts, &MklConfig::default()).unwrap();
            for beta in &a.diagnostics.beta_trace {
                if (beta.iter().sum::<f64>() - 1.0).abs() > 1e-9 || beta.iter().any(|&v| !(v > 0.0))
                {
                    return Err("iterate left the simplex".into());
                }
            }
            let bits =
                |t: &Vec<Vec<f64>>| t.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            if bits(&a.diagnostics.beta_trace) != bits(&b.diagnostics.beta_trace) {
                return Err("beta traces differ".into());
            }
            Ok(format!(
                "{} iterates feasible, traces bitwise equal",
                a.diagnostics.beta_trace.len()
            ))
        })(),
    );

    check(
        "mercer",
        (|| {
            let grid = uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[8, 8]).unwrap();
            let k = KernelSpec::gaussian(1.0);
            let dec = mercer_decompose(&k, &grid, &uniform_weights(grid.len())).unwrap();
            let g = gram(&k, &grid).unwrap().values;
            let rec = (dec.reconstruct(grid.len()) - &g).amax() / g.amax();
            let orth = dec.orthonormality_error();
            if rec <= 1e-8 && orth <= 1e-8 {
                Ok(format!(
                    "reconstruction {rec:.1e}, orthonormality {orth:.1e}"
                ))
            } else {
                Err(format!("{rec:e} {orth:e}"))
            }
        })(),
    );

    check("cli", cli_round_trip_and_determinism());
    verdict(all, lines.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("singular-kernel cubic vs RBF", criterion_1),
        ("kernel-choice study", criterion_2),
        ("11-kernel MKL weights and accuracy", criterion_3),
        ("sparsification and pruned refit", criterion_4),
        ("advection kernel unification", criterion_5),
        ("trajectory-integral eigen-oracle", criterion_6),
        ("finite-rank mode oracle", criterion_7),
        ("path-integral consistency", criterion_8),
        ("property suites", criterion_9),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|s| id.contains(s.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {id} {title} [{:.2}s]: {}",
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
