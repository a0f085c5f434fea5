//! Named experiment configurations with every default spelled out.

use std::collections::BTreeMap;

use koopman_rkhs::variational::PenaltyConfig;

use crate::config::*;

/// Preset names with the subcommand each is meant for.
pub const PRESETS: [(&str, Command); 7] = [
    ("cubic1d_singular", Command::Solve),
    ("cubic1d_rbf", Command::Solve),
    ("poly2d_kernel_study", Command::Solve),
    ("poly2d_mkl_l1", Command::Mkl),
    ("poly2d_mkl_l2eig", Command::Mkl),
    ("duffing_char", Command::Solve),
    ("unify_advection", Command::Unify),
];

pub fn preset_command(name: &str) -> Option<Command> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

fn base(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentSection {
            name: name.into(),
            seed: 0,
        },
        system: None,
        eigen: EigenSection::default(),
        kernel: None,
        mixture: None,
        grid: None,
        penalties: PenaltySection::default(),
        path_integral: None,
        mkl: None,
        mercer: None,
        unify: None,
        output: OutputSection::default(),
    }
}

fn system(name: &str, params: &[(&str, f64)]) -> Option<SystemSection> {
    Some(SystemSection {
        name: name.into(),
        params: params
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<_, _>>(),
    })
}

fn grid(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Option<GridSection> {
    Some(GridSection {
        lower,
        upper,
        counts,
        domain_lower: None,
        domain_upper: None,
    })
}

fn cubic(name: &str, kernel: &str) -> ExperimentConfig {
    let mut c = base(name);
    c.system = system("cubic1d", &[]);
    c.eigen.lambda = Some(1.0);
    c.kernel = Some(KernelSection {
        spec: kernel.into(),
    });
    c.grid = Some(GridSection {
        lower: vec![-0.99],
        upper: vec![0.99],
        counts: vec![199],
        domain_lower: Some(vec![-1.0]),
        domain_upper: Some(vec![1.0]),
    });
    c.penalties = PenaltySection::from(&PenaltyConfig::with_boundary());
    c
}

fn poly2d(name: &str, lambda: f64) -> ExperimentConfig {
    let mut c = base(name);
    c.system = system("poly2d", &[("lambda1", -1.0), ("lambda2", 3.0)]);
    c.eigen.lambda = Some(lambda);
    c.grid = grid(vec![-1.0, -1.0], vec![1.0, 1.0], vec![21, 21]);
    c
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "cubic1d_singular" => cubic(name, "singular_1d"),
        "cubic1d_rbf" => cubic(name, "gaussian(length_scale=0.3)"),
        "poly2d_kernel_study" => {
            let mut c = poly2d(name, -1.0);
            c.kernel = Some(KernelSection {
                spec: "polynomial(degree=2,coef0=0.5)".into(),
            });
            c
        }
        "poly2d_mkl_l1" | "poly2d_mkl_l2eig" => {
            let mut c = poly2d(name, if name == "poly2d_mkl_l1" { -1.0 } else { 3.0 });
            c.mkl = Some(MklSection::default());
            c
        }
        "duffing_char" => {
            let mut c = base(name);
            c.system = system("duffing", &[("delta", 0.5), ("beta", -1.0), ("alpha", 1.0)]);
            c.eigen.index = Some(0);
            c.kernel = Some(KernelSection {
                spec: "rank_one".into(),
            });
            c.grid = grid(vec![-2.0, -2.0], vec![2.0, 2.0], vec![25, 25]);
            c.path_integral = Some(PathIntegralSection {
                horizon: 10.0,
                steps: 1000,
                fd_step: 1e-5,
                probes: Vec::new(),
            });
            c
        }
        "unify_advection" => {
            let mut c = base(name);
            c.unify = Some(UnifySection {
                c: 1.0,
                lambda: 1.0,
                lower: -2.0,
                upper: 2.0,
                count: 20,
                order: 16,
            });
            c
        }
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_round_trips_and_validates() {
        for (name, cmd) in PRESETS {
            let cfg = preset(name).unwrap();
            let text = cfg.to_toml_string();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.to_toml_string(), text);
            cfg.plan(cmd).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn preset_contents() {
        assert_eq!(
            preset("cubic1d_rbf").unwrap().kernel.unwrap().spec,
            "gaussian(length_scale=0.3)"
        );
        let m = preset("poly2d_mkl_l1").unwrap();
        assert_eq!(m.eigen.lambda, Some(-1.0));
        assert_eq!(m.mkl.as_ref().unwrap().kernels.len(), 11);
        assert_eq!(m.mkl.unwrap().tau, 0.1);
        let d = preset("duffing_char").unwrap().system.unwrap();
        assert_eq!(
            (d.params["delta"], d.params["beta"], d.params["alpha"]),
            (0.5, -1.0, 1.0)
        );
    }
}
