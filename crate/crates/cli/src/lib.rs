//! Command-line front end: TOML experiment configs, presets, and CSV/metrics output.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod run;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Command, ExperimentConfig};
pub use error::CliError;
pub use output::{emit, Outcome};
pub use presets::{preset, preset_command, PRESETS};
pub use run::execute;

#[derive(Debug, Parser)]
#[command(
    name = "koopman-rkhs",
    version,
    about = "Kernel methods for Koopman principal eigenfunctions"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Experiment config (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment preset.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel assembly.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Penalized collocation with one kernel or a fixed mixture.
    Solve,
    /// Multiple kernel learning over base kernels.
    Mkl,
    /// Path-integral coordinate on a grid and probe points.
    PathIntegral,
    /// Weighted Mercer decomposition of a kernel on a grid.
    Mercer,
    /// Green's/resolvent/closed-form kernel agreement for constant advection.
    Unify,
    /// Print the built-in systems.
    ListSystems,
    /// Print a preset's full config as TOML.
    Preset { name: String },
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml_str(&text)?
        }
        (None, Some(name)) => {
            preset(name).ok_or_else(|| CliError::config(format!("unknown preset '{name}'")))?
        }
        _ => return Err(CliError::config("give --config <path> or --preset <name>")),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let cmd = match &cli.command {
        Sub::ListSystems => {
            let _ = stdout.write_all(run::list_systems().as_bytes());
            return Ok(());
        }
        Sub::Preset { name } => {
            let cfg =
                preset(name).ok_or_else(|| CliError::config(format!("unknown preset '{name}'")))?;
            let _ = stdout.write_all(cfg.to_toml_string().as_bytes());
            return Ok(());
        }
        Sub::Solve => Command::Solve,
        Sub::Mkl => Command::Mkl,
        Sub::PathIntegral => Command::PathIntegral,
        Sub::Mercer => Command::Mercer,
        Sub::Unify => Command::Unify,
    };
    let cfg = load(cli)?;
    let outcome = execute(cmd, &cfg)?;
    for path in emit(&outcome, std::path::Path::new(&cfg.output.dir))? {
        let _ = writeln!(stdout, "{}", path.display());
    }
    Ok(())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let first = e
                .to_string()
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            let _ = writeln!(stderr, "{}", CliError::config(first).line());
            return error::EXIT_CONFIG;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.line());
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let mut full = vec!["koopman-rkhs"];
        full.extend_from_slice(args);
        let code = run_cli(full, &mut o, &mut e);
        (
            code,
            String::from_utf8(o).unwrap(),
            String::from_utf8(e).unwrap(),
        )
    }

    fn tmp(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("koopman-rkhs-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn list_systems_prints_all_builtins() {
        let (code, out, _) = run(&["list-systems"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 5);
        for name in ["cubic1d", "poly2d", "duffing", "advection1d", "linear_test"] {
            assert!(out.contains(name));
        }
    }

    #[test]
    fn exit_codes_for_config_errors() {
        let (code, _, err) = run(&["solve", "--preset", "nope"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error: kind=config reason=\""), "{err}");
        assert_eq!(run(&["solve"]).0, 2);
        assert_eq!(run(&["frobnicate"]).0, 2);
        assert_eq!(run(&["solve", "--preset", "unify_advection"]).0, 2);
        let dir = tmp("badcfg");
        std::fs::create_dir_all(&dir).unwrap();
        let bad = [
            "[experiment]\nname = \"b\"\n[system]\nname = \"nosuch\"\n[eigen]\nindex = 0\n[kernel]\nspec = \"gaussian\"\n[grid]\nlower = [-1.0, -1.0]\nupper = [1.0, 1.0]\ncounts = [5, 5]\n",
            "[experiment]\nname = \"b\"\n[system]\nname = \"poly2d\"\n[eigen]\nlambda = 2.0\n[kernel]\nspec = \"gaussian\"\n[grid]\nlower = [-1.0, -1.0]\nupper = [1.0, 1.0]\ncounts = [5, 5]\n",
            "[experiment]\nname = \"b\"\n[system]\nname = \"poly2d\"\n[eigen]\nindex = 0\n[kernel]\nspec = \"gaussian\"\n[grid]\nlower = [-1.0, -1.0]\nupper = [1.0, 1.0]\ncounts = [1, 5]\n",
            "[experiment]\nname = \"b\"\n[system]\nname = \"poly2d\"\n[eigen]\nindex = 0\n[kernel]\nspec = \"gaussian\"\n[grid]\nlower = [-1.0]\nupper = [1.0]\ncounts = [5]\n",
            "[experiment]\nname = \"b\"\n[system]\nname = \"poly2d\"\n[eigen]\nindex = 0\n[kernel]\nspec = \"gaussian(gamma=0)\"\n[grid]\nlower = [-1.0, -1.0]\nupper = [1.0, 1.0]\ncounts = [5, 5]\n",
            "not toml at all [",
        ];
        for (i, text) in bad.iter().enumerate() {
            let p = dir.join(format!("bad{i}.toml"));
            std::fs::write(&p, text).unwrap();
            let (code, _, err) = run(&[
                "solve",
                "--config",
                p.to_str().unwrap(),
                "--out",
                dir.to_str().unwrap(),
            ]);
            assert_eq!(code, 2, "case {i}: {err}");
            assert!(err.starts_with("error: kind=config"), "case {i}: {err}");
        }
        assert!(std::fs::read_dir(&dir)
            .unwrap()
            .all(|e| e.unwrap().path().extension().unwrap() == "toml"));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn blow_up_exits_with_four() {
        let dir = tmp("blowup");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("pi.toml");
        std::fs::write(
            &p,
            "[experiment]\nname = \"pi\"\n[system]\nname = \"poly2d\"\n[eigen]\nlambda = -1.0\n[path_integral]\nhorizon = 10.0\nsteps = 2000\nprobes = [[0.4, 0.3]]\n",
        )
        .unwrap();
        let (code, _, err) = run(&[
            "path-integral",
            "--config",
            p.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 4, "{err}");
        assert!(err.starts_with("error: kind=blow_up"));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn preset_output_round_trips() {
        for (name, _) in PRESETS {
            let (code, text, _) = run(&["preset", name]);
            assert_eq!(code, 0);
            assert_eq!(
                ExperimentConfig::from_toml_str(&text).unwrap(),
                preset(name).unwrap()
            );
        }
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let (a, b) = (tmp("det-a"), tmp("det-b"));
        for d in [&a, &b] {
            let (code, _, err) = run(&[
                "unify",
                "--preset",
                "unify_advection",
                "--out",
                d.to_str().unwrap(),
            ]);
            assert_eq!(code, 0, "{err}");
        }
        for f in ["unify_advection_unify.csv", "unify_advection_metrics.txt"] {
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(b.join(f)).unwrap(),
                "{f}"
            );
        }
        let csv = std::fs::read_to_string(a.join("unify_advection_unify.csv")).unwrap();
        assert!(csv.starts_with("x,y,K_green,K_analytic,K_resolvent_sym,rel_dev\n"));
        assert_eq!(csv.lines().count(), 401);
        for d in [a, b] {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}
