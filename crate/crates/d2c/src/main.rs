use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use d2c::config::{EstimatorName, ModeName};
use d2c::pipeline::{fmt_report, run_policy, synthesize_files};
use d2c::{PipelineConfig, Result, Runner};
use d2c_core::EvalMode;

#[derive(Parser)]
#[command(
    name = "d2c",
    version,
    about = "Decoupled data-based control: open-loop plan, LTV sysid, LQR feedback"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Accept artifacts stamped by a different config.
    #[arg(long)]
    force: bool,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct SysidFlags {
    #[arg(long)]
    sysid_sigma: Option<f64>,
    #[arg(long)]
    sysid_rollouts: Option<usize>,
    #[arg(long, value_enum)]
    sysid_estimator: Option<EstimatorName>,
    #[arg(long, value_enum)]
    sysid_mode: Option<ModeName>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Closed,
    Open,
}

#[derive(Subcommand)]
enum Cmd {
    /// Step 1: open-loop optimization.
    Optimize(Common),
    /// Step 2: identify the LTV model around the stored nominal.
    Identify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sysid: SysidFlags,
    },
    /// Step 3: Riccati gains for a model file.
    Synthesize {
        #[arg(long)]
        model: PathBuf,
        /// Config supplying the LQR weights.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// One noisy execution of a policy bundle, written as CSV.
    Run {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Replay the nominal controls without feedback.
        #[arg(long)]
        open_loop: bool,
    },
    /// Monte-Carlo evaluation of the stored policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long, value_enum, default_value = "closed")]
        mode: ModeArg,
        /// Also compare closed- and open-loop cost variance on shared noise.
        #[arg(long)]
        compare_open: bool,
    },
    /// Mean gap and variance against epsilon, with log-log fits.
    ScalingStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        epsilon_grid: Option<Vec<f64>>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Closed- and open-loop terminal error over a noise grid.
    RobustnessCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        epsilon_grid: Option<Vec<f64>>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Steps 1 to 3, the policy bundle and a default evaluation.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sysid: SysidFlags,
    },
}

/// Sysid flags tune the estimator without restamping: artifacts from the
/// other stages of the same config stay usable.
fn runner(common: &Common, sysid: Option<&SysidFlags>) -> Result<Runner> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mut r = Runner::new(cfg, common.out.clone(), common.threads, common.force)?;
    if let Some(f) = sysid {
        let s = &mut r.cfg.sysid;
        s.sigma = f.sysid_sigma.unwrap_or(s.sigma);
        s.rollouts = f.sysid_rollouts.unwrap_or(s.rollouts);
        s.estimator = f.sysid_estimator.unwrap_or(s.estimator);
        s.mode = f.sysid_mode.unwrap_or(s.mode);
        r.cfg.sysid.sysid_config()?;
    }
    Ok(r)
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Optimize(common) => {
            let r = runner(&common, None)?;
            r.prepare()?;
            println!("{}", r.optimize()?);
            r.finish()?;
        }
        Cmd::Identify { common, sysid } => {
            let r = runner(&common, Some(&sysid))?;
            r.prepare()?;
            println!("{}", r.identify()?);
            r.finish()?;
        }
        Cmd::Synthesize {
            model,
            weights,
            out,
            force,
        } => {
            let cfg = PipelineConfig::load(&weights)?;
            let gains = synthesize_files(&model, &cfg, &out, force)?;
            println!(
                "synthesize: {} gain matrices written to {}",
                gains.k.len(),
                out.display()
            );
        }
        Cmd::Run {
            policy,
            epsilon,
            seed,
            out,
            open_loop,
        } => {
            let traj = run_policy(&policy, epsilon, seed, &out, open_loop)?;
            println!(
                "run: cost {:.6}, terminal state {:?}, written to {}",
                traj.total_cost,
                traj.terminal_state().as_slice(),
                out.display()
            );
        }
        Cmd::Evaluate {
            common,
            epsilon,
            rollouts,
            mode,
            compare_open,
        } => {
            let r = runner(&common, None)?;
            r.prepare()?;
            let policy = r.policy()?;
            let eps = epsilon.unwrap_or(r.cfg.eval.epsilon);
            let m = rollouts.unwrap_or(r.cfg.eval.rollouts);
            let mode = match mode {
                ModeArg::Closed => EvalMode::Closed,
                ModeArg::Open => EvalMode::Open,
            };
            println!(
                "{}",
                fmt_report("evaluate", &r.evaluate(&policy, eps, m, mode)?)
            );
            if compare_open {
                let v = r.variance_comparison(&policy, eps, m)?;
                println!(
                    "variance: closed {:.4e} open {:.4e} ratio {:.4}, difference CI [{:.3e}, {:.3e}], closed lower significantly: {}",
                    v.closed.cost_variance, v.open.cost_variance, v.ratio, v.ci_low, v.ci_high, v.closed_lower_significant
                );
            }
            r.finish()?;
        }
        Cmd::ScalingStudy {
            common,
            epsilon_grid,
            rollouts,
        } => {
            let r = runner(&common, None)?;
            r.prepare()?;
            let policy = r.policy()?;
            let grid = epsilon_grid.unwrap_or_else(|| r.cfg.eval.epsilon_grid.clone());
            let m = rollouts.unwrap_or(r.cfg.eval.rollouts);
            let s = r.scaling_study(&policy, &grid, m)?;
            let fit = |f: &Option<d2c_core::SlopeFit>| match f {
                Some(f) => format!("slope {:.3} (R² {:.4})", f.slope, f.r_squared),
                None => "no fit".into(),
            };
            println!(
                "scaling: mean gap {}{}; variance {}{}",
                fit(&s.report.mean_gap_fit),
                if s.report.inconclusive {
                    " [inconclusive: noise floor]"
                } else {
                    ""
                },
                fit(&s.report.variance_fit),
                if s.fallback_used {
                    " (fallback rollouts)"
                } else {
                    ""
                }
            );
            if let Some(l) = &s.report.linearity {
                println!("linearity: residual {}", fit(&l.fit));
            }
            r.finish()?;
        }
        Cmd::RobustnessCurve {
            common,
            epsilon_grid,
            rollouts,
        } => {
            let r = runner(&common, None)?;
            r.prepare()?;
            let policy = r.policy()?;
            let grid = epsilon_grid.unwrap_or_else(|| r.cfg.eval.robustness_grid.clone());
            let m = rollouts.unwrap_or(r.cfg.eval.robustness_rollouts);
            let rows = r.robustness_curve(&policy, &grid, m)?;
            for row in &rows {
                println!(
                    "eps {:.3}: terminal MSE closed {:.4e} open {:.4e}, diverged closed {:.3} open {:.3}",
                    row.epsilon,
                    row.closed.terminal_mse,
                    row.open.terminal_mse,
                    row.closed.divergence_fraction,
                    row.open.divergence_fraction
                );
            }
            r.finish()?;
        }
        Cmd::Pipeline { common, sysid } => {
            let r = runner(&common, Some(&sysid))?;
            println!("{}", r.pipeline()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
