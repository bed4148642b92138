//! Command-line front end for `copula-hmc`: configuration, CSV output,
//! effective sample sizes and the envelope benchmark.

pub mod bench;
pub mod commands;
pub mod config;
pub mod ess;
pub mod output;
pub mod tmvn_spec;

use anyhow::Result;

use crate::config::{Cli, Command};
use crate::output::fmt_f64;

/// Runs one parsed invocation, printing a short report to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SampleTmvn(args) => {
            let report = commands::cmd_sample_tmvn(&args.resolve()?)?;
            println!("wrote {} samples to {}", report.samples.nrows(), report.out_dir.display());
            for (i, c) in report.coordinates.iter().enumerate() {
                println!("x{}: mean {} variance {} ess {:.0}", i + 1, fmt_f64(c.mean), fmt_f64(c.variance), c.ess);
            }
        }
        Command::FitCopula(args) => {
            for report in commands::cmd_fit_copula(&args.resolve()?)? {
                println!("{}: posterior mean correlation", report.out_dir.display());
                let c = &report.posterior_mean;
                for i in 0..c.dim() {
                    let row: Vec<String> = (0..c.dim()).map(|j| format!("{:8.4}", c.get(i, j))).collect();
                    println!("  {}", row.join(" "));
                }
            }
        }
        Command::FitFactor(args) => {
            for report in commands::cmd_fit_factor(&args.resolve()?)? {
                match &report.output.rmse {
                    Some(tr) => println!(
                        "{}: final RMSE {:.4}, median of last {} iterations {:.4}, post-burn-in variance {:.3e}",
                        report.out_dir.display(),
                        tr.values.last().copied().unwrap_or(f64::NAN),
                        2000.min(tr.values.len()),
                        tr.plateau(2000),
                        tr.variance()
                    ),
                    None => println!("{}: finished (no truth, RMSE not traced)", report.out_dir.display()),
                }
            }
        }
        Command::BenchEnvelope(args) => {
            let report = commands::cmd_bench_envelope(&args.resolve()?)?;
            println!("{:>9} {:>14} {:>14} {:>10} {:>6}", "n", "envelope ns", "brute ns", "steps", "agree");
            for r in &report.rows {
                println!(
                    "{:>9} {:>14.0} {:>14} {:>10.2} {:>6}",
                    r.n,
                    r.envelope_ns,
                    r.brute_ns.map_or("-".into(), |b| format!("{b:.0}")),
                    r.mean_steps,
                    r.agree.map_or("-".into(), |a| a.to_string())
                );
            }
            let show = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            println!("log-log slope: envelope {}, brute force {}", show(report.envelope_slope), show(report.brute_slope));
        }
    }
    Ok(())
}
