use std::fs;
use std::time::Instant;

use anyhow::Context;
use coag_core::analytic::AnalyticSolver;
use coag_core::branching_mc::{self, McConfig, RootChoice};
use coag_core::{pgf, Composition};
use serde::Serialize;

use crate::commands::{load_spec, ode_distribution};
use crate::manifest::RunManifest;
use crate::{CompareArgs, EXIT_OK, EXIT_OTHER};

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
    /// Composition where the value was attained, if any.
    at: Option<Composition>,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    t: f64,
    #[serde(rename = "T_c")]
    t_c: f64,
    nmax: u32,
    compare_size: u32,
    checks: Vec<Check>,
    diagnosis: Vec<String>,
    pass: bool,
}

pub fn compare(args: &CompareArgs) -> anyhow::Result<u8> {
    let started = Instant::now();
    let (spec, hash) = load_spec(&args.spec)?;
    let t_c = pgf::critical_time(&spec)?;
    let exact_solver = AnalyticSolver::new(&spec, args.t)?;
    let compare_size = args.compare_size.unwrap_or(args.nmax.min(20)).min(args.nmax);

    let exact = exact_solver.distribution(args.nmax)?;
    let ode = ode_distribution(&spec, args.t, args.nmax, &args.ode)?;
    let config = McConfig::new(args.mc_replicates, args.mc.cap, args.mc.seed, RootChoice::ByWeight);
    let mc = branching_mc::estimate_pmf(&spec, args.t, &config, compare_size)?;

    let cells = Composition::enumerate(spec.m(), compare_size);
    let mut ode_gap = (0.0, None);
    let mut mc_z = (0.0, None);
    let replicates = args.mc_replicates as f64;
    for n in &cells {
        let w = exact.get(n);
        let gap = (ode.get(n) - w).abs();
        if gap > ode_gap.0 {
            ode_gap = (gap, Some(n.clone()));
        }
        // Root drawn by p: the cell probability is |n| w_n.
        let q = n.size() as f64 * w;
        if q >= args.mc_min_prob {
            let se = (q * (1.0 - q) / replicates).sqrt();
            let z = (mc.freq(n) - q).abs() / se;
            if z > mc_z.0 {
                mc_z = (z, Some(n.clone()));
            }
        }
    }
    let deficit = 1.0 - exact.total_mass();

    let checks = vec![
        Check {
            name: "ode_vs_exact_max_abs",
            value: ode_gap.0,
            tolerance: args.ode_tol,
            pass: ode_gap.0 <= args.ode_tol,
            at: ode_gap.1,
        },
        Check {
            name: "mc_vs_exact_max_z",
            value: mc_z.0,
            tolerance: args.mc_sigmas,
            pass: mc_z.0 <= args.mc_sigmas,
            at: mc_z.1,
        },
        Check {
            name: "truncation_deficit",
            value: deficit,
            tolerance: args.deficit_tol,
            pass: deficit <= args.deficit_tol,
            at: None,
        },
    ];
    let mut diagnosis = Vec::new();
    if !checks[0].pass {
        diagnosis.push(format!(
            "method disagreement: ODE differs from the exact solution by {:.3e} (try a smaller --dt)",
            ode_gap.0
        ));
    }
    if !checks[1].pass {
        diagnosis.push(format!("Monte Carlo deviates by {:.2} standard errors", mc_z.0));
    }
    if !checks[2].pass {
        diagnosis.push(format!(
            "truncation: mass {deficit:.3e} lies beyond |n| = {} at t = {} (T_c = {t_c}); raise --nmax",
            args.nmax, args.t
        ));
    }
    let pass = checks.iter().all(|c| c.pass);
    let report = CompareReport {
        t: args.t,
        t_c,
        nmax: args.nmax,
        compare_size,
        checks,
        diagnosis,
        pass,
    };

    println!("{:<24} {:>24} {:>12}  status", "check", "value", "tolerance");
    for c in &report.checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        println!("{:<24} {:>24.16e} {:>12.3e}  {status}", c.name, c.value, c.tolerance);
    }
    for line in &report.diagnosis {
        println!("diagnosis: {line}");
    }
    println!("overall {}", if pass { "PASS" } else { "FAIL" });

    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&report)?;
        fs::write(out, text + "\n").with_context(|| format!("writing {}", out.display()))?;
        let mut manifest = RunManifest::new("compare", args, &hash);
        manifest.seeds.push(args.mc.seed);
        manifest.summary = serde_json::to_value(&report)?;
        manifest.write_for(out, started)?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_OTHER })
}
