use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use coag_core::analytic::AnalyticSolver;
use coag_core::branching_mc::{self, McConfig, RootChoice};
use coag_core::io::write_composition_table;
use coag_core::localization::{self, MinimizeOptions, SimplexPoint};
use coag_core::ode::{self, Form, Method, OdeConfig, TruncationWindow};
use coag_core::{pgf, CoagError, ModelSpec, SizeDistribution};
use serde_json::json;

use crate::manifest::{spec_hash, RunManifest};
use crate::{FormArg, GelationArgs, LocalizeArgs, MethodArg, OdeArgs, SolveArgs, SolveMethod, EXIT_OK};

/// Parses and validates a spec file, echoing validation warnings to stderr.
pub fn load_spec(path: &Path) -> anyhow::Result<(ModelSpec, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8_lossy(&bytes);
    let spec = ModelSpec::from_json_str(&text).with_context(|| format!("validating {}", path.display()))?;
    for warning in &spec.report().warnings {
        eprintln!("warning: {warning}");
    }
    Ok((spec, spec_hash(&bytes)))
}

pub fn ode_config(args: &OdeArgs) -> OdeConfig {
    OdeConfig {
        dt: args.dt,
        method: match args.stepper {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Euler => Method::Euler,
        },
        form: match args.form {
            FormArg::Reduced => Form::Reduced,
            FormArg::Full => Form::Full,
        },
        ..OdeConfig::default()
    }
}

/// ODE route; `t = 0` is the monodisperse state.
pub fn ode_distribution(spec: &ModelSpec, t: f64, nmax: u32, args: &OdeArgs) -> anyhow::Result<SizeDistribution> {
    let window = TruncationWindow::new(nmax)?;
    if t == 0.0 {
        return Ok(SizeDistribution::monodisperse(spec));
    }
    let snapshots = ode::integrate(spec, window, &ode_config(args), t)?;
    Ok(snapshots.into_iter().last().expect("one snapshot per record time").distribution)
}

pub fn gelation(args: &GelationArgs) -> anyhow::Result<u8> {
    let (spec, _) = load_spec(&args.spec)?;
    let report = pgf::gelation_time(&spec)?;
    let mut value = serde_json::to_value(&report)?;
    value["warnings"] = json!(spec.report().warnings);
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(EXIT_OK)
}

fn check_time(t: f64) -> anyhow::Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(CoagError::InvalidArgument(format!("--t must be nonnegative, got {t}")).into());
    }
    Ok(())
}

pub fn solve(args: &SolveArgs) -> anyhow::Result<u8> {
    let started = Instant::now();
    check_time(args.t)?;
    let (spec, hash) = load_spec(&args.spec)?;
    let t_c = pgf::critical_time(&spec)?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let writer = BufWriter::new(file);
    let mut manifest = RunManifest::new("solve", args, &hash);

    let (mass, rows, extra) = match args.method {
        SolveMethod::Analytic | SolveMethod::Ode => {
            let dist = if args.method == SolveMethod::Analytic {
                AnalyticSolver::new(&spec, args.t)?.distribution(args.nmax)?
            } else {
                ode_distribution(&spec, args.t, args.nmax, &args.ode)?
            };
            dist.write_csv(writer)?;
            (dist.mass_vector(), dist.len(), json!({}))
        }
        SolveMethod::Mc => {
            let config = McConfig::new(args.replicates, args.mc.cap, args.mc.seed, RootChoice::ByWeight);
            manifest.seeds.push(args.mc.seed);
            let est = branching_mc::estimate_pmf(&spec, args.t, &config, args.nmax)?;
            // Root drawn by p: the cell frequency estimates |n| w_n.
            let mut mass = vec![0.0; spec.m()];
            let rows: Vec<_> = est
                .cells
                .iter()
                .map(|(n, c)| {
                    let size = n.size() as f64;
                    for (i, slot) in mass.iter_mut().enumerate() {
                        *slot += f64::from(n.get(i)) * c.freq / size;
                    }
                    (n, vec![c.freq / size, c.se / size])
                })
                .collect();
            let count = rows.len();
            write_composition_table(writer, spec.m(), &["w", "se"], rows)?;
            let extra = json!({
                "seed": args.mc.seed,
                "cap": args.mc.cap,
                "censoring_rate": est.censoring_rate,
                "beyond_window_rate": est.beyond_window as f64 / args.replicates as f64,
            });
            (mass, count, extra)
        }
    };
    let total: f64 = mass.iter().sum();
    let mut summary = json!({
        "method": args.method,
        "t": args.t,
        "T_c": t_c,
        "rows": rows,
        "mass": mass,
        "total_mass": total,
        "deficit": 1.0 - total,
    });
    if let (Some(s), Some(e)) = (summary.as_object_mut(), extra.as_object()) {
        s.extend(e.clone());
    }
    manifest.summary = summary.clone();
    let manifest_path = manifest.write_for(&args.out, started)?;
    summary["output"] = json!(args.out.display().to_string());
    summary["manifest"] = json!(manifest_path.display().to_string());
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(EXIT_OK)
}

pub fn localize(args: &LocalizeArgs) -> anyhow::Result<u8> {
    let started = Instant::now();
    check_time(args.t)?;
    let (spec, hash) = load_spec(&args.spec)?;
    let t_c = pgf::critical_time(&spec)?;
    let opts = MinimizeOptions {
        tol: args.tol,
        max_iter: args.max_iter,
    };
    let result = localization::minimize_gamma(&spec, args.t, opts)?;
    let mut value = serde_json::to_value(&result)?;
    value["t"] = json!(args.t);
    value["T_c"] = json!(t_c);
    if let (Some(rho), Some(n_list)) = (&args.rate_check, &args.n_list) {
        let rho = SimplexPoint::new(rho.clone())?;
        let seq = localization::empirical_rate(&spec, args.t, &rho, n_list)?;
        value["rate_check"] = json!({
            "rho": rho,
            "gamma": localization::gamma(&spec, args.t, &rho)?,
            "points": seq.points,
            "extrapolated": seq.extrapolated,
        });
        if let Some(out) = &args.rate_out {
            let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
            seq.write_csv(BufWriter::new(file))?;
            let mut manifest = RunManifest::new("localize", args, &hash);
            manifest.summary = value.clone();
            manifest.write_for(out, started)?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(EXIT_OK)
}
