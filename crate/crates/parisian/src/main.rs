use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use parisian::analytics::{required_constants, Role};
use parisian::constants::ConstantEstimate;
use parisian::harness::config::parse_switch;
use parisian::harness::{self, emit_report, ConstantCache, ExperimentConfig, ExperimentReport, Format};
use parisian::model::{critical_rho, limiting_t_star, local_exponents, optimizer_point, OptimizerPoints, Relation};
use parisian::{Error, Result};

#[derive(Parser)]
#[command(name = "parisian", version, about = "Parisian ruin asymptotics and their Monte Carlo validation")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Print the regime, optimizers and local exponents for a config.
    Classify(Common),
    /// Estimate the constants the regime's limit needs and write constants.json.
    Constants(Common),
    /// Run the conditional-ratio sweep and write the report.
    Simulate(Common),
    /// Re-emit an existing report.json in another format.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report to read (defaults to <out>/report.json).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json or both.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// on or off.
    #[arg(long)]
    tilt: Option<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_ref().ok_or_else(|| Error::Config("--config <path> is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(t) = &self.tilt {
            cfg.tilt = parse_switch(t)?;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        if let Some(f) = &self.format {
            cfg.format = Some(f.parse()?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg_out: Option<&PathBuf>) -> PathBuf {
    cfg_out.cloned().unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Serialize)]
struct Classification {
    regime: String,
    critical_rho: f64,
    t_star: f64,
    lambda: Option<(f64, f64)>,
    tau1: Option<f64>,
    tau4: Option<f64>,
    optimizers: Vec<(f64, OptimizerPoints)>,
    constants: Vec<(Role, String)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    std::fs::write(path, v)?;
    Ok(())
}

fn classify(common: &Common) -> Result<i32> {
    let cfg = common.load()?;
    let st = harness::setup(&cfg)?;
    let p = st.params;
    let relation = match st.regime.tag {
        parisian::RegimeTag::CaseIV | parisian::RegimeTag::CaseV => Relation::LLtK,
        _ => Relation::Diagonal,
    };
    let exps = if st.regime.tag.is_dominated() {
        None
    } else {
        Some(local_exponents(&p, &st.regime, relation)?)
    };
    let optimizers = cfg
        .u_list
        .iter()
        .map(|&u| Ok((u, optimizer_point(&p, &st.regime, u * st.barrier_scale)?)))
        .collect::<Result<Vec<_>>>()?;
    let c = Classification {
        regime: st.regime.tag.to_string(),
        critical_rho: critical_rho(p.a)?,
        t_star: limiting_t_star(&p, &st.regime),
        lambda: exps.map(|e| (e.lambda1, e.lambda2)),
        tau1: exps.and_then(|e| e.tau1),
        tau4: exps.and_then(|e| e.tau4),
        optimizers,
        constants: required_constants(&p, &st.regime)
            .into_iter()
            .map(|(r, k)| (r, k.cache_key()))
            .collect(),
    };
    println!("{}", serde_json::to_string_pretty(&c)?);
    if common.out.is_some() || cfg.output.is_some() {
        write_json(&out_dir(cfg.output.as_ref()).join("classification.json"), &c)?;
    }
    Ok(0)
}

fn open_cache(cfg: &ExperimentConfig) -> Result<ConstantCache> {
    match &cfg.constants_file {
        Some(path) if path.exists() => ConstantCache::load(path),
        _ => Ok(ConstantCache::new()),
    }
}

fn constants(common: &Common) -> Result<i32> {
    let cfg = common.load()?;
    let st = harness::setup(&cfg)?;
    let mut cache = open_cache(&cfg)?;
    let (_, used) = harness::limit_constants(&cfg, &st, &mut cache, cfg.resolved_workers())?;
    let dir = out_dir(cfg.output.as_ref());
    let path = cfg.constants_file.clone().unwrap_or_else(|| dir.join("constants.json"));
    cache.save(&path)?;
    print_constants(&used);
    eprintln!("wrote {}", path.display());
    let quality = used.iter().any(|c| !c.warnings.is_empty());
    Ok(if quality { 3 } else { 0 })
}

fn print_constants(used: &[ConstantEstimate]) {
    for c in used {
        println!("{:<60} {:>14.8} +- {:.2e}{}", c.key.cache_key(), c.value, c.stderr, if c.exact { " (exact)" } else { "" });
        for w in &c.warnings {
            println!("  warning: {w}");
        }
    }
}

fn print_report(r: &ExperimentReport) {
    println!("regime {}", r.regime);
    if let (Some(l), Some(s)) = (r.theoretical_limit, r.theoretical_stderr) {
        println!("limit  {l:.6} +- {s:.2e}");
    }
    println!("{:>8} {:>12} {:>12} {:>9} {:>19} {:>8}", "u", "p_classical", "p_parisian", "ratio", "95% ci", "n_steps");
    for row in &r.rows {
        println!(
            "{:>8} {:>12.4e} {:>12.4e} {:>9.5} [{:>8.5}, {:>8.5}] {:>8}",
            row.u, row.p_classical, row.p_parisian, row.ratio, row.ci_low, row.ci_high, row.n_steps
        );
    }
    for e in &r.errors {
        println!("error: {}", e.message);
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
}

fn simulate(common: &Common) -> Result<i32> {
    let cfg = common.load()?;
    let mut cache = open_cache(&cfg)?;
    let report = harness::run_experiment(&cfg, &mut cache)?;
    let dir = out_dir(cfg.output.as_ref());
    for path in emit_report(&report, &dir, cfg.format.unwrap_or(Format::Both))? {
        eprintln!("wrote {}", path.display());
    }
    if let Some(path) = &cfg.constants_file {
        cache.save(path)?;
    }
    print_report(&report);
    Ok(if report.has_quality_failure() { 3 } else { 0 })
}

fn report(common: &Common, input: Option<&PathBuf>) -> Result<i32> {
    let dir = out_dir(common.out.as_ref());
    let input = input.cloned().unwrap_or_else(|| dir.join("report.json"));
    let r = ExperimentReport::from_json(&std::fs::read(&input)?)?;
    let format = match &common.format {
        Some(f) => f.parse()?,
        None => Format::Csv,
    };
    for path in emit_report(&r, &dir, format)? {
        eprintln!("wrote {}", path.display());
    }
    print_report(&r);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::Classify(c) => classify(c),
        Verb::Constants(c) => constants(c),
        Verb::Simulate(c) => simulate(c),
        Verb::Report { common, input } => report(common, input.as_ref()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
