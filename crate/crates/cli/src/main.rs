//! Batch front-end for the constrained pinning model library.
//!
//! Every run is fully described by a model JSON file plus command-line
//! flags; there is no environment configuration, and identical invocations
//! produce byte-identical output files.  Subcommands:
//!
//! * `classify`    — thermodynamic regime and constants (JSON);
//! * `rate`        — rate function of the renewal count on a grid (CSV);
//! * `exact`       — certified half-space probability at one horizon (CSV);
//! * `sample`      — renewal-bridge Monte Carlo estimate (JSON);
//! * `limit-check` — convergence of normalized probabilities to the
//!                   critical limit constant along a doubling ladder (CSV);
//! * `tail-check`  — regular-variation check of the effective tail (CSV);
//! * `slope-check` — exponential decay slopes against the rate function (CSV).
//!
//! Exit status: 0 success; 2 configuration or schema errors (including
//! out-of-range parameters); 3 regime errors (an operation undefined in the
//! model's thermodynamic regime, named in the message); 4 numeric or budget
//! errors.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use pinning_core::asympt::{convergence_study, exponential_regime_check, tail_index_check};
use pinning_core::bridge::{BridgeSampler, McEvent};
use pinning_core::exact::{
    halfspace_functional, ConvBackend, HalfSpaceQuery, QuantMode, RenewalTables,
};
use pinning_core::model::ModelSpec;
use pinning_core::thermo::{
    classify, conditioned_distribution, ProjectedReward, RateFunctionNt,
};
use pinning_core::{Bracket, Error, Result};

#[derive(Parser)]
#[command(
    name = "pinning",
    version,
    about = "Constrained pinning models: classification, exact probabilities, \
             bridge sampling, and decay-law checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct IoArgs {
    /// Model definition JSON file.
    #[arg(long)]
    model: PathBuf,
    /// Output path, or `-` for standard output.
    #[arg(long, default_value = "-")]
    output: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    /// Direct convolution below horizon 1024, FFT above.
    Auto,
    /// Full relative accuracy on positive sums; needed for probabilities
    /// far below the FFT noise floor.
    Direct,
    Fft,
}

impl From<BackendArg> for ConvBackend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Auto => ConvBackend::Auto,
            BackendArg::Direct => ConvBackend::Direct,
            BackendArg::Fft => ConvBackend::Fft,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Certified lower/upper probabilities from reward quantization.
    Bracket,
    /// Exact single evaluation; requires `g * scale` integer on the support.
    Exact,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify the thermodynamic regime and emit constants as JSON.
    Classify {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Rate function of the renewal count density on a uniform grid of [0, 1].
    Rate {
        #[command(flatten)]
        io: IoArgs,
        /// Number of grid points.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Exact constrained half-space probability at one horizon.
    Exact {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        t: u64,
        /// Half-space level in [0, 1).
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Bracket)]
        mode: ModeArg,
        /// Quantization step for bracket mode (default: about 4t buckets).
        #[arg(long)]
        delta: Option<f64>,
        /// Lattice denominator for exact mode.
        #[arg(long, default_value_t = 1)]
        scale: u64,
        #[arg(long, value_enum, default_value_t = BackendArg::Auto)]
        backend: BackendArg,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Monte Carlo estimate of the half-space probability by bridge sampling.
    Sample {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        t: u64,
        #[arg(long)]
        alpha: f64,
        /// Number of bridge samples.
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// RNG stream id (advanced: separates concurrent samplers).
        #[arg(long, default_value_t = 0)]
        stream: u64,
    },
    /// Convergence of normalized probabilities to the critical limit constant.
    LimitCheck {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        /// Comma-separated doubling ladder of horizons.
        #[arg(long, default_value = "512,1024,2048,4096")]
        ladder: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Regular-variation check of the effective waiting-time tail.
    TailCheck {
        #[command(flatten)]
        io: IoArgs,
        /// Comma-separated evaluation points.
        #[arg(long, default_value = "100,1000,10000,100000")]
        x: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Exponential decay slopes of lower count deviations vs the rate function.
    SlopeCheck {
        #[command(flatten)]
        io: IoArgs,
        /// Count density threshold in (0, rho]; defaults to rho/2.
        #[arg(long)]
        w: Option<f64>,
        #[arg(long, default_value = "256,512,1024,2048")]
        ladder: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    match e {
        Error::Model(_) | Error::Domain(_) => 2,
        Error::Regime { .. } => 3,
        Error::Numeric(_) | Error::Budget(_) => 4,
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Classify { io } => cmd_classify(&io),
        Cmd::Rate { io, grid, format } => cmd_rate(&io, grid, format),
        Cmd::Exact {
            io,
            t,
            alpha,
            mode,
            delta,
            scale,
            backend,
            format,
        } => cmd_exact(&io, t, alpha, mode, delta, scale, backend.into(), format),
        Cmd::Sample {
            io,
            t,
            alpha,
            n,
            seed,
            stream,
        } => cmd_sample(&io, t, alpha, n, seed, stream),
        Cmd::LimitCheck {
            io,
            alpha,
            ladder,
            format,
        } => cmd_limit_check(&io, alpha, &ladder, format),
        Cmd::TailCheck { io, x, format } => cmd_tail_check(&io, &x, format),
        Cmd::SlopeCheck {
            io,
            w,
            ladder,
            format,
        } => cmd_slope_check(&io, w, &ladder, format),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_model(path: &Path) -> Result<ModelSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Model(format!("cannot read {}: {e}", path.display())))?;
    ModelSpec::from_json(&text)
}

fn write_output(target: &str, content: &str) -> Result<()> {
    if target == "-" {
        let mut out = std::io::stdout();
        out.write_all(content.as_bytes())
            .and_then(|()| out.flush())
            .map_err(|e| Error::Model(format!("cannot write to standard output: {e}")))
    } else {
        fs::write(target, content).map_err(|e| Error::Model(format!("cannot write {target}: {e}")))
    }
}

fn parse_u64_list(text: &str, what: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|e| Error::Model(format!("invalid {what} entry {part:?}: {e}")))
        })
        .collect()
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| Error::Model(format!("invalid {what} entry {part:?}: {e}")))
        })
        .collect()
}

/// Relative gap to a target, falling back to the absolute gap when the
/// target vanishes.
fn gap_to(value: f64, target: f64) -> f64 {
    if target.abs() > 1e-300 {
        (value - target).abs() / target.abs()
    } else {
        (value - target).abs()
    }
}

fn bracket_field(b: Option<Bracket>) -> Value {
    match b {
        Some(b) => json!({"value": b.mid(), "error": b.half_width()}),
        None => Value::Null,
    }
}

fn exact_field(v: Option<f64>) -> Value {
    match v {
        Some(v) if v.is_finite() => json!({"value": v, "error": 0.0}),
        _ => Value::Null,
    }
}

fn to_pretty(value: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Numeric(format!("serialization failed: {e}")))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_classify(io: &IoArgs) -> Result<()> {
    let model = load_model(&io.model)?;
    let cls = classify(&model)?;
    // `ell` is null for finite-support families (energy scale minus
    // infinity, not representable in JSON).
    let doc = json!({
        "regime": cls.regime.name(),
        "ell": exact_field(cls.ell.is_finite().then_some(cls.ell)),
        "zeta": bracket_field(cls.zeta),
        "rho": bracket_field(Some(cls.rho)),
        "r": exact_field(Some(cls.r)),
        "mean_s": bracket_field(cls.mean_s),
        "kappa": exact_field(cls.kappa),
        "beta_c": bracket_field(cls.beta_c),
        "w_c": bracket_field(cls.w_c),
    });
    write_output(&io.output, &to_pretty(&doc)?)
}

fn cmd_rate(io: &IoArgs, grid: usize, format: Format) -> Result<()> {
    if grid < 2 {
        return Err(Error::Domain(format!("grid needs at least 2 points, got {grid}")));
    }
    let model = load_model(&io.model)?;
    let rate_fn = RateFunctionNt::new(&model)?;
    let mut rows = Vec::with_capacity(grid);
    for k in 0..grid {
        let w = k as f64 / (grid - 1) as f64;
        let b = rate_fn.eval(w)?;
        rows.push((w, b.mid(), b.half_width()));
    }
    let content = match format {
        Format::Csv => {
            let mut out = String::from("w,rate,rate_err\n");
            for (w, rate, err) in &rows {
                out.push_str(&format!("{w},{rate:e},{err:e}\n"));
            }
            out
        }
        Format::Json => {
            let arr: Vec<Value> = rows
                .iter()
                .map(|(w, rate, err)| json!({"w": w, "rate": rate, "rate_err": err}))
                .collect();
            to_pretty(&arr)?
        }
    };
    write_output(&io.output, &content)
}

#[allow(clippy::too_many_arguments)]
fn cmd_exact(
    io: &IoArgs,
    t: u64,
    alpha: f64,
    mode: ModeArg,
    delta: Option<f64>,
    scale: u64,
    backend: ConvBackend,
    format: Format,
) -> Result<()> {
    let model = load_model(&io.model)?;
    let cls = classify(&model)?;
    let dist = conditioned_distribution(&model, &cls)?;
    let reward = ProjectedReward::new(&model, &cls)?;
    let tables = RenewalTables::build(&dist, t)?;
    let quant = match mode {
        ModeArg::Bracket => QuantMode::Bracket { delta },
        ModeArg::Exact => QuantMode::ExactInteger { scale },
    };
    let query = HalfSpaceQuery { alpha, mode: quant };
    let res = halfspace_functional(&tables, &reward, &query, t, backend)?;
    let (u_t, log_zc) = (tables.u(t), tables.log_zc(t));
    let content = match format {
        Format::Csv => format!(
            "t,alpha,prob_lower,prob_upper,u_t,log_Zc\n{t},{alpha},{:e},{:e},{u_t:e},{log_zc:e}\n",
            res.prob_lower, res.prob_upper
        ),
        Format::Json => to_pretty(&json!({
            "t": t,
            "alpha": alpha,
            "prob_lower": res.prob_lower,
            "prob_upper": res.prob_upper,
            "u_t": u_t,
            "log_Zc": log_zc,
        }))?,
    };
    write_output(&io.output, &content)
}

fn cmd_sample(io: &IoArgs, t: u64, alpha: f64, n: u64, seed: u64, stream: u64) -> Result<()> {
    let model = load_model(&io.model)?;
    let cls = classify(&model)?;
    let dist = conditioned_distribution(&model, &cls)?;
    let reward = ProjectedReward::new(&model, &cls)?;
    let tables = RenewalTables::build(&dist, t)?;
    let sampler = BridgeSampler::new(&tables, seed, stream);
    let report = sampler.mc_prob(t, &McEvent::HalfSpace { reward, alpha }, n)?;
    // Wall time is informational only; keeping it out of the report file
    // preserves byte-identical reruns.
    eprintln!("wall time: {:.3} s", report.wall_time);
    write_output(&io.output, &to_pretty(&report)?)
}

fn cmd_limit_check(io: &IoArgs, alpha: f64, ladder: &str, format: Format) -> Result<()> {
    let model = load_model(&io.model)?;
    let ladder = parse_u64_list(ladder, "ladder")?;
    let label = io
        .model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_owned());
    let report = convergence_study(&model, &label, alpha, &ladder, ConvBackend::Auto)?;
    let content = match format {
        Format::Csv => {
            let mut out = String::from("t,ratio,constant,rel_gap\n");
            for row in &report.rows {
                out.push_str(&format!(
                    "{},{:e},{:e},{:e}\n",
                    row.t,
                    row.ratio,
                    report.constant,
                    gap_to(row.ratio, report.constant)
                ));
            }
            if let Some(a) = report.aitken {
                out.push_str(&format!("# aitken,{a:e},{:e}\n", gap_to(a, report.constant)));
            }
            out
        }
        Format::Json => to_pretty(&report)?,
    };
    write_output(&io.output, &content)
}

fn cmd_tail_check(io: &IoArgs, xs: &str, format: Format) -> Result<()> {
    let model = load_model(&io.model)?;
    let xs = parse_f64_list(xs, "x")?;
    let cls = classify(&model)?;
    let dist = conditioned_distribution(&model, &cls)?;
    let rows = tail_index_check(&dist, &cls, &xs)?;
    let content = match format {
        Format::Csv => {
            let mut out = String::from("x,value,limit,rel_gap\n");
            for row in &rows {
                out.push_str(&format!(
                    "{},{:e},{:e},{:e}\n",
                    row.x, row.value, row.limit, row.rel_gap
                ));
            }
            out
        }
        Format::Json => to_pretty(&rows)?,
    };
    write_output(&io.output, &content)
}

fn cmd_slope_check(io: &IoArgs, w: Option<f64>, ladder: &str, format: Format) -> Result<()> {
    let model = load_model(&io.model)?;
    let ladder = parse_u64_list(ladder, "ladder")?;
    let w = match w {
        Some(w) => w,
        None => 0.5 * classify(&model)?.rho.mid(),
    };
    let rows = exponential_regime_check(&model, w, &ladder)?;
    let content = match format {
        Format::Csv => {
            let mut out = String::from("t,slope,rate,rel_gap\n");
            let mut skipped = Vec::new();
            for row in &rows {
                match (row.slope, row.gap) {
                    (Some(slope), Some(gap)) => {
                        out.push_str(&format!("{},{slope:e},{:e},{gap:e}\n", row.t, row.rate));
                    }
                    _ => {
                        out.push_str(&format!("{},,{:e},\n", row.t, row.rate));
                        skipped.push(row.t);
                    }
                }
            }
            for t in skipped {
                out.push_str(&format!("# t={t} skipped: probability underflowed to zero\n"));
            }
            out
        }
        Format::Json => to_pretty(&rows)?,
    };
    write_output(&io.output, &content)
}
