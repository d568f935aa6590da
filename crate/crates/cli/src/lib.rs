//! `consflow` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use consflow_core::flow::{horn_schunck, FlowParams};
use consflow_core::ggca::{ggca_forward, init_weights, read_weights, write_weights, DEFAULT_SEED};
use consflow_core::hog::{hog, DEFAULT_POOL};
use consflow_core::io::{load_frame, read_flo, write_flo, write_image, write_tensor};
use consflow_core::pipeline::{pipeline_run, EmitFlags, FlowSource, PipelineConfig, WeightsSource};
use consflow_core::synthetic::{gen_sequence, run_experiment, Rect, SyntheticSpec};
use consflow_core::warp::{reconstruct_frame, residual};
use consflow_core::Tensor4;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Marks an error as a command-line misuse rather than bad data.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "consflow", version, about = "Flow-residual, HOG and attention kernels for video forensics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate Horn-Schunck flow between two frames and write it as .flo
    Flow {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        next: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: FlowArgs,
    },
    /// Reconstruct the next frame by warping a frame along a flow field
    Warp {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        /// GCFT output; without it a summary is printed
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Absolute difference between a reconstruction and the true next frame
    Residual {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        next: PathBuf,
        /// GCFT output; without it a summary is printed
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pooled orientation histograms of an image or tensor
    Hog {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POOL)]
        pool: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grouped global-context attention forward pass
    Ggca {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        weights: WeightsArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the weights used as GCFW
        #[arg(long)]
        save_weights: Option<PathBuf>,
    },
    /// Render a synthetic sequence as PPM frames plus ground-truth .flo files
    Synth {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Residual-energy comparison on a synthetic sequence, as key=value lines
    Analyze {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        params: FlowArgs,
        /// Per-pair energies as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Frames -> flow -> reconstruction -> residual, plus HOG and optional attention
    Pipeline {
        #[arg(long, num_args = 2.., required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// One .flo per consecutive pair instead of the built-in estimator
        #[arg(long, num_args = 1..)]
        flow_files: Option<Vec<PathBuf>>,
        #[arg(long, default_value_t = DEFAULT_POOL)]
        pool: usize,
        #[arg(long, conflicts_with = "ggca_init")]
        ggca_weights: Option<PathBuf>,
        /// C,G,seed
        #[arg(long)]
        ggca_init: Option<String>,
        /// Also write residual channels concatenated with upsampled HOG
        #[arg(long)]
        concat: bool,
        /// Comma-separated subset of flow,recon,residual,hog
        #[arg(long, default_value = "flow,recon,residual,hog")]
        emit: String,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        params: FlowArgs,
    },
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[arg(long, default_value_t = 15.0)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long)]
    no_prefilter: bool,
}

impl FlowArgs {
    fn params(&self) -> FlowParams {
        FlowParams {
            alpha: self.alpha,
            iterations: self.iterations,
            prefilter: !self.no_prefilter,
        }
    }
}

#[derive(Args, Debug)]
struct WeightsArgs {
    /// GCFW weights file
    #[arg(long, conflicts_with = "init")]
    weights: Option<PathBuf>,
    /// C,G,seed (seed optional, default 42)
    #[arg(long)]
    init: Option<String>,
}

#[derive(Args, Debug)]
struct SpecArgs {
    /// Named preset; only "default" exists
    #[arg(long, default_value = "default")]
    spec: String,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// vx,vy in pixels per frame
    #[arg(long, allow_hyphen_values = true)]
    velocity: Option<String>,
    /// x0,y0,w,h
    #[arg(long)]
    rect: Option<String>,
    #[arg(long)]
    amp: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str, len: std::ops::RangeInclusive<usize>) -> Result<Vec<T>> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("bad {what}: {s:?}"))))
        .collect::<Result<_>>()?;
    if !len.contains(&parts.len()) {
        return Err(usage(format!("{what} needs {len:?} comma-separated values, got {s:?}")));
    }
    Ok(parts)
}

fn parse_init(s: &str) -> Result<WeightsSource> {
    let v: Vec<u64> = parse_list(s, "C,G,seed", 2..=3)?;
    Ok(WeightsSource::Init {
        channels: v[0] as usize,
        groups: v[1] as usize,
        seed: v.get(2).copied().unwrap_or(DEFAULT_SEED),
    })
}

impl SpecArgs {
    fn build(&self) -> Result<SyntheticSpec> {
        if self.spec != "default" {
            return Err(usage(format!("unknown spec preset {:?}; only \"default\" exists", self.spec)));
        }
        let mut s = SyntheticSpec::default();
        if let Some(w) = self.width {
            s.width = w;
        }
        if let Some(h) = self.height {
            s.height = h;
        }
        if let Some(f) = self.frames {
            s.frames = f;
        }
        if let Some(v) = &self.velocity {
            let v: Vec<f64> = parse_list(v, "velocity", 2..=2)?;
            s.velocity = (v[0], v[1]);
        }
        if let Some(r) = &self.rect {
            let r: Vec<usize> = parse_list(r, "rect", 4..=4)?;
            s.perturb_rect = Rect::new(r[0], r[1], r[2], r[3]);
        }
        if let Some(a) = self.amp {
            s.perturb_amp = a;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        Ok(s)
    }
}

fn summary(t: &Tensor4) -> String {
    let n = t.data().len().max(1) as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let max = t.data().iter().fold(0f32, |m, &v| m.max(v));
    format!("dims={}\nmean={mean:.9e}\nmax={max:.9e}\n", t.dims())
}

fn emit_tensor(t: &Tensor4, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_tensor(t, p).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", summary(t)),
    }
    Ok(())
}

fn parse_emit(s: &str) -> Result<EmitFlags> {
    let mut e = EmitFlags {
        flow: false,
        recon: false,
        residual: false,
        hog: false,
        concat: false,
    };
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "flow" => e.flow = true,
            "recon" => e.recon = true,
            "residual" => e.residual = true,
            "hog" => e.hog = true,
            other => return Err(usage(format!("unknown output kind {other:?} in --emit"))),
        }
    }
    Ok(e)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Flow { prev, next, out, params } => {
            let flow = horn_schunck(&load_frame(&prev)?, &load_frame(&next)?, &params.params())?;
            write_flo(&flow, &out)?;
        }
        Command::Warp { frame, flow, out } => {
            let recon = reconstruct_frame(&load_frame(&frame)?, &read_flo(&flow)?)?;
            emit_tensor(&recon, out.as_deref())?;
        }
        Command::Residual { recon, next, out } => {
            let r = residual(&load_frame(&recon)?, &load_frame(&next)?)?;
            emit_tensor(&r, out.as_deref())?;
        }
        Command::Hog { input, pool, out } => {
            let f = hog(&load_frame(&input)?, pool)?;
            write_tensor(&f.to_tensor(), &out)?;
        }
        Command::Ggca {
            input,
            weights,
            out,
            save_weights,
        } => {
            let w = match (&weights.weights, &weights.init) {
                (Some(p), None) => read_weights(p)?,
                (None, Some(s)) => match parse_init(s)? {
                    WeightsSource::Init { channels, groups, seed } => init_weights(channels, groups, seed)?,
                    WeightsSource::File(_) => unreachable!(),
                },
                _ => return Err(usage("ggca needs exactly one of --weights or --init")),
            };
            let o = ggca_forward(&load_frame(&input)?, &w)?;
            write_tensor(&o, &out)?;
            if let Some(p) = save_weights {
                write_weights(&w, p)?;
            }
        }
        Command::Synth { spec, out } => {
            let spec = spec.build()?;
            let (frames, truth) = gen_sequence(&spec)?;
            fs::create_dir_all(&out)?;
            for (t, f) in frames.iter().enumerate() {
                write_image(f, out.join(format!("frame_{t}.ppm")))?;
            }
            for t in 0..frames.len() - 1 {
                write_flo(&truth, out.join(format!("flow_{t}.flo")))?;
            }
        }
        Command::Analyze { spec, params, csv } => {
            let report = run_experiment(&spec.build()?, &params.params())?;
            print!("{}", report.to_key_values());
            if let Some(p) = csv {
                fs::write(&p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Pipeline {
            frames,
            out,
            flow_files,
            pool,
            ggca_weights,
            ggca_init,
            concat,
            emit,
            threads,
            params,
        } => {
            let mut cfg = PipelineConfig::new(frames, out);
            cfg.flow = match flow_files {
                Some(files) => FlowSource::Files(files),
                None => FlowSource::Builtin(params.params()),
            };
            cfg.hog_pool = pool;
            cfg.ggca = match (ggca_weights, ggca_init) {
                (Some(p), _) => Some(WeightsSource::File(p)),
                (None, Some(s)) => Some(parse_init(&s)?),
                (None, None) => None,
            };
            cfg.emit = EmitFlags {
                concat,
                ..parse_emit(&emit)?
            };
            if threads == Some(0) {
                return Err(usage("--threads must be at least 1"));
            }
            cfg.threads = threads;
            let s = pipeline_run(&cfg)?;
            log::info!("wrote {} outputs to {}", s.entries.len(), cfg.out_dir.display());
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}
