use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panodyn::pipeline::{
    run_align, run_animate, run_eval, run_lift, run_render, run_synth, PipelineConfig,
    RenderCamera,
};
use panodyn::Error;

#[derive(Parser, Debug)]
#[command(name = "panodyn", version, about = "Panorama animation and 4D Gaussian lifting")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes the procedural scene: pano.png, mask.png, frames/, depth/.
    Synth,
    /// Animates pano.png inside mask.png into frames/.
    Animate(InputArgs),
    /// Fuses monocular depth of frames/ into depth/.
    Align(InputArgs),
    /// Optimizes one Gaussian set per frame into gaussians/.
    Lift(InputArgs),
    /// Renders gaussians/ from one camera into render/.
    Render(RenderArgs),
    /// Compares two frame directories and writes metrics.json.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Directory holding the inputs; defaults to --out.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Index into the render fan.
    #[arg(long, conflicts_with = "direction")]
    view: Option<usize>,
    /// Viewing direction `x,y,z`.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    direction: Option<[f64; 3]>,
    /// Camera position offset `dx,dy,dz`.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    offset: Option<[f64; 3]>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of candidate frame_NNN.png files.
    #[arg(long)]
    candidate: PathBuf,
    /// Directory of reference frame_NNN.png files.
    #[arg(long)]
    reference: PathBuf,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

fn load_config(cli: &Cli) -> panodyn::Result<PipelineConfig> {
    let mut text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    for o in &cli.overrides {
        if !o.contains('=') {
            return Err(Error::Config(format!("override {o:?} is not key=value")));
        }
        // Later lines replace earlier ones by key, so drop any earlier setting.
        let key = o.split('=').next().unwrap_or("").trim();
        text = text
            .lines()
            .filter(|l| l.split('=').next().map(str::trim) != Some(key))
            .collect::<Vec<_>>()
            .join("\n");
        text.push('\n');
        text.push_str(o);
    }
    if let Some(seed) = cli.seed {
        text = text
            .lines()
            .filter(|l| l.split('=').next().map(str::trim) != Some("seed"))
            .collect::<Vec<_>>()
            .join("\n");
        text.push_str(&format!("\nseed = {seed}"));
    }
    PipelineConfig::parse(&text)
}

fn input_dir<'a>(input: &'a InputArgs, out: &'a Path) -> &'a Path {
    input.input.as_deref().unwrap_or(out)
}

fn run(cli: &Cli) -> panodyn::Result<serde_json::Value> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    Ok(match &cli.command {
        Command::Synth => {
            let scene = run_synth(&cfg, out)?;
            serde_json::json!({ "frames": scene.config().frames })
        }
        Command::Animate(a) => {
            let video = run_animate(&cfg, input_dir(a, out), out)?;
            serde_json::json!({ "frames": video.len() })
        }
        Command::Align(a) => {
            let depths = run_align(&cfg, input_dir(a, out), out)?;
            serde_json::json!({ "frames": depths.len() })
        }
        Command::Lift(a) => {
            let psnr = run_lift(&cfg, input_dir(a, out), out)?;
            serde_json::json!({ "frames": psnr.len(), "psnr": psnr })
        }
        Command::Render(r) => {
            let offset = r.offset.unwrap_or([0.0; 3]);
            let cam = match (r.view, r.direction) {
                (_, Some(d)) => RenderCamera::looking_at(&cfg, d, offset)?,
                (v, None) => RenderCamera::fan_view(&cfg, v.unwrap_or(0), offset)?,
            };
            let frames = run_render(&cfg, input_dir(&r.input, out), out, &cam)?;
            serde_json::json!({ "frames": frames.len() })
        }
        Command::Eval(e) => {
            let report = run_eval(&e.candidate, &e.reference, out)?;
            serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?
        }
    })
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim());
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
