//! `seqlayers` command line: describe, run, stream, diff and verify layer
//! pipelines written as RON spec files.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use seqlayers::config::{build_root, parse_pipeline, PipelineSpec};
use seqlayers::layer::name_tree;
use seqlayers::layer::streaming::layer_by_steps;
use seqlayers::tensor::io::{read_archive, write_archive};
use seqlayers::verify::{diff_sequences, inputs, verify_contract, HarnessConfig};
use seqlayers::{BuildCtx, ChannelSpec, Layer, Sequence};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "seqlayers", version, about = "Streaming sequence layer pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer tree and its streaming metadata.
    Describe {
        #[arg(long)]
        spec: PathBuf,
        /// Input channel spec such as `f32[4]`; overrides the spec file.
        #[arg(long)]
        input_spec: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Run layer-wise over the manifest input.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run step-wise in blocks, flushing at the end.
    Stream {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Steps per call; defaults to the manifest, then the layer block size.
        #[arg(long)]
        block: Option<usize>,
    },
    /// Run both ways and compare. Exits 1 on any difference above tolerance.
    Diff {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long)]
        block: Option<usize>,
    },
    /// Run the contract checks on randomly initialized parameters.
    Verify {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        input_spec: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Input length; derived from the layer when absent.
        #[arg(long)]
        time: Option<usize>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a random SLS1 sequence, for trying out the other commands.
    RandomInput {
        #[arg(long)]
        input_spec: String,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long)]
        time: usize,
        /// Valid length per row, comma separated; all rows full when absent.
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a seeded random parameter archive for a spec.
    Params {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        input_spec: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

/// How a command that ran to completion ended. Errors exit with 2.
enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Describe { spec, input_spec, json } => describe(&spec, input_spec.as_deref(), json),
        Command::Run { spec, manifest } => run(&spec, &manifest),
        Command::Stream { spec, manifest, block } => stream(&spec, &manifest, block),
        Command::Diff {
            spec,
            manifest,
            tolerance,
            block,
        } => diff(&spec, &manifest, tolerance, block),
        Command::Verify {
            spec,
            input_spec,
            seed,
            tolerance,
            time,
            json,
        } => verify(&spec, input_spec.as_deref(), seed, tolerance, time, json.as_deref()),
        Command::RandomInput {
            input_spec,
            batch,
            time,
            lengths,
            seed,
            output,
        } => random_input(&input_spec, batch, time, &lengths, seed, &output),
        Command::Params {
            spec,
            input_spec,
            seed,
            output,
        } => params(&spec, input_spec.as_deref(), seed, &output),
    }
}

fn load_spec(path: &Path) -> anyhow::Result<PipelineSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pipeline(&text).with_context(|| format!("parsing {}", path.display()))
}

fn input_spec(spec: &PipelineSpec, flag: Option<&str>) -> anyhow::Result<ChannelSpec> {
    // The flag wins over the file.
    let spec = match flag {
        Some(s) => s.parse()?,
        None => spec.resolve_input(None)?,
    };
    Ok(spec)
}

fn build(spec: &PipelineSpec, input: &ChannelSpec, mut ctx: BuildCtx) -> anyhow::Result<Box<dyn Layer>> {
    let layer = build_root(&spec.layer, input, &mut ctx)?;
    ctx.finish()?;
    Ok(layer)
}

fn describe(path: &Path, flag: Option<&str>, as_json: bool) -> anyhow::Result<Outcome> {
    let spec = load_spec(path)?;
    let input = input_spec(&spec, flag)?;
    let layer = build(&spec, &input, BuildCtx::random(0))?;
    let props = layer.properties();
    if as_json {
        let out = json!({
            "name": layer.name(),
            "kind": layer.kind(),
            "input_spec": input.to_string(),
            "output_spec": layer.output_spec().to_string(),
            "properties": props.summary(),
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(Outcome::Ok);
    }
    print!("{}", name_tree(layer.as_ref()));
    println!("input_spec: {input}");
    println!("output_spec: {}", layer.output_spec());
    println!("{props}");
    Ok(Outcome::Ok)
}

/// Everything a manifest-driven command needs.
struct Prepared {
    manifest: Manifest,
    layer: Box<dyn Layer>,
    input: Sequence,
    constants: seqlayers::Constants,
}

fn prepare(spec_path: &Path, manifest_path: &Path) -> anyhow::Result<Prepared> {
    let spec = load_spec(spec_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let input = manifest.read_input()?;
    let channel = match &spec.input_spec {
        Some(s) => {
            let declared: ChannelSpec = s.parse()?;
            if declared != input.channel_spec() {
                bail!(
                    "input {} has channel spec {}, but the spec file declares {declared}",
                    manifest.input.display(),
                    input.channel_spec()
                );
            }
            declared
        }
        None => input.channel_spec(),
    };
    let ctx = match &manifest.params {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            BuildCtx::from_archive(read_archive(&bytes)?, manifest.seed)
        }
        None => BuildCtx::random(manifest.seed),
    };
    let layer = build(&spec, &channel, ctx)?;
    let constants = manifest.read_constants()?;
    Ok(Prepared {
        manifest,
        layer,
        input,
        constants,
    })
}

fn write_output(p: &Prepared, y: &Sequence, mode: &str, block: Option<usize>) -> anyhow::Result<()> {
    let out = &p.manifest.output;
    fs::write(out, y.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    let meta = json!({
        "mode": mode,
        "layer": p.layer.name(),
        "kind": p.layer.kind(),
        "training": p.manifest.training,
        "seed": p.manifest.seed,
        "params": match &p.manifest.params {
            Some(path) => json!(path.display().to_string()),
            None => json!("random"),
        },
        "block": block,
        "input_spec": p.input.channel_spec().to_string(),
        "output_spec": y.channel_spec().to_string(),
        "batch": y.batch(),
        "input_time": p.input.time(),
        "output_time": y.time(),
        "properties": p.layer.properties().summary(),
    });
    let sidecar = sidecar_path(out);
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)? + "\n")
        .with_context(|| format!("writing {}", sidecar.display()))?;
    println!("wrote {} [{} x {} x {}]", out.display(), y.batch(), y.time(), y.channel_spec());
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn run(spec: &Path, manifest: &Path) -> anyhow::Result<Outcome> {
    let p = prepare(spec, manifest)?;
    let y = p.layer.layer(&p.input, p.manifest.training, &p.constants)?;
    write_output(&p, &y, "layer", None)?;
    Ok(Outcome::Ok)
}

fn stream_block(p: &Prepared, flag: Option<usize>) -> anyhow::Result<usize> {
    let native = p.layer.properties().block_size;
    let block = flag.or(p.manifest.block_size).unwrap_or(native);
    if !p.layer.properties().supports_step {
        bail!("layer `{}` ({}) is not steppable", p.layer.name(), p.layer.kind());
    }
    if block == 0 || !block.is_multiple_of(native) {
        bail!("block {block} is not a multiple of the layer block size {native}");
    }
    Ok(block)
}

fn stream(spec: &Path, manifest: &Path, block: Option<usize>) -> anyhow::Result<Outcome> {
    let p = prepare(spec, manifest)?;
    let block = stream_block(&p, block)?;
    let (y, _) = layer_by_steps(p.layer.as_ref(), &p.input, block, p.manifest.training, &p.constants)?;
    write_output(&p, &y, "step", Some(block))?;
    Ok(Outcome::Ok)
}

fn diff(spec: &Path, manifest: &Path, tolerance: f64, block: Option<usize>) -> anyhow::Result<Outcome> {
    let p = prepare(spec, manifest)?;
    let block = stream_block(&p, block)?;
    let training = p.manifest.training;
    let layer_out = p.layer.layer(&p.input, training, &p.constants)?;
    let (step_out, _) = layer_by_steps(p.layer.as_ref(), &p.input, block, training, &p.constants)?;
    let d = match diff_sequences(&layer_out, &step_out, tolerance) {
        Ok(d) => d,
        Err(e) => {
            println!("layer and step outputs differ: {e}");
            return Ok(Outcome::Failed);
        }
    };
    println!("block: {block}");
    println!("max_abs_diff: {:e}", d.max_abs_diff);
    println!("masks_equal: {}", d.masks_equal);
    match &d.first_mismatch {
        Some(m) => println!("first_mismatch: {m}"),
        None => println!("first_mismatch: none"),
    }
    if d.within(tolerance) {
        println!("diff pass (tolerance {tolerance:e})");
        Ok(Outcome::Ok)
    } else {
        println!("diff fail (tolerance {tolerance:e})");
        Ok(Outcome::Failed)
    }
}

fn verify(
    path: &Path,
    flag: Option<&str>,
    seed: u64,
    tolerance: Option<f64>,
    time: Option<usize>,
    json_out: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let spec = load_spec(path)?;
    let input = input_spec(&spec, flag)?;
    let layer = build(&spec, &input, BuildCtx::random(seed))?;
    let cfg = HarnessConfig {
        seed,
        tolerance,
        time,
        ..HarnessConfig::default()
    };
    let report = verify_contract(layer.as_ref(), &cfg);
    print!("{}", report.render_text());
    if let Some(out) = json_out {
        fs::write(out, serde_json::to_string_pretty(&report.to_json())? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    if report.passed() {
        Ok(Outcome::Ok)
    } else {
        eprintln!("failed checks: {}", report.failed().join(", "));
        Ok(Outcome::Failed)
    }
}

fn params(path: &Path, flag: Option<&str>, seed: u64, output: &Path) -> anyhow::Result<Outcome> {
    let spec = load_spec(path)?;
    let input = input_spec(&spec, flag)?;
    let layer = build(&spec, &input, BuildCtx::random(seed))?;
    let params = layer.parameters();
    let mut bytes = Vec::new();
    write_archive(&mut bytes, &params)?;
    fs::write(output, bytes).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} tensors to {}", params.len(), output.display());
    Ok(Outcome::Ok)
}

fn random_input(spec: &str, batch: usize, time: usize, lengths: &[usize], seed: u64, output: &Path) -> anyhow::Result<Outcome> {
    let spec: ChannelSpec = spec.parse()?;
    let lengths = match lengths {
        [] => vec![time; batch],
        l if l.len() == batch => l.to_vec(),
        l => bail!("{} lengths given for batch {batch}", l.len()),
    };
    let full = inputs::random_valid(&spec, batch, time, &mut inputs::rng(seed));
    let x = Sequence::from_lengths(full.values().clone(), &lengths)?.mask_invalid();
    fs::write(output, x.to_bytes()).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} [{batch} x {time} x {spec}]", output.display());
    Ok(Outcome::Ok)
}
