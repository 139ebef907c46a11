use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use burst_parallax::flow::{
    estimate_multiframe_flow_traced, estimate_pairwise_flow, pairwise_energy, read_flo, write_flo, MultiFrameProblem,
};
use burst_parallax::fusion::{align_stack, disparity_to_dsm, super_resolve, temporal_std, total_variation_image};
use burst_parallax::image::{load_image, save_image};
use burst_parallax::kv::{KeyValues, Metrics};
use burst_parallax::pipeline::{evaluate_disparity, frame_index_from_path, load_burst, run_pipeline, PipelineConfig};
use burst_parallax::plane_parallax::{read_affinities, solve_plane_parallax, stabilize, write_affinities, FactorizationProblem};
use burst_parallax::synth::{
    flow_epe, generate_burst, interior_mask, scene_from_config, write_synthetic,
};
use burst_parallax::{AffineTransform, Error, FlowField, FlowParams, Result};

/// Parallax estimation for push-frame image bursts.
#[derive(Parser, Debug)]
#[command(name = "bparallax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pairwise variational flow between a reference and another frame.
    Flow(FlowCmd),
    /// Plane+parallax factorization of pairwise flows.
    Factor(FactorCmd),
    /// Resample frames onto the common plane.
    Stabilize(StabilizeCmd),
    /// Joint multi-frame disparity estimation.
    Mfflow(MfflowCmd),
    /// Stack diagnostics and shift-and-add super-resolution.
    Fuse(FuseCmd),
    /// Surface model from a disparity field.
    Dsm(DsmCmd),
    /// Generate a synthetic burst with ground truth.
    Synth(SynthCmd),
    /// Endpoint errors of a disparity against ground truth.
    Eval(EvalCmd),
    /// Run every stage end to end.
    Pipeline(PipelineCmd),
}

/// Solver settings shared by the flow commands; each mirrors a config key.
#[derive(Args, Debug, Default, Clone)]
struct FlowArgs {
    /// Preset smoothness: `sr` (alpha 10) or `dsm` (alpha 60).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    scale_factor: Option<f64>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    sor_iters: Option<usize>,
    #[arg(long)]
    sor_omega: Option<f64>,
}

impl FlowArgs {
    fn key_values(&self, kv: &mut KeyValues) {
        if let Some(m) = &self.mode {
            kv.insert("mode", m);
        }
        let numeric = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("scale_factor", self.scale_factor),
            ("sor_omega", self.sor_omega),
        ];
        for (k, v) in numeric {
            if let Some(v) = v {
                kv.insert(k, v);
            }
        }
        let counts = [
            ("min_size", self.min_size),
            ("outer_iters", self.outer_iters),
            ("inner_iters", self.inner_iters),
            ("sor_iters", self.sor_iters),
        ];
        for (k, v) in counts {
            if let Some(v) = v {
                kv.insert(k, v);
            }
        }
    }

    fn params(&self) -> Result<FlowParams> {
        let mut config = PipelineConfig::default();
        let mut kv = KeyValues::default();
        self.key_values(&mut kv);
        config.apply(kv, Path::new("."))?;
        config.flow.validate()?;
        Ok(config.flow)
    }
}

#[derive(Args, Debug)]
struct FlowCmd {
    /// Reference image (PGM or PFM).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Image to register against the reference.
    #[arg(long)]
    other: PathBuf,
    /// Output flow file.
    #[arg(long, short)]
    out: PathBuf,
    /// Optional ground-truth flow; prints the endpoint error.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Debug)]
struct FactorCmd {
    /// Flow files named `<name>_<i>.flo`, `i` being the frame index.
    #[arg(required = true)]
    flows: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    step: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Affinity text file to write.
    #[arg(long)]
    affinities: PathBuf,
    /// Disparity flow file to write.
    #[arg(long)]
    disparity: PathBuf,
}

#[derive(Args, Debug)]
struct StabilizeCmd {
    /// Frame files `frame_<i>`, or one directory holding them.
    #[arg(required = true)]
    frames: Vec<PathBuf>,
    #[arg(long)]
    affinities: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MfflowCmd {
    #[arg(required = true)]
    frames: Vec<PathBuf>,
    /// Affinities; frames without one are taken as already stabilized.
    #[arg(long)]
    affinities: Option<PathBuf>,
    /// Initial disparity.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Debug)]
struct FuseCmd {
    #[arg(required = true)]
    frames: Vec<PathBuf>,
    #[arg(long)]
    affinities: PathBuf,
    #[arg(long)]
    disparity: PathBuf,
    #[arg(long, default_value_t = 2)]
    zoom: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Super-resolved image (.pfm or .pgm).
    #[arg(long, short)]
    out: PathBuf,
    /// Optional temporal standard deviation map of the parallax-aware stack.
    #[arg(long)]
    std_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DsmCmd {
    #[arg(long)]
    disparity: PathBuf,
    /// Projection direction `x,y`; defaults to the principal axis of the disparity.
    #[arg(long, value_parser = parse_pair)]
    direction: Option<(f64, f64)>,
    /// Height units per pixel of disparity.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthCmd {
    /// Scene description (`key=value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene kind when no config is given: flat, bump, ramp, urban or mover.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Directory of pairwise flows `flow_<i>.flo` to score after baseline normalization.
    #[arg(long)]
    pairwise: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    margin: usize,
}

#[derive(Args, Debug)]
struct PipelineCmd {
    /// Configuration file (`key=value`); flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame files, or one directory holding `frame_<i>` files.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    reference: Option<i32>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    subsample_step: Option<usize>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    cg_max_iters: Option<usize>,
    #[arg(long)]
    zoom: Option<usize>,
    #[arg(long)]
    splat_sigma: Option<f64>,
    #[arg(long)]
    multiframe: Option<bool>,
    #[arg(long)]
    super_resolution: Option<bool>,
    #[arg(long)]
    dsm: Option<bool>,
    #[arg(long)]
    dsm_direction: Option<String>,
    #[arg(long)]
    dsm_scale: Option<f64>,
    /// Directory holding `gt_disparity.flo`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    eval_margin: Option<usize>,
    #[command(flatten)]
    flow: FlowArgs,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected x,y")?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad number {a:?}"))?,
        b.trim().parse().map_err(|_| format!("bad number {b:?}"))?,
    ))
}

fn print_metrics(m: &Metrics) {
    print!("{m}");
}

fn cmd_flow(c: &FlowCmd) -> Result<()> {
    let params = c.flow.params()?;
    let v0 = load_image(&c.reference)?;
    let vi = load_image(&c.other)?;
    let truth = c.truth.as_ref().map(read_flo).transpose()?;
    let flow = estimate_pairwise_flow(&v0, &vi, &params, None)?;
    let mut m = Metrics::new();
    m.push_f64("energy", pairwise_energy(&v0, &vi, &flow, &params)?);
    m.push_f64("mean_norm", flow.mean_norm());
    if let Some(t) = truth {
        let (w, h) = t.dims();
        m.push_f64("epe", flow_epe(&flow, &t, Some(&interior_mask(w, h, 8)))?);
    }
    write_flo(&flow, &c.out)?;
    print_metrics(&m);
    Ok(())
}

fn cmd_factor(c: &FactorCmd) -> Result<()> {
    let mut flows = BTreeMap::new();
    for p in &c.flows {
        let i = frame_index_from_path(p)
            .ok_or_else(|| Error::Config(format!("cannot read a frame index from {}", p.display())))?;
        flows.insert(i, read_flo(p)?);
    }
    let problem = FactorizationProblem::new(flows, c.step);
    let r = solve_plane_parallax(&problem, c.tol, c.max_iters)?;
    write_affinities(&c.affinities, &r.affinities)?;
    write_flo(&r.disparity, &c.disparity)?;
    let mut m = Metrics::new();
    m.push_f64("residual_rms", r.residual_rms);
    m.push("cg_iterations", r.cg_iterations);
    m.push_f64("cg_relative_residual", r.cg_relative_residual);
    m.push("cg_converged", r.cg_converged);
    print_metrics(&m);
    Ok(())
}

fn cmd_stabilize(c: &StabilizeCmd) -> Result<()> {
    let burst = load_burst(&c.frames, 0)?;
    let affinities = read_affinities(&c.affinities)?;
    let out = stabilize(&burst, &affinities)?;
    std::fs::create_dir_all(&c.out).map_err(|e| Error::Io {
        path: c.out.clone(),
        source: e,
    })?;
    for f in out.frames() {
        save_image(&f.image, c.out.join(format!("frame_{}.pfm", f.index)))?;
    }
    Ok(())
}

fn cmd_mfflow(c: &MfflowCmd) -> Result<()> {
    let params = c.flow.params()?;
    let burst = load_burst(&c.frames, 0)?;
    let mut problem = MultiFrameProblem::new(burst, params);
    if let Some(p) = &c.affinities {
        problem = problem.with_affinities(read_affinities(p)?);
    }
    if let Some(p) = &c.init {
        problem = problem.with_init(read_flo(p)?);
    }
    let sol = estimate_multiframe_flow_traced(&problem)?;
    write_flo(&sol.flow, &c.out)?;
    let mut m = Metrics::new();
    if let Some(e) = sol.finest_energies().last() {
        m.push_f64("energy", *e);
    }
    m.push_f64("mean_norm", sol.flow.mean_norm());
    print_metrics(&m);
    Ok(())
}

fn cmd_fuse(c: &FuseCmd) -> Result<()> {
    let burst = load_burst(&c.frames, 0)?;
    let affinities: BTreeMap<i32, AffineTransform> = read_affinities(&c.affinities)?;
    let d = read_flo(&c.disparity)?;
    let (w, h) = burst.dims();
    let rigid = temporal_std(&align_stack(&burst, &affinities, &FlowField::zeros(w, h), 1)?)?;
    let parallax = temporal_std(&align_stack(&burst, &affinities, &d, 1)?)?;
    let sr = super_resolve(&burst, &affinities, &d, c.zoom, c.sigma)?;
    save_image(&sr.image, &c.out)?;
    if let Some(p) = &c.std_out {
        save_image(&parallax.map, p)?;
    }
    let mut m = Metrics::new();
    m.push_f64("std_rigid", rigid.mean);
    m.push_f64("std_parallax", parallax.mean);
    m.push("sr_fallback_pixels", sr.fallback_pixels);
    print_metrics(&m);
    Ok(())
}

fn cmd_dsm(c: &DsmCmd) -> Result<()> {
    let d = read_flo(&c.disparity)?;
    let model = disparity_to_dsm(&d, c.direction, c.scale)?;
    save_image(&model.heights, &c.out)?;
    let mut m = Metrics::new();
    m.push_f64("direction_x", model.direction.0);
    m.push_f64("direction_y", model.direction.1);
    m.push_f64("tv", total_variation_image(&model.heights));
    m.push("degenerate", model.degenerate);
    print_metrics(&m);
    Ok(())
}

fn cmd_synth(c: &SynthCmd) -> Result<()> {
    let (mut kv, base) = match &c.config {
        Some(p) => (KeyValues::load(p)?, p.parent().unwrap_or(Path::new(".")).to_path_buf()),
        None => (KeyValues::default(), PathBuf::from(".")),
    };
    synth_overrides(c, &mut kv);
    let spec = scene_from_config(kv, &base)?;
    let out = generate_burst(&spec)?;
    write_synthetic(&out, &c.out)?;
    let mut m = Metrics::new();
    m.push("frames", out.burst.len());
    m.push_f64("gt_disparity_max_norm", out.truth.disparity.max_norm());
    print_metrics(&m);
    Ok(())
}

fn synth_overrides(c: &SynthCmd, kv: &mut KeyValues) {
    if let Some(s) = &c.scene {
        kv.insert("scene", s);
    }
    if let Some(s) = c.seed {
        kv.insert("seed", s);
    }
    if let Some(s) = c.noise_sigma {
        kv.insert("noise_sigma", s);
    }
    for (k, v) in [("n_frames", c.n_frames), ("width", c.width), ("height", c.height)] {
        if let Some(v) = v {
            kv.insert(k, v);
        }
    }
}

fn cmd_eval(c: &EvalCmd) -> Result<()> {
    let estimate = read_flo(&c.estimate)?;
    let truth = read_flo(&c.truth)?;
    let mut pairwise = BTreeMap::new();
    if let Some(dir) = &c.pairwise {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "flo"))
            .collect();
        files.sort();
        for p in files {
            if let Some(i) = frame_index_from_path(&p) {
                pairwise.insert(i, read_flo(&p)?);
            }
        }
    }
    print_metrics(&evaluate_disparity(&estimate, &truth, &pairwise, c.margin)?);
    Ok(())
}

fn cmd_pipeline(c: &PipelineCmd) -> Result<()> {
    let mut config = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut kv = KeyValues::default();
    if !c.input.is_empty() {
        let inputs: Vec<String> = c.input.iter().map(|p| p.display().to_string()).collect();
        kv.insert("input", inputs.join(","));
    }
    if let Some(v) = c.reference {
        kv.insert("reference", v);
    }
    if let Some(v) = &c.output {
        kv.insert("output", v.display());
    }
    if let Some(v) = c.subsample_step {
        kv.insert("subsample_step", v);
    }
    if let Some(v) = c.cg_tol {
        kv.insert("cg_tol", v);
    }
    if let Some(v) = c.cg_max_iters {
        kv.insert("cg_max_iters", v);
    }
    if let Some(v) = c.zoom {
        kv.insert("zoom", v);
    }
    if let Some(v) = c.splat_sigma {
        kv.insert("splat_sigma", v);
    }
    for (k, v) in [("multiframe", c.multiframe), ("super_resolution", c.super_resolution), ("dsm", c.dsm)] {
        if let Some(v) = v {
            kv.insert(k, v);
        }
    }
    if let Some(v) = &c.dsm_direction {
        kv.insert("dsm_direction", v);
    }
    if let Some(v) = c.dsm_scale {
        kv.insert("dsm_scale", v);
    }
    if let Some(v) = &c.truth {
        kv.insert("truth", v.display());
    }
    if let Some(v) = c.eval_margin {
        kv.insert("eval_margin", v);
    }
    c.flow.key_values(&mut kv);
    // `--mode` alone must not undo an `alpha` from the config file
    if c.flow.mode.is_some() && c.flow.alpha.is_none() {
        if let Some(alpha) = config_alpha(c)? {
            kv.insert("alpha", alpha);
        }
    }
    config.apply(kv, Path::new("."))?;
    let out = run_pipeline(&config)?;
    print_metrics(&out.metrics);
    Ok(())
}

/// Explicit `alpha` of the config file, if any.
fn config_alpha(c: &PipelineCmd) -> Result<Option<f64>> {
    let Some(p) = &c.config else { return Ok(None) };
    let kv = KeyValues::load(p)?;
    match kv.get("alpha") {
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("cannot parse alpha={v:?}"))),
        None => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Flow(c) => cmd_flow(c),
        Command::Factor(c) => cmd_factor(c),
        Command::Stabilize(c) => cmd_stabilize(c),
        Command::Mfflow(c) => cmd_mfflow(c),
        Command::Fuse(c) => cmd_fuse(c),
        Command::Dsm(c) => cmd_dsm(c),
        Command::Synth(c) => cmd_synth(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Pipeline(c) => cmd_pipeline(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
