use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{FlowParams, ALPHA_DSM, ALPHA_SR};
use crate::fusion::DEFAULT_SPLAT_SIGMA;
use crate::kv::KeyValues;

/// Operating point selecting the default smoothness weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Alignment for super-resolution, `alpha = 10`.
    #[default]
    Sr,
    /// Surface-model extraction, `alpha = 60`.
    Dsm,
}

impl Mode {
    pub fn alpha(self) -> f64 {
        match self {
            Mode::Sr => ALPHA_SR,
            Mode::Dsm => ALPHA_DSM,
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Mode::Sr),
            "dsm" => Ok(Mode::Dsm),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected sr or dsm)"))),
        }
    }
}

/// All settings of an end-to-end run. Every field has a `key=value`
/// spelling, see [`PipelineConfig::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Frame files, or a single directory holding `frame_<i>.pfm|pgm`.
    pub inputs: Vec<PathBuf>,
    /// Index (as parsed from the file names) of the reference frame.
    pub reference: i32,
    pub mode: Mode,
    pub flow: FlowParams,
    pub subsample_step: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub zoom: usize,
    pub splat_sigma: f64,
    pub output: PathBuf,
    pub multiframe: bool,
    pub super_resolution: bool,
    pub dsm: bool,
    pub dsm_direction: Option<(f64, f64)>,
    pub dsm_scale: Option<f64>,
    /// Directory with `gt_disparity.flo` for endpoint-error metrics.
    pub truth: Option<PathBuf>,
    /// Border excluded from endpoint-error metrics, pixels.
    pub eval_margin: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            reference: 0,
            mode: Mode::Sr,
            flow: FlowParams::default(),
            subsample_step: 4,
            cg_tol: 1e-8,
            cg_max_iters: 5000,
            zoom: 2,
            splat_sigma: DEFAULT_SPLAT_SIGMA,
            output: PathBuf::from("out"),
            multiframe: true,
            super_resolution: true,
            dsm: true,
            dsm_direction: None,
            dsm_scale: None,
            truth: None,
            eval_margin: 8,
        }
    }
}

fn parse_pair(key: &str, s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(Error::Config(format!("{key} expects two numbers, got {s:?}"))),
        },
        _ => Err(Error::Config(format!("{key} expects x,y, got {s:?}"))),
    }
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key} expects a boolean, got {s:?}"))),
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = PipelineConfig::default();
        config.apply(KeyValues::load(path)?, path.parent().unwrap_or(Path::new(".")))?;
        Ok(config)
    }

    /// Overrides fields from a record; relative paths resolve against
    /// `base_dir`. `mode` sets `alpha` unless `alpha` is also given.
    /// Unknown keys are rejected.
    pub fn apply(&mut self, mut kv: KeyValues, base_dir: &Path) -> Result<()> {
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        if let Some(s) = kv.take::<String>("input")? {
            self.inputs = s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(resolve).collect();
        }
        if let Some(m) = kv.take::<Mode>("mode")? {
            self.mode = m;
            self.flow.alpha = m.alpha();
        }
        self.reference = kv.take_or("reference", self.reference)?;
        let f = &mut self.flow;
        f.alpha = kv.take_or("alpha", f.alpha)?;
        f.gamma = kv.take_or("gamma", f.gamma)?;
        f.epsilon = kv.take_or("epsilon", f.epsilon)?;
        f.scale_factor = kv.take_or("scale_factor", f.scale_factor)?;
        f.min_size = kv.take_or("min_size", f.min_size)?;
        f.outer_iters = kv.take_or("outer_iters", f.outer_iters)?;
        f.inner_iters = kv.take_or("inner_iters", f.inner_iters)?;
        f.sor_iters = kv.take_or("sor_iters", f.sor_iters)?;
        f.sor_omega = kv.take_or("sor_omega", f.sor_omega)?;
        self.subsample_step = kv.take_or("subsample_step", self.subsample_step)?;
        self.cg_tol = kv.take_or("cg_tol", self.cg_tol)?;
        self.cg_max_iters = kv.take_or("cg_max_iters", self.cg_max_iters)?;
        self.zoom = kv.take_or("zoom", self.zoom)?;
        self.splat_sigma = kv.take_or("splat_sigma", self.splat_sigma)?;
        if let Some(p) = kv.take::<String>("output")? {
            self.output = resolve(&p);
        }
        for (key, slot) in [
            ("multiframe", &mut self.multiframe),
            ("super_resolution", &mut self.super_resolution),
            ("dsm", &mut self.dsm),
        ] {
            if let Some(s) = kv.take::<String>(key)? {
                *slot = parse_bool(key, &s)?;
            }
        }
        if let Some(s) = kv.take::<String>("dsm_direction")? {
            self.dsm_direction = Some(parse_pair("dsm_direction", &s)?);
        }
        if let Some(s) = kv.take::<f64>("dsm_scale")? {
            self.dsm_scale = Some(s);
        }
        if let Some(p) = kv.take::<String>("truth")? {
            self.truth = Some(resolve(&p));
        }
        self.eval_margin = kv.take_or("eval_margin", self.eval_margin)?;
        kv.finish()
    }

    /// Renders the configuration as a record that [`PipelineConfig::apply`]
    /// reads back to the same value.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        kv.insert("input", inputs.join(","));
        kv.insert("reference", self.reference);
        kv.insert("mode", if self.mode == Mode::Sr { "sr" } else { "dsm" });
        let f = &self.flow;
        kv.insert("alpha", f.alpha);
        kv.insert("gamma", f.gamma);
        kv.insert("epsilon", f.epsilon);
        kv.insert("scale_factor", f.scale_factor);
        kv.insert("min_size", f.min_size);
        kv.insert("outer_iters", f.outer_iters);
        kv.insert("inner_iters", f.inner_iters);
        kv.insert("sor_iters", f.sor_iters);
        kv.insert("sor_omega", f.sor_omega);
        kv.insert("subsample_step", self.subsample_step);
        kv.insert("cg_tol", self.cg_tol);
        kv.insert("cg_max_iters", self.cg_max_iters);
        kv.insert("zoom", self.zoom);
        kv.insert("splat_sigma", self.splat_sigma);
        kv.insert("output", self.output.display());
        kv.insert("multiframe", self.multiframe);
        kv.insert("super_resolution", self.super_resolution);
        kv.insert("dsm", self.dsm);
        if let Some((x, y)) = self.dsm_direction {
            kv.insert("dsm_direction", format!("{x},{y}"));
        }
        if let Some(s) = self.dsm_scale {
            kv.insert("dsm_scale", s);
        }
        if let Some(t) = &self.truth {
            kv.insert("truth", t.display());
        }
        kv.insert("eval_margin", self.eval_margin);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("no input frames given".into()));
        }
        for p in &self.inputs {
            if !p.exists() {
                return Err(Error::Config(format!("input {} does not exist", p.display())));
            }
        }
        if let Some(t) = &self.truth {
            if !t.join("gt_disparity.flo").exists() {
                return Err(Error::Config(format!("{} has no gt_disparity.flo", t.display())));
            }
        }
        self.flow.validate()?;
        if self.subsample_step == 0 {
            return Err(Error::InvalidParam("subsample_step must be at least 1".into()));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iters == 0 {
            return Err(Error::InvalidParam("cg_tol must be > 0 and cg_max_iters >= 1".into()));
        }
        if self.super_resolution && !(2..=3).contains(&self.zoom) {
            return Err(Error::InvalidParam(format!("zoom must be 2 or 3, got {}", self.zoom)));
        }
        if !(self.splat_sigma > 0.0) {
            return Err(Error::InvalidParam("splat_sigma must be > 0".into()));
        }
        Ok(())
    }
}
