use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use vrja_core::bitstream::BitstreamError;
use vrja_core::brm::{self, BrmConfig, BrmError, BrmResult};
use vrja_core::metrics::{self, MetricsError, RdPoint, RdRow, STANDARD_GRID};
use vrja_core::quality_map::{
    delta_beta_from_ratio, DeltaBeta, QualityMapError, QualityMapParseError, SpatialQualityMap,
};
use vrja_core::roi::{
    self, Rect, RoiError, RoiOperatingPoint, RoiReport, DEFAULT_BG_INDEX, DEFAULT_ROI_INDEX,
};
use vrja_core::surrogate::{
    decode_picture, encode_picture, reencode, CachedPicture, CodecError, EncodeParams, ModelSuite,
    RateReport, SynthesisCounter, BETA_TRAIN, MODEL_COUNT,
};

use crate::config::RunConfig;
use crate::CliError;

impl From<QualityMapError> for CliError {
    fn from(e: QualityMapError) -> Self {
        match e {
            QualityMapError::IndexOutOfRange(_) => CliError::Range(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Bitstream(BitstreamError::DeltaOutOfRange(_)) => {
                CliError::Range(e.to_string())
            }
            CodecError::QualityMap(q) => q.into(),
            CodecError::SpatialMapShape { .. }
            | CodecError::UnknownModel(_)
            | CodecError::InvalidShape(_) => CliError::Usage(e.to_string()),
            _ => CliError::Other(e.into()),
        }
    }
}

impl From<BrmError> for CliError {
    fn from(e: BrmError) -> Self {
        match e {
            BrmError::Codec(c) => c.into(),
            BrmError::InvalidConfig(_) | BrmError::NonPositiveRate(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Other(e.into()),
        }
    }
}

impl From<RoiError> for CliError {
    fn from(e: RoiError) -> Self {
        match e {
            RoiError::BadRect(..) => CliError::Usage(e.to_string()),
            RoiError::QualityMap(q) => q.into(),
            RoiError::Codec(c) => c.into(),
            RoiError::Brm(b) => b.into(),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::DeltaOutOfRange(_) => CliError::Range(e.to_string()),
            MetricsError::Codec(c) => c.into(),
            _ => CliError::Other(e.into()),
        }
    }
}

fn check_delta(name: &str, d: i32) -> Result<DeltaBeta, CliError> {
    let delta = DeltaBeta(d);
    if delta.in_signal_range() {
        Ok(delta)
    } else {
        Err(CliError::Range(format!("{name} {d} outside [-1069, 702]")))
    }
}

fn load_map(path: &Path) -> Result<SpatialQualityMap, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading spatial map {}", path.display()))?;
    SpatialQualityMap::parse_text(&text).map_err(|e| match e {
        QualityMapParseError::Invalid(q) => q.into(),
        other => CliError::Usage(format!("{}: {other}", path.display())),
    })
}

struct Session {
    suite: ModelSuite,
    cached: CachedPicture,
}

fn session(cfg: &RunConfig) -> Result<Session, CliError> {
    let shape = cfg.shape()?;
    let suite = ModelSuite::for_shape(shape, cfg.suite_seed)?;
    let cached = CachedPicture::synthesize(shape, cfg.seed, &SynthesisCounter::new());
    Ok(Session { suite, cached })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn model_id_parser(s: &str) -> Result<u8, String> {
    let id: u8 = s.parse().map_err(|e| format!("{e}"))?;
    if usize::from(id) < MODEL_COUNT {
        Ok(id)
    } else {
        Err(format!("model id must be below {MODEL_COUNT}"))
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, default_value_t = 0, value_parser = model_id_parser)]
    pub model: u8,
    #[arg(long, allow_negative_numbers = true, conflicts_with = "beta_test")]
    pub delta_beta_y: Option<i32>,
    /// Defaults to the Y value.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "beta_test")]
    pub delta_beta_uv: Option<i32>,
    /// Test-time rate-distortion weight; converted to delta beta against the model's training weight.
    #[arg(long)]
    pub beta_test: Option<f64>,
    /// Plain-text grid of quantization indices in [-8, 8].
    #[arg(long)]
    pub spatial_map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn encode(cfg: &RunConfig, args: &EncodeArgs) -> Result<(), CliError> {
    let (dy, duv) = match args.beta_test {
        Some(beta) => {
            let ratio = beta / BETA_TRAIN[usize::from(args.model)];
            let d = delta_beta_from_ratio(ratio, &Default::default())
                .map_err(|e| CliError::Usage(e.to_string()))?;
            (
                check_delta("delta beta", d.value())?,
                check_delta("delta beta", d.value())?,
            )
        }
        None => {
            let y = args.delta_beta_y.unwrap_or(0);
            (
                check_delta("delta beta y", y)?,
                check_delta("delta beta uv", args.delta_beta_uv.unwrap_or(y))?,
            )
        }
    };
    let spatial = args.spatial_map.as_deref().map(load_map).transpose()?;
    let s = session(cfg)?;
    let model = s.suite.model(args.model)?;
    let latent = s.cached.latent(model)?;
    let params = EncodeParams {
        delta_y: dy,
        delta_uv: duv,
        spatial: spatial.as_ref(),
    };
    let enc = encode_picture(&latent, model, &params, s.suite.log_cfg())?;
    let bytes = enc.bitstream.to_bytes().map_err(CodecError::from)?;
    write_file(&args.out, &bytes)?;
    println!("{}", RateReport::CSV_HEADER);
    println!("{}", enc.report.csv_row());
    Ok(())
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    /// Re-encode the decoded latent with the header's parameters and write it here.
    #[arg(long)]
    pub reencode: Option<PathBuf>,
}

pub fn decode(cfg: &RunConfig, args: &DecodeArgs) -> Result<(), CliError> {
    let bytes =
        fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let header = vrja_core::bitstream::read(&bytes)
        .map_err(|e| CliError::Other(anyhow::Error::new(e).context("parsing container")))?;
    let suite = ModelSuite::synthetic(header.header.c_y, header.header.c_uv, cfg.suite_seed)?;
    let decoded = decode_picture(&bytes, &suite).map_err(|e| CliError::Other(e.into()))?;
    let h = decoded.header;
    println!("image          {}x{}", h.image_height, h.image_width);
    println!("channels       {}/{}", h.c_y, h.c_uv);
    println!("model_id       {}", h.model_id);
    println!("delta_beta_y   {}", h.delta_beta_y.value());
    println!("delta_beta_uv  {}", h.delta_beta_uv.value());
    println!("spatial_map    {}", h.spatial_map);
    println!("bytes          {}", bytes.len());
    if let Some(out) = &args.reencode {
        write_file(out, &reencode(&decoded, &suite)?)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct MatchRateArgs {
    #[arg(long)]
    pub target_bpp: f64,
    /// Largest accepted relative rate difference.
    #[arg(long, default_value_t = 0.10, conflicts_with = "v2")]
    pub max_diff: f64,
    /// Tight preset, equivalent to `--max-diff 0.01`.
    #[arg(long)]
    pub v2: bool,
    #[arg(long)]
    pub spatial_map: Option<PathBuf>,
    /// Write the `delta_beta,bpp` validation trace here.
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
    /// Encode at the matched point and write the container here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn print_brm(r: &BrmResult) {
    println!("model_id       {}", r.model_id);
    println!("delta_beta     {}", r.delta_beta.value());
    println!("achieved_bpp   {:.6}", r.achieved_bpp);
    println!("target_bpp     {:.6}", r.target_bpp);
    println!("relative_diff  {:.4}", r.relative_diff);
    println!("evaluations    {}", r.validations());
    println!("met_threshold  {}", r.met_threshold);
}

pub fn match_rate(cfg: &RunConfig, args: &MatchRateArgs) -> Result<(), CliError> {
    let brm_cfg = if args.v2 {
        BrmConfig::v2()
    } else {
        BrmConfig::default().with_max_rate_diff(args.max_diff)
    };
    brm_cfg.validate()?;
    if !(args.target_bpp > 0.0 && args.target_bpp.is_finite()) {
        return Err(CliError::Usage(format!(
            "target bpp must be positive, got {}",
            args.target_bpp
        )));
    }
    let spatial = args.spatial_map.as_deref().map(load_map).transpose()?;
    let s = session(cfg)?;
    let res = brm::match_rate(
        &s.cached,
        &s.suite,
        args.target_bpp,
        spatial.as_ref(),
        &brm_cfg,
    )?;
    print_brm(&res);
    if let Some(path) = &args.trace_csv {
        write_file(path, res.trace_csv().as_bytes())?;
    }
    if let Some(out) = &args.out {
        let model = s.suite.model(res.model_id)?;
        let latent = s.cached.latent(model)?;
        let params = EncodeParams::uniform(res.delta_beta, spatial.as_ref());
        let enc = encode_picture(&latent, model, &params, s.suite.log_cfg())?;
        write_file(out, &enc.bitstream.to_bytes().map_err(CodecError::from)?)?;
    }
    if res.met_threshold {
        Ok(())
    } else {
        Err(CliError::ThresholdNotMet(res.relative_diff))
    }
}

#[derive(Debug, Args)]
pub struct RdCurveArgs {
    /// Sweep a single model instead of all four.
    #[arg(long, value_parser = model_id_parser)]
    pub model: Option<u8>,
    /// Comma-separated delta beta values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<i32>>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn rd_curve(cfg: &RunConfig, args: &RdCurveArgs) -> Result<(), CliError> {
    let grid = args.grid.clone().unwrap_or_else(|| STANDARD_GRID.to_vec());
    if grid.is_empty() {
        return Err(CliError::Usage("empty grid".into()));
    }
    for &d in &grid {
        check_delta("grid value", d)?;
    }
    let s = session(cfg)?;
    let models: Vec<u8> = match args.model {
        Some(m) => vec![m],
        None => (0..MODEL_COUNT as u8).collect(),
    };
    let mut rows = Vec::new();
    for m in models {
        rows.extend(metrics::rd_curve(&s.cached, &s.suite, m, &grid)?);
    }
    metrics::write_rows(output(args.out.as_deref())?, &rows)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BdRateArgs {
    /// Anchor curve: `bpp,quality` or `model,delta_beta,bpp,quality` CSV.
    #[arg(long)]
    pub anchor: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Model rows to use from a multi-model anchor file.
    #[arg(long)]
    pub anchor_model: Option<u8>,
    #[arg(long)]
    pub test_model: Option<u8>,
}

fn read_curve(path: &Path, model: Option<u8>) -> Result<Vec<RdPoint>, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or("").trim();
    let mut points = if first.split(',').any(|c| c.trim() == "model") {
        let rows: Vec<RdRow> = metrics::read_rows(text.as_bytes())?;
        let wanted = match model {
            Some(m) => m,
            None => {
                let m = rows.first().map_or(0, |r| r.model);
                if rows.iter().any(|r| r.model != m) {
                    return Err(CliError::Usage(format!(
                        "{} holds several models; pick one with --anchor-model/--test-model",
                        path.display()
                    )));
                }
                m
            }
        };
        rows.iter()
            .filter(|r| r.model == wanted)
            .map(RdRow::point)
            .collect()
    } else {
        if model.is_some() {
            return Err(CliError::Usage(format!(
                "{} has no model column",
                path.display()
            )));
        }
        metrics::read_points(text.as_bytes())?
    };
    points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    Ok(points)
}

pub fn bd_rate(args: &BdRateArgs) -> Result<(), CliError> {
    let anchor = read_curve(&args.anchor, args.anchor_model)?;
    let test = read_curve(&args.test, args.test_model)?;
    println!("{:.2}%", metrics::bd_rate(&anchor, &test)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct RoiDemoArgs {
    /// Region in latent units: x,y,w,h.
    #[arg(long)]
    pub roi_rect: Rect,
    #[arg(long, default_value_t = DEFAULT_ROI_INDEX, allow_negative_numbers = true)]
    pub roi_index: i32,
    #[arg(long, default_value_t = DEFAULT_BG_INDEX, allow_negative_numbers = true)]
    pub bg_index: i32,
    #[arg(long, default_value_t = 2, value_parser = model_id_parser)]
    pub model: u8,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub delta_beta: i32,
    /// Rate match both encodes to this target instead of using a fixed point.
    #[arg(long)]
    pub target_bpp: Option<f64>,
    #[arg(long, default_value_t = 0.10)]
    pub max_diff: f64,
}

fn print_roi(report: &RoiReport) {
    println!("roi_rect {}", report.rect);
    println!("encode    model  delta_beta  bpp       roi_mse     bg_mse");
    for (name, e) in [("plain", &report.plain), ("with_map", &report.with_map)] {
        println!(
            "{name:<9} {:<6} {:<11} {:<9.5} {:<11.6} {:.6}",
            e.model_id,
            e.delta_beta.value(),
            e.bpp,
            e.mse.roi,
            e.mse.background
        );
    }
}

pub fn roi_demo(cfg: &RunConfig, args: &RoiDemoArgs) -> Result<(), CliError> {
    let point = match args.target_bpp {
        Some(bpp) => {
            let brm = BrmConfig::default().with_max_rate_diff(args.max_diff);
            brm.validate()?;
            if !(bpp > 0.0 && bpp.is_finite()) {
                return Err(CliError::Usage(format!(
                    "target bpp must be positive, got {bpp}"
                )));
            }
            RoiOperatingPoint::Target { bpp, brm }
        }
        None => RoiOperatingPoint::Fixed {
            model_id: args.model,
            delta: check_delta("delta beta", args.delta_beta)?,
        },
    };
    let s = session(cfg)?;
    let report = roi::roi_demo(
        &s.cached,
        &s.suite,
        args.roi_rect,
        args.roi_index,
        args.bg_index,
        point,
    )?;
    print_roi(&report);
    let missed = [&report.plain, &report.with_map]
        .iter()
        .filter_map(|e| e.brm.as_ref())
        .find(|r| !r.met_threshold)
        .map(|r| r.relative_diff);
    match missed {
        Some(diff) => Err(CliError::ThresholdNotMet(diff)),
        None => Ok(()),
    }
}
