//! Command-line entry points: `ingest`, `simulate`, `naurc` and `synth`.
//!
//! Exit codes: 0 on success, 1 for data errors, 2 for usage and
//! configuration errors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::features::Metric;
use crate::geometry::{associate_ensemble, Detection};
use crate::metrics::{
    interpolate_at_budget, naurc, read_curve_csv, write_curve_csv, Accounting, Curve, CurvePoint,
};
use crate::model::{
    load_dataset, validate_dataset, write_dataset, Box2D, CameraModel, ClassId, Dataset,
    GroundTruthObject, ImageId, InstanceId, InstanceRecord, ViewSpec,
};
use crate::selection::{combined_confidence, StrategyConfig, StrategyKind};
use crate::simulation::{
    generate_synthetic, run_campaign, CampaignConfig, CoverageHook, SyntheticSpec,
};

/// Name of the manifest written by `ingest` and `synth`.
pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "instal",
    version,
    about = "Instance-level active learning selection and campaign simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw JSON Lines export into a manifest plus feature blobs.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run labeling campaigns, one per seed, and write their curves.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare curves by normalized area up to a budget.
    Naurc {
        #[arg(long, num_args = 1.., required = true)]
        curves: Vec<PathBuf>,
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value = "instance")]
        mode: Accounting,
        /// Write the table here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a clustered synthetic dataset.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON or TOML file with generator overrides.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let mut message = e.to_string();
        if let Error::Invalid(violations) = &e {
            for v in violations {
                let _ = write!(message, "\n  {v}");
            }
        }
        match e {
            Error::Config(_) => Self::usage(message),
            _ => Self::data(message),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Ingest { input, output } => cmd_ingest(&input, &output).map(|_| ()),
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed).map(|_| ()),
        Command::Naurc {
            curves,
            budget,
            mode,
            output,
        } => {
            let table = cmd_naurc(&curves, budget, mode);
            match output {
                Some(p) => write_file(&p, table.as_bytes()),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
        Command::Synth { output, seed, spec } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => parse_flat(&read_text(&p)?, &p)?,
                None => SyntheticSpec::default(),
            };
            spec.seed = seed;
            fs::create_dir_all(&output)
                .map_err(|e| CliError::data(Error::io(&output, e).to_string()))?;
            write_dataset(&generate_synthetic(&spec), &output.join(MANIFEST_NAME))?;
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::usage(Error::io(path, e).to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::data(Error::io(path, e).to_string()))
}

/// JSON when the file looks like an object, TOML otherwise.
fn parse_flat<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> CliResult<T> {
    let res = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    res.map_err(|e| CliError::usage(format!("cannot parse {}: {e}", path.display())))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawLine {
    Header {
        camera: CameraModel,
        views: Vec<ViewSpec>,
    },
    Instance(RawInstance),
    Aux(RawAux),
    Gt(GroundTruthObject),
}

#[derive(Debug, Deserialize)]
struct RawInstance {
    instance_id: InstanceId,
    image_id: ImageId,
    class_id: ClassId,
    box2d: Box2D,
    pred_depth: Option<f64>,
    confidence: Option<f64>,
    depth_confidence: Option<f64>,
    #[serde(default)]
    aux_depths: Vec<f64>,
    #[serde(default)]
    features: BTreeMap<String, Vec<f64>>,
}

/// A detection from an auxiliary ensemble member.
#[derive(Debug, Deserialize)]
struct RawAux {
    model: String,
    image_id: ImageId,
    box2d: Box2D,
    depth: f64,
    #[serde(default)]
    confidence: f64,
}

/// IoU required to pair an auxiliary detection with a main one.
pub const AUX_IOU_THRESHOLD: f64 = 0.5;

/// Reads a raw export into a validated dataset.
///
/// Auxiliary detections are paired with main detections per image and per
/// model; each pairing appends the auxiliary depth to the instance, in model
/// name order.
pub fn parse_raw(input: &Path) -> crate::Result<Dataset> {
    let file = fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let mut header = None;
    let mut instances = Vec::new();
    let mut aux: Vec<RawAux> = Vec::new();
    let mut gts = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RawLine = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match parsed {
            RawLine::Header { camera, views } => header = Some((camera, views)),
            RawLine::Instance(r) => instances.push(r),
            RawLine::Aux(a) => aux.push(a),
            RawLine::Gt(g) => gts.push(g),
        }
    }
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (camera, views) = header.ok_or(Error::Manifest {
        line: 1,
        msg: "missing header line".into(),
    })?;

    let mut seen = BTreeSet::new();
    let dups: BTreeSet<InstanceId> = instances
        .iter()
        .filter(|r| !seen.insert(r.instance_id))
        .map(|r| r.instance_id)
        .collect();
    if !dups.is_empty() {
        return Err(Error::DuplicateInstanceId(dups.into_iter().collect()));
    }

    let mut records: Vec<InstanceRecord> = instances
        .into_iter()
        .map(|r| InstanceRecord {
            image_id: r.image_id,
            instance_id: r.instance_id,
            class_id: r.class_id,
            box2d: r.box2d,
            pred_depth: r.pred_depth,
            confidence: r.confidence,
            depth_confidence: r.depth_confidence,
            aux_depths: r.aux_depths,
            features: r.features,
        })
        .collect();
    attach_aux_depths(&mut records, &aux);

    let data = Dataset::new(camera, views, records, gts);
    let violations = validate_dataset(&data);
    if violations.is_empty() {
        Ok(data)
    } else {
        Err(Error::Invalid(violations))
    }
}

fn attach_aux_depths(records: &mut [InstanceRecord], aux: &[RawAux]) {
    let models: BTreeSet<&str> = aux.iter().map(|a| a.model.as_str()).collect();
    let mut main_by_image: HashMap<&str, Vec<Detection>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        main_by_image
            .entry(r.image_id.as_str())
            .or_default()
            .push(Detection {
                id: i as u64,
                box2d: r.box2d,
                confidence: combined_confidence(r).unwrap_or(0.0),
            });
    }
    let mut extra: Vec<Vec<f64>> = vec![Vec::new(); records.len()];
    for model in models {
        let mut aux_by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
        for (j, a) in aux.iter().enumerate().filter(|(_, a)| a.model == model) {
            aux_by_image
                .entry(a.image_id.as_str())
                .or_default()
                .push(Detection {
                    id: j as u64,
                    box2d: a.box2d,
                    confidence: a.confidence,
                });
        }
        for (image, dets) in aux_by_image {
            let Some(main) = main_by_image.get(image) else {
                continue;
            };
            for (m, a) in associate_ensemble(main, &dets, AUX_IOU_THRESHOLD) {
                extra[m as usize].push(aux[a as usize].depth);
            }
        }
    }
    for (r, e) in records.iter_mut().zip(extra) {
        r.aux_depths.extend(e);
    }
}

/// Ingests `input` into `output/manifest.jsonl` plus blobs; returns the manifest path.
pub fn cmd_ingest(input: &Path, output: &Path) -> CliResult<PathBuf> {
    let data = parse_raw(input)?;
    fs::create_dir_all(output).map_err(|e| CliError::data(Error::io(output, e).to_string()))?;
    let manifest = output.join(MANIFEST_NAME);
    write_dataset(&data, &manifest)?;
    // reading back proves the files are self-consistent
    load_dataset(&manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- simulate

/// The run configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Manifest path, relative to the config file.
    pub dataset: Option<PathBuf>,
    /// Generator settings, used when no dataset is given.
    pub synthetic: Option<SyntheticSpec>,
    pub strategy: String,
    /// View names to fuse for diversity strategies, with dataset weights.
    #[serde(default)]
    pub views: Vec<String>,
    /// Weights overriding the dataset's, parallel to `views`.
    #[serde(default)]
    pub view_weights: Vec<f64>,
    #[serde(default)]
    pub metric: Metric,
    pub pca_var_keep: Option<f64>,
    /// Views the coverage score is measured in; default all weighted views.
    #[serde(default)]
    pub eval_views: Vec<String>,
    #[serde(default = "defaults::h")]
    pub h: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::initial_fraction")]
    pub initial_fraction: f64,
    /// Cumulative budgets as shares of all ground-truth objects.
    #[serde(default)]
    pub budget_fractions: Vec<f64>,
    /// Cumulative budgets as absolute counts; wins over `budget_fractions`.
    #[serde(default)]
    pub budgets: Vec<usize>,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub accounting: Accounting,
    #[serde(default = "defaults::min_px_height")]
    pub min_px_height: f64,
    #[serde(default = "defaults::aux_models")]
    pub aux_models: usize,
}

mod defaults {
    pub fn h() -> f64 {
        2.0
    }
    pub fn alpha() -> f64 {
        3.0
    }
    pub fn delta() -> f64 {
        0.2
    }
    pub fn initial_fraction() -> f64 {
        0.1
    }
    pub fn seeds() -> Vec<u64> {
        vec![0]
    }
    pub fn min_px_height() -> f64 {
        25.0
    }
    pub fn aux_models() -> usize {
        2
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = read_text(path)?;
        let cfg: Self = parse_flat(&text, path)?;
        let digest = Sha256::digest(text.as_bytes());
        let hex = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Ok((cfg, hex))
    }

    fn load_data(&self, base: &Path) -> CliResult<Dataset> {
        match (&self.dataset, &self.synthetic) {
            (Some(p), _) => {
                let p = base.join(p);
                if !p.exists() {
                    return Err(CliError::usage(format!(
                        "dataset {} does not exist",
                        p.display()
                    )));
                }
                Ok(load_dataset(&p)?)
            }
            (None, Some(spec)) => Ok(generate_synthetic(spec)),
            (None, None) => Err(CliError::usage(
                "config needs `dataset` or a [synthetic] table",
            )),
        }
    }

    fn pick_views(
        &self,
        names: &[String],
        weights: &[f64],
        data: &Dataset,
    ) -> CliResult<Vec<ViewSpec>> {
        if !weights.is_empty() && weights.len() != names.len() {
            return Err(CliError::usage("view_weights must match views in length"));
        }
        names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let v = data
                    .view(n)
                    .ok_or_else(|| CliError::usage(format!("unknown view `{n}`")))?;
                Ok(ViewSpec::new(
                    n.clone(),
                    v.dim,
                    weights.get(i).copied().unwrap_or(v.lambda),
                ))
            })
            .collect()
    }

    /// Campaign settings for one seed against `data`.
    pub fn campaign(&self, data: &Dataset, seed: u64) -> CliResult<CampaignConfig> {
        let kind: StrategyKind = self
            .strategy
            .parse()
            .map_err(|e: Error| CliError::usage(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(CliError::usage("seeds must not be empty"));
        }
        let mut strategy = StrategyConfig::new(kind);
        strategy.views = self.pick_views(&self.views, &self.view_weights, data)?;
        strategy.metric = self.metric;
        strategy.pca_var_keep = self.pca_var_keep;
        strategy.seed = seed;

        let budgets = if !self.budgets.is_empty() {
            self.budgets.clone()
        } else {
            let total = data.ground_truth.len() as f64;
            self.budget_fractions
                .iter()
                .map(|f| (f * total).round() as usize)
                .collect()
        };
        let mut cfg = CampaignConfig::new(strategy, budgets);
        cfg.h = self.h;
        cfg.alpha = self.alpha;
        cfg.delta = self.delta;
        cfg.initial_fraction = self.initial_fraction;
        cfg.accounting = self.accounting;
        cfg.min_px_height = self.min_px_height;
        cfg.aux_models = self.aux_models;
        cfg.seed = seed;
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn hook(&self, data: &Dataset) -> CliResult<CoverageHook> {
        let views = if self.eval_views.is_empty() {
            data.views
                .iter()
                .filter(|v| v.lambda > 0.0)
                .cloned()
                .collect()
        } else {
            self.pick_views(&self.eval_views, &[], data)?
        };
        if views.is_empty() {
            return Err(CliError::usage("no weighted view to evaluate coverage in"));
        }
        Ok(CoverageHook {
            views,
            metric: Metric::Cosine,
        })
    }
}

/// Pointwise mean of curves over the union of their knots, from the latest
/// starting point on; each curve is interpolated or held at every knot.
pub fn mean_curve(curves: &[Curve]) -> crate::Result<Curve> {
    let start = curves
        .iter()
        .map(|c| c.first().x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut xs: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.points().iter().map(|p| p.x))
        .filter(|&x| x >= start)
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let points = xs
        .into_iter()
        .map(|x| {
            let ys = curves
                .iter()
                .map(|c| interpolate_at_budget(c, x))
                .collect::<crate::Result<Vec<_>>>()?;
            Ok(CurvePoint::new(x, ys.iter().sum::<f64>() / ys.len() as f64))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Curve::new(points)
}

/// Files written by one `simulate` invocation.
#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub seed_curves: Vec<PathBuf>,
    pub mean_curve: PathBuf,
}

/// Runs a campaign per seed under `out/seed_<s>/` and writes `out/mean_curve.csv`.
pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<SimulateOutput> {
    let (run, hash) = RunConfig::load(config)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let seeds = match seed {
        Some(s) => vec![s],
        None => run.seeds.clone(),
    };
    // configuration problems surface before any data is touched
    run.strategy
        .parse::<StrategyKind>()
        .map_err(|e: Error| CliError::usage(e.to_string()))?;
    let data = run.load_data(base)?;
    let hook = run.hook(&data)?;

    let mkdir =
        |p: &Path| fs::create_dir_all(p).map_err(|e| CliError::data(Error::io(p, e).to_string()));
    mkdir(out)?;
    let mut curves = Vec::new();
    let mut seed_curves = Vec::new();
    for &s in &seeds {
        let cfg = run.campaign(&data, s)?;
        log::info!(
            "seed {s}: {} with budgets {:?}",
            cfg.strategy.kind,
            cfg.round_budgets
        );
        let outcome = run_campaign(&cfg, &data, &hook)?;
        let dir = out.join(format!("seed_{s}"));
        mkdir(&dir)?;

        let path = dir.join("curve.csv");
        let mut buf = Vec::new();
        write_curve_csv(
            &mut buf,
            &outcome.curve,
            &[format!("config_sha256={hash} seed={s}")],
        )
        .expect("writing to memory");
        write_file(&path, &buf)?;

        let mut log = String::new();
        for e in outcome.state.events() {
            log.push_str(&serde_json::to_string(e).map_err(Error::from)?);
            log.push('\n');
        }
        write_file(&dir.join("rounds.jsonl"), log.as_bytes())?;

        let state = serde_json::to_string_pretty(&outcome.state).map_err(Error::from)?;
        write_file(&dir.join("state.json"), state.as_bytes())?;

        seed_curves.push(path);
        curves.push(outcome.curve);
    }

    let mean = mean_curve(&curves)?;
    let seeds_list = seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mean_path = out.join("mean_curve.csv");
    let file = fs::File::create(&mean_path)
        .map_err(|e| CliError::data(Error::io(&mean_path, e).to_string()))?;
    let mut w = BufWriter::new(file);
    write_curve_csv(
        &mut w,
        &mean,
        &[format!("config_sha256={hash} seeds={seeds_list}")],
    )
    .and_then(|_| w.flush())
    .map_err(|e| CliError::data(Error::io(&mean_path, e).to_string()))?;
    Ok(SimulateOutput {
        seed_curves,
        mean_curve: mean_path,
    })
}

// ---------------------------------------------------------------- naurc

/// Header of the comparison table.
pub const NAURC_HEADER: &str = "method,mode,budget,naurc,error";

/// One table row per curve, best first; curves that fail come last, in input order.
pub fn cmd_naurc(curves: &[PathBuf], budget: f64, mode: Accounting) -> String {
    let mode_name = match mode {
        Accounting::Instance => "instance",
        Accounting::Image => "image",
    };
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for path in curves {
        let value = fs::File::open(path)
            .map_err(|e| Error::io(path, e))
            .and_then(read_curve_csv)
            .and_then(|c| naurc(&c, budget));
        let name = path.display().to_string();
        match value {
            Ok(v) => ok.push((name, v)),
            Err(e) => failed.push((name, e.to_string())),
        }
    }
    ok.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut w = csv::Writer::from_writer(Vec::new());
    let b = budget.to_string();
    let mut rows = vec![NAURC_HEADER
        .split(',')
        .map(String::from)
        .collect::<Vec<_>>()];
    rows.extend(
        ok.into_iter()
            .map(|(m, v)| vec![m, mode_name.into(), b.clone(), v.to_string(), String::new()]),
    );
    rows.extend(
        failed
            .into_iter()
            .map(|(m, e)| vec![m, mode_name.into(), b.clone(), String::new(), e]),
    );
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 input")
}
