//! `mrseg` command-line tool.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 on I/O
//! failure. Logs go to standard error; data only goes to the named files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrseg::classifier::{predict, ClassifierModel, FixedLabels, ResampledLabels, StageClassifier};
use mrseg::features::{eigen_features_with, FeatureMatrix, FeatureParams};
use mrseg::io::{self, load_cloud, read_config, save_cloud, PipelineConfig};
use mrseg::metrics::{
    cross_validate, evaluate, initial_report, render_table, ConfusionMatrix, CvMode,
};
use mrseg::pipeline::{run_pipeline, train_pipeline, train_single_stage, StageTwo};
use mrseg::projection::{closest_point_project, compose_final, gather_class, voxel_project};
use mrseg::subsample::{voxel_subsample, SubsampleMap, SubsampleResult};
use mrseg::synthetic::{generate_scene, SceneParams};
use mrseg::{ClassId, Error, PointCloud, Result};

#[derive(Parser)]
#[command(
    name = "mrseg",
    version,
    about = "Multi-resolution semantic segmentation of dense point clouds"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Training seed; overrides `classifier.seed` from the config (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxel-subsample a cloud, writing the low cloud and its grid sidecar.
    Subsample {
        /// Input cloud (.ply, or plain text).
        #[arg(long = "in")]
        input: PathBuf,
        /// Voxel edge length in meters.
        #[arg(long)]
        voxel: f64,
        /// Output low-resolution cloud.
        #[arg(long)]
        out: PathBuf,
        /// Output JSON sidecar with grid parameters and representative indices.
        #[arg(long)]
        map: PathBuf,
    },
    /// Compute eigen-features of every point as a text table.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        /// Neighborhood size in points (>= 3).
        #[arg(long, default_value_t = 14)]
        k: usize,
        /// Height in meters that elevation is measured from (default: the cloud's lowest z).
        #[arg(long, allow_hyphen_values = true)]
        elevation_ref: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the stage-one model and one stage-two model per concatenated class.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Labeled training clouds.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output stage-one model (JSON).
        #[arg(long)]
        stage1_model: PathBuf,
        /// Output directory for stage-two models, one `<class>.json` each.
        #[arg(long)]
        stage2_models: PathBuf,
        /// Also train a single-stage model over all classes on the subsampled clouds.
        #[arg(long)]
        single_stage_model: Option<PathBuf>,
    },
    /// Apply a model to a feature table.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Feature table written by `features`.
        #[arg(long)]
        features: PathBuf,
        /// Output label file.
        #[arg(long)]
        out: PathBuf,
        /// Optional table of class probabilities.
        #[arg(long)]
        probabilities: Option<PathBuf>,
    },
    /// Run both stages on one cloud.
    Pipeline(PipelineArgs),
    /// Transfer labels between clouds.
    #[command(subcommand)]
    Project(ProjectCommand),
    /// Score predicted labels against ground truth.
    Evaluate {
        /// Truth labels: a label file, or a labeled cloud (.ply).
        #[arg(long)]
        truth: PathBuf,
        /// Predicted label file.
        #[arg(long)]
        pred: PathBuf,
        /// Config whose class list names the labels.
        #[arg(long)]
        schema: PathBuf,
        /// Labels are merged-class ids (stage-one output) rather than original ids.
        #[arg(long)]
        merged: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Row name in the table.
        #[arg(long, default_value = "run")]
        name: String,
    },
    /// Leave-one-fold-out evaluation over clouds assigned to folds in the config.
    Crossval {
        #[arg(long)]
        config: PathBuf,
        /// Labeled clouds; fold ids are looked up by file name.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output directory for per-cloud labels and the reports.
        #[arg(long)]
        out_dir: PathBuf,
        /// Use ground truth in both stages instead of trained models.
        #[arg(long)]
        oracle: bool,
        /// Also score the single-stage low-resolution comparison.
        #[arg(long)]
        single_stage: bool,
    },
    /// Write a labeled synthetic car-park scene and a matching config.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Output config JSON for the scene's classes.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Surface density in points per square meter.
        #[arg(long, default_value_t = 2200.0)]
        density: f64,
        /// Voxel edge length in meters that the scene layout follows.
        #[arg(long, default_value_t = 0.08)]
        voxel: f64,
    },
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Stage-one model (JSON).
    #[arg(long, required_unless_present = "stage1_labels")]
    stage1_model: Option<PathBuf>,
    /// External stage-one labels, aligned with the subsampled cloud.
    #[arg(long, conflicts_with = "stage1_model")]
    stage1_labels: Option<PathBuf>,
    /// Directory of stage-two models.
    #[arg(long)]
    stage2_models: Option<PathBuf>,
    /// External stage-two labels as `<class>=<label file>`, aligned with the gathered points.
    #[arg(long, value_parser = parse_pair)]
    stage2_labels: Vec<(String, PathBuf)>,
    /// External stage-two result on a resampled cloud, as `<class>=<labeled cloud>`.
    #[arg(long, value_parser = parse_pair)]
    stage2_cloud: Vec<(String, PathBuf)>,
    /// Output label file (original class ids).
    #[arg(long)]
    out: PathBuf,
    /// Output run statistics (JSON).
    #[arg(long)]
    stats: PathBuf,
    /// Also write stage-one labels projected to full resolution (merged ids).
    #[arg(long)]
    initial: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ProjectCommand {
    /// Give each full-resolution point the label of its voxel's representative.
    Voxel {
        /// Labels of the low cloud.
        #[arg(long)]
        labels: PathBuf,
        /// Low cloud written by `subsample`.
        #[arg(long)]
        low: PathBuf,
        /// Sidecar written by `subsample`.
        #[arg(long)]
        map: PathBuf,
        /// The full cloud that was subsampled.
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Give each target point the label of its nearest labeled point.
    Closest {
        /// Labeled source cloud.
        #[arg(long)]
        partial: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the full-resolution points that stage one assigned to a concatenated class.
    Extract {
        #[arg(long)]
        config: PathBuf,
        /// Stage-one labels projected to full resolution (merged ids).
        #[arg(long)]
        initial: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Concatenated class, by the name of its base class.
        #[arg(long)]
        class: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine stage-one labels with stage-two labels into original class ids.
    Compose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        initial: PathBuf,
        /// Stage-two labels as `<class>=<label file>`, one per concatenated class.
        #[arg(long, value_parser = parse_pair)]
        stage2: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected <class>=<path>, got {s:?}"))?;
    Ok((k.to_string(), PathBuf::from(v)))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load(path: &Path) -> Result<PointCloud> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file", path.display()),
        )));
    }
    load_cloud(path)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut config = read_config(&read_text(path)?)?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    log::info!("seed = {}", config.train.seed);
    Ok(config)
}

fn load_model(path: &Path) -> Result<ClassifierModel> {
    ClassifierModel::from_json(&read_text(path)?)
}

fn concatenated_by_name(config: &PipelineConfig, name: &str) -> Result<ClassId> {
    config
        .merged
        .concatenated()
        .into_iter()
        .find(|&c| {
            let m = config.merged.class(c);
            config.schema.name(m.base) == Some(name) || m.name == name
        })
        .ok_or_else(|| Error::InvalidArgument(format!("{name} is not a concatenated class")))
}

fn stage2_model_path(dir: &Path, config: &PipelineConfig, c: ClassId) -> PathBuf {
    let base = config.merged.class(c).base;
    dir.join(format!(
        "{}.json",
        config.schema.name(base).unwrap_or_default()
    ))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn features_for(cloud: &PointCloud, k: usize, elevation_ref: Option<f64>) -> Result<FeatureMatrix> {
    eigen_features_with(cloud, FeatureParams { k, elevation_ref })
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Subsample {
            input,
            voxel,
            out,
            map,
        } => {
            let cloud = load(&input)?;
            let sub = voxel_subsample(&cloud, voxel)?;
            log::info!("{} points -> {} voxels", cloud.len(), sub.low_cloud.len());
            save_cloud(&out, &sub.low_cloud)?;
            write(&map, serde_json::to_string(&sub.map())?)?;
        }
        Command::Features {
            input,
            k,
            elevation_ref,
            out,
        } => {
            let cloud = load(&input)?;
            let f = features_for(&cloud, k, elevation_ref)?;
            write(&out, io::write_table(f.names(), f.cols(), f.data()))?;
        }
        Command::Train {
            config,
            inputs,
            stage1_model,
            stage2_models,
            single_stage_model,
        } => {
            let config = load_config(&config, seed)?;
            let clouds = inputs.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            let trained = train_pipeline(&clouds, &config)?;
            write(&stage1_model, trained.stage1.to_json())?;
            fs::create_dir_all(&stage2_models)?;
            for (&c, model) in &trained.stage2 {
                write(
                    &stage2_model_path(&stage2_models, &config, c),
                    model.to_json(),
                )?;
            }
            if let Some(path) = single_stage_model {
                write(&path, train_single_stage(&clouds, &config)?.to_json())?;
            }
        }
        Command::Predict {
            model,
            features,
            out,
            probabilities,
        } => {
            let model = load_model(&model)?;
            let (names, data) = io::read_table(&read_text(&features)?)?;
            let pred = predict(&model, &FeatureMatrix::new(names, data)?)?;
            write(&out, io::write_labels(&pred.labels))?;
            if let (Some(path), Some(p)) = (probabilities, &pred.probabilities) {
                let names: Vec<String> = model
                    .class_ids
                    .iter()
                    .map(|c| format!("p{}", c.0))
                    .collect();
                write(&path, io::write_table(&names, names.len(), p))?;
            }
        }
        Command::Pipeline(args) => run_pipeline_cmd(args, seed)?,
        Command::Project(p) => project(p)?,
        Command::Evaluate {
            truth,
            pred,
            schema,
            merged,
            json,
            name,
        } => {
            let config = read_config(&read_text(&schema)?)?;
            let truth = if truth
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
            {
                load(&truth)?.labels().ok_or(Error::MissingLabels)?.to_vec()
            } else {
                io::read_labels(&read_text(&truth)?)?
            };
            let pred = io::read_labels(&read_text(&pred)?)?;
            let report = if merged {
                let t = mrseg::cloud::map_labels(&truth, config.merged.forward())?;
                initial_report(
                    &ConfusionMatrix::from_labels(&t, &pred, config.merged.names())?,
                    &config,
                )
            } else {
                evaluate(&truth, &pred, &config.schema.names())?
            };
            print!("{}", render_table(&[(name.as_str(), &report)]));
            if let Some(path) = json {
                write(&path, report.to_json())?;
            }
        }
        Command::Crossval {
            config,
            inputs,
            out_dir,
            oracle,
            single_stage,
        } => {
            let config = load_config(&config, seed)?;
            let clouds = inputs
                .iter()
                .map(|p| Ok((file_name(p), load(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let mode = if oracle {
                CvMode::Oracle
            } else {
                CvMode::Trained
            };
            let result = cross_validate(&clouds, &config, mode, single_stage)?;
            fs::create_dir_all(&out_dir)?;
            for (name, labels) in &result.predictions {
                write(
                    &out_dir.join(format!("{name}.labels.txt")),
                    io::write_labels(labels),
                )?;
            }
            let mut rows: Vec<(String, &_)> = result
                .folds
                .iter()
                .map(|f| (format!("fold {}", f.fold), &f.report))
                .collect();
            rows.push(("pooled".into(), &result.pooled));
            rows.push(("pooled (init)".into(), &result.pooled_initial));
            if let Some(r) = &result.pooled_single_stage {
                rows.push(("single-stage".into(), r));
            }
            let rows: Vec<(&str, _)> = rows.iter().map(|(n, r)| (n.as_str(), *r)).collect();
            let mut text = format!("seed {}\n", result.seed);
            text.push_str(&render_table(&rows));
            text.push_str(&format!(
                "mean of folds: OA {:.2} mIoU {:.2}\n",
                result.mean_fold_oa, result.mean_fold_miou
            ));
            write(&out_dir.join("report.txt"), &text)?;
            write(&out_dir.join("report.json"), result.to_json())?;
            eprint!("{text}");
        }
        Command::Generate {
            out,
            config,
            density,
            voxel,
        } => {
            let params = SceneParams {
                voxel_size: voxel,
                density,
                seed: seed.unwrap_or(42),
                ..SceneParams::default()
            };
            let cloud = generate_scene(&params);
            log::info!("generated {} points (seed {})", cloud.len(), params.seed);
            save_cloud(&out, &cloud)?;
            if let Some(path) = config {
                write(
                    &path,
                    io::write_config(&mrseg::synthetic::scene_config(voxel)),
                )?;
            }
        }
    }
    Ok(())
}

fn run_pipeline_cmd(args: PipelineArgs, seed: Option<u64>) -> Result<()> {
    let config = load_config(&args.config, seed)?;
    let cloud = load(&args.input)?;
    let stage1: Box<dyn StageClassifier> = match (&args.stage1_model, &args.stage1_labels) {
        (Some(path), _) => Box::new(load_model(path)?),
        (None, Some(path)) => Box::new(FixedLabels(io::read_labels(&read_text(path)?)?)),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let mut owned: BTreeMap<ClassId, Box<dyn StageClassifier>> = BTreeMap::new();
    for (name, path) in &args.stage2_labels {
        let c = concatenated_by_name(&config, name)?;
        owned.insert(
            c,
            Box::new(FixedLabels(io::read_labels(&read_text(path)?)?)),
        );
    }
    for (name, path) in &args.stage2_cloud {
        let c = concatenated_by_name(&config, name)?;
        owned.insert(c, Box::new(ResampledLabels(load(path)?)));
    }
    for c in config.merged.concatenated() {
        if owned.contains_key(&c) {
            continue;
        }
        let dir = args.stage2_models.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no stage-two model or labels for {}; pass --stage2-models",
                config.merged.class(c).name
            ))
        })?;
        owned.insert(
            c,
            Box::new(load_model(&stage2_model_path(dir, &config, c))?),
        );
    }
    let stage2: StageTwo = owned.iter().map(|(&c, m)| (c, m.as_ref())).collect();
    let out = run_pipeline(&cloud, &config, stage1.as_ref(), &stage2)?;
    log::info!(
        "{} points, {} at full resolution in stage two",
        out.stats.full_points,
        out.stats.stage_two_points
    );
    write(&args.out, io::write_labels(&out.labels))?;
    write(&args.stats, out.stats.to_json())?;
    if let Some(path) = &args.initial {
        write(path, io::write_labels(&out.initial))?;
    }
    Ok(())
}

fn project(cmd: ProjectCommand) -> Result<()> {
    match cmd {
        ProjectCommand::Voxel {
            labels,
            low,
            map,
            full,
            out,
        } => {
            let map: SubsampleMap = serde_json::from_str(&read_text(&map)?)?;
            let sub = SubsampleResult::from_parts(load(&low)?, map)?;
            let labels = io::read_labels(&read_text(&labels)?)?;
            let projected = voxel_project(&labels, &sub, &load(&full)?)?;
            write(&out, io::write_labels(&projected))?;
        }
        ProjectCommand::Closest {
            partial,
            targets,
            out,
        } => {
            let labels = closest_point_project(&load(&partial)?, &load(&targets)?)?;
            write(&out, io::write_labels(&labels))?;
        }
        ProjectCommand::Extract {
            config,
            initial,
            input,
            class,
            out,
        } => {
            let config = read_config(&read_text(&config)?)?;
            let c = concatenated_by_name(&config, &class)?;
            let initial = io::read_labels(&read_text(&initial)?)?;
            let cloud = load(&input)?;
            if initial.len() != cloud.len() {
                return Err(Error::LengthMismatch {
                    what: "initial labels",
                    expected: cloud.len(),
                    found: initial.len(),
                });
            }
            save_cloud(&out, &cloud.select(&gather_class(&initial, c)))?;
        }
        ProjectCommand::Compose {
            config,
            initial,
            stage2,
            out,
        } => {
            let config = read_config(&read_text(&config)?)?;
            let initial = io::read_labels(&read_text(&initial)?)?;
            let mut parts = BTreeMap::new();
            for (name, path) in &stage2 {
                parts.insert(
                    concatenated_by_name(&config, name)?,
                    io::read_labels(&read_text(path)?)?,
                );
            }
            let composed = compose_final(&initial, &parts, &config.merged)?;
            write(&out, io::write_labels(&composed.labels))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::error!("{e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
