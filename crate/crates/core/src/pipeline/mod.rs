//! End-to-end orchestration: fit, render, train, eval, predict, synth.
//!
//! Each command reads and writes files so the stages can be run and cached
//! independently. Errors carry the stage they came from.

pub mod archive;
pub mod sidecar;
pub mod synth;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cleaning::{apply_cleaning, apply_cleaning_indexed, fit_cleaning, CleaningPolicy};
use crate::cnn::{self, checkpoint, CnnConfig, CnnModel, Shape};
use crate::correlation::{correlation_matrix_with, CorrelationOptions};
use crate::dataset::{load_csv, read_schema, Dataset, LoadOptions};
use crate::encoding::{encode_record, fit_encoder};
use crate::error::Error;
use crate::evaluation::{
    confusion, confusion_to_text, recall_report, report_to_csv, report_to_text, EvalReport,
};
use crate::layout::{build_layout, export_png, order_attributes, render_record, ImageTensor};

pub use archive::TensorArchive;
pub use sidecar::PipelineSidecar;
pub use synth::{SyntheticData, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Dataset,
    Cleaning,
    Correlation,
    Encoding,
    Layout,
    Sidecar,
    Render,
    Cnn,
    Eval,
    Predict,
    Synth,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Dataset => "dataset",
            Stage::Cleaning => "cleaning",
            Stage::Correlation => "correlation",
            Stage::Encoding => "encoding",
            Stage::Layout => "layout",
            Stage::Sidecar => "sidecar",
            Stage::Render => "render",
            Stage::Cnn => "cnn",
            Stage::Eval => "eval",
            Stage::Predict => "predict",
            Stage::Synth => "synth",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// 3 for numeric divergence, 2 for every other data error.
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Policy file (TOML): a `[cleaning]` table and an optional `[correlation]` table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub cleaning: CleaningPolicy,
    pub correlation: CorrelationSampling,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationSampling {
    pub max_records: Option<usize>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> crate::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn read_policy(path: Option<&Path>) -> StageResult<PolicyConfig> {
    path.map_or(Ok(PolicyConfig::default()), |p| {
        read_toml(p).at(Stage::Config)
    })
}

pub fn read_cnn_config(path: &Path) -> StageResult<CnnConfig> {
    read_toml(path).at(Stage::Config)
}

pub fn read_synth_spec(path: &Path) -> StageResult<SyntheticSpec> {
    read_toml(path).at(Stage::Config)
}

/// clean-fit → correlation → encoder-fit → attribute order → layout.
pub fn fit_sidecar(
    train: &Dataset,
    policy: &PolicyConfig,
    seed: u64,
) -> StageResult<PipelineSidecar> {
    let cleaning = fit_cleaning(train, &policy.cleaning).at(Stage::Cleaning)?;
    let cleaned = apply_cleaning(train, &cleaning).at(Stage::Cleaning)?;
    let correlation_options = CorrelationOptions {
        max_records: policy.correlation.max_records,
        seed,
    };
    let correlation =
        correlation_matrix_with(&cleaned, &correlation_options).at(Stage::Correlation)?;
    let encoder = fit_encoder(&cleaned).at(Stage::Encoding)?;
    let order = order_attributes(&correlation);
    let layout = build_layout(&encoder, &order).at(Stage::Layout)?;
    let sidecar = PipelineSidecar {
        format_version: sidecar::FORMAT_VERSION,
        schema: train.schema().clone(),
        cleaning,
        correlation_options,
        correlation,
        encoder,
        layout,
    };
    sidecar.validate().at(Stage::Sidecar)?;
    Ok(sidecar)
}

/// Cleans, encodes and renders every surviving record, in input order.
///
/// Also returns the input row index of each image.
pub fn render_dataset(
    ds: &Dataset,
    sidecar: &PipelineSidecar,
) -> StageResult<(TensorArchive, Vec<usize>)> {
    let (cleaned, rows) = apply_cleaning_indexed(ds, &sidecar.cleaning).at(Stage::Cleaning)?;
    let images = cleaned
        .records()
        .par_iter()
        .map(|r| {
            let cv = encode_record(r, &sidecar.encoder).at(Stage::Encoding)?;
            let mut img = render_record(&cv, &sidecar.layout).at(Stage::Layout)?;
            img.label = r.label;
            Ok(img)
        })
        .collect::<StageResult<Vec<ImageTensor>>>()?;
    let archive = TensorArchive::new(
        sidecar.layout.height(),
        sidecar.layout.width(),
        sidecar.schema.class_labels().to_vec(),
        images,
    )
    .at(Stage::Render)?;
    Ok((archive, rows))
}

/// Default CNN for an archive: the standard stack, trimmed to fit the image size.
pub fn default_cnn_config(archive: &TensorArchive, seed: u64) -> CnnConfig {
    let input = Shape::new(archive.height, archive.width, 3);
    CnnConfig {
        num_classes: archive.class_labels.len(),
        seed,
        ..CnnConfig::default()
    }
    .trimmed_to(input)
}

pub fn train_on_archive(archive: &TensorArchive, cfg: &CnnConfig) -> StageResult<CnnModel> {
    if cfg.num_classes != archive.class_labels.len() {
        return Err(StageError {
            stage: Stage::Config,
            source: Error::Config(format!(
                "config has {} classes, archive has {}",
                cfg.num_classes,
                archive.class_labels.len()
            )),
        });
    }
    cnn::train(&archive.images, cfg).at(Stage::Cnn)
}

pub fn evaluate(
    archive: &TensorArchive,
    model: &CnnModel,
) -> StageResult<(crate::evaluation::ConfusionMatrix, EvalReport)> {
    let truth = archive
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| img.label.ok_or(Error::Unlabeled { record: i }))
        .collect::<crate::Result<Vec<usize>>>()
        .at(Stage::Eval)?;
    let predicted: Vec<usize> = cnn::predict_batch(&archive.images, model)
        .at(Stage::Cnn)?
        .into_iter()
        .map(|p| p.argmax_class)
        .collect();
    let cm = confusion(&truth, &predicted, &archive.class_labels).at(Stage::Eval)?;
    let report = recall_report(&cm);
    Ok((cm, report))
}

fn write_file(path: &Path, bytes: &[u8], stage: Stage) -> StageResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(parent, e))
            .at(stage)?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| Error::io(path, e))
        .at(stage)
}

fn load_dataset(
    csv: &Path,
    schema: &crate::dataset::AttributeSchema,
    header: bool,
) -> StageResult<Dataset> {
    load_csv(csv, schema, LoadOptions { has_header: header }).at(Stage::Dataset)
}

pub struct FitArgs<'a> {
    pub train_csv: &'a Path,
    pub schema: &'a Path,
    pub policy: Option<&'a Path>,
    pub seed: u64,
    pub header: bool,
    pub out: &'a Path,
}

pub fn cmd_fit(args: &FitArgs) -> StageResult<PipelineSidecar> {
    let schema = read_schema(args.schema).at(Stage::Dataset)?;
    let policy = read_policy(args.policy)?;
    let train = load_dataset(args.train_csv, &schema, args.header)?;
    let sidecar = fit_sidecar(&train, &policy, args.seed)?;
    write_file(args.out, sidecar.to_text().as_bytes(), Stage::Sidecar)?;
    let corr_path = args.out.with_extension("correlation.csv");
    let mut corr = Vec::new();
    sidecar
        .correlation
        .write_csv(&mut corr)
        .at(Stage::Correlation)?;
    write_file(&corr_path, &corr, Stage::Correlation)?;
    Ok(sidecar)
}

pub const ARCHIVE_FILE: &str = "tensors.vzt";
pub const PNG_DIR: &str = "png";

pub fn cmd_render(
    csv: &Path,
    sidecar: &Path,
    out_dir: &Path,
    png: bool,
    header: bool,
) -> StageResult<TensorArchive> {
    let sidecar = PipelineSidecar::load(sidecar).at(Stage::Sidecar)?;
    let ds = load_dataset(csv, &sidecar.schema, header)?;
    let (archive, rows) = render_dataset(&ds, &sidecar)?;
    write_file(
        &out_dir.join(ARCHIVE_FILE),
        &archive.to_bytes(),
        Stage::Render,
    )?;
    if png {
        let dir = out_dir.join(PNG_DIR);
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::io(&dir, e))
            .at(Stage::Render)?;
        archive
            .images
            .par_iter()
            .zip(&rows)
            .map(|(img, row)| {
                let label = img
                    .label
                    .map_or("unlabeled", |l| archive.class_labels[l].as_str());
                let safe: String = label
                    .chars()
                    .map(|c| {
                        if c.is_ascii_alphanumeric() || c == '-' {
                            c
                        } else {
                            '_'
                        }
                    })
                    .collect();
                export_png(img, &dir.join(format!("row{row:07}_{safe}.png"))).at(Stage::Render)
            })
            .collect::<StageResult<Vec<()>>>()?;
    }
    Ok(archive)
}

pub fn cmd_train(
    archive: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> StageResult<CnnModel> {
    let archive = TensorArchive::load(archive).at(Stage::Render)?;
    let cfg = match config {
        Some(p) => {
            let mut cfg = read_cnn_config(p)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg
        }
        None => default_cnn_config(&archive, seed.unwrap_or(0)),
    };
    let model = train_on_archive(&archive, &cfg)?;
    checkpoint::save(&model, out).at(Stage::Cnn)?;
    Ok(model)
}

pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";

pub fn cmd_eval(archive: &Path, checkpoint_path: &Path, out_dir: &Path) -> StageResult<EvalReport> {
    let archive = TensorArchive::load(archive).at(Stage::Render)?;
    let model = checkpoint::load(checkpoint_path).at(Stage::Cnn)?;
    let (cm, report) = evaluate(&archive, &model)?;
    write_file(
        &out_dir.join(REPORT_TEXT),
        report_to_text(&report).as_bytes(),
        Stage::Eval,
    )?;
    write_file(
        &out_dir.join(REPORT_CSV),
        report_to_csv(&report).as_bytes(),
        Stage::Eval,
    )?;
    write_file(
        &out_dir.join(CONFUSION_CSV),
        confusion_to_text(&cm).as_bytes(),
        Stage::Eval,
    )?;
    Ok(report)
}

/// Writes `row,predicted,p_<label>...` for every surviving input row; returns the row count.
pub fn cmd_predict(
    csv: &Path,
    sidecar: &Path,
    checkpoint_path: &Path,
    out: &Path,
    header: bool,
) -> StageResult<usize> {
    let sidecar = PipelineSidecar::load(sidecar).at(Stage::Sidecar)?;
    let model = checkpoint::load(checkpoint_path).at(Stage::Cnn)?;
    let ds = load_dataset(csv, &sidecar.schema, header)?;
    let (archive, rows) = render_dataset(&ds, &sidecar)?;
    let predictions = cnn::predict_batch(&archive.images, &model).at(Stage::Cnn)?;
    let labels = sidecar.schema.class_labels();
    if model.config().num_classes != labels.len() {
        return Err(StageError {
            stage: Stage::Predict,
            source: Error::Config("checkpoint and sidecar disagree on the class count".into()),
        });
    }
    let mut out_text = Vec::new();
    write!(out_text, "row,predicted").unwrap();
    for l in labels {
        write!(out_text, ",p_{l}").unwrap();
    }
    writeln!(out_text).unwrap();
    for (row, p) in rows.iter().zip(&predictions) {
        write!(out_text, "{row},{}", labels[p.argmax_class]).unwrap();
        for q in &p.class_probs {
            write!(out_text, ",{q:.6}").unwrap();
        }
        writeln!(out_text).unwrap();
    }
    write_file(out, &out_text, Stage::Predict)?;
    Ok(predictions.len())
}

pub fn cmd_synth(
    spec: Option<&Path>,
    seed: Option<u64>,
    out_dir: &Path,
) -> StageResult<SyntheticData> {
    let mut spec = match spec {
        Some(p) => read_synth_spec(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    synth::write_synthetic(&spec, out_dir).at(Stage::Synth)
}

/// Paths produced by [`run_all`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub sidecar: PathBuf,
    pub train_archive: PathBuf,
    pub test_archive: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
    pub report: EvalReport,
}

/// synth → fit → render (train and test) → train → eval, all under `work_dir`.
pub fn run_all(
    spec: &SyntheticSpec,
    cnn: Option<&CnnConfig>,
    work_dir: &Path,
) -> StageResult<RunArtifacts> {
    let data_dir = work_dir.join("data");
    synth::write_synthetic(spec, &data_dir).at(Stage::Synth)?;
    let sidecar = work_dir.join("pipeline.sidecar");
    cmd_fit(&FitArgs {
        train_csv: &data_dir.join(synth::TRAIN_FILE),
        schema: &data_dir.join(synth::SCHEMA_FILE),
        policy: None,
        seed: spec.seed,
        header: false,
        out: &sidecar,
    })?;
    let train_dir = work_dir.join("train");
    let test_dir = work_dir.join("test");
    let train_archive = cmd_render(
        &data_dir.join(synth::TRAIN_FILE),
        &sidecar,
        &train_dir,
        false,
        false,
    )?;
    cmd_render(
        &data_dir.join(synth::TEST_FILE),
        &sidecar,
        &test_dir,
        false,
        false,
    )?;
    let cfg = match cnn {
        Some(c) => c.clone(),
        None => default_cnn_config(&train_archive, spec.seed),
    };
    let model = train_on_archive(&train_archive, &cfg)?;
    let checkpoint_path = work_dir.join("model.ckpt");
    checkpoint::save(&model, &checkpoint_path).at(Stage::Cnn)?;
    let report_dir = work_dir.join("report");
    let report = cmd_eval(&test_dir.join(ARCHIVE_FILE), &checkpoint_path, &report_dir)?;
    Ok(RunArtifacts {
        sidecar,
        train_archive: train_dir.join(ARCHIVE_FILE),
        test_archive: test_dir.join(ARCHIVE_FILE),
        checkpoint: checkpoint_path,
        report_dir,
        report,
    })
}
