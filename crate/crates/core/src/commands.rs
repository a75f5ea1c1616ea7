//! Command implementations behind the `lamsc` binary.
//!
//! Every command works inside `output_dir`:
//!
//! ```text
//! checkpoints/{asi,sc_lamsc,sc_baseline,asc_lamsc,asc_baseline}.ckpt
//! traces/<phase>_<variant>.csv
//! reports/crossed_<variant>.json
//! manifests/<command>[_<phase>_<variant>].json
//! eval/, transmit/<stem>/, segment/<stem>/
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::asi::{human_select, integrate, train_asi, AttentionLayout, AttentionParams, ExperienceBase, SegmentStack};
use crate::checkpoint::file_sha256;
use crate::config::{BackendKind, RunConfig};
use crate::dataset::VocDataset;
use crate::error::{Error, Result};
use crate::eval::{bit_account, emit_curves, snr_sweep, BitReport, CurveArtifacts, MetricsRow};
use crate::image::ImageSample;
use crate::pipeline::{load_asi, load_sc, save_asi, save_sc, Pipeline, Transmission};
use crate::skb::{segment, verify_recovery, AdapterBackend, Backend, IntegrityReport, OracleBackend, SegmentSet, DEFAULT_IOU_THRESHOLD};
use crate::training::{
    compute_features, crossed_train, read_loss_csv, train_asc, train_channel_phase, train_semantic_phase,
    write_loss_csv, LossRecord, Phase, ScLayout, ScModel, TraceLog, Variant,
};

/// Paths of every artifact a run directory may hold.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn asi_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("asi.ckpt")
    }

    /// Semantic and channel codec after channel/semantic/crossed training.
    pub fn sc_checkpoint(&self, variant: Variant) -> PathBuf {
        self.root.join("checkpoints").join(format!("sc_{variant}.ckpt"))
    }

    /// The SC checkpoint with a trained mask network.
    pub fn asc_checkpoint(&self, variant: Variant) -> PathBuf {
        self.root.join("checkpoints").join(format!("asc_{variant}.ckpt"))
    }

    pub fn trace(&self, phase: &str, variant: Option<Variant>) -> PathBuf {
        let name = match variant {
            Some(v) => format!("{phase}_{v}.csv"),
            None => format!("{phase}.csv"),
        };
        self.root.join("traces").join(name)
    }

    pub fn manifest(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.json"))
    }

    /// Structured training report, such as the per-round crossed losses.
    pub fn report(&self, phase: &str, variant: Variant) -> PathBuf {
        self.root.join("reports").join(format!("{phase}_{variant}.json"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// Replay record written next to every command's artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub train_seed: u64,
    pub phases: Vec<String>,
    pub durations_s: BTreeMap<String, f64>,
    /// Checkpoints read by the command, path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifacts written by the command, path → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub notes: BTreeMap<String, String>,
    pub config: RunConfig,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            config_digest: cfg.digest(),
            seed: cfg.seed,
            train_seed: cfg.train.seed,
            phases: Vec::new(),
            durations_s: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
            config: cfg.clone(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_owned()))
    }
}

/// Builds the configured segmentation backend.
pub fn build_backend(cfg: &RunConfig) -> Result<Backend> {
    Ok(match cfg.backend.kind {
        BackendKind::Trivial => Backend::Trivial,
        BackendKind::Oracle => {
            let ds = VocDataset::open(&cfg.dataset_dir, Some(cfg.image_size))?;
            Backend::Oracle(OracleBackend::new(ds, cfg.backend.oracle_tolerance))
        }
        BackendKind::Adapter => {
            let cmd = cfg.backend.command.clone().ok_or_else(|| Error::Config("adapter backend needs backend.command".into()))?;
            Backend::Adapter(AdapterBackend::new(cmd, cfg.backend.args.clone()))
        }
    })
}

/// Sorted dataset stems split into (train, test).
pub fn split_stems(cfg: &RunConfig) -> Result<(Vec<String>, Vec<String>)> {
    let ds = VocDataset::open(&cfg.dataset_dir, Some(cfg.image_size))?;
    let mut stems = ds.stems()?;
    stems.sort();
    if stems.is_empty() {
        return Err(Error::EmptyDataset(format!("no images under {}", cfg.dataset_dir.display())));
    }
    let n_train = cfg.train_images.min(stems.len());
    let rest = stems.split_off(n_train);
    let test = rest.into_iter().take(cfg.test_images).collect();
    Ok((stems, test))
}

fn load_images(cfg: &RunConfig, stems: &[String]) -> Result<Vec<ImageSample>> {
    let ds = VocDataset::open(&cfg.dataset_dir, Some(cfg.image_size))?;
    stems.iter().map(|s| ds.load_image(s)).collect()
}

pub fn sc_layout(cfg: &RunConfig, variant: Variant) -> ScLayout {
    ScLayout {
        codec: cfg.codec.clone(),
        input_shape: (cfg.image_size.0, cfg.image_size.1, 3),
        channel_hidden: cfg.channel_hidden,
        mine_hidden: cfg.mine_hidden,
        variant,
    }
}

/// How LAM-SC training sources were produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticSource {
    /// Trained attention networks.
    Attention,
    /// Segments whose label is in the interest list, merged directly.
    InterestOracle,
}

impl std::fmt::Display for SemanticSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SemanticSource::Attention => "attention",
            SemanticSource::InterestOracle => "interest-oracle",
        })
    }
}

/// Semantic-aware images for LAM-SC training. With an attention checkpoint
/// they come from `integrate`; otherwise segments of interest are merged
/// directly, and images without any are skipped.
pub fn semantic_sources(
    cfg: &RunConfig,
    images: &[ImageSample],
    backend: &Backend,
    asi: Option<&AttentionParams>,
) -> Result<Vec<ImageSample>> {
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let set = segment(img, backend, cfg.k_max)?;
        let stack = SegmentStack::from_segments(&set, cfg.k_max)?;
        let merged = match asi {
            Some(p) => integrate(&stack, p)?,
            None => {
                let mut sel = vec![false; cfg.k_max];
                for (k, m) in set.masks.iter().take(cfg.k_max).enumerate() {
                    sel[k] = m.label.as_ref().is_some_and(|l| cfg.interest.contains(l));
                }
                if !sel.iter().any(|&b| b) {
                    continue;
                }
                human_select(&stack, &sel)?
            }
        };
        out.push(ImageSample { source_id: img.source_id.clone(), ..merged });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("no training image contains a segment of interest".into()));
    }
    Ok(out)
}

/// Loads an input image, rejecting undersized sources before they are resized.
fn load_input(path: &Path, size: (usize, usize)) -> Result<ImageSample> {
    let native = ImageSample::load(path, None).map_err(|e| e.at("load"))?;
    if native.pixels.dim().0 == size.0 && native.pixels.dim().1 == size.1 {
        return Ok(native);
    }
    ImageSample::load(path, Some(size)).map_err(|e| e.at("load"))
}

/// Writes a synthetic annotated dataset.
pub fn cmd_synth(root: &Path, count: usize, size: (usize, usize), seed: u64) -> Result<Vec<String>> {
    if count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    crate::dataset::synth::write_dataset(root, count, size.0, size.1, seed)
}

#[derive(Clone, Debug)]
pub struct SegmentOutput {
    pub masks: Vec<PathBuf>,
    pub preview: PathBuf,
}

/// Segments one image and writes its masks and a semantic-aware preview.
/// `selection` lists segment indices to keep; without it the attention
/// checkpoint is used, or every segment when none exists.
pub fn cmd_segment(cfg: &RunConfig, image_path: &Path, selection: Option<&[usize]>) -> Result<SegmentOutput> {
    let image = load_input(image_path, cfg.image_size)?;
    let backend = build_backend(cfg)?;
    let set = segment(&image, &backend, cfg.k_max).map_err(|e| e.at("segment"))?;
    let paths = RunPaths::new(&cfg.output_dir);
    let dir = paths.root.join("segment").join(&image.source_id);
    let masks = set.write_masks(&dir)?;
    let stack = SegmentStack::from_segments(&set, cfg.k_max)?;
    let mut manifest = Manifest::new("segment", cfg);
    let preview_img = match selection {
        Some(idx) => {
            let mut sel = vec![false; cfg.k_max];
            for &i in idx {
                if i >= set.len() {
                    return Err(Error::Config(format!("selection index {i} out of range (0..{})", set.len())));
                }
                sel[i] = true;
            }
            manifest.notes.insert("preview".into(), "human selection".into());
            human_select(&stack, &sel)?
        }
        None if paths.asi_checkpoint().is_file() => {
            manifest.input(&paths.asi_checkpoint())?;
            manifest.notes.insert("preview".into(), "attention".into());
            integrate(&stack, &load_asi(&paths.asi_checkpoint())?)?
        }
        None => {
            manifest.notes.insert("preview".into(), "all segments".into());
            human_select(&stack, &vec![true; cfg.k_max])?
        }
    };
    let preview = dir.join("semantic.png");
    preview_img.save_png(&preview)?;
    for m in &masks {
        manifest.output(m)?;
    }
    manifest.output(&preview)?;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(SegmentOutput { masks, preview })
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub manifest: Manifest,
}

/// Runs one training phase. Dependent phases read their prerequisite
/// checkpoint and fail naming it when absent.
pub fn cmd_train(cfg: &RunConfig, phase: Phase, variant: Variant) -> Result<TrainOutput> {
    let paths = RunPaths::new(&cfg.output_dir);
    let mut manifest = Manifest::new("train", cfg);
    // Prerequisites are checked before any data is touched.
    if phase == Phase::Asc {
        require(&paths.sc_checkpoint(variant))?;
    }
    let backend = build_backend(cfg)?;
    let (train_stems, _) = split_stems(cfg)?;
    let images = load_images(cfg, &train_stems)?;
    let digest = cfg.digest();
    let started = Instant::now();

    if phase == Phase::Asi {
        let sets: Vec<SegmentSet> = images.iter().map(|i| segment(i, &backend, cfg.k_max)).collect::<Result<_>>()?;
        let base = ExperienceBase::from_interest(&sets, &cfg.interest, cfg.k_max)?;
        let init = AttentionLayout::new(cfg.k_max, 3).init(cfg.asi.seed);
        let (trained, losses) = train_asi(&base, &init, &cfg.asi)?;
        let records: Vec<LossRecord> = losses
            .iter()
            .enumerate()
            .map(|(step, &loss)| LossRecord {
                step,
                phase: "asi".into(),
                loss,
                mask_ratio: f64::NAN,
                snr_db: f64::NAN,
                seed: cfg.asi.seed,
            })
            .collect();
        let ckpt = paths.asi_checkpoint();
        save_asi(&ckpt, &trained, &digest)?;
        let trace = paths.trace("asi", None);
        std::fs::create_dir_all(trace.parent().expect("trace dir"))?;
        write_loss_csv(&trace, &records)?;
        manifest.phases.push("asi".into());
        manifest.notes.insert("experience_records".into(), base.len().to_string());
        manifest.durations_s.insert("asi".into(), started.elapsed().as_secs_f64());
        manifest.output(&ckpt)?;
        manifest.output(&trace)?;
        manifest.write(&paths.manifest("train_asi"))?;
        return Ok(TrainOutput { checkpoint: ckpt, trace, manifest });
    }

    let sources: Vec<Array3<f64>> = match variant {
        Variant::Baseline => images.iter().map(|i| i.pixels.clone()).collect(),
        Variant::Lamsc => {
            let asi_path = paths.asi_checkpoint();
            let asi = if asi_path.is_file() {
                manifest.input(&asi_path)?;
                Some(load_asi(&asi_path)?)
            } else {
                None
            };
            let source = if asi.is_some() { SemanticSource::Attention } else { SemanticSource::InterestOracle };
            manifest.notes.insert("semantic_source".into(), source.to_string());
            semantic_sources(cfg, &images, &backend, asi.as_ref())?.into_iter().map(|i| i.pixels).collect()
        }
    };
    manifest.notes.insert("training_images".into(), sources.len().to_string());

    let kind = cfg.channel.kind;
    let tcfg = crate::training::TrainConfig { phase, ..cfg.train.clone() };
    let mut log = TraceLog::default();
    let (model, mut params, ckpt) = match phase {
        Phase::Asc => {
            let src = paths.sc_checkpoint(variant);
            manifest.input(&src)?;
            let (m, p) = load_sc(&src)?;
            (m, p, paths.asc_checkpoint(variant))
        }
        Phase::Channel | Phase::Semantic if paths.sc_checkpoint(variant).is_file() => {
            let src = paths.sc_checkpoint(variant);
            manifest.input(&src)?;
            let (m, p) = load_sc(&src)?;
            (m, p, src)
        }
        _ => {
            let m = ScModel::new(sc_layout(cfg, variant))?;
            let p = m.init(cfg.seed);
            (m, p, paths.sc_checkpoint(variant))
        }
    };
    if model.layout.input_shape != (cfg.image_size.0, cfg.image_size.1, 3) {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {:?} images, config has {:?}",
            model.layout.input_shape, cfg.image_size
        )));
    }

    match phase {
        Phase::Channel => {
            let feats = compute_features(&model, &params, &sources);
            train_channel_phase(&model, &feats, &tcfg, kind, &mut params, &mut log)?;
            manifest.phases.push("channel".into());
        }
        Phase::Semantic => {
            train_semantic_phase(&model, &sources, &tcfg, kind, &mut params, &mut log)?;
            manifest.phases.push("semantic".into());
        }
        Phase::Crossed => {
            let report = crossed_train(&model, &sources, &tcfg, kind, &mut params, &mut log)?;
            manifest.phases = report.modules();
            manifest.notes.insert("round_losses".into(), format!("{:?}", report.round_losses));
            manifest.notes.insert("stopped_early".into(), report.stopped_early.to_string());
            let path = paths.report("crossed", variant);
            write_json(&path, &report)?;
            manifest.output(&path)?;
        }
        Phase::Asc => {
            let report = train_asc(&model, &sources, &tcfg, kind, &mut params, &mut log)?;
            manifest.phases.push("asc".into());
            manifest.notes.insert("final_mask_ratio".into(), report.final_mask_ratio.to_string());
            let retained = (report.final_mask_ratio * model.codec.feature_len() as f64).round();
            manifest.notes.insert("mean_retained_elements".into(), retained.to_string());
        }
        Phase::Asi => unreachable!("handled above"),
    }
    manifest.durations_s.insert(phase.to_string(), started.elapsed().as_secs_f64());

    save_sc(&ckpt, &model, &params, &digest)?;
    let trace = paths.trace(&phase.to_string(), Some(variant));
    std::fs::create_dir_all(trace.parent().expect("trace dir"))?;
    write_loss_csv(&trace, &log.records)?;
    manifest.output(&ckpt)?;
    manifest.output(&trace)?;
    manifest.write(&paths.manifest(&format!("train_{phase}_{variant}")))?;
    Ok(TrainOutput { checkpoint: ckpt, trace, manifest })
}

/// Checkpoint locations for inference; defaults follow [`RunPaths`].
#[derive(Clone, Debug, Default)]
pub struct CheckpointPaths {
    pub asi: Option<PathBuf>,
    pub lamsc: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
}

impl CheckpointPaths {
    fn resolve(&self, paths: &RunPaths) -> (PathBuf, PathBuf, PathBuf) {
        (
            self.asi.clone().unwrap_or_else(|| paths.asi_checkpoint()),
            self.lamsc.clone().unwrap_or_else(|| paths.asc_checkpoint(Variant::Lamsc)),
            self.baseline.clone().unwrap_or_else(|| paths.sc_checkpoint(Variant::Baseline)),
        )
    }
}

fn load_pipeline(cfg: &RunConfig, ck: &CheckpointPaths, with_baseline: bool, manifest: &mut Manifest) -> Result<Pipeline> {
    let (asi, lamsc, baseline) = ck.resolve(&RunPaths::new(&cfg.output_dir));
    require(&asi)?;
    require(&lamsc)?;
    if with_baseline {
        require(&baseline)?;
    }
    manifest.input(&asi)?;
    manifest.input(&lamsc)?;
    let asi_params = load_asi(&asi)?;
    if asi_params.layout.k_max != cfg.k_max {
        return Err(Error::ShapeMismatch(format!(
            "attention checkpoint has k_max {}, config {}",
            asi_params.layout.k_max, cfg.k_max
        )));
    }
    let expect = (cfg.image_size.0, cfg.image_size.1, 3);
    let check = |m: &ScModel, p: &Path| -> Result<()> {
        if m.layout.input_shape != expect {
            return Err(Error::ShapeMismatch(format!(
                "{} expects {:?} images, config has {:?}",
                p.display(),
                m.layout.input_shape,
                expect
            )));
        }
        Ok(())
    };
    let lamsc_model = load_sc(&lamsc)?;
    check(&lamsc_model.0, &lamsc)?;
    let baseline_model = if with_baseline {
        manifest.input(&baseline)?;
        let b = load_sc(&baseline)?;
        check(&b.0, &baseline)?;
        Some(b)
    } else {
        None
    };
    Ok(Pipeline { backend: build_backend(cfg)?, k_max: cfg.k_max, asi: asi_params, lamsc: lamsc_model, baseline: baseline_model })
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub artifacts: CurveArtifacts,
    pub rows: Vec<MetricsRow>,
    pub bit_report: PathBuf,
}

/// SNR sweep over the test split for both variants, with CSV, plots and a
/// bit report under `output_dir/eval`.
pub fn cmd_eval(cfg: &RunConfig, ck: &CheckpointPaths, snr_list: &[f64]) -> Result<EvalOutput> {
    if snr_list.is_empty() {
        return Err(Error::Config("snr list is empty".into()));
    }
    let paths = RunPaths::new(&cfg.output_dir);
    let mut manifest = Manifest::new("eval", cfg);
    let pipeline = load_pipeline(cfg, ck, true, &mut manifest)?;
    let (_, test) = split_stems(cfg)?;
    if test.is_empty() {
        return Err(Error::EmptyDataset("no test images after the training split".into()));
    }
    let images = load_images(cfg, &test)?;
    let started = Instant::now();
    let digest = cfg.digest();
    let table =
        snr_sweep(&pipeline, &images, snr_list, &cfg.eval.seeds, cfg.channel.kind, cfg.bits_per_element, &digest)?;

    // Loss curve: every trace that exists, in phase order.
    let mut trace = Vec::new();
    for name in ["crossed_lamsc", "channel_lamsc", "semantic_lamsc", "asc_lamsc"] {
        let p = paths.root.join("traces").join(format!("{name}.csv"));
        if p.is_file() {
            let offset = trace.len();
            trace.extend(read_loss_csv(&p)?.into_iter().map(|mut r| {
                r.step += offset;
                r
            }));
        }
    }
    let out_dir = paths.eval_dir();
    let artifacts = emit_curves(&table, &trace, &out_dir, &digest, cfg.seed)?;

    // Bit report for the first test image at the configured channel.
    let staged = pipeline.stage(&images[0])?;
    let tx = pipeline.transmit_lamsc(&staged.semantic, &cfg.channel, false)?;
    let report = bit_account(&images[0], &tx.features, &tx.mask, cfg.bits_per_element)?;
    let bit_path = out_dir.join("bits.json");
    write_json(&bit_path, &report)?;

    manifest.phases.push("eval".into());
    manifest.durations_s.insert("eval".into(), started.elapsed().as_secs_f64());
    for p in [&artifacts.metrics_csv, &artifacts.per_image_csv, &artifacts.loss_plot, &artifacts.psnr_plot, &artifacts.ssim_plot, &bit_path] {
        manifest.output(p)?;
    }
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(EvalOutput { artifacts, rows: table.rows, bit_report: bit_path })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransmitSummary {
    pub source_id: String,
    pub snr_db: f64,
    pub psnr_vs_semantic_db: f64,
    pub ssim_vs_semantic: f64,
    pub integrity: IntegrityReport,
    /// Fraction of reference segments whose label is in the interest list
    /// that pass the IoU threshold.
    pub interest_preserved_fraction: f64,
    pub interest_segments: usize,
}

#[derive(Clone, Debug)]
pub struct TransmitOutput {
    pub recovered: PathBuf,
    pub integrity: PathBuf,
    pub bits: PathBuf,
    pub summary: TransmitSummary,
    pub bit_report: BitReport,
    pub transmission: Transmission,
}

/// Sends one image through segment → integrate → encode → mask → channel
/// → decode, then re-segments the result to check semantic integrity.
pub fn cmd_transmit(
    cfg: &RunConfig,
    ck: &CheckpointPaths,
    image_path: &Path,
    all_ones: bool,
) -> Result<TransmitOutput> {
    let image = load_input(image_path, cfg.image_size)?;
    let mut manifest = Manifest::new("transmit", cfg);
    let pipeline = load_pipeline(cfg, ck, false, &mut manifest)?;
    let started = Instant::now();
    let staged = pipeline.stage(&image)?;
    let tx = pipeline.transmit_lamsc(&staged.semantic, &cfg.channel, all_ones)?;
    let integrity = verify_recovery(&tx.recovered, &staged.segments, &pipeline.backend, DEFAULT_IOU_THRESHOLD)
        .map_err(|e| e.at("verify"))?;
    let bit_report = bit_account(&image, &tx.features, &tx.mask, cfg.bits_per_element)?;

    let interest: Vec<bool> = integrity
        .labels
        .iter()
        .zip(&integrity.preserved)
        .filter(|(l, _)| l.as_ref().is_some_and(|l| cfg.interest.contains(l)))
        .map(|(_, &p)| p)
        .collect();
    let interest_preserved_fraction = if interest.is_empty() {
        0.0
    } else {
        interest.iter().filter(|&&p| p).count() as f64 / interest.len() as f64
    };
    let summary = TransmitSummary {
        source_id: image.source_id.clone(),
        snr_db: cfg.channel.snr_db,
        psnr_vs_semantic_db: crate::eval::psnr(&staged.semantic, &tx.recovered)?,
        ssim_vs_semantic: crate::eval::ssim(&staged.semantic, &tx.recovered)?,
        integrity,
        interest_preserved_fraction,
        interest_segments: interest.len(),
    };

    let dir = RunPaths::new(&cfg.output_dir).root.join("transmit").join(&image.source_id);
    std::fs::create_dir_all(&dir)?;
    let recovered = dir.join("recovered.png");
    tx.recovered.save_png(&recovered)?;
    staged.semantic.save_png(&dir.join("semantic.png"))?;
    let integrity_path = dir.join("integrity.json");
    write_json(&integrity_path, &summary)?;
    let bits = dir.join("bits.json");
    write_json(&bits, &bit_report)?;

    manifest.phases.push("transmit".into());
    manifest.notes.insert("all_ones_mask".into(), all_ones.to_string());
    manifest.durations_s.insert("transmit".into(), started.elapsed().as_secs_f64());
    for p in [&recovered, &integrity_path, &bits] {
        manifest.output(p)?;
    }
    manifest.write(&dir.join("manifest.json"))?;
    Ok(TransmitOutput { recovered, integrity: integrity_path, bits, summary, bit_report, transmission: tx })
}

/// Plain-text summary of an evaluation directory, also written to
/// `report.md` inside it.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let dir = RunPaths::new(&cfg.output_dir).eval_dir();
    let metrics = dir.join("metrics.csv");
    require(&metrics)?;
    let rows = crate::eval::read_metrics_csv(&metrics)?;
    let mut out = String::new();
    out.push_str("# Evaluation report\n\n");
    out.push_str(&format!("config digest: {}\n\n", rows.first().map(|r| r.config_digest.as_str()).unwrap_or("")));
    out.push_str("| variant | snr_db | seed | psnr_db | ssim | psnr_vs_original_db | mask_ratio | retained |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &rows {
        out.push_str(&format!(
            "| {} | {} | {} | {:.3} | {:.4} | {:.3} | {:.4} | {} |\n",
            r.variant, r.snr_db, r.seed, r.psnr_db, r.ssim, r.psnr_vs_original_db, r.mask_ratio, r.elements_retained
        ));
    }
    let bits = dir.join("bits.json");
    if bits.is_file() {
        let b: BitReport = serde_json::from_str(&std::fs::read_to_string(&bits)?)?;
        out.push_str(&format!(
            "\nelements: original {} / features {} / retained {}\nbits at {} per element: {} ({} with mask side info)\n",
            b.original_elements,
            b.feature_elements,
            b.retained_elements,
            b.bits_per_element,
            b.retained_bits,
            b.retained_bits_with_side_info
        ));
    }
    std::fs::write(dir.join("report.md"), &out)?;
    Ok(out)
}
