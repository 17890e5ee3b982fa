//! Pipeline driver: dataset generation, two-stage training, generation on
//! held-out objects, evaluation, and the ablation harness. Every command is
//! deterministic given its seed and config; all artifacts embed the resolved
//! configuration.

pub mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hoisynth_core::anchornet::{
    build_training_pairs, log_to_csv, recover_keyframe, sample_keyframes, train_anchornet,
    AnchorModel, AnchorTrainConfig, HoiKeyframe, TrainLogRow,
};
use hoisynth_core::config::{ConfigError, RunConfig};
use hoisynth_core::contactdm::{
    conditioning_from_keyframes, dm_log_to_csv, init_denoiser, prepare_training_set, sample,
    train_contactdm, DiffusionSchedule, DmBundle, DmLogRow, DmTrainConfig, GuidanceConfig,
};
use hoisynth_core::datagen::{
    build_corpus_scripts, default_object_set, generate_sequence, read_dataset, read_sequence_file,
    tokenize, vocabulary_for, write_dataset, write_sequence_file, Dataset, DatasetManifest,
    ObjectEntry, SequenceEntry, Split, DATASET_FORMAT, DATASET_VERSION,
};
use hoisynth_core::geom::{bps_basis, bps_encode, ObjectTemplate};
use hoisynth_core::metrics::{
    evaluate_corpus, report_csv, train_extractor, ExtractorConfig, MetricReport, METRIC_COLUMNS,
};
use hoisynth_core::nn::{derive_seed, Adam, AdamConfig};
use hoisynth_core::sequence::{HoiSequence, ObjectPose};
use hoisynth_core::skeleton::SkeletonSpec;

/// Command errors, mapped onto the documented exit codes:
/// 2 config, 3 data, 4 numeric failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

macro_rules! data_err {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        }
    };
}
data_err!(hoisynth_core::datagen::DatasetError);
data_err!(hoisynth_core::geom::TemplateError);
data_err!(hoisynth_core::geom::GeomError);
data_err!(hoisynth_core::nn::CheckpointError);
data_err!(hoisynth_core::metrics::MetricError);
data_err!(std::io::Error);

macro_rules! numeric_err {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Numeric(e.to_string())
            }
        }
    };
}
numeric_err!(hoisynth_core::anchornet::TrainError);
numeric_err!(hoisynth_core::anchornet::ModelError);
numeric_err!(hoisynth_core::contactdm::DmTrainError);
numeric_err!(hoisynth_core::contactdm::SampleError);
numeric_err!(hoisynth_core::contactdm::ScheduleError);
numeric_err!(hoisynth_core::contactdm::DenoiserError);

/// Summary printed by `datagen`.
#[derive(Debug)]
pub struct DatagenSummary {
    pub train: usize,
    pub test: usize,
    pub holdout: usize,
    pub seen_objects: Vec<String>,
    pub unseen_objects: Vec<String>,
}

/// Generates the synthetic corpus into `out`.
pub fn cmd_datagen(cfg: &RunConfig, out: &Path) -> Result<DatagenSummary, CliError> {
    cfg.validate()?;
    let corpus = cfg.corpus_config();
    let spec = hoisynth_core::datagen::skeleton22();
    let (templates, unseen_ids) =
        default_object_set(corpus.object_count, corpus.unseen_count, corpus.template_samples, corpus.seed)?;
    let seen: Vec<&ObjectTemplate> =
        templates.iter().filter(|t| !unseen_ids.contains(&t.object_id)).collect();
    let unseen: Vec<&ObjectTemplate> =
        templates.iter().filter(|t| unseen_ids.contains(&t.object_id)).collect();
    let seen_names: Vec<String> = seen.iter().map(|t| t.object_id.clone()).collect();
    let (train, test, holdout) = build_corpus_scripts(&corpus, &seen, &unseen);

    let all_ids: Vec<String> = templates.iter().map(|t| t.object_id.clone()).collect();
    let tmap: BTreeMap<String, &ObjectTemplate> =
        templates.iter().map(|t| (t.object_id.clone(), t)).collect();
    use rayon::prelude::*;
    let jobs: Vec<(usize, Split, &hoisynth_core::datagen::ScenarioScript)> = train
        .iter()
        .map(|s| (Split::Train, s))
        .chain(test.iter().map(|s| (Split::Test, s)))
        .chain(holdout.iter().map(|s| (Split::UnseenHoldout, s)))
        .enumerate()
        .map(|(i, (split, s))| (i, split, s))
        .collect();
    let results: Vec<Result<HoiSequence, String>> = jobs
        .par_iter()
        .map(|(i, _, script)| {
            generate_sequence(script, &spec, tmap[&script.object_id], derive_seed(corpus.seed, "sequence", *i as u64))
                .map_err(|e| format!("sequence {i}: {e}"))
        })
        .collect();
    let mut failures = Vec::new();
    let mut sequences = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => sequences.push(s),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Data(format!("infeasible scripts: {}", failures.join("; "))));
    }

    let entries: Vec<SequenceEntry> = jobs
        .iter()
        .zip(&sequences)
        .map(|((i, split, script), _)| SequenceEntry {
            file: format!("sequences/{i:06}.json"),
            split: *split,
            object_id: script.object_id.clone(),
            crc32: 0,
        })
        .collect();
    let mut manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed: corpus.seed,
        tool_version: hoisynth_core::VERSION.into(),
        skeleton: spec,
        vocabulary: vocabulary_for(&all_ids),
        objects: templates
            .iter()
            .map(|t| ObjectEntry {
                id: t.object_id.clone(),
                unseen: unseen_ids.contains(&t.object_id),
            })
            .collect(),
        sequences: entries,
        config_echo: cfg.echo(),
    };
    let owned: BTreeMap<String, ObjectTemplate> =
        templates.into_iter().map(|t| (t.object_id.clone(), t)).collect();
    write_dataset(out, &mut manifest, &owned, &sequences)?;
    Ok(DatagenSummary {
        train: train.len(),
        test: test.len(),
        holdout: holdout.len(),
        seen_objects: seen_names,
        unseen_objects: unseen_ids,
    })
}

fn load_dataset(path: &Path) -> Result<(Dataset, SkeletonSpec), CliError> {
    let dataset = read_dataset(path)?;
    let spec = dataset.manifest.skeleton.clone();
    spec.validate().map_err(|e| CliError::Data(e.to_string()))?;
    Ok((dataset, spec))
}

/// Trains Stage 1, checkpointing every `cfg.checkpoint_every` steps.
pub fn cmd_train_anchor(
    cfg: &RunConfig,
    data: &Path,
    out_ckpt: &Path,
    log_path: Option<&Path>,
    resume: bool,
) -> Result<Vec<TrainLogRow>, CliError> {
    cmd_train_anchor_until(cfg, data, out_ckpt, log_path, resume, None)
}

/// As [`cmd_train_anchor`], optionally stopping after `stop_after` steps
/// (an emulated interruption; the schedule still spans the full run).
pub fn cmd_train_anchor_until(
    cfg: &RunConfig,
    data: &Path,
    out_ckpt: &Path,
    log_path: Option<&Path>,
    resume: bool,
    stop_after: Option<u64>,
) -> Result<Vec<TrainLogRow>, CliError> {
    cfg.validate()?;
    let (dataset, spec) = load_dataset(data)?;
    let vocab = dataset.manifest.vocabulary.clone();
    let (mut model, mut adam) = if resume && out_ckpt.exists() {
        AnchorModel::load(out_ckpt)?
    } else {
        (
            AnchorModel::init(cfg.anchor_config(vocab.len()), vocab, derive_seed(cfg.seed, "anchor-init", 0)),
            Adam::new(AdamConfig { learning_rate: cfg.anchor_lr, ..Default::default() }),
        )
    };
    model.validate_shapes()?;
    let tcfg = cfg.anchor_train_config();
    let stop = stop_after.unwrap_or(tcfg.steps).min(tcfg.steps);
    let pairs = build_training_pairs(&dataset, &spec, &model, &tcfg, Split::Train);
    let mut log = Vec::new();
    while adam.step_count < stop {
        let until = (adam.step_count + cfg.checkpoint_every).min(stop);
        log.extend(train_anchornet(&mut model, &pairs, &tcfg, &mut adam, until)?);
        model.save(out_ckpt, cfg.seed, &adam)?;
    }
    if let Some(p) = log_path {
        std::fs::write(p, log_to_csv(&log))?;
    }
    Ok(log)
}

/// Trains Stage 2, checkpointing every `cfg.checkpoint_every` steps.
pub fn cmd_train_contactdm(
    cfg: &RunConfig,
    data: &Path,
    out_ckpt: &Path,
    log_path: Option<&Path>,
    resume: bool,
) -> Result<Vec<DmLogRow>, CliError> {
    cmd_train_contactdm_until(cfg, data, out_ckpt, log_path, resume, None)
}

/// As [`cmd_train_contactdm`], optionally stopping after `stop_after` steps.
pub fn cmd_train_contactdm_until(
    cfg: &RunConfig,
    data: &Path,
    out_ckpt: &Path,
    log_path: Option<&Path>,
    resume: bool,
    stop_after: Option<u64>,
) -> Result<Vec<DmLogRow>, CliError> {
    cfg.validate()?;
    let (dataset, spec) = load_dataset(data)?;
    let vocab = dataset.manifest.vocabulary.clone();
    let dm_cfg = cfg.denoiser_config(spec.joint_count, vocab.len());
    let tcfg = cfg.dm_train_config();
    let (prepared, normalizer) = prepare_training_set(&dataset, &spec, &dm_cfg, &tcfg, &vocab)?;
    let (mut bundle, mut adam) = if resume && out_ckpt.exists() {
        DmBundle::load(out_ckpt)?
    } else {
        (
            DmBundle {
                store: init_denoiser(&dm_cfg, derive_seed(cfg.seed, "dm-init", 0)),
                config: dm_cfg.clone(),
                vocab,
                normalizer,
            },
            Adam::new(AdamConfig { learning_rate: cfg.dm_lr, ..Default::default() }),
        )
    };
    hoisynth_core::contactdm::validate_denoiser_shapes(&bundle.store, &bundle.config)?;
    let schedule = DiffusionSchedule::cosine(bundle.config.t_max)?;
    let stop = stop_after.unwrap_or(tcfg.steps).min(tcfg.steps);
    let mut log = Vec::new();
    while adam.step_count < stop {
        let until = (adam.step_count + cfg.checkpoint_every).min(stop);
        log.extend(train_contactdm(
            &mut bundle.store,
            &bundle.config,
            &schedule,
            &prepared,
            &tcfg,
            &mut adam,
            until,
        )?);
        bundle.save(out_ckpt, cfg.seed, &adam)?;
    }
    if let Some(p) = log_path {
        std::fs::write(p, dm_log_to_csv(&log))?;
    }
    Ok(log)
}

/// Where the generation command takes its human motion track from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSpec {
    Train(usize),
    Test(usize),
    Holdout(usize),
}

impl SourceSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let (kind, idx) = s
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("bad source '{s}', expected split:index")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| CliError::Config(format!("bad source index in '{s}'")))?;
        match kind {
            "train" => Ok(SourceSpec::Train(idx)),
            "test" => Ok(SourceSpec::Test(idx)),
            "holdout" => Ok(SourceSpec::Holdout(idx)),
            _ => Err(CliError::Config(format!("unknown split in '{s}'"))),
        }
    }

    fn split(&self) -> Split {
        match self {
            SourceSpec::Train(_) => Split::Train,
            SourceSpec::Test(_) => Split::Test,
            SourceSpec::Holdout(_) => Split::UnseenHoldout,
        }
    }

    fn index(&self) -> usize {
        match self {
            SourceSpec::Train(i) | SourceSpec::Test(i) | SourceSpec::Holdout(i) => *i,
        }
    }
}

#[derive(Debug)]
pub struct GenerateOutcome {
    pub sequence: HoiSequence,
    pub keyframes: Vec<HoiKeyframe>,
    /// Dataset-wide index of the source sequence (its evaluation id).
    pub source_id: String,
}

/// Runs the full two-stage pipeline for one source human track.
#[allow(clippy::too_many_arguments)]
pub fn cmd_generate(
    cfg: &RunConfig,
    data: &Path,
    anchor_ckpt: &Path,
    dm_ckpt: &Path,
    source: SourceSpec,
    object_override: Option<&str>,
    prompt_override: Option<&str>,
    out_file: Option<&Path>,
    csv_file: Option<&Path>,
) -> Result<GenerateOutcome, CliError> {
    cfg.validate()?;
    let (dataset, spec) = load_dataset(data)?;
    let (anchor, _) = AnchorModel::load(anchor_ckpt)?;
    anchor.validate_shapes()?;
    let (dm, _) = DmBundle::load(dm_ckpt)?;
    hoisynth_core::contactdm::validate_denoiser_shapes(&dm.store, &dm.config)?;

    let split_idx = dataset.indices(source.split());
    let &seq_idx = split_idx.get(source.index()).ok_or_else(|| {
        CliError::Data(format!(
            "source index {} out of range ({} sequences in split)",
            source.index(),
            split_idx.len()
        ))
    })?;
    let mut source_seq = dataset.sequences[seq_idx].clone();
    let object_id = object_override.unwrap_or(&source_seq.object_id).to_string();
    let template = dataset.templates.get(&object_id).ok_or_else(|| {
        CliError::Data(format!("unknown object id '{object_id}'"))
    })?;
    if let Some(p) = prompt_override {
        source_seq.text_prompt = p.to_string();
    }

    let outcome = run_pipeline(cfg, &spec, &anchor, &dm, &source_seq, template, cfg.seed)?;
    let source_id = dataset.manifest.sequences[seq_idx]
        .file
        .trim_start_matches("sequences/")
        .trim_end_matches(".json")
        .to_string();
    if let Some(path) = out_file {
        write_sequence_file(path, &outcome.0)?;
    }
    if let Some(path) = csv_file {
        std::fs::write(path, sequence_csv(&outcome.0, &spec))?;
    }
    Ok(GenerateOutcome { sequence: outcome.0, keyframes: outcome.1, source_id })
}

/// Stage 1 then Stage 2 for one source sequence. Shared by `generate`,
/// `ablate`, and the acceptance suite.
pub fn run_pipeline(
    cfg: &RunConfig,
    spec: &SkeletonSpec,
    anchor: &AnchorModel,
    dm: &DmBundle,
    source_seq: &HoiSequence,
    template: &ObjectTemplate,
    seed: u64,
) -> Result<(HoiSequence, Vec<HoiKeyframe>), CliError> {
    let n = source_seq.frame_count();
    let k = cfg.keyframes.min(n);
    let frames = sample_keyframes(n, k).map_err(|e| CliError::Config(e.to_string()))?;
    let mut keyframes = Vec::with_capacity(k);
    for (i, &f) in frames.iter().enumerate() {
        keyframes.push(recover_keyframe(
            anchor,
            source_seq,
            f,
            spec,
            template,
            cfg.human_cloud_points,
            derive_seed(seed, "gen-cloud", i as u64),
        )?);
    }
    let basis = bps_basis(
        dm.config.bps_dim,
        hoisynth_core::geom::BPS_BASIS_RADIUS,
        hoisynth_core::geom::BPS_BASIS_SEED,
    );
    let bps = bps_encode(template, &ObjectPose::identity(), &basis)?;
    let tokens = tokenize(&source_seq.text_prompt, &dm.vocab);
    let cond = conditioning_from_keyframes(
        &keyframes,
        &dm.config,
        n,
        source_seq.fps,
        &bps,
        tokens,
        source_seq.text_prompt.clone(),
        template.object_id.clone(),
    )?;
    let schedule = DiffusionSchedule::cosine(dm.config.t_max)?;
    let hands = (spec.joint("left_hand"), spec.joint("right_hand"));
    let guidance = GuidanceConfig { enabled: cfg.guidance, weight: cfg.guidance_w0 };
    let (generated, _) = sample(
        &dm.store,
        &dm.config,
        &schedule,
        &dm.normalizer,
        &cond,
        template,
        hands,
        guidance,
        derive_seed(seed, "gen-sample", 0),
    )?;
    Ok((generated, keyframes))
}

/// Per-frame CSV for plotting: root, hands, object centroid, contact labels.
pub fn sequence_csv(seq: &HoiSequence, spec: &SkeletonSpec) -> String {
    let root = spec.joint("root");
    let lh = spec.joint("left_hand");
    let rh = spec.joint("right_hand");
    let mut s = String::from(
        "frame,root_x,root_y,root_z,lhand_x,lhand_y,lhand_z,rhand_x,rhand_y,rhand_z,obj_x,obj_y,obj_z,contact_l,contact_r\n",
    );
    for (f, (h, o)) in seq.human.iter().zip(&seq.object).enumerate() {
        let j = |i: usize| h.joints[i];
        s.push_str(&format!(
            "{f},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            j(root)[0],
            j(root)[1],
            j(root)[2],
            j(lh)[0],
            j(lh)[1],
            j(lh)[2],
            j(rh)[0],
            j(rh)[1],
            j(rh)[2],
            o.position[0],
            o.position[1],
            o.position[2],
            seq.contact[f][0] as u8,
            seq.contact[f][1] as u8
        ));
    }
    s
}

/// Evaluates aligned prediction/ground-truth sequence sets.
///
/// The prediction directory holds `<id>.json` files whose ids must exactly
/// match ground-truth sequence file stems; mismatches list the offenders.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    pred_dir: &Path,
    gt_dir: &Path,
    out_dir: &Path,
) -> Result<MetricReport, CliError> {
    cfg.validate()?;
    let (dataset, spec) = load_dataset(gt_dir)?;
    let gt_ids: BTreeMap<String, usize> = dataset
        .manifest
        .sequences
        .iter()
        .enumerate()
        .map(|(i, e)| {
            (
                e.file.trim_start_matches("sequences/").trim_end_matches(".json").to_string(),
                i,
            )
        })
        .collect();
    let mut pred_ids = Vec::new();
    for entry in std::fs::read_dir(pred_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            pred_ids.push(path.file_stem().unwrap().to_string_lossy().to_string());
        }
    }
    pred_ids.sort();
    if pred_ids.is_empty() {
        return Err(CliError::Data(format!("no prediction files in {}", pred_dir.display())));
    }
    let unknown: Vec<&String> = pred_ids.iter().filter(|id| !gt_ids.contains_key(*id)).collect();
    if !unknown.is_empty() {
        return Err(CliError::Data(format!(
            "prediction ids with no ground truth: {unknown:?}"
        )));
    }
    let preds: Vec<(String, HoiSequence)> = pred_ids
        .iter()
        .map(|id| {
            read_sequence_file(&pred_dir.join(format!("{id}.json")), spec.joint_count)
                .map(|s| (id.clone(), s))
        })
        .collect::<Result<_, _>>()?;

    // Extractor trained on the full ground-truth corpus.
    let gt_refs: Vec<&HoiSequence> = dataset.sequences.iter().collect();
    let extractor = train_extractor(
        &gt_refs,
        &dataset.manifest.vocabulary,
        ExtractorConfig::default(),
        cfg.extractor_seed,
    );
    let pairs: Vec<(String, &HoiSequence, &HoiSequence)> = preds
        .iter()
        .map(|(id, p)| (id.clone(), p, &dataset.sequences[gt_ids[id]]))
        .collect();
    let report = evaluate_corpus(
        &pairs,
        &dataset.templates,
        &spec,
        &extractor,
        cfg.pool_size.min(pairs.len().max(2)),
        derive_seed(cfg.seed, "retrieval", 0),
    )?;
    report.validate()?;

    std::fs::create_dir_all(out_dir)?;
    let mut json = serde_json::to_value(&report).expect("report serializes");
    json["config_echo"] = cfg.echo();
    std::fs::write(out_dir.join("report.json"), serde_json::to_vec_pretty(&json).unwrap())?;
    std::fs::write(out_dir.join("report.csv"), report_csv(&report))?;
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    for (name, extract) in report_plot_columns() {
        let values: Vec<f64> = report.per_sequence.iter().map(&extract).collect();
        let labels: Vec<String> = report.per_sequence.iter().map(|m| m.id.clone()).collect();
        std::fs::write(
            plots.join(format!("{name}.svg")),
            svg::bar_chart(name, &labels, &values),
        )?;
    }
    Ok(report)
}

type ColumnFn = Box<dyn Fn(&hoisynth_core::metrics::SequenceMetrics) -> f64>;

fn report_plot_columns() -> Vec<(&'static str, ColumnFn)> {
    vec![
        ("FS", Box::new(|m| m.fs)),
        ("Cprec", Box::new(|m| m.cprec)),
        ("Crec", Box::new(|m| m.crec)),
        ("CF1", Box::new(|m| m.cf1)),
        ("Cpct", Box::new(|m| m.cpct)),
        ("Phand", Box::new(|m| m.phand)),
        ("MPJPE", Box::new(|m| m.mpjpe)),
        ("Troot", Box::new(|m| m.troot)),
        ("Tobj", Box::new(|m| m.tobj)),
        ("Oobj", Box::new(|m| m.oobj)),
    ]
}

/// One ablation table cell set: the aggregate metrics of a variant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub table: String,
    pub variant: String,
    pub ok: bool,
    pub error: Option<String>,
    pub metrics: Option<serde_json::Value>,
}

/// Runs the keyframe-count sweep (K in {1, 3, 5, 8}) and the conditioning
/// sweep (KNN+fusion, uniform+cross-attention, KNN+cross-attention), sharing
/// seeds and the Stage-1 checkpoint across variants. Report-only: rows are
/// emitted, never asserted against each other.
pub fn cmd_ablate(
    cfg: &RunConfig,
    data: &Path,
    anchor_ckpt: &Path,
    out_dir: &Path,
    eval_limit: usize,
) -> Result<Vec<AblationRow>, CliError> {
    cfg.validate()?;
    let (dataset, spec) = load_dataset(data)?;
    if !anchor_ckpt.exists() {
        cmd_train_anchor(cfg, data, anchor_ckpt, None, false)?;
    }
    let (anchor, _) = AnchorModel::load(anchor_ckpt)?;
    std::fs::create_dir_all(out_dir)?;

    let mut variants: Vec<(String, String, RunConfig)> = Vec::new();
    for k in [1usize, 3, 5, 8] {
        let mut v = cfg.clone();
        v.keyframes = k;
        variants.push(("keyframes".into(), format!("K={k}"), v));
    }
    {
        let mut v = cfg.clone();
        v.conditioning_mode = hoisynth_core::contactdm::ConditioningMode::AdditiveFusion;
        variants.push(("conditioning".into(), "KNN+EmbeddingFusion".into(), v));
        let mut v = cfg.clone();
        v.sampling_mode = hoisynth_core::contact::SamplingMode::Uniform;
        variants.push(("conditioning".into(), "Uniform+CrossAttention".into(), v));
        let v = cfg.clone();
        variants.push(("conditioning".into(), "KNN+CrossAttention".into(), v));
    }

    // The extractor depends only on the ground-truth corpus and seed, so
    // one instance serves every variant.
    let gt_refs: Vec<&HoiSequence> = dataset.sequences.iter().collect();
    let extractor = train_extractor(
        &gt_refs,
        &dataset.manifest.vocabulary,
        ExtractorConfig::default(),
        cfg.extractor_seed,
    );
    let mut rows = Vec::new();
    for (table, name, vcfg) in variants {
        let result =
            run_ablation_variant(&vcfg, &dataset, &spec, &anchor, &extractor, out_dir, &name, eval_limit);
        match result {
            Ok(metrics) => rows.push(AblationRow {
                table,
                variant: name,
                ok: true,
                error: None,
                metrics: Some(metrics),
            }),
            Err(e) => rows.push(AblationRow {
                table,
                variant: name,
                ok: false,
                error: Some(e.to_string()),
                metrics: None,
            }),
        }
    }

    // Tables shaped rows x metric-symbol columns.
    for table in ["keyframes", "conditioning"] {
        let mut csv = String::from("variant,");
        csv.push_str(&METRIC_COLUMNS.join(","));
        csv.push('\n');
        for row in rows.iter().filter(|r| r.table == table) {
            csv.push_str(&row.variant);
            if let Some(m) = &row.metrics {
                for col in METRIC_COLUMNS {
                    csv.push(',');
                    if let Some(v) = m[col].as_f64() {
                        csv.push_str(&format!("{v:.6}"));
                    }
                }
            } else {
                for _ in METRIC_COLUMNS {
                    csv.push(',');
                }
            }
            csv.push('\n');
        }
        std::fs::write(out_dir.join(format!("ablation_{table}.csv")), csv)?;
    }
    let mut json = serde_json::json!({ "rows": rows.iter().map(|r| serde_json::to_value(r).unwrap()).collect::<Vec<_>>() });
    json["config_echo"] = cfg.echo();
    std::fs::write(out_dir.join("ablation.json"), serde_json::to_vec_pretty(&json).unwrap())?;
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn run_ablation_variant(
    vcfg: &RunConfig,
    dataset: &Dataset,
    spec: &SkeletonSpec,
    anchor: &AnchorModel,
    extractor: &hoisynth_core::metrics::TrainedExtractor,
    out_dir: &Path,
    name: &str,
    eval_limit: usize,
) -> Result<serde_json::Value, CliError> {
    let vocab = dataset.manifest.vocabulary.clone();
    let dm_cfg = vcfg.denoiser_config(spec.joint_count, vocab.len());
    let tcfg = vcfg.dm_train_config();
    let (prepared, normalizer) = prepare_training_set(dataset, spec, &dm_cfg, &tcfg, &vocab)?;
    let mut bundle = DmBundle {
        store: init_denoiser(&dm_cfg, derive_seed(vcfg.seed, "dm-init", 0)),
        config: dm_cfg,
        vocab,
        normalizer,
    };
    let schedule = DiffusionSchedule::cosine(bundle.config.t_max)?;
    let mut adam = Adam::new(AdamConfig { learning_rate: vcfg.dm_lr, ..Default::default() });
    train_contactdm(&mut bundle.store, &bundle.config, &schedule, &prepared, &tcfg, &mut adam, tcfg.steps)?;

    // Full pipeline on the test split, capped for budget.
    let test_idx = dataset.indices(Split::Test);
    let eval: Vec<usize> = test_idx.into_iter().take(eval_limit.max(2)).collect();
    let mut generated = Vec::new();
    for (j, &si) in eval.iter().enumerate() {
        let seq = &dataset.sequences[si];
        let template = dataset.template(&seq.object_id);
        let (gen, _) = run_pipeline(vcfg, spec, anchor, &bundle, seq, template, derive_seed(vcfg.seed, "ablate-gen", j as u64))?;
        generated.push((format!("{si:06}"), gen, si));
    }
    let pairs: Vec<(String, &HoiSequence, &HoiSequence)> = generated
        .iter()
        .map(|(id, g, si)| (id.clone(), g, &dataset.sequences[*si]))
        .collect();
    let report = evaluate_corpus(
        &pairs,
        &dataset.templates,
        spec,
        extractor,
        vcfg.pool_size.min(pairs.len().max(2)),
        derive_seed(vcfg.seed, "retrieval", 1),
    )?;
    let a = &report.aggregate;
    let metrics = serde_json::json!({
        "FS": a.fs, "Rprec": report.rprec, "FID": report.fid,
        "Cprec": a.cprec, "Crec": a.crec, "CF1": a.cf1, "Cpct": a.cpct,
        "Phand": a.phand, "MPJPE": a.mpjpe, "Troot": a.troot,
        "Tobj": a.tobj, "Oobj": a.oobj,
    });
    std::fs::write(
        out_dir.join(format!("variant_{}.json", name.replace(['=', '+'], "_"))),
        serde_json::to_vec_pretty(&metrics).unwrap(),
    )?;
    Ok(metrics)
}

/// Directory layout helper used by tests and the binary.
pub fn default_paths(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (root.join("dataset"), root.join("anchor.ckpt"), root.join("contactdm.ckpt"))
}
