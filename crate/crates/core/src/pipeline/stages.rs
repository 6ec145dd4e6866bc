use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{RunConfig, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::evalreport::{
    evaluate_condition, judge, probe_dataset, sensitivity_sweep, split_half_overlap, MaciSummary, PlotRow,
    ProbeSummary, Report, SweepInputs, Verdict, VerdictCounts,
};
use crate::intervene::{
    auroc, f1_at, maci_batch, read_probe, select_threshold, write_probe, AblationCondition, ProbeModel,
};
use crate::model::ModelWeights;
use crate::patching::{asymmetry_stats, head_importance, select_groups, HeadGroups, ImportanceMap};
use crate::synth::{
    generate, guard_no_test, split, ConflictSample, DatasetFile, DatasetHeader, DatasetSplits, Vocab,
    DATASET_FORMAT_VERSION,
};
use crate::train::{reference_model_config, train, CurvePoint, TrainOutcome};

const CURVE_HEADER: &str = "step,loss,clean_acc,hall_rate";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Gen,
    Split,
    Train,
    Patch,
    Select,
    Ablate,
    ProbeTrain,
    Threshold,
    Maci,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Self::Gen,
        Self::Split,
        Self::Train,
        Self::Patch,
        Self::Select,
        Self::Ablate,
        Self::ProbeTrain,
        Self::Threshold,
        Self::Maci,
        Self::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::Split => "split",
            Self::Train => "train",
            Self::Patch => "patch",
            Self::Select => "select",
            Self::Ablate => "ablate",
            Self::ProbeTrain => "probe-train",
            Self::Threshold => "threshold",
            Self::Maci => "maci",
            Self::Report => "report",
        }
    }

    /// Process exit code for a failure in this stage, by stage class:
    /// 10 data, 11 training, 12 head analysis, 13 probe and MACI, 14 report.
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Gen | Self::Split => 10,
            Self::Train => 11,
            Self::Patch | Self::Select | Self::Ablate => 12,
            Self::ProbeTrain | Self::Threshold | Self::Maci => 13,
            Self::Report => 14,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(Error),
    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: Stage, cause: Error },
}

impl PipelineError {
    pub fn stage(stage: Stage) -> impl FnOnce(Error) -> Self {
        move |cause| Self::Stage { stage, cause }
    }

    /// 2 for configuration errors, 3 for protocol violations, otherwise the
    /// failing stage's class code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(Error::Protocol(_)) | Self::Stage { cause: Error::Protocol(_), .. } => 3,
            Self::Config(_) => 2,
            Self::Stage { stage, .. } => stage.exit_code(),
        }
    }
}

fn missing(what: &str, path: &Path) -> impl FnOnce(Error) -> Error {
    let msg = format!("cannot read {what} `{}`", path.display());
    move |e| match e {
        Error::Io(io) => Error::Input(format!("{msg}: {io}")),
        e => e,
    }
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    DatasetFile::read(path).map_err(missing("dataset", path))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelWeights> {
    Ok(ModelWeights::load(path).map_err(missing("checkpoint", path))?.0)
}

fn write_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn held_out(splits: &DatasetSplits) -> HashSet<u64> {
    splits.test_ids()
}

fn plot(series: &str, x: f64, y: f64, seed: Option<u64>) -> PlotRow {
    PlotRow { series: series.to_string(), x, y, seed }
}

/// Generates the unassigned sample pool.
pub fn gen_dataset(cfg: &RunConfig) -> Result<DatasetFile> {
    let vocab = Vocab::default();
    let samples = generate(&vocab, cfg.data.seed, cfg.data.n, cfg.data.mix)?;
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        vocab,
        seed: cfg.data.seed,
        mix: cfg.data.mix,
        config_hash: cfg.hash(),
    };
    Ok(DatasetFile::unassigned(header, samples))
}

/// Assigns split tags, honouring an explicit prototype id list.
pub fn split_dataset(cfg: &RunConfig, file: &DatasetFile) -> Result<DatasetFile> {
    let mut splits = split(&file.samples(), cfg.split.sizes(), cfg.split.seed)?;
    if let Some(ids) = &cfg.split.proto_ids {
        splits = with_proto(splits, ids)?;
    }
    let mut header = file.header.clone();
    header.config_hash = cfg.hash();
    Ok(DatasetFile::from_splits(header, &splits))
}

/// Replaces the prototype set by the samples with `ids`. Ids from the
/// validation or test split are a protocol violation.
pub fn with_proto(splits: DatasetSplits, ids: &[u64]) -> Result<DatasetSplits> {
    let wanted: HashSet<u64> = ids.iter().copied().collect();
    if wanted.len() != ids.len() || ids.len() < 2 {
        return Err(Error::Config("proto_ids must hold at least two distinct ids".into()));
    }
    for (name, part) in [("test", &splits.test), ("validation", &splits.validation)] {
        if let Some(s) = part.iter().find(|s| wanted.contains(&s.id)) {
            return Err(Error::Protocol(format!("prototype id {} belongs to the {name} split", s.id)));
        }
    }
    let DatasetSplits { train, proto, train_probe, validation, test } = splits;
    let mut pool: Vec<ConflictSample> = train.into_iter().chain(proto).collect();
    let (mut chosen, mut rest): (Vec<_>, Vec<_>) = pool.drain(..).partition(|s| wanted.contains(&s.id));
    let (picked, train_probe): (Vec<_>, Vec<_>) = train_probe.into_iter().partition(|s| wanted.contains(&s.id));
    chosen.extend(picked);
    if chosen.len() != ids.len() {
        let have: HashSet<u64> = chosen.iter().map(|s| s.id).collect();
        let absent = ids.iter().find(|i| !have.contains(i)).expect("some id is absent");
        return Err(Error::Config(format!("prototype id {absent} is not in the dataset")));
    }
    chosen.sort_by_key(|s| s.id);
    rest.sort_by_key(|s| s.id);
    Ok(DatasetSplits { train: rest, proto: chosen, train_probe, validation, test })
}

/// Checks the configuration and the split plan without training anything.
pub fn preflight(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.split.proto_ids.is_some() {
        split_dataset(cfg, &gen_dataset(cfg)?)?;
    }
    Ok(())
}

pub fn curve_csv(curve: &[CurvePoint], config_hash: &str) -> String {
    let mut out = format!("# train-curve format_version=1 config_hash={config_hash}\n{CURVE_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for p in curve {
        let _ = writeln!(out, "{},{:?},{},{}", p.step, p.loss, opt(p.clean_acc), opt(p.hall_rate));
    }
    out
}

/// Trains the reference-size model on the training portion; the curve is
/// evaluated on the validation split.
pub fn train_model(cfg: &RunConfig, file: &DatasetFile) -> Result<TrainOutcome> {
    let splits = file.splits()?;
    let vocab = file.header.vocab;
    let portion = splits.training_portion();
    guard_no_test("train", &portion, &held_out(&splits))?;
    let weights = ModelWeights::init(reference_model_config(&vocab), cfg.model.seed)?;
    let eval = (!splits.validation.is_empty()).then_some(splits.validation.as_slice());
    train(weights, &vocab, &portion, &cfg.train, eval)
}

fn train_result(cfg: &RunConfig, outcome: &TrainOutcome, dataset_sha: String) -> Report {
    let mut r = Report::new(&cfg.hash());
    r.seeds = cfg.seeds().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    r.hashes.insert("dataset_sha256".into(), dataset_sha);
    r.hashes.insert("checkpoint".into(), outcome.weights.fingerprint());
    for p in &outcome.curve {
        r.plots.push(plot("train_loss", p.step as f64, p.loss, Some(cfg.train.seed)));
        if let (Some(a), Some(h)) = (p.clean_acc, p.hall_rate) {
            r.plots.push(plot("train_val_clean_acc", p.step as f64, a, Some(cfg.train.seed)));
            r.plots.push(plot("train_val_hall_rate", p.step as f64, h, Some(cfg.train.seed)));
        }
    }
    r
}

/// Importance over the prototype split plus split-half stability.
pub fn patch_heads(cfg: &RunConfig, weights: &ModelWeights, file: &DatasetFile) -> Result<(ImportanceMap, Report)> {
    let splits = file.splits()?;
    guard_no_test("patch", &splits.proto, &held_out(&splits))?;
    let vocab = file.header.vocab;
    let a = &cfg.analysis;
    let imp = head_importance(weights, &vocab, &splits.proto, a.scope)?;
    let mut r = Report::new(&cfg.hash());
    for (i, (_, score)) in imp.iter().enumerate() {
        r.plots.push(plot("importance", i as f64, score, None));
    }
    for &seed in &a.overlap_seeds {
        r.overlaps.push(split_half_overlap(weights, &vocab, &splits.proto, a.overlap_k, seed, a.scope)?);
    }
    Ok((imp, r))
}

pub fn select_heads(cfg: &RunConfig, imp: &ImportanceMap) -> (HeadGroups, Report) {
    let groups = select_groups(imp, cfg.analysis.k_plus, cfg.analysis.k_minus);
    let mut r = Report::new(&cfg.hash());
    r.asymmetry = asymmetry_stats(imp, cfg.analysis.asymmetry_top_n).ok();
    (groups, r)
}

/// The five ablation conditions on the test split.
pub fn ablation_suite(
    cfg: &RunConfig,
    weights: &ModelWeights,
    file: &DatasetFile,
    groups: &HeadGroups,
) -> Result<Report> {
    groups.check()?;
    let splits = file.splits()?;
    let vocab = file.header.vocab;
    let mut conditions = vec![
        AblationCondition::base(),
        AblationCondition::drive(groups),
        AblationCondition::resist(groups),
        AblationCondition::joint(groups),
    ];
    for &seed in &cfg.analysis.random_seeds {
        conditions.push(AblationCondition::random_for(weights.config(), groups, seed)?);
    }
    let mut r = Report::new(&cfg.hash());
    r.eval_split = "test".into();
    for c in &conditions {
        r.conditions.push(evaluate_condition(weights, &vocab, &splits.test, c)?);
    }
    let random: Vec<f64> = r.conditions.iter().filter(|c| c.seed.is_some()).map(|c| c.hall_rate).collect();
    r.random_mean_hall_rate = Some(random.iter().sum::<f64>() / random.len() as f64);
    for (i, &seed) in cfg.analysis.random_seeds.iter().enumerate() {
        r.seeds.insert(format!("random_ablation_{i}"), seed);
    }
    Ok(r)
}

fn probe_splits(file: &DatasetFile) -> Result<DatasetSplits> {
    let splits = file.splits()?;
    let test = held_out(&splits);
    guard_no_test("probe-train", &splits.train_probe, &test)?;
    guard_no_test("threshold", &splits.validation, &test)?;
    Ok(splits)
}

/// Fits the probe at every lambda of the grid on the probe-training split
/// and keeps the one with the best validation AUROC (ties: larger lambda).
pub fn fit_probe(
    cfg: &RunConfig,
    weights: &ModelWeights,
    file: &DatasetFile,
    groups: &HeadGroups,
    imp: &ImportanceMap,
) -> Result<(ProbeModel, Report)> {
    if groups.resisting.is_empty() {
        return Err(Error::Undefined("no resisting heads were selected; the probe has no features".into()));
    }
    let splits = probe_splits(file)?;
    let vocab = file.header.vocab;
    let (x, y) = probe_dataset(weights, &vocab, &splits.train_probe, &groups.resisting)?;
    let (vx, vy) = probe_dataset(weights, &vocab, &splits.validation, &groups.resisting)?;
    let mut r = Report::new(&cfg.hash());
    let mut best: Option<(f64, ProbeModel)> = None;
    for &lambda in &cfg.analysis.lambda_grid {
        let probe = ProbeModel::train(&x, &y, lambda)?;
        let a = auroc(&probe.scores(&vx)?, &vy)?;
        r.plots.push(plot("probe_lambda_val_auroc", lambda, a, None));
        let better = match &best {
            None => true,
            Some((b, p)) => a > *b || (a == *b && lambda > p.lambda),
        };
        if better {
            best = Some((a, probe));
        }
    }
    let (_, probe) = best.expect("lambda grid is nonempty");
    let sweep = SweepInputs {
        k_plus: &cfg.analysis.sweep_k_plus,
        k_minus: &cfg.analysis.sweep_k_minus,
        lambda: probe.lambda,
        train_probe: &splits.train_probe,
        validation: &splits.validation,
    };
    r.plots.extend(sensitivity_sweep(weights, &vocab, imp, &sweep)?);
    Ok((probe, r))
}

/// Sets the probe threshold on the validation split and summarizes the probe.
pub fn choose_threshold(
    cfg: &RunConfig,
    weights: &ModelWeights,
    file: &DatasetFile,
    probe: &ProbeModel,
    groups: &HeadGroups,
) -> Result<(ProbeModel, Report)> {
    let splits = probe_splits(file)?;
    let vocab = file.header.vocab;
    let (x, y) = probe_dataset(weights, &vocab, &splits.train_probe, &groups.resisting)?;
    let (vx, vy) = probe_dataset(weights, &vocab, &splits.validation, &groups.resisting)?;
    let scores = probe.scores(&vx)?;
    let (tau, val_f1) = match cfg.analysis.threshold {
        ThresholdPolicy::MaxF1 => select_threshold(&scores, &vy)?,
        ThresholdPolicy::Fixed(t) => (t, f1_at(&scores, &vy, t)),
    };
    let driving_val_auroc = if groups.driving.is_empty() {
        None
    } else {
        let (dx, dy) = probe_dataset(weights, &vocab, &splits.train_probe, &groups.driving)?;
        let (dvx, dvy) = probe_dataset(weights, &vocab, &splits.validation, &groups.driving)?;
        let p = ProbeModel::train(&dx, &dy, probe.lambda)?;
        Some(auroc(&p.scores(&dvx)?, &dvy)?)
    };
    let mut out = probe.clone();
    out.tau = Some(tau);
    let mut r = Report::new(&cfg.hash());
    r.probe = Some(ProbeSummary {
        lambda: probe.lambda,
        tau,
        train_auroc: auroc(&probe.scores(&x)?, &y)?,
        val_auroc: auroc(&scores, &vy)?,
        val_f1,
        nonzero_weights: probe.weights.iter().filter(|w| **w != 0.0).count(),
        driving_val_auroc,
    });
    Ok((out, r))
}

/// Gated intervention on the test split.
pub fn run_maci(
    cfg: &RunConfig,
    weights: &ModelWeights,
    file: &DatasetFile,
    probe: &ProbeModel,
    groups: &HeadGroups,
) -> Result<Report> {
    let splits = file.splits()?;
    let vocab = file.header.vocab;
    let test = &splits.test;
    if test.is_empty() {
        return Err(Error::Input("the dataset has no test split".into()));
    }
    let model_cfg = weights.config();
    let conflict = test.iter().map(|s| s.conflict_input(&vocab, model_cfg)).collect::<Result<Vec<_>>>()?;
    let clean = test.iter().map(|s| s.clean_input(&vocab, model_cfg)).collect::<Result<Vec<_>>>()?;
    let cf = maci_batch(weights, &conflict, probe, groups)?;
    let cl = maci_batch(weights, &clean, probe, groups)?;
    let tally = |answers: &[(u32, bool)]| {
        let mut c = VerdictCounts::default();
        for (s, (a, _)) in test.iter().zip(answers) {
            match judge(s, *a) {
                Verdict::Hallucinated => c.hallucinated += 1,
                Verdict::Factual => c.factual += 1,
                Verdict::Other => c.other += 1,
            }
        }
        c
    };
    let fired = |answers: &[(u32, bool)]| answers.iter().filter(|a| a.1).count() as f64 / answers.len() as f64;
    let n = test.len() as f64;
    let (conflict, clean) = (tally(&cf), tally(&cl));
    let mut r = Report::new(&cfg.hash());
    r.eval_split = "test".into();
    r.maci = Some(MaciSummary {
        hall_rate: conflict.hallucinated as f64 / n,
        clean_acc: clean.factual as f64 / n,
        fire_rate_conflict: fired(&cf),
        fire_rate_clean: fired(&cl),
        conflict,
        clean,
    });
    Ok(r)
}

/// Merges partial results in the given order.
pub fn merge_results(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::Input("no result files given".into()));
    }
    let mut report = Report::default();
    for p in paths {
        report.merge(Report::read_json(p).map_err(missing("result file", p))?)?;
    }
    report.check()?;
    Ok(report)
}

/// Resolved artifact locations of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub out_dir: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub importance: PathBuf,
    pub groups: PathBuf,
    pub probe: PathBuf,
    pub results: PathBuf,
    pub reports: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &RunConfig) -> Self {
        let p = &cfg.paths;
        Self {
            out_dir: p.out_dir.clone(),
            dataset: p.resolve(&p.dataset),
            checkpoint: p.resolve(&p.checkpoint),
            curve: p.resolve(&p.curve),
            importance: p.resolve(&p.importance),
            groups: p.resolve(&p.groups),
            probe: p.resolve(&p.probe),
            results: p.resolve(&p.results),
            reports: p.resolve(&p.reports),
        }
    }

    pub fn result(&self, stage: Stage) -> PathBuf {
        self.results.join(format!("{}.json", stage.name()))
    }

    /// Partial results merged by the report stage, in merge order.
    pub fn result_files(&self) -> Vec<PathBuf> {
        [Stage::Train, Stage::Patch, Stage::Select, Stage::Ablate, Stage::ProbeTrain, Stage::Threshold, Stage::Maci]
            .into_iter()
            .map(|s| self.result(s))
            .collect()
    }

    pub fn stale_marker(&self) -> PathBuf {
        self.out_dir.join("STALE")
    }
}

/// File-to-file stage entry points shared by the pipeline and the CLI.
pub mod io {
    use super::*;

    pub fn gen(cfg: &RunConfig, out: &Path) -> Result<DatasetFile> {
        let file = gen_dataset(cfg)?;
        write_parent(out)?;
        file.write(out)?;
        Ok(file)
    }

    pub fn split(cfg: &RunConfig, input: &Path, out: &Path) -> Result<DatasetFile> {
        let file = split_dataset(cfg, &load_dataset(input)?)?;
        write_parent(out)?;
        file.write(out)?;
        Ok(file)
    }

    pub fn train(cfg: &RunConfig, data: &Path, ckpt: &Path, curve: &Path, result: &Path) -> Result<TrainOutcome> {
        let file = load_dataset(data)?;
        let outcome = train_model(cfg, &file)?;
        let hash = cfg.hash();
        for p in [ckpt, curve, result] {
            write_parent(p)?;
        }
        outcome.weights.save(ckpt, &hash)?;
        fs::write(curve, curve_csv(&outcome.curve, &hash))?;
        train_result(cfg, &outcome, sha256_file(data)?).write_json(result)?;
        Ok(outcome)
    }

    pub fn patch(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path, result: &Path) -> Result<ImportanceMap> {
        let weights = load_checkpoint(ckpt)?;
        let (imp, r) = patch_heads(cfg, &weights, &load_dataset(data)?)?;
        write_parent(out)?;
        write_parent(result)?;
        imp.write(out, &cfg.hash())?;
        r.write_json(result)?;
        Ok(imp)
    }

    pub fn select(cfg: &RunConfig, map: &Path, out: &Path, result: &Path) -> Result<HeadGroups> {
        let (imp, _) = ImportanceMap::read(map).map_err(missing("importance map", map))?;
        let (groups, r) = select_heads(cfg, &imp);
        write_parent(out)?;
        write_parent(result)?;
        groups.write(out, &cfg.hash())?;
        r.write_json(result)?;
        Ok(groups)
    }

    pub fn ablate(cfg: &RunConfig, ckpt: &Path, data: &Path, groups: &Path, result: &Path) -> Result<Report> {
        let weights = load_checkpoint(ckpt)?;
        let (groups, _) = HeadGroups::read(groups).map_err(missing("head groups", groups))?;
        let r = ablation_suite(cfg, &weights, &load_dataset(data)?, &groups)?;
        write_parent(result)?;
        r.write_json(result)?;
        Ok(r)
    }

    pub fn probe_train(
        cfg: &RunConfig,
        ckpt: &Path,
        data: &Path,
        groups: &Path,
        map: &Path,
        out: &Path,
        result: &Path,
    ) -> Result<ProbeModel> {
        let weights = load_checkpoint(ckpt)?;
        let (groups, _) = HeadGroups::read(groups).map_err(missing("head groups", groups))?;
        let (imp, _) = ImportanceMap::read(map).map_err(missing("importance map", map))?;
        let (probe, r) = fit_probe(cfg, &weights, &load_dataset(data)?, &groups, &imp)?;
        write_parent(out)?;
        write_parent(result)?;
        write_probe(out, &probe, &groups, &cfg.hash())?;
        r.write_json(result)?;
        Ok(probe)
    }

    /// Reads the probe at `probe`, writes it back with its threshold to `out`.
    pub fn threshold(
        cfg: &RunConfig,
        ckpt: &Path,
        data: &Path,
        probe: &Path,
        out: &Path,
        result: &Path,
    ) -> Result<ProbeModel> {
        let weights = load_checkpoint(ckpt)?;
        let (model, groups, _) = read_probe(probe).map_err(missing("probe", probe))?;
        let (model, r) = choose_threshold(cfg, &weights, &load_dataset(data)?, &model, &groups)?;
        write_parent(out)?;
        write_parent(result)?;
        write_probe(out, &model, &groups, &cfg.hash())?;
        r.write_json(result)?;
        Ok(model)
    }

    /// Driving heads come from `groups`; the probe's own resisting heads
    /// must match the ones recorded there.
    pub fn maci(
        cfg: &RunConfig,
        ckpt: &Path,
        probe: &Path,
        groups: &Path,
        data: &Path,
        result: &Path,
    ) -> Result<Report> {
        let weights = load_checkpoint(ckpt)?;
        let (model, probe_groups, _) = read_probe(probe).map_err(missing("probe", probe))?;
        let (groups, _) = HeadGroups::read(groups).map_err(missing("head groups", groups))?;
        if probe_groups.resisting != groups.resisting {
            return Err(Error::Input(
                "the probe was trained on different resisting heads than the given groups".into(),
            ));
        }
        let r = run_maci(cfg, &weights, &load_dataset(data)?, &model, &groups)?;
        write_parent(result)?;
        r.write_json(result)?;
        Ok(r)
    }

    pub fn report(inputs: &[PathBuf], out: &Path) -> Result<Report> {
        let report = merge_results(inputs)?;
        crate::evalreport::emit_report(&report, crate::evalreport::ReportFormat::Rows, out)?;
        crate::evalreport::emit_report(&report, crate::evalreport::ReportFormat::Document, out)?;
        Ok(report)
    }
}

fn mark_stale(a: &Artifacts, hash: &str, status: &str) -> Result<()> {
    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.stale_marker(), format!("config_hash={hash}\n{status}\n"))?;
    Ok(())
}

/// Runs every stage in order. Artifacts of a failed run stay flagged by a
/// `STALE` file in the output directory naming the failed stage.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<Report, PipelineError> {
    preflight(cfg).map_err(PipelineError::Config)?;
    let threads = cfg.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Config(Error::Config(e.to_string())))?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &RunConfig) -> std::result::Result<Report, PipelineError> {
    let a = Artifacts::new(cfg);
    let hash = cfg.hash();
    mark_stale(&a, &hash, "status=running").map_err(PipelineError::stage(Stage::Gen))?;
    let result = stages(cfg, &a);
    match &result {
        Ok(_) => fs::remove_file(a.stale_marker())
            .map_err(|e| PipelineError::Stage { stage: Stage::Report, cause: e.into() })?,
        Err(PipelineError::Stage { stage, cause }) => {
            let _ = mark_stale(&a, &hash, &format!("status=failed\nstage={stage}\nerror={cause}"));
        }
        Err(_) => {}
    }
    result
}

fn stages(cfg: &RunConfig, a: &Artifacts) -> std::result::Result<Report, PipelineError> {
    use PipelineError as E;
    let raw = a.out_dir.join("dataset.unassigned.jsonl");
    io::gen(cfg, &raw).map_err(E::stage(Stage::Gen))?;
    io::split(cfg, &raw, &a.dataset).map_err(E::stage(Stage::Split))?;
    fs::remove_file(&raw).map_err(|e| E::Stage { stage: Stage::Split, cause: e.into() })?;
    io::train(cfg, &a.dataset, &a.checkpoint, &a.curve, &a.result(Stage::Train)).map_err(E::stage(Stage::Train))?;
    io::patch(cfg, &a.checkpoint, &a.dataset, &a.importance, &a.result(Stage::Patch))
        .map_err(E::stage(Stage::Patch))?;
    io::select(cfg, &a.importance, &a.groups, &a.result(Stage::Select)).map_err(E::stage(Stage::Select))?;
    io::ablate(cfg, &a.checkpoint, &a.dataset, &a.groups, &a.result(Stage::Ablate)).map_err(E::stage(Stage::Ablate))?;
    io::probe_train(cfg, &a.checkpoint, &a.dataset, &a.groups, &a.importance, &a.probe, &a.result(Stage::ProbeTrain))
        .map_err(E::stage(Stage::ProbeTrain))?;
    io::threshold(cfg, &a.checkpoint, &a.dataset, &a.probe, &a.probe, &a.result(Stage::Threshold))
        .map_err(E::stage(Stage::Threshold))?;
    io::maci(cfg, &a.checkpoint, &a.probe, &a.groups, &a.dataset, &a.result(Stage::Maci))
        .map_err(E::stage(Stage::Maci))?;
    io::report(&a.result_files(), &a.reports).map_err(E::stage(Stage::Report))
}
