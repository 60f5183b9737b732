use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use molsyn_core::analysis::{self, ChainTaxonomy, MergeMode};
use molsyn_core::data::manifest::{sha256_file, write_review_csv};
use molsyn_core::data::{
    self, aggregate_and_split, annotate_cot, read_jsonl, validation_sample, write_jsonl, AnnotateConfig, ChatClient,
    ChatConfig, CotRecord, DatasetManifest, Denoiser, HttpChatClient, MockChatClient, Reducer, SamplePlan, TaskRecord,
    DEFAULT_ANCHORS,
};
use molsyn_core::demo::run_demo;
use molsyn_core::model::{Checkpoint, DecodeMode, ModelConfig, Transformer};
use molsyn_core::rewards::{evaluate, write_report};
use molsyn_core::specialist::{paired_inference, GroupId, ModelDecoder, Phase, RouterMode, SpecialistLayer, TaskKind};
use molsyn_core::tokenizer::Vocabulary;
use molsyn_core::training::{micro, run_stages, DataPaths, PipelineConfig, StageKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{output_dir, parse_override, resolve, write_snapshot};
use crate::error::{CliError, CliResult};
use crate::{Command, Common};

type Overrides = Vec<(String, Value)>;

fn flag<T: Serialize>(o: &mut Overrides, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), serde_json::to_value(v).expect("flag values serialize")));
    }
}

fn task_flag(s: Option<String>) -> CliResult<Option<TaskKind>> {
    s.map(|t| t.parse::<TaskKind>().map_err(CliError::from)).transpose()
}

/// Resolves the config, picks the output directory and writes the snapshot.
fn setup<T: Serialize + DeserializeOwned>(
    common: &Common,
    defaults: &T,
    seed_key: &str,
    flags: Overrides,
) -> CliResult<(T, PathBuf)> {
    let mut o: Overrides = common.sets.iter().map(|s| parse_override(s)).collect::<CliResult<_>>()?;
    o.extend(flags);
    flag(&mut o, seed_key, common.seed);
    let cfg: T = resolve(defaults, common.config.as_deref(), &o)?;
    let v = serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let seed = seed_key.split('.').fold(&v, |v, k| &v[k]).as_u64().unwrap_or(0);
    let dir = output_dir(common.out.as_deref(), seed);
    write_snapshot(&dir, &cfg)?;
    Ok((cfg, dir))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    match p {
        Some(p) if !p.as_os_str().is_empty() => Ok(p),
        _ => Err(CliError::Usage(format!("missing {what}"))),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(path, &(text + "\n"))
}

fn hashes(dir: &Path, names: &[&str]) -> CliResult<BTreeMap<String, String>> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), sha256_file(&dir.join(n))?)))
        .collect()
}

fn read_records(paths: &[PathBuf]) -> CliResult<Vec<TaskRecord>> {
    if paths.is_empty() {
        return Err(CliError::Usage("no input files given".into()));
    }
    let mut out = Vec::new();
    for p in paths {
        let recs: Vec<TaskRecord> = read_jsonl(p)?;
        for r in &recs {
            r.check()?;
        }
        out.extend(recs);
    }
    Ok(out)
}

fn load_model(path: &Path) -> CliResult<(Checkpoint, SpecialistLayer)> {
    if !path.exists() {
        return Err(CliError::Data(format!("missing checkpoint {}", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    let layer = SpecialistLayer::load(&ck, RouterMode::Oracle)?;
    Ok((ck, layer))
}

fn decode_mode(tau: f64, seed: u64) -> DecodeMode {
    if tau > 0.0 {
        DecodeMode::Temperature { tau, seed }
    } else {
        DecodeMode::Greedy
    }
}

pub fn dispatch(common: &Common, cmd: Command) -> CliResult<PathBuf> {
    match cmd {
        Command::PrepareData { input, micro } => {
            let mut f = Overrides::new();
            if !input.is_empty() {
                flag(&mut f, "inputs", Some(input));
            }
            flag(&mut f, "micro_per_task", micro);
            prepare(common, f, true)
        }
        Command::Sample { input } => {
            let mut f = Overrides::new();
            if !input.is_empty() {
                flag(&mut f, "inputs", Some(input));
            }
            prepare(common, f, false)
        }
        Command::Annotate { input, mock } => {
            let mut f = Overrides::new();
            flag(&mut f, "input", input);
            flag(&mut f, "mock", mock);
            annotate(common, f)
        }
        Command::Denoise { input, mock } => {
            let mut f = Overrides::new();
            flag(&mut f, "input", input);
            flag(&mut f, "mock", mock);
            denoise(common, f)
        }
        Command::Train { stage, init } => {
            let mut f = Overrides::new();
            flag(&mut f, "stage", stage);
            flag(&mut f, "init", init);
            train(common, f)
        }
        Command::Eval { checkpoint, data, task } => {
            let mut f = Overrides::new();
            flag(&mut f, "checkpoint", checkpoint);
            flag(&mut f, "data", data);
            flag(&mut f, "task", task_flag(task)?);
            eval(common, f)
        }
        Command::Infer { checkpoint, task, input } => {
            let mut f = Overrides::new();
            flag(&mut f, "checkpoint", checkpoint);
            flag(&mut f, "task", task_flag(task)?);
            if !input.is_empty() {
                flag(&mut f, "inputs", Some(input));
            }
            infer(common, f)
        }
        Command::AnalyzeWeights { checkpoint, init, merge, records } => {
            let mut f = Overrides::new();
            flag(&mut f, "checkpoint", checkpoint);
            flag(&mut f, "init", init);
            flag(&mut f, "merge", merge.map(|m| m.parse::<MergeMode>()).transpose()?);
            flag(&mut f, "records", records);
            analyze_weights(common, f)
        }
        Command::AnalyzeChains { data, taxonomy } => {
            let mut f = Overrides::new();
            flag(&mut f, "data", data);
            flag(&mut f, "taxonomy", taxonomy);
            analyze_chains(common, f)
        }
        Command::DemoPipeline { checkpoint, candidate, candidates } => {
            let mut f = Overrides::new();
            flag(&mut f, "checkpoint", checkpoint);
            if !candidate.is_empty() {
                flag(&mut f, "candidates", Some(candidate));
            }
            flag(&mut f, "candidates_file", candidates);
            demo(common, f)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataConfig {
    seed: u64,
    inputs: Vec<PathBuf>,
    /// Records kept per task; tasks without a quota keep everything.
    quotas: BTreeMap<TaskKind, usize>,
    grid: usize,
    reducer: Reducer,
    /// Required total of the quotas, if set.
    target: Option<usize>,
    /// Checkpoint whose base model embeds records; a fresh model otherwise.
    embedder: Option<PathBuf>,
    model: ModelConfig,
    micro_per_task: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            inputs: Vec::new(),
            quotas: BTreeMap::new(),
            grid: 10,
            reducer: Reducer::Pca,
            target: None,
            embedder: None,
            model: ModelConfig::tiny(512),
            micro_per_task: None,
        }
    }
}

#[derive(Serialize)]
struct TrainFile {
    pipeline: PipelineConfig,
}

fn prepare(common: &Common, f: Overrides, split: bool) -> CliResult<PathBuf> {
    let (cfg, dir): (DataConfig, _) = setup(common, &DataConfig::default(), "seed", f)?;
    if let Some(n) = cfg.micro_per_task {
        if !split {
            return Err(CliError::Usage("micro fixtures are written by prepare-data".into()));
        }
        let paths = micro::write_fixture(&dir, n, cfg.seed)?;
        write_json(&dir.join("train_config.json"), &TrainFile {
            pipeline: micro::toy_config(paths, cfg.seed),
        })?;
        log::info!("wrote micro fixture with {n} records per task");
        return Ok(dir);
    }
    let records = read_records(&cfg.inputs)?;
    let plan = SamplePlan {
        quotas: cfg.quotas.clone(),
        reducer: cfg.reducer,
        grid: cfg.grid,
        seed: cfg.seed,
    };
    plan.validate(cfg.target)?;
    let (model, vocab) = match &cfg.embedder {
        Some(p) => {
            let (ck, _) = load_model(p)?;
            (ck.model, ck.vocab)
        }
        None => {
            let texts = records.iter().flat_map(|r| [r.input.as_str(), r.output.as_str()]);
            let vocab = Vocabulary::build(texts, cfg.model.vocab_size);
            let mut mc = cfg.model.clone();
            mc.vocab_size = mc.vocab_size.max(vocab.len());
            let vocab = vocab.padded(mc.vocab_size);
            (Transformer::new(mc, cfg.seed)?, vocab)
        }
    };
    let mut by_task: BTreeMap<TaskKind, Vec<TaskRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task).or_default().push(r);
    }
    for t in cfg.quotas.keys() {
        if !by_task.contains_key(t) {
            log::warn!("quota given for {t} but no records of that task");
        }
    }
    let mut subsets = Vec::new();
    let mut counts = BTreeMap::new();
    for (t, recs) in &by_task {
        let quota = cfg.quotas.get(t).copied().unwrap_or(recs.len());
        let s = data::sampling::sample_task(&model, &vocab, recs, quota, &plan)?;
        counts.insert(t.name().to_string(), s.len());
        subsets.push(s);
    }
    let sampled: Vec<TaskRecord> = subsets.iter().flatten().cloned().collect();
    write_jsonl(&dir.join("sampled.jsonl"), &sampled)?;
    write_json(&dir.join("sample_counts.json"), &counts)?;
    if !split {
        return Ok(dir);
    }
    let splits = aggregate_and_split(&subsets, cfg.seed)?;
    write_jsonl(&dir.join("train.jsonl"), &splits.train)?;
    write_jsonl(&dir.join("valid.jsonl"), &splits.valid)?;
    write_jsonl(&dir.join("test.jsonl"), &splits.test)?;
    let mut m = DatasetManifest::from_splits(&splits);
    m.seeds.insert("sampling".into(), cfg.seed);
    m.seeds.insert("split".into(), cfg.seed);
    m.reducer = cfg.reducer.tag().to_string();
    m.files = hashes(&dir, &["sampled.jsonl", "train.jsonl", "valid.jsonl", "test.jsonl"])?;
    m.deviations.push("2-D projection uses PCA in place of UMAP".into());
    m.write(&dir.join("manifest.json"))?;
    Ok(dir)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MockEntry {
    #[serde(rename = "match")]
    pattern: String,
    reply: Option<String>,
    fail: Option<String>,
}

/// Script file: a JSON list of `{"match", "reply"}` or `{"match", "fail"}`.
fn mock_client(path: &Path) -> CliResult<MockChatClient> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let entries: Vec<MockEntry> =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("bad mock script {}: {e}", path.display())))?;
    let mut m = MockChatClient::new();
    for e in entries {
        m = match (e.reply, e.fail) {
            (Some(r), None) => m.reply(&e.pattern, &r),
            (None, Some(f)) => m.fail(&e.pattern, &f),
            _ => return Err(CliError::Data(format!("mock entry {:?} needs exactly one of reply or fail", e.pattern))),
        };
    }
    Ok(m)
}

fn chat_client(mock: &Option<PathBuf>, chat: &Option<ChatConfig>) -> CliResult<Box<dyn ChatClient>> {
    match (mock, chat) {
        (Some(p), _) => Ok(Box::new(mock_client(p)?)),
        (None, Some(c)) => Ok(Box::new(HttpChatClient::new(c.clone()))),
        (None, None) => Err(CliError::Usage("set either chat or mock".into())),
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct AnnotateCmd {
    seed: u64,
    input: Option<PathBuf>,
    chat: Option<ChatConfig>,
    annotate: AnnotateConfig,
    mock: Option<PathBuf>,
}

fn annotate(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let (cfg, dir): (AnnotateCmd, _) = setup(common, &AnnotateCmd::default(), "seed", f)?;
    let records = read_records(&[required(&cfg.input, "input")?.to_path_buf()])?;
    let client = chat_client(&cfg.mock, &cfg.chat)?;
    let a = annotate_cot(&records, client.as_ref(), &cfg.annotate);
    log::info!("annotated {} records, skipped {}", a.records.len(), a.skipped.len());
    write_jsonl(&dir.join("annotated.jsonl"), &a.records)?;
    write_jsonl(&dir.join("skipped.jsonl"), &a.skipped)?;
    Ok(dir)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DenoiseCmd {
    seed: u64,
    input: Option<PathBuf>,
    anchors: Vec<String>,
    /// Also ask the chat model to rewrite the cleaned reasoning.
    rewrite: bool,
    chat: Option<ChatConfig>,
    mock: Option<PathBuf>,
    review_fraction: f64,
}

impl Default for DenoiseCmd {
    fn default() -> Self {
        Self {
            seed: 0,
            input: None,
            anchors: DEFAULT_ANCHORS.iter().map(|s| s.to_string()).collect(),
            rewrite: false,
            chat: None,
            mock: None,
            review_fraction: 0.05,
        }
    }
}

#[derive(Serialize)]
struct DenoiseManifest {
    input_records: usize,
    kept: usize,
    dropped: usize,
    review_rows: usize,
    files: BTreeMap<String, String>,
}

fn denoise(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let (cfg, dir): (DenoiseCmd, _) = setup(common, &DenoiseCmd::default(), "seed", f)?;
    let input = required(&cfg.input, "input")?;
    let records: Vec<CotRecord> = read_jsonl(input)?;
    let denoiser = Denoiser::new(&cfg.anchors)?;
    let client = if cfg.rewrite { Some(chat_client(&cfg.mock, &cfg.chat)?) } else { None };
    let out = data::denoise(&records, &denoiser, client.as_deref());
    write_jsonl(&dir.join("cot.jsonl"), &out.records)?;
    write_jsonl(&dir.join("dropped.jsonl"), &out.dropped)?;
    let review = validation_sample(&out.records, cfg.review_fraction, cfg.seed)?;
    write_review_csv(&dir.join("review.csv"), &review)?;
    write_json(&dir.join("manifest.json"), &DenoiseManifest {
        input_records: records.len(),
        kept: out.records.len(),
        dropped: out.dropped.len(),
        review_rows: review.len(),
        files: hashes(&dir, &["cot.jsonl", "dropped.jsonl", "review.csv"])?,
    })?;
    Ok(dir)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainCmd {
    pipeline: PipelineConfig,
    #[serde(default)]
    stage: Option<u8>,
    #[serde(default)]
    init: Option<PathBuf>,
}

fn train(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let defaults = TrainCmd {
        pipeline: PipelineConfig::new(DataPaths {
            instruction: PathBuf::new(),
            cot: PathBuf::new(),
            rl: PathBuf::new(),
        }),
        stage: None,
        init: None,
    };
    let (cfg, dir): (TrainCmd, _) = setup(common, &defaults, "pipeline.seed", f)?;
    let (from, to) = match cfg.stage {
        None => (StageKind::InstructionSft, StageKind::Reinforce),
        Some(n) => {
            let s = StageKind::from_number(n)?;
            (s, s)
        }
    };
    let out = run_stages(&cfg.pipeline, &dir, from, to, cfg.init.as_deref())?;
    for m in &out.metrics {
        log::info!("stage {}: {}", m.stage, serde_json::to_string(m).unwrap_or_default());
    }
    Ok(dir)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalCmd {
    seed: u64,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    task: Option<TaskKind>,
    max_new: usize,
    /// 0 decodes greedily.
    tau: f64,
    limit: Option<usize>,
}

impl Default for EvalCmd {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint: None,
            data: None,
            task: None,
            max_new: 48,
            tau: 0.0,
            limit: None,
        }
    }
}

#[derive(Serialize)]
struct Prediction {
    id: String,
    task: TaskKind,
    draft: String,
    think: String,
    answer: String,
    gold: String,
    error: Option<String>,
}

fn eval(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let (cfg, dir): (EvalCmd, _) = setup(common, &EvalCmd::default(), "seed", f)?;
    let data_path = required(&cfg.data, "data")?;
    if !data_path.exists() {
        return Err(CliError::Data(format!("missing file {}", data_path.display())));
    }
    let mut records: Vec<TaskRecord> = read_jsonl(data_path)?;
    if let Some(t) = cfg.task {
        records.retain(|r| r.task == t);
    }
    if let Some(n) = cfg.limit {
        records.truncate(n);
    }
    if records.is_empty() {
        return Err(CliError::Data("no records to evaluate".into()));
    }
    let (ck, layer) = load_model(required(&cfg.checkpoint, "checkpoint")?)?;
    let decoder = ModelDecoder {
        model: &ck.model,
        layer: &layer,
        vocab: &ck.vocab,
        mode: decode_mode(cfg.tau, cfg.seed),
        max_new: cfg.max_new,
    };
    let mut preds = Vec::new();
    let mut by_task: BTreeMap<TaskKind, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for r in &records {
        let p = match paired_inference(&decoder, r.task, &r.input) {
            Ok(o) => Prediction {
                id: r.id.clone(),
                task: r.task,
                draft: o.draft_answer,
                think: o.think,
                answer: o.final_answer,
                gold: r.output.clone(),
                error: None,
            },
            Err(e) => Prediction {
                id: r.id.clone(),
                task: r.task,
                draft: String::new(),
                think: String::new(),
                answer: String::new(),
                gold: r.output.clone(),
                error: Some(e.to_string()),
            },
        };
        let e = by_task.entry(r.task).or_default();
        e.0.push(p.answer.clone());
        e.1.push(r.output.clone());
        preds.push(p);
    }
    write_jsonl(&dir.join("predictions.jsonl"), &preds)?;
    let reports = by_task
        .iter()
        .map(|(t, (p, g))| evaluate(*t, p, g))
        .collect::<molsyn_core::Result<Vec<_>>>()?;
    write_report(&dir.join("metrics.json"), &reports)?;
    Ok(dir)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InferCmd {
    seed: u64,
    checkpoint: Option<PathBuf>,
    task: Option<TaskKind>,
    inputs: Vec<String>,
    max_new: usize,
    tau: f64,
}

impl Default for InferCmd {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint: None,
            task: None,
            inputs: Vec::new(),
            max_new: 48,
            tau: 0.0,
        }
    }
}

fn infer(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let (cfg, dir): (InferCmd, _) = setup(common, &InferCmd::default(), "seed", f)?;
    let task = cfg.task.ok_or_else(|| CliError::Usage("missing task".into()))?;
    if cfg.inputs.is_empty() {
        return Err(CliError::Usage("missing input".into()));
    }
    let (ck, layer) = load_model(required(&cfg.checkpoint, "checkpoint")?)?;
    let decoder = ModelDecoder {
        model: &ck.model,
        layer: &layer,
        vocab: &ck.vocab,
        mode: decode_mode(cfg.tau, cfg.seed),
        max_new: cfg.max_new,
    };
    let mut lines = Vec::new();
    for q in &cfg.inputs {
        let v = match paired_inference(&decoder, task, q) {
            Ok(o) => serde_json::json!({"input": q, "draft": o.draft_answer, "think": o.think, "answer": o.final_answer}),
            Err(e) => serde_json::json!({"input": q, "error": e.to_string()}),
        };
        lines.push(v);
    }
    write_jsonl(&dir.join("infer.jsonl"), &lines)?;
    Ok(dir)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct WeightsCmd {
    seed: u64,
    checkpoint: Option<PathBuf>,
    init: Option<PathBuf>,
    merge: MergeMode,
    phase: Phase,
    /// Task whose specialist is the density reference.
    reference: TaskKind,
    records: Option<PathBuf>,
    reducer: Reducer,
}

impl Default for WeightsCmd {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint: None,
            init: None,
            merge: MergeMode::Concat,
            phase: Phase::Inference,
            reference: TaskKind::MoleculeCaptioning,
            records: None,
            reducer: Reducer::Pca,
        }
    }
}

fn group_name(g: GroupId) -> String {
    format!("group{}", g.get())
}

fn analyze_weights(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let (cfg, dir): (WeightsCmd, _) = setup(common, &WeightsCmd::default(), "seed", f)?;
    let (ck, layer) = load_model(required(&cfg.checkpoint, "checkpoint")?)?;
    let mut hists = BTreeMap::new();
    for g in GroupId::all() {
        hists.insert(g, analysis::adapter_histograms(layer.adapter(g, cfg.phase)?, cfg.merge)?);
    }
    let reference = &hists[&cfg.reference.group()];
    let mut rows = Vec::new();
    let mut out_of_range: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (g, h) in &hists {
        let d = analysis::density_diff(h, reference)?;
        out_of_range.insert(
            group_name(*g),
            h.iter().map(|x| (x.layer.clone(), x.out_of_range_fraction())).collect(),
        );
        rows.push((group_name(*g), h.clone(), d));
    }
    analysis::write_histograms_csv(&dir.join("histograms.csv"), &rows)?;
    let mut files = vec!["histograms.csv"];

    if let Some(init_path) = &cfg.init {
        let (init_ck, init_layer) = load_model(init_path)?;
        let mut csv = String::from("specialist,matrix,l2_delta\n");
        for g in GroupId::all() {
            let d = analysis::adapter_l2_deltas(layer.adapter(g, cfg.phase)?, init_layer.adapter(g, cfg.phase)?)?;
            for (m, v) in d {
                let _ = writeln!(csv, "{},{m},{v}", group_name(g));
            }
        }
        write_file(&dir.join("l2_deltas.csv"), &csv)?;
        files.push("l2_deltas.csv");
        if let Some(rp) = &cfg.records {
            let records = read_records(std::slice::from_ref(rp))?;
            let p = analysis::project_representations(&init_ck, &ck, &records, cfg.phase, cfg.reducer)?;
            let mut csv = String::from("id,task,x_before,y_before,x_after,y_after\n");
            for (i, r) in records.iter().enumerate() {
                let (b, a) = (p.before[i], p.after[i]);
                let _ = writeln!(csv, "{},{},{},{},{},{}", r.id, r.task, b[0], b[1], a[0], a[1]);
            }
            write_file(&dir.join("projection.csv"), &csv)?;
            let mut disp = String::from("task,dispersion_before,dispersion_after\n");
            for (t, b) in &p.dispersion_before {
                let _ = writeln!(disp, "{t},{b},{}", p.dispersion_after.get(t).copied().unwrap_or(f64::NAN));
            }
            write_file(&dir.join("dispersion.csv"), &disp)?;
            files.extend(["projection.csv", "dispersion.csv"]);
        }
    } else if cfg.records.is_some() {
        return Err(CliError::Usage("projections need --init as the before checkpoint".into()));
    }
    write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({
            "merge": cfg.merge,
            "phase": cfg.phase,
            "reference": group_name(cfg.reference.group()),
            "range": analysis::RANGE,
            "bin_width": analysis::BIN_WIDTH,
            "bins": analysis::BINS,
            "out_of_range_fraction": out_of_range,
            "files": hashes(&dir, &files)?,
        }),
    )?;
    Ok(dir)
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct ChainsCmd {
    seed: u64,
    data: Option<PathBuf>,
    taxonomy: Option<PathBuf>,
}

fn analyze_chains(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let (cfg, dir): (ChainsCmd, _) = setup(common, &ChainsCmd::default(), "seed", f)?;
    let records: Vec<CotRecord> = read_jsonl(required(&cfg.data, "data")?)?;
    let taxonomy = match &cfg.taxonomy {
        Some(p) => ChainTaxonomy::from_json(
            &std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => ChainTaxonomy::default(),
    };
    let dist = analysis::chain_distribution(&records, &taxonomy)?;
    analysis::write_chains_csv(&dir.join("chains.csv"), &dist)?;
    write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({
            "records": records.len(),
            "labels": taxonomy.labels(),
            "files": hashes(&dir, &["chains.csv"])?,
        }),
    )?;
    Ok(dir)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DemoCmd {
    seed: u64,
    checkpoint: Option<PathBuf>,
    candidates: Vec<String>,
    candidates_file: Option<PathBuf>,
    max_new: usize,
}

impl Default for DemoCmd {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint: None,
            candidates: Vec::new(),
            candidates_file: None,
            max_new: 48,
        }
    }
}

fn demo(common: &Common, f: Overrides) -> CliResult<PathBuf> {
    let (cfg, dir): (DemoCmd, _) = setup(common, &DemoCmd::default(), "seed", f)?;
    let mut prompts = cfg.candidates.clone();
    if let Some(p) = &cfg.candidates_file {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
        prompts.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
    }
    let report = if prompts.is_empty() {
        Vec::new()
    } else {
        let (ck, layer) = load_model(required(&cfg.checkpoint, "checkpoint")?)?;
        let decoder = ModelDecoder {
            model: &ck.model,
            layer: &layer,
            vocab: &ck.vocab,
            mode: DecodeMode::Greedy,
            max_new: cfg.max_new,
        };
        run_demo(&decoder, &prompts)
    };
    write_json(&dir.join("demo_report.json"), &report)?;
    Ok(dir)
}
