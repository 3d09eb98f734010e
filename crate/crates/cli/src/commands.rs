use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use moralunc::alignment::{
    self, estimate_amce, l2_score, scores_from_csv, scores_to_csv, AlignmentScore,
    AmceVector, ClusterBy,
};
use moralunc::analysis::{dropout_tests, tests_to_csv, trajectory_table, trajectory_to_csv};
use moralunc::backend::{
    from_config, records_from_jsonl, records_to_jsonl, run_corpus, BackendConfig, BackendKind,
    ChoiceRecord, HttpSettings, RunOptions, WireProtocol,
};
use moralunc::manifest::ArtifactManifest;
use moralunc::prompt::{template_version, PromptStyle};
use moralunc::report::{self, alignment_table, Plot, ScatterPoint};
use moralunc::scenario::{
    corpus_to_bytes, generate_alignment_set, generate_uncertainty_set, read_corpus, Scenario,
};
use moralunc::uncertainty::{jsd, summaries_from_csv, summaries_to_csv, summarize_records};
use moralunc::Error;

use crate::{
    AlignArgs, AnalyzeArgs, BackendArg, ClusterArg, GenerateArgs, ProtocolArg, ReportArgs, RunArgs,
    SetArg, StyleArg,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_THRESHOLD: u8 = 2;
pub const EXIT_INVARIANT: u8 = 3;

#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Into<String>) -> CmdError {
    CmdError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::ThresholdExceeded { .. } => EXIT_THRESHOLD,
            Error::InvalidScenario { .. }
            | Error::NotNormalized(..)
            | Error::NonFinite(_)
            | Error::DimensionOrder
            | Error::RankDeficient { .. } => EXIT_INVARIANT,
            _ => EXIT_USAGE,
        };
        CmdError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        usage(e.to_string())
    }
}

type CmdResult<T = ()> = Result<T, CmdError>;

fn require(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("missing input file: {}", path.display())))
    }
}

fn read_text(path: &Path) -> CmdResult<String> {
    require(path)?;
    Ok(fs::read_to_string(path)?)
}

fn load_corpus(path: &Path) -> CmdResult<Vec<Scenario>> {
    require(path)?;
    let f = fs::File::open(path)?;
    read_corpus(BufReader::new(f)).map_err(|e| match e {
        Error::InvalidScenario { .. } => e.into(),
        other => usage(format!("{}: {other}", path.display())),
    })
}

fn load_records(path: &Path) -> CmdResult<Vec<ChoiceRecord>> {
    let text = read_text(path)?;
    records_from_jsonl(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Write `content` and its sidecar manifest.
fn emit(
    path: &Path,
    content: &str,
    command: &str,
    inputs: &[PathBuf],
    params: &[(&str, String)],
) -> CmdResult<ArtifactManifest> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fs::write(path, content)?;
    let mut m = ArtifactManifest::new(command, path)?;
    for i in inputs {
        m = m.input(i)?;
    }
    for (k, v) in params {
        m = m.param(k, v);
    }
    m.write_beside(path)?;
    Ok(m)
}

fn emit_plot(dir: &Path, stem: &str, plot: &Plot, inputs: &[PathBuf]) -> CmdResult {
    emit(&dir.join(format!("{stem}.svg")), &plot.svg, "report", inputs, &[])?;
    emit(&dir.join(format!("{stem}.csv")), &plot.csv, "report", inputs, &[])?;
    Ok(())
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let corpus = match a.set {
        SetArg::Uncertainty => generate_uncertainty_set(a.seed, a.n)?,
        SetArg::Alignment => generate_alignment_set(a.seed, a.n)?,
    };
    let bytes = corpus_to_bytes(&corpus);
    let text = String::from_utf8(bytes).map_err(|e| usage(e.to_string()))?;
    let set = match a.set {
        SetArg::Uncertainty => "uncertainty",
        SetArg::Alignment => "alignment",
    };
    emit(
        &a.out,
        &text,
        "generate",
        &[],
        &[
            ("set", set.into()),
            ("n", a.n.to_string()),
            ("seed", a.seed.to_string()),
            ("template_version", template_version().into()),
        ],
    )?;
    println!("{} scenarios -> {}", corpus.len(), a.out.display());
    Ok(())
}

fn build_config(a: &RunArgs) -> CmdResult<BackendConfig> {
    let mut cfg = match &a.config {
        Some(path) => serde_json::from_str::<BackendConfig>(&read_text(path)?)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => match a.backend {
            BackendArg::Toy => BackendConfig::toy(0.0),
            BackendArg::Http => {
                let endpoint = a
                    .endpoint
                    .clone()
                    .ok_or_else(|| usage("--backend http needs --endpoint or --config"))?;
                BackendConfig::http(
                    a.model.as_deref().unwrap_or("default"),
                    HttpSettings {
                        endpoint,
                        ..HttpSettings::default()
                    },
                )
            }
        },
    };
    let want = match a.backend {
        BackendArg::Toy => BackendKind::ToyTransformer,
        BackendArg::Http => BackendKind::HttpCompletions,
    };
    if a.config.is_some() && cfg.kind != want {
        return Err(usage("--backend disagrees with the config file"));
    }
    if let Some(r) = a.dropout {
        cfg.dropout_rate = r;
    }
    if let Some(s) = a.style {
        cfg.style = match s {
            StyleArg::Case => PromptStyle::Case,
            StyleArg::Option => PromptStyle::Option,
        };
    }
    if let Some(m) = &a.model {
        cfg.model_name = m.clone();
    }
    if let Some(p) = a.passes {
        cfg.passes = p;
    }
    if let Some(seed) = a.toy_init_seed {
        match cfg.toy.as_mut() {
            Some(t) => t.init_seed = seed,
            None => return Err(usage("--toy-init-seed needs the toy backend")),
        }
    }
    if let Some(h) = cfg.http.as_mut() {
        if let Some(e) = &a.endpoint {
            h.endpoint = e.clone();
        }
        if let Some(p) = a.protocol {
            h.protocol = match p {
                ProtocolArg::Chat => WireProtocol::Chat,
                ProtocolArg::Completions => WireProtocol::Completions,
            };
        }
        if let Some(k) = &a.api_key_env {
            h.api_key_env = Some(k.clone());
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn ledger_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".ledger.jsonl");
    out.with_file_name(name)
}

pub fn run(a: RunArgs) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let cfg = build_config(&a)?;
    let backend = from_config(&cfg)?;
    let opts = RunOptions {
        concurrency: a.concurrency.max(1),
        seed: a.seed,
        error_threshold: a.error_threshold,
        cache_dir: a.cache_dir.clone(),
    };
    let started = now_unix();
    let ledger_file = ledger_path(&a.out);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut out = match run_corpus(&corpus, backend.as_ref(), &opts) {
        Ok(o) => o,
        Err(Error::ThresholdExceeded {
            failed,
            total,
            threshold,
            ledger,
        }) => {
            let text: String = ledger
                .iter()
                .map(|e| serde_json::to_string(e).unwrap_or_default() + "\n")
                .collect();
            fs::write(&ledger_file, text)?;
            return Err(CmdError {
                code: EXIT_THRESHOLD,
                message: format!(
                    "{failed} of {total} scenarios failed (threshold {threshold}); ledger: {}",
                    ledger_file.display()
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };
    out.manifest.started_unix = Some(started);
    out.manifest.finished_unix = Some(now_unix());
    let ledger: String = out
        .ledger
        .iter()
        .map(|e| serde_json::to_string(e).unwrap_or_default() + "\n")
        .collect();
    fs::write(&ledger_file, ledger)?;
    fs::write(&a.out, records_to_jsonl(&out.records))?;
    out.manifest.check_against(&out.records)?;
    let mut m = ArtifactManifest::new("run", &a.out)?
        .input(&a.corpus)?
        .param("ledger", ledger_file.display())
        .param("concurrency", opts.concurrency);
    m.run = Some(out.manifest.clone());
    m.write_beside(&a.out)?;
    println!(
        "{} records, {} errors, dropout {} -> {}",
        out.records.len(),
        out.ledger.len(),
        cfg.dropout_rate,
        a.out.display()
    );
    Ok(())
}

/// Records grouped by (backend id, dropout rate) in first-seen order.
type RecordGroups = Vec<((String, f64), Vec<ChoiceRecord>)>;

fn group_records(files: &[PathBuf]) -> CmdResult<RecordGroups> {
    let mut groups: RecordGroups = Vec::new();
    for f in files {
        for r in load_records(f)? {
            let key = (r.backend_id.clone(), r.dropout_rate);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => groups.push((key, vec![r])),
            }
        }
    }
    if groups.is_empty() {
        return Err(usage("record files contain no records"));
    }
    Ok(groups)
}

fn histogram(ps: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for p in ps {
        let i = ((p * bins as f64) as usize).min(bins - 1);
        h[i] += 1.0;
    }
    let n = ps.len().max(1) as f64;
    h.iter().map(|c| c / n).collect()
}

pub fn analyze(a: AnalyzeArgs) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let groups = group_records(&a.records)?;
    ensure_dir(&a.out_dir)?;
    let mut inputs = vec![a.corpus.clone()];
    inputs.extend(a.records.iter().cloned());

    let mut summaries = Vec::new();
    let mut diag = String::from("model,dropout,n,mean_top_two_mass,reference_mass\n");
    for ((model, rate), records) in &groups {
        summaries.extend(summarize_records(records, &corpus, model, *rate)?);
        let mass = records.iter().map(|r| r.top_two_mass).sum::<f64>() / records.len() as f64;
        diag.push_str(&format!("{model},{rate},{},{mass},0.984±0.028\n", records.len()));
    }
    if summaries.is_empty() {
        return Err(usage("no dimension-isolated scenarios matched the records"));
    }
    for s in &summaries {
        let ok = (s.total_entropy - s.conditional_entropy - s.mutual_information).abs() <= 1e-12
            && s.mutual_information >= 0.0
            && s.conditional_entropy >= 0.0
            && s.total_entropy <= 1.0;
        if !ok {
            return Err(CmdError {
                code: EXIT_INVARIANT,
                message: format!("summary invariant violated for {} {}", s.model, s.dimension),
            });
        }
    }
    emit(&a.out_dir.join("summaries.csv"), &summaries_to_csv(&summaries), "analyze", &inputs, &[])?;
    emit(&a.out_dir.join("diagnostics.csv"), &diag, "analyze", &inputs, &[])?;

    // distribution shift of p1 against each model's dropout-0 run
    let mut jsd_csv = String::from("model,dropout,jsd_vs_0\n");
    for ((model, rate), records) in &groups {
        if *rate == 0.0 {
            continue;
        }
        if let Some((_, base)) = groups.iter().find(|((m, r), _)| m == model && *r == 0.0) {
            let h = |rs: &[ChoiceRecord]| histogram(&rs.iter().map(|r| r.p1).collect::<Vec<_>>(), 10);
            let v = jsd(&h(base), &h(records))?;
            jsd_csv.push_str(&format!("{model},{rate},{v}\n"));
        }
    }
    emit(&a.out_dir.join("jsd.csv"), &jsd_csv, "analyze", &inputs, &[])?;

    let has_base = summaries.iter().any(|s| s.dropout_rate == 0.0);
    let has_other = summaries.iter().any(|s| s.dropout_rate != 0.0);
    if has_base && has_other {
        let (rows, ledger) = dropout_tests(&summaries)?;
        emit(&a.out_dir.join("tests.csv"), &tests_to_csv(&rows), "analyze", &inputs, &[])?;
        for l in ledger {
            eprintln!("note: {l}");
        }
    }
    println!("{} summaries -> {}", summaries.len(), a.out_dir.display());
    Ok(())
}

fn file_stem(model: &str, rate: f64) -> String {
    let clean: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("amce_{clean}_{rate}")
}

pub fn align(a: AlignArgs) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let human_text = read_text(&a.human)?;
    let human = AmceVector::from_json(&human_text)
        .map_err(|e| usage(format!("{}: {e}", a.human.display())))?;
    let groups = group_records(&a.records)?;
    ensure_dir(&a.out_dir)?;
    let cluster = match a.cluster_by {
        ClusterArg::Scenario => ClusterBy::Scenario,
        ClusterArg::Run => ClusterBy::Run,
    };
    let mut inputs = vec![a.corpus.clone(), a.human.clone()];
    inputs.extend(a.records.iter().cloned());

    let mut vectors: BTreeMap<(String, i64), AmceVector> = BTreeMap::new();
    let mut notes = Vec::new();
    for ((model, rate), records) in &groups {
        let (v, design) = estimate_amce(records, &corpus, cluster, model, Some(*rate)).map_err(|e| match e {
            Error::SingleCluster(_) => usage(format!("{e}; use --cluster-by scenario")),
            other => other.into(),
        })?;
        if !design.ties.is_empty() || !design.unmatched.is_empty() {
            notes.push(format!(
                "{model} @ {rate}: {} ties excluded, {} records without scenario",
                design.ties.len(),
                design.unmatched.len()
            ));
        }
        let path = a.out_dir.join(format!("{}.json", file_stem(model, *rate)));
        emit(
            &path,
            &(serde_json::to_string_pretty(&v).map_err(|e| usage(e.to_string()))? + "\n"),
            "align",
            &inputs,
            &[("coding", alignment::CODING_VERSION.into())],
        )?;
        vectors.insert((model.clone(), (rate * 1e6).round() as i64), v);
    }
    let mut scores: Vec<AlignmentScore> = Vec::new();
    for ((model, rate), v) in &vectors {
        let base = if *rate == 0 {
            None
        } else {
            match vectors.get(&(model.clone(), 0)) {
                Some(b) => Some(l2_score(b, &human, None)?),
                None => {
                    notes.push(format!("{model}: no dropout-0 run, delta omitted"));
                    None
                }
            }
        };
        scores.push(l2_score(v, &human, base.as_ref())?);
    }
    emit(&a.out_dir.join("scores.csv"), &scores_to_csv(&scores), "align", &inputs, &[])?;
    let table = alignment_table(&scores)?;
    emit(&a.out_dir.join("table1.csv"), &table.to_csv(), "align", &inputs, &[])?;
    let notes_text: String = notes.iter().map(|n| format!("{n}\n")).collect();
    emit(&a.out_dir.join("align_ledger.txt"), &notes_text, "align", &inputs, &[])?;
    println!("{} AMCE vectors -> {}", vectors.len(), a.out_dir.display());
    Ok(())
}

pub fn report(a: ReportArgs) -> CmdResult {
    for p in a.amce.iter().chain([&a.scores]).chain(a.summaries.iter()) {
        require(p)?;
    }
    let mut vectors = Vec::new();
    for p in &a.amce {
        let v = AmceVector::from_json(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        let label = match v.dropout_rate {
            Some(r) => format!("{} dropout {r}", v.model_id),
            None => v.model_id.clone(),
        };
        vectors.push((label, v));
    }
    let scores = scores_from_csv(&read_text(&a.scores)?)
        .map_err(|e| usage(format!("{}: {e}", a.scores.display())))?;
    if scores.is_empty() {
        return Err(usage(format!("empty score set: {}", a.scores.display())));
    }
    ensure_dir(&a.out_dir)?;
    let mut inputs: Vec<PathBuf> = a.amce.clone();
    inputs.push(a.scores.clone());
    inputs.extend(a.summaries.iter().cloned());

    let radar = report::radar(&vectors, "AMCE by dimension")?;
    emit_plot(&a.out_dir, "radar", &radar, &inputs)?;
    let table = alignment_table(&scores)?;
    emit(&a.out_dir.join("table1.csv"), &table.to_csv(), "report", &inputs, &[])?;

    if let Some(path) = &a.summaries {
        let summaries = summaries_from_csv(&read_text(path)?)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let traj = trajectory_table(&summaries, &scores);
        for l in &traj.ledger {
            eprintln!("note: {l}");
        }
        emit(&a.out_dir.join("trajectory_table.csv"), &trajectory_to_csv(&traj.rows), "report", &inputs, &[])?;
        let points: Vec<ScatterPoint> = traj
            .rows
            .iter()
            .filter_map(|r| {
                r.d_l2.map(|d| ScatterPoint {
                    label: r.model.clone(),
                    group: format!("dropout {}", r.to_dropout),
                    x: r.d_mi,
                    y: d,
                })
            })
            .collect();
        if points.is_empty() {
            eprintln!("note: no model has both uncertainty summaries and alignment scores; scatter skipped");
        } else {
            let sc = report::scatter(&points, "Change in MI vs change in L2", "delta MI", "delta L2")?;
            emit_plot(&a.out_dir, "scatter", &sc, &inputs)?;
            let tr = report::trajectories(&traj.rows, "Dropout trajectories")?;
            emit_plot(&a.out_dir, "trajectory", &tr, &inputs)?;
        }
    }
    println!("report -> {}", a.out_dir.display());
    Ok(())
}
