use std::collections::HashSet;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;

use dualground::backend::{
    Backend, ErrorModel, HttpBackend, MockBackend, PromptTemplateSet, RetryPolicy,
};
use dualground::chain::{parse_chain, render_chain, Chain, FastChain, Precision, SlowChain};
use dualground::dataset::{
    compute_stats, load_samples, load_scenes, read_training_records, render_stats_table, write_jsonl,
    write_samples, CountStyle, DatasetError, JsonlWriter,
};
use dualground::eval::{
    activation_report, evaluate, sweep_alpha, sweep_csv, EvalConfig, EvalError,
};
use dualground::geometry::NormPoint;
use dualground::scenes::{generate_scenes, SceneGenParams};
use dualground::synthesis::{synthesize_corpus, Sinks, SynthesisConfig, SynthesisError};
use dualground::switching::TieBreak;
use dualground::GroundingSample;

use crate::args::{
    AnnotatorKind, BackendArgs, BackendKind, ChainCommand, Cli, Command, EvalArgs, GenScenesArgs,
    StatsArgs, SweepArgs, SynthesizeArgs, TieBreakArg,
};
use crate::CliError;

pub fn dispatch(cli: Cli, explicit: &HashSet<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Synthesize(a) => synthesize(a, explicit),
        Command::Eval(a) => eval(a, explicit),
        Command::Sweep(a) => sweep(a, explicit),
        Command::Stats(a) => stats(a),
        Command::GenScenes(a) => gen_scenes(a),
        Command::Chain(c) => chain(c),
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Policy(_) | EvalError::NoAlphas => CliError::usage(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

fn load_structured<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn templates(b: &BackendArgs) -> Result<PromptTemplateSet, CliError> {
    b.templates
        .as_deref()
        .map_or_else(|| Ok(PromptTemplateSet::default()), load_structured)
}

fn retry(b: &BackendArgs) -> RetryPolicy {
    RetryPolicy {
        max_retries: b.retries,
        ..RetryPolicy::default()
    }
}

fn timeout(b: &BackendArgs) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(b.timeout_secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CliError::usage(format!("--timeout-secs {} must be positive", b.timeout_secs)))
}

fn endpoint(b: &BackendArgs, explicit: &HashSet<String>) -> String {
    match &b.endpoint {
        Some(e) if explicit.contains("endpoint") => e.clone(),
        configured => HttpBackend::resolve_endpoint(configured.as_deref()),
    }
}

fn mock(b: &BackendArgs, samples_path: &Path) -> Result<MockBackend, CliError> {
    let scenes_path = b.scenes.clone().unwrap_or_else(|| {
        samples_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("scenes.jsonl")
    });
    let scenes = load_scenes(&scenes_path)?;
    let mut model: ErrorModel = match &b.mock_model {
        Some(p) => load_structured(p)?,
        None => ErrorModel::default(),
    };
    if b.no_overthinking {
        model = model.without_overthinking();
    }
    model.validate().map_err(CliError::input)?;
    Ok(MockBackend::new(scenes, model, b.seed))
}

fn http(url: &str, b: &BackendArgs) -> Result<HttpBackend, CliError> {
    HttpBackend::new(url, timeout(b)?, b.parallelism).map_err(|e| CliError::backend(e.to_string()))
}

fn backend(b: &BackendArgs, samples_path: &Path, explicit: &HashSet<String>) -> Result<Box<dyn Backend>, CliError> {
    let backend: Box<dyn Backend> = match b.backend {
        BackendKind::Mock => Box::new(mock(b, samples_path)?),
        BackendKind::Http => Box::new(http(&endpoint(b, explicit), b)?),
    };
    check_health(backend.as_ref())?;
    Ok(backend)
}

fn check_health(b: &dyn Backend) -> Result<(), CliError> {
    b.health()
        .map(|model| log::info!("backend ready: {model}"))
        .map_err(|e| CliError::backend(format!("backend health check failed: {e}")))
}

fn load_corpus(path: &Path) -> Result<Vec<GroundingSample>, CliError> {
    load_samples(path).map_err(Into::into)
}

fn synthesize(a: SynthesizeArgs, explicit: &HashSet<String>) -> Result<(), CliError> {
    let samples = load_corpus(&a.input)?;
    let grounder = backend(&a.backend, &a.input, explicit)?;
    let separate: Option<Box<dyn Backend>> = match a.annotator {
        AnnotatorKind::Same => None,
        AnnotatorKind::Mock => Some(Box::new(mock(&a.backend, &a.input)?)),
        AnnotatorKind::Http => {
            let url = a
                .annotator_endpoint
                .clone()
                .unwrap_or_else(|| endpoint(&a.backend, explicit));
            Some(Box::new(http(&url, &a.backend)?))
        }
    };
    if let Some(b) = &separate {
        check_health(b.as_ref())?;
    }
    let annotator: &dyn Backend = separate.as_deref().unwrap_or(grounder.as_ref());

    let cfg = SynthesisConfig {
        templates: templates(&a.backend)?,
        retry: retry(&a.backend),
        seed: Some(a.backend.seed),
        precision: Precision::new(a.precision).map_err(|e| CliError::usage(e.to_string()))?,
        parallelism: a.backend.parallelism,
        progress: a.progress,
        ..SynthesisConfig::default()
    };
    let mut fast = JsonlWriter::create(&a.out_fast)?;
    let mut slow = JsonlWriter::create(&a.out_slow)?;
    let mut unresolved = JsonlWriter::create(&a.out_unresolved)?;
    let stats = synthesize_corpus(
        &samples,
        grounder.as_ref(),
        annotator,
        &cfg,
        Sinks {
            fast: &mut fast,
            slow: &mut slow,
            unresolved: &mut unresolved,
        },
    )
    .map_err(|e| match e {
        SynthesisError::Backend { .. } => CliError::backend(e.to_string()),
        other => CliError::input(other.to_string()),
    })?;
    fast.finish()?;
    slow.finish()?;
    unresolved.finish()?;

    println!("{stats}");
    print!("{}", render_stats_table(&stats.table, CountStyle::Exact));
    if stats.samples > 0 && stats.attrition.backend_errors == stats.samples {
        return Err(CliError::backend("every sample failed with a backend error"));
    }
    Ok(())
}

fn tie_break(t: TieBreakArg) -> TieBreak {
    match t {
        TieBreakArg::Fast => TieBreak::Fast,
        TieBreakArg::Slow => TieBreak::Slow,
    }
}

fn eval_config(b: &BackendArgs, alpha: f64, tie: TieBreakArg, weighted: bool) -> Result<EvalConfig, CliError> {
    Ok(EvalConfig {
        alpha,
        tie_break: tie_break(tie),
        templates: templates(b)?,
        timeout: timeout(b)?,
        parallelism: b.parallelism,
        retry: retry(b),
        seed: Some(b.seed),
        weighted,
    })
}

fn eval(a: EvalArgs, explicit: &HashSet<String>) -> Result<(), CliError> {
    let samples = load_corpus(&a.dataset)?;
    let backend = backend(&a.backend, &a.dataset, explicit)?;
    let cfg = eval_config(&a.backend, a.alpha, a.tie_break, a.weighted)?;
    let report = evaluate(backend.as_ref(), &samples, &cfg)?;
    let table = report.render_table();
    if let Some(p) = &a.report_json {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::input(e.to_string()))?;
        write_file(p, &(json + "\n"))?;
    }
    if let Some(p) = &a.report_table {
        write_file(p, &table)?;
    }
    print!("{table}");
    if a.activation {
        print!("{}", activation_report(&report).render());
    }
    Ok(())
}

fn sweep(a: SweepArgs, explicit: &HashSet<String>) -> Result<(), CliError> {
    let samples = load_corpus(&a.dataset)?;
    let backend = backend(&a.backend, &a.dataset, explicit)?;
    let cfg = eval_config(&a.backend, 0.6, a.tie_break, a.weighted)?;
    let rows = sweep_alpha(backend.as_ref(), &samples, &a.alphas, &cfg)?;
    let csv = sweep_csv(&rows);
    match &a.csv {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn stats(a: StatsArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for path in &a.dataset {
        for r in read_training_records(path)? {
            records.push(r.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?);
        }
    }
    let stats = compute_stats(&records);
    if a.json {
        let json = serde_json::to_string_pretty(&stats).map_err(|e| CliError::input(e.to_string()))?;
        println!("{json}");
    } else {
        let style = if a.thousands { CountStyle::Thousands } else { CountStyle::Exact };
        print!("{}", render_stats_table(&stats, style));
    }
    Ok(())
}

fn gen_scenes(a: GenScenesArgs) -> Result<(), CliError> {
    let mut params: SceneGenParams = match &a.params {
        Some(p) => load_structured(p)?,
        None => SceneGenParams::default(),
    };
    if let Some(s) = a.seed {
        params.seed = s;
    }
    if let Some(n) = a.n_scenes {
        params.n_scenes = n;
    }
    let (scenes, samples) = generate_scenes(&params).map_err(|e| CliError::input(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::input(format!("{}: {e}", a.out.display())))?;
    let scenes_path: PathBuf = a.out.join("scenes.jsonl");
    let samples_path: PathBuf = a.out.join("samples.jsonl");
    write_jsonl(&scenes, &scenes_path)?;
    write_samples(&samples, &samples_path)?;
    println!(
        "wrote {} scenes to {} and {} samples to {}",
        scenes.len(),
        scenes_path.display(),
        samples.len(),
        samples_path.display()
    );
    Ok(())
}

fn parse_xy(s: &str) -> Result<NormPoint, CliError> {
    let (x, y) = s
        .trim_matches(|c| c == '(' || c == ')')
        .split_once(',')
        .ok_or_else(|| CliError::usage(format!("--point {s:?} is not x,y")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| CliError::usage(format!("--point {s:?}: {e}")))
    };
    NormPoint::new(num(x)?, num(y)?).map_err(|e| CliError::usage(e.to_string()))
}

fn chain(c: ChainCommand) -> Result<(), CliError> {
    match c {
        ChainCommand::Parse { text, json } => {
            let text = if text == "-" {
                let mut buf = String::new();
                io::stdin()
                    .read_to_string(&mut buf)
                    .map_err(|e| CliError::input(e.to_string()))?;
                buf.trim_end_matches(['\n', '\r']).to_string()
            } else {
                text
            };
            let chain = parse_chain(&text).map_err(|e| CliError::input(format!("invalid chain: {e}")))?;
            let p = chain.point();
            let (summary, focus) = match &chain {
                Chain::Fast(_) => (None, None),
                Chain::Slow(s) => (Some(s.summary()), s.focus()),
            };
            if json {
                let v = serde_json::json!({
                    "kind": if chain.is_slow() { "slow" } else { "fast" },
                    "summary": summary,
                    "focus": focus,
                    "point": [p.x(), p.y()],
                });
                println!("{v}");
            } else {
                println!("{}", if chain.is_slow() { "SlowChain" } else { "FastChain" });
                if let Some(s) = summary {
                    println!("  summary: {s}");
                }
                if let Some(f) = focus {
                    println!("  focus: {f}");
                }
                println!("  point: x={} y={}", p.x(), p.y());
            }
            Ok(())
        }
        ChainCommand::Render {
            point,
            summary,
            focus,
            precision,
        } => {
            let point = parse_xy(&point)?;
            let precision = Precision::new(precision).map_err(|e| CliError::usage(e.to_string()))?;
            let chain = match (summary, focus) {
                (None, None) => Chain::Fast(FastChain { point }),
                (Some(s), f) => Chain::Slow(SlowChain::new(s, f, point).map_err(|e| CliError::usage(e.to_string()))?),
                (None, Some(_)) => return Err(CliError::usage("--focus requires --summary")),
            };
            println!("{}", render_chain(&chain, precision));
            Ok(())
        }
    }
}
