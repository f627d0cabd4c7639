use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use causeway::corpus::{
    compute_stats, load_corpus, split_corpus, AnnotatedSentence, CorpusFormat, CorpusStats, Span,
    Splits,
};
use causeway::harness::{
    ablate, build_model, build_model_with_plan, derive_seed, evaluate, train, truncate_sentence,
    truncate_tokens, write_convergence, AblationTable, EvalReport, Experiment,
};
use causeway::knowledge::{mine, FilterInitPlan, PoolSummary};
use causeway::model::{Checkpoint, PretrainedEmbeddings, Tagger};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, CliError, Command};

pub const SCHEMA_VERSION: u32 = 1;

const STAGES: [&str; 6] = [
    "model",
    "mining",
    "embedding",
    "shuffle",
    "dropout",
    "split",
];

#[derive(Serialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, body: T) -> Result<(), CliError> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(causeway::Error::from)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| {
        CliError::Core(causeway::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn stage_seeds(seed: u64) -> BTreeMap<&'static str, u64> {
    STAGES.iter().map(|&s| (s, derive_seed(seed, s))).collect()
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.common.seed {
            cfg.seed = Some(seed);
        }
        if let Some(format) = cli.common.format {
            cfg.data.format = format;
        }
        if let Some(out) = &cli.common.out {
            cfg.out = Some(out.clone());
        }
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { cfg, out })
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| {
            CliError::Usage(format!(
                "cannot create output directory {}: {e}",
                self.out.display()
            ))
        })?;
        Ok(&self.out)
    }

    fn format(&self) -> CorpusFormat {
        self.cfg.data.format
    }

    fn load(&self, path: &Path) -> Result<Vec<AnnotatedSentence>, CliError> {
        Ok(load_corpus(path, self.format())?)
    }

    fn splits(&self) -> Result<Splits, CliError> {
        let d = &self.cfg.data;
        if let Some(corpus) = &d.corpus {
            let corpus = self.load(corpus)?;
            let [a, b, c] = d.split;
            let seed = derive_seed(self.cfg.top_seed(), "split");
            Ok(split_corpus(&corpus, (a, b, c), seed)?)
        } else {
            let part = |p: &Option<PathBuf>| self.load(p.as_ref().expect("validated"));
            Ok(Splits {
                train: part(&d.train)?,
                dev: part(&d.dev)?,
                test: part(&d.test)?,
            })
        }
    }

    fn pretrained(&self) -> Result<Option<PretrainedEmbeddings>, CliError> {
        match &self.cfg.data.pretrained {
            Some(p) if self.cfg.train.use_pretrained_encoder => {
                Ok(Some(PretrainedEmbeddings::load(p)?))
            }
            _ => Ok(None),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::new(&cli)?;
    match cli.command {
        Command::Stats { corpus } => stats(&ctx, corpus),
        Command::Mine {
            corpus,
            windows,
            fraction,
            b,
            k,
            rho,
        } => {
            let mut ctx = ctx;
            let c = &mut ctx.cfg;
            if let Some(w) = windows {
                c.model.windows = w;
            }
            if let Some(f) = fraction {
                c.mining.fraction = f;
            }
            if let Some(b) = b {
                c.mining.smoothing = b;
            }
            if let Some(k) = k {
                c.mining.clusters = k;
            }
            if let Some(r) = rho {
                c.model.infusion = r;
            }
            mine_cmd(&ctx, corpus)
        }
        Command::Train => train_cmd(&ctx),
        Command::Eval { checkpoint, corpus } => eval_cmd(&ctx, &checkpoint, corpus),
        Command::Extract { checkpoint, input } => extract_cmd(&ctx, &checkpoint, &input),
        Command::Ablate { seeds } => {
            let mut ctx = ctx;
            if let Some(s) = seeds {
                ctx.cfg.ablation.seeds = s;
            }
            ablate_cmd(&ctx)
        }
    }
}

fn require(
    path: Option<PathBuf>,
    fallback: &[&Option<PathBuf>],
    what: &str,
) -> Result<PathBuf, CliError> {
    path.or_else(|| fallback.iter().find_map(|p| (*p).clone()))
        .ok_or_else(|| CliError::Usage(format!("no {what} given")))
}

fn existing(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("{}: no such file", path.display())))
    }
}

#[derive(Serialize)]
struct StatsDoc<'a> {
    corpus: String,
    #[serde(flatten)]
    stats: &'a CorpusStats,
}

fn stats(ctx: &Context, corpus: Option<PathBuf>) -> Result<(), CliError> {
    let d = &ctx.cfg.data;
    let path = existing(require(corpus, &[&d.corpus, &d.train], "corpus")?)?;
    let stats = compute_stats(&ctx.load(&path)?)?;
    let doc = StatsDoc {
        corpus: path.display().to_string(),
        stats: &stats,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&doc).map_err(causeway::Error::from)?
    );
    write_json(&ctx.out_dir()?.join("stats.json"), doc)
}

#[derive(Serialize)]
struct MiningDoc<'a> {
    seed: u64,
    stage_seeds: BTreeMap<&'static str, u64>,
    plan: String,
    plan_hash: String,
    infused_filters: usize,
    pools: &'a [PoolSummary],
}

fn mine_cmd(ctx: &Context, corpus: Option<PathBuf>) -> Result<(), CliError> {
    ctx.cfg.validate(corpus.is_none())?;
    let corpus = match corpus {
        Some(p) => ctx.load(&existing(p)?)?,
        None => ctx.splits()?.train,
    };
    let exp = ctx.cfg.experiment();
    let mining_cfg = exp.effective_mining();
    // The encoder is the one `train` builds from the same seed and data.
    let mut bare = exp.clone();
    bare.train.use_infusion = false;
    let pretrained = ctx.pretrained()?;
    let built = build_model(&bare, &corpus, pretrained.as_ref())?;
    let max_len = built.tagger.config.max_len;
    let truncated: Vec<AnnotatedSentence> = corpus
        .iter()
        .map(|s| truncate_sentence(s, max_len))
        .collect();
    let output = mine(&truncated, &built.tagger.encoder_view(), &mining_cfg)?;
    for p in &output.pools {
        println!(
            "window {} {}: {} distinct, {} selected, {} clusters",
            p.window, p.role, p.distinct_ngrams, p.selected, p.clusters
        );
    }
    let out = ctx.out_dir()?;
    let plan_path = out.join("plan.json");
    output.plan.save(&plan_path)?;
    println!(
        "{} infused filters -> {}",
        output.plan.infused_total(),
        plan_path.display()
    );
    write_json(
        &out.join("mining.json"),
        MiningDoc {
            seed: exp.train.seed,
            stage_seeds: stage_seeds(exp.train.seed),
            plan: plan_path.display().to_string(),
            plan_hash: output.plan.hash(),
            infused_filters: output.plan.infused_total(),
            pools: &output.pools,
        },
    )
}

fn check_plan(plan: &FilterInitPlan, exp: &Experiment) -> Result<(), CliError> {
    let m = exp.effective_model();
    let h = &plan.header;
    let mut problems = Vec::new();
    if h.embed_dim != m.embed_dim {
        problems.push(format!(
            "plan embed_dim {} vs model {}",
            h.embed_dim, m.embed_dim
        ));
    }
    if h.filters != m.filters {
        problems.push(format!("plan filters {} vs model {}", h.filters, m.filters));
    }
    if h.windows != m.windows {
        problems.push(format!(
            "plan windows {:?} vs model {:?}",
            h.windows, m.windows
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Mismatch(problems.join("; ")))
    }
}

#[derive(Serialize)]
struct TrainDoc {
    seed: u64,
    stage_seeds: BTreeMap<&'static str, u64>,
    checkpoint: String,
    convergence: String,
    plan_hash: Option<String>,
    infused_filters: usize,
    best_epoch: Option<usize>,
    best_dev: Option<EvalReport>,
    test: EvalReport,
}

fn train_cmd(ctx: &Context) -> Result<(), CliError> {
    ctx.cfg.validate(true)?;
    let exp = ctx.cfg.experiment();
    let splits = ctx.splits()?;
    let pretrained = ctx.pretrained()?;
    let built = match &ctx.cfg.data.plan {
        Some(p) => {
            let plan = FilterInitPlan::load(p)?;
            check_plan(&plan, &exp)?;
            build_model_with_plan(&exp, &splits.train, pretrained.as_ref(), &plan)?
        }
        None => build_model(&exp, &splits.train, pretrained.as_ref())?,
    };
    let infused = built.tagger.frozen_filters.len().max(
        built
            .mining
            .as_ref()
            .map(|m| m.plan.infused_total())
            .unwrap_or(0),
    );
    let outcome = train(&built.tagger, &splits.train, &splits.dev, &exp.train)?;
    let test = evaluate(&outcome.best, &splits.test)?;

    let out = ctx.out_dir()?;
    let ckpt_path = out.join("checkpoint.json");
    Checkpoint::new(outcome.best.clone(), outcome.best_epoch).save(&ckpt_path)?;
    let csv_path = out.join("convergence.csv");
    let mut csv = Vec::new();
    write_convergence(&mut csv, &outcome.history).expect("writing to memory");
    write_file(&csv_path, &csv)?;
    let doc = TrainDoc {
        seed: exp.train.seed,
        stage_seeds: stage_seeds(exp.train.seed),
        checkpoint: ckpt_path.display().to_string(),
        convergence: csv_path.display().to_string(),
        plan_hash: outcome.best.plan_hash.clone(),
        infused_filters: infused,
        best_epoch: outcome.best_epoch,
        best_dev: outcome.best_dev().cloned(),
        test,
    };
    println!(
        "best epoch {:?}: dev F1 {:.4}, test F1 {:.4}",
        doc.best_epoch,
        doc.best_dev.as_ref().map(|r| r.f1).unwrap_or(f64::NAN),
        doc.test.f1
    );
    write_json(&out.join("report.json"), doc)
}

fn load_tagger(path: &Path) -> Result<Tagger, CliError> {
    let path = existing(path.to_path_buf())?;
    Ok(Checkpoint::load(path)?.tagger)
}

#[derive(Serialize)]
struct EvalDoc {
    checkpoint: String,
    corpus: String,
    #[serde(flatten)]
    report: EvalReport,
}

fn eval_cmd(ctx: &Context, checkpoint: &Path, corpus: Option<PathBuf>) -> Result<(), CliError> {
    let path = existing(require(corpus, &[&ctx.cfg.data.test], "evaluation corpus")?)?;
    let tagger = load_tagger(checkpoint)?;
    let report = evaluate(&tagger, &ctx.load(&path)?)?;
    println!(
        "P {:.4} R {:.4} F1 {:.4} (cause F1 {:.4}, effect F1 {:.4}, {} sentences)",
        report.precision,
        report.recall,
        report.f1,
        report.cause.f1,
        report.effect.f1,
        report.sentences
    );
    write_json(
        &ctx.out_dir()?.join("eval.json"),
        EvalDoc {
            checkpoint: checkpoint.display().to_string(),
            corpus: path.display().to_string(),
            report,
        },
    )
}

#[derive(Serialize)]
struct SpanOut {
    start: usize,
    end: usize,
    text: String,
}

#[derive(Serialize)]
struct ExtractionOut {
    schema_version: u32,
    line: usize,
    tokens: Vec<String>,
    cause: Vec<SpanOut>,
    effect: Vec<SpanOut>,
    tags: Vec<&'static str>,
    score: f64,
}

fn extract_cmd(ctx: &Context, checkpoint: &Path, input: &Path) -> Result<(), CliError> {
    let input = existing(input.to_path_buf())?;
    let tagger = load_tagger(checkpoint)?;
    let file =
        fs::File::open(&input).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let out_path = ctx.out_dir()?.join("extractions.jsonl");
    let mut buf = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
        let tokens: Vec<String> = line.split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            continue;
        }
        let id = format!("line {}", i + 1);
        let tokens = truncate_tokens(&tokens, tagger.config.max_len, &id).to_vec();
        let x = tagger.extract(&tokens)?;
        let spans = |spans: &[Span]| -> Vec<SpanOut> {
            spans
                .iter()
                .map(|s| SpanOut {
                    start: s.start,
                    end: s.end,
                    text: tokens[s.start..s.end].join(" "),
                })
                .collect()
        };
        let record = ExtractionOut {
            schema_version: SCHEMA_VERSION,
            line: i + 1,
            cause: spans(&x.cause_spans),
            effect: spans(&x.effect_spans),
            tags: x.tags.tags().iter().map(|t| t.as_str()).collect(),
            score: x.score,
            tokens,
        };
        serde_json::to_writer(&mut buf, &record).map_err(causeway::Error::from)?;
        buf.write_all(b"\n").expect("writing to memory");
    }
    write_file(&out_path, &buf)
}

#[derive(Serialize)]
struct AblationDoc<'a> {
    seed: u64,
    seeds: &'a [u64],
    #[serde(flatten)]
    table: &'a AblationTable,
}

fn ablate_cmd(ctx: &Context) -> Result<(), CliError> {
    ctx.cfg.validate(true)?;
    let mut exp = ctx.cfg.experiment();
    exp.train.use_pretrained_encoder = true;
    exp.train.use_infusion = true;
    exp.train.use_attention = true;
    if ctx.cfg.data.pretrained.is_none() {
        return Err(CliError::Config(vec![
            "ablation needs data.pretrained for the full model".into(),
        ]));
    }
    let splits = ctx.splits()?;
    let pretrained = PretrainedEmbeddings::load(ctx.cfg.data.pretrained.as_ref().unwrap())?;
    let seeds = &ctx.cfg.ablation.seeds;
    let table = ablate(&exp, &splits, seeds, Some(&pretrained))?;
    for s in &table.summary {
        match s.mean_test_f1 {
            Some(f1) => println!(
                "{:<24} mean test F1 {f1:.4} over {} run(s)",
                s.variant.name(),
                s.runs
            ),
            None => println!("{:<24} no successful runs", s.variant.name()),
        }
    }
    write_json(
        &ctx.out_dir()?.join("ablation.json"),
        AblationDoc {
            seed: exp.train.seed,
            seeds,
            table: &table,
        },
    )?;
    if table.partial {
        log::warn!("some ablation runs failed; see ablation.json");
    }
    Ok(())
}
