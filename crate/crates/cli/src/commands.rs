use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use brainmap::augment::{augment_study, AugCache, AugmentOptions, HttpChatClient, LlmClient, MockClient};
use brainmap::corpus::{
    ingest_jsonl, read_index, split_corpus, write_index, Corpus, Split, SplitAssignment, SplitRatios,
    StudyRecord, TfIdfIndex,
};
use brainmap::eval::{evaluate_model, ChatSetup, EvalConfig, EvalSample, MetricsReport};
use brainmap::netgen::{
    gradient_check, train, AdamWConfig, Arch, Checkpoint, EncoderConfig, EncoderKind, ExternalLatents,
    GradCheckConfig, Model, Precision, TrainConfig, TrainExample, LATENT_DIM,
};
use brainmap::synthetic::{synthetic_corpus, SynthConfig};
use brainmap::t2s::{refine_query, T2sConfig};
use brainmap::volgrid::{load_native, load_nifti, save_native, save_nifti, synthesize_target, BrainVolume, GridSpec};

use crate::render::render_slices;
use crate::{
    AugmentArgs, ClientArgs, ClientKind, Command, EncoderArg, EvaluateArgs, GradcheckArgs, IngestArgs,
    PrecisionArg, PredictArgs, QueryArgs, RenderArgs, SynthCorpusArgs, SynthTargetsArgs, TrainArgs,
    VolumeFormat,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::SynthCorpus(a) => synth_corpus(a),
        Command::SynthTargets(a) => synth_targets(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Query(a) => query(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Render(a) => render(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let (corpus, report) = ingest_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))?;
    for d in &report.rejected {
        eprintln!("warning: {}: {d}", path.display());
    }
    Ok(corpus)
}

fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    corpus.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_splits(path: &Path) -> Result<SplitAssignment> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing split file {}", path.display()))
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("invalid --ratios {s:?}"))?;
    ensure!(v.len() == 3, "--ratios needs three values, got {}", v.len());
    Ok(SplitRatios { train: v[0], val: v[1], test: v[2] })
}

fn select<'a>(corpus: &'a Corpus, splits: Option<&'a SplitAssignment>, split: Split) -> Vec<&'a StudyRecord> {
    match splits {
        Some(s) => corpus.subset(s, split),
        None => corpus.records().iter().collect(),
    }
}

fn build_index(records: &[&StudyRecord]) -> Result<TfIdfIndex> {
    Ok(TfIdfIndex::build(records.iter().map(|r| (r.id.as_str(), r.title.as_str())))?)
}

fn load_index(path: &Path) -> Result<TfIdfIndex> {
    let f = File::open(path).with_context(|| format!("opening index {}", path.display()))?;
    Ok(read_index(std::io::BufReader::new(f))?)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (corpus, report) = ingest_jsonl(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    for d in &report.rejected {
        eprintln!("rejected {}: {d}", a.input.display());
    }
    for id in &report.without_peaks {
        eprintln!("warning: study {id:?} has no peak coordinates");
    }
    write_corpus(&corpus, &a.output)?;
    println!(
        "records {} rejected {} without-peaks {}",
        corpus.len(),
        report.rejected.len(),
        report.without_peaks.len()
    );
    let splits = match &a.splits {
        Some(path) => {
            let s = split_corpus(&corpus, parse_ratios(&a.ratios)?, a.seed)?;
            write_json(&s, path)?;
            let [tr, va, te] = s.counts();
            println!("split train {tr} val {va} test {te}");
            Some(s)
        }
        None => None,
    };
    if let Some(path) = &a.index {
        let docs = select(&corpus, splits.as_ref(), Split::Train);
        ensure!(!docs.is_empty(), "no documents to index");
        let index = build_index(&docs)?;
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        write_index(&index, &mut w)?;
        w.flush()?;
        println!("index documents {} terms {}", index.len(), index.vocabulary_size());
    }
    Ok(())
}

fn synth_corpus(a: SynthCorpusArgs) -> Result<()> {
    ensure!(a.clusters >= 1, "--clusters must be at least 1");
    let corpus = synthetic_corpus(&SynthConfig {
        studies: a.studies,
        clusters: a.clusters,
        seed: a.seed,
        ..Default::default()
    });
    write_corpus(&corpus, &a.output)?;
    println!("records {}", corpus.len());
    Ok(())
}

/// Study ids mapped to file names: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn target_stem(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    if s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

fn save_volume(v: &BrainVolume, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "nii") {
        save_nifti(v, path)?;
    } else {
        save_native(v, path)?;
    }
    Ok(())
}

fn load_volume(path: &Path) -> Result<BrainVolume> {
    let v = if path.extension().is_some_and(|e| e == "nii") {
        load_nifti(path)
    } else {
        load_native(path)
    };
    v.with_context(|| format!("reading volume {}", path.display()))
}

fn synth_targets(a: SynthTargetsArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let grid = GridSpec::default();
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let ext = match a.format {
        VolumeFormat::Native => "vol",
        VolumeFormat::Nifti => "nii",
    };
    let mut stems = HashSet::new();
    for r in corpus.records() {
        let stem = target_stem(&r.id);
        ensure!(stems.insert(stem.clone()), "study ids collide on file name {stem:?}");
        if !r.has_peaks() {
            eprintln!("warning: study {:?} has no peaks; writing an all-zero target", r.id);
        }
        let v = synthesize_target(&grid, &r.coordinates, a.fwhm)?;
        save_volume(&v, &a.out_dir.join(format!("{stem}.{ext}")))?;
    }
    println!("targets {} fwhm {} dir {}", corpus.len(), a.fwhm, a.out_dir.display());
    Ok(())
}

fn make_client(c: &ClientArgs) -> Result<Box<dyn LlmClient>> {
    Ok(match c.client {
        ClientKind::Mock => Box::new(MockClient::new()),
        ClientKind::Http => Box::new(
            HttpChatClient::from_env(c.base_url.clone(), c.model.clone()).context("configuring the http client")?,
        ),
    })
}

fn augment(a: AugmentArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let client = make_client(&a.client)?;
    let cache = match &a.cache {
        Some(p) => AugCache::open(p).with_context(|| format!("opening cache {}", p.display()))?,
        None => AugCache::in_memory(),
    };
    let opts = AugmentOptions {
        retries: a.client.retries,
        max_tokens: a.max_tokens,
        temperature: a.temperature,
        seed: Some(a.seed),
    };
    let mut records = Vec::with_capacity(corpus.len());
    let mut done = 0;
    for r in corpus.records() {
        let mut r = r.clone();
        if r.title.trim().is_empty() {
            eprintln!("warning: study {:?} has an empty title; not augmented", r.id);
        } else {
            let aug = augment_study(client.as_ref(), &cache, &r, &opts)
                .with_context(|| format!("augmenting study {:?}", r.id))?;
            r.augmented_variants = Some(aug.variants);
            done += 1;
        }
        records.push(r);
    }
    write_corpus(&Corpus::from_records(records)?, &a.output)?;
    println!("augmented {done} of {} cache entries {}", corpus.len(), cache.len());
    Ok(())
}

fn load_targets(records: &[&StudyRecord], dir: Option<&Path>, fwhm: f64, grid: &GridSpec) -> Result<Vec<TrainExample>> {
    records
        .iter()
        .map(|r| match dir {
            None => Ok(TrainExample::from_record(r, grid, fwhm)?),
            Some(d) => {
                let stem = target_stem(&r.id);
                let native = d.join(format!("{stem}.vol"));
                let path = if native.exists() { native } else { d.join(format!("{stem}.nii")) };
                let v = load_volume(&path)?;
                ensure!(v.dims() == grid.dims, "target {} has dims {:?}, expected {:?}", path.display(), v.dims(), grid.dims);
                Ok(TrainExample {
                    id: r.id.clone(),
                    title: r.title.clone(),
                    variants: r.augmented_variants.clone(),
                    target: v.into_data(),
                })
            }
        })
        .collect()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let splits = a.splits.as_deref().map(load_splits).transpose()?;
    let records = select(&corpus, splits.as_ref(), Split::Train);
    ensure!(!records.is_empty(), "no training records");
    let grid = GridSpec::default();
    let examples = load_targets(&records, a.targets.as_deref(), a.fwhm, &grid)?;
    let kind = match a.encoder {
        EncoderArg::BaselineHashing => EncoderKind::BaselineHashing,
        EncoderArg::ExternalVectors => EncoderKind::ExternalVectors,
    };
    let latents = match (kind, &a.latents) {
        (EncoderKind::ExternalVectors, None) => bail!("--encoder external-vectors needs --latents"),
        (_, Some(p)) => Some(ExternalLatents::load(p, LATENT_DIM)?),
        _ => None,
    };
    let augmented = !a.no_aug && records.iter().any(|r| r.augmented_variants.is_some());
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        optimizer: AdamWConfig {
            lr_encoder: a.lr_encoder,
            lr_generator: a.lr_generator,
            weight_decay: a.weight_decay,
            ..Default::default()
        },
        augmented,
    };
    let buckets = if kind == EncoderKind::ExternalVectors { 0 } else { a.buckets };
    let model = Model::<f32>::init(Arch::default(), EncoderConfig { kind, buckets }, a.seed)?;
    eprintln!(
        "training on {} studies, {} steps per epoch, {} parameters{}",
        examples.len(),
        cfg.steps_per_epoch(examples.len()),
        model.parameter_count(),
        if augmented { ", augmented" } else { "" }
    );
    let out = train(model, &cfg, &examples, latents.as_ref(), |e, loss| {
        eprintln!("epoch {} loss {loss:.6e}", e + 1);
    })?;
    let mut ck = Checkpoint::new(grid, out.model)?;
    ck.optimizer = Some(out.optimizer);
    ck.train_config = Some(cfg);
    ck.epoch_losses = out.epoch_losses;
    ck.save(&a.checkpoint)?;
    if let Some(p) = &a.loss_log {
        write_json(&ck.epoch_losses, p)?;
    }
    println!("checkpoint {}", a.checkpoint.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn predict(a: PredictArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let v = match (&a.latents, &a.id) {
        (Some(p), Some(id)) => {
            let l = ExternalLatents::load(p, ck.model.arch.latent_dim)?;
            let z = l.get(id).with_context(|| format!("no latent for id {id:?}"))?;
            ck.predict_latent(z)?
        }
        _ => {
            ensure!(
                ck.model.encoder.kind == EncoderKind::BaselineHashing,
                "this checkpoint takes external latents; pass --latents and --id"
            );
            ck.predict_text(a.text.as_deref().unwrap_or_default())?
        }
    };
    save_volume(&v, &a.output)?;
    println!("{}", a.output.display());
    Ok(())
}

fn t2s_config(retrieve_k: usize, iterations: usize, keywords: usize, retries: u32) -> T2sConfig {
    T2sConfig {
        retrieve_k,
        iterations,
        keyword_count: keywords,
        retries,
        ..Default::default()
    }
}

fn query(a: QueryArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let text = if a.t2s {
        let index = load_index(a.index.as_deref().context("--t2s needs --index")?)?;
        let client = make_client(&a.client)?;
        let cfg = t2s_config(a.retrieve_k, a.iterations, a.keywords, a.client.retries);
        let q = refine_query(&index, &cfg, client.as_ref(), &a.text)?;
        println!("query: {}", q.original);
        println!("keywords: {}", q.keywords.join(", "));
        println!("retrieved: {}", q.retrieved.join(", "));
        for it in &q.history {
            println!("--- iteration {} ---", it.iteration);
            println!("{}", it.prompt);
            println!("candidate: {}", it.candidate);
            println!("score: {:.6} ({:?})", it.score, it.classification);
        }
        let best = q.best();
        println!("semantic query: {} (iteration {}, score {:.6})", best.candidate, best.iteration, best.score);
        best.candidate.clone()
    } else {
        a.text.clone()
    };
    let v = ck.predict_text(&text)?;
    save_volume(&v, &a.output)?;
    println!("{}", a.output.display());
    Ok(())
}

pub fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            let pct: f64 = p.trim().parse().with_context(|| format!("invalid retention percentage {p:?}"))?;
            ensure!(pct > 0.0 && pct <= 100.0, "retention percentage {pct} is outside (0, 100]");
            Ok(pct / 100.0)
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let fractions = parse_fractions(&a.fractions)?;
    let split: Split = a.split.parse().map_err(anyhow::Error::msg)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    ensure!(
        ck.model.encoder.kind == EncoderKind::BaselineHashing,
        "evaluation needs a text encoder checkpoint"
    );
    let corpus = load_corpus(&a.corpus)?;
    let splits = a.splits.as_deref().map(load_splits).transpose()?;
    let records = select(&corpus, splits.as_ref(), split);
    ensure!(!records.is_empty(), "evaluation split {:?} is empty", a.split);
    let samples = records
        .iter()
        .map(|r| EvalSample::from_record(r, &ck.grid, a.fwhm))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = EvalConfig {
        fractions,
        mask_rate: a.mask_rate,
        seed: a.seed,
        aug: ck.train_config.as_ref().is_some_and(|c| c.augmented),
    };
    let mut conditions = vec![evaluate_model(&ck, &samples, &cfg, None)?];
    if a.chat && !a.no_chat {
        let index = match &a.index {
            Some(p) => load_index(p)?,
            None => build_index(&select(&corpus, splits.as_ref(), Split::Train))?,
        };
        let client = make_client(&a.client)?;
        let chat = ChatSetup {
            index: &index,
            config: t2s_config(5, 3, 8, a.client.retries),
            client: client.as_ref(),
        };
        let report = evaluate_model(&ck, &samples, &cfg, Some(&chat))?;
        if report.t2s_fallbacks > 0 {
            eprintln!("warning: {} queries had no retrieval hit and were used unrefined", report.t2s_fallbacks);
        }
        conditions.push(report);
    }
    let report = MetricsReport::new(conditions);
    if let Some(p) = &a.output {
        std::fs::write(p, report.to_json() + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    match &a.table {
        Some(p) => std::fs::write(p, report.to_text()).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let v = load_volume(&a.volume)?;
    let files: Vec<PathBuf> = render_slices(&v, a.axis, &a.out_dir)?;
    println!("slices {} dir {}", files.len(), a.out_dir.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let precisions: &[Precision] = match a.precision {
        PrecisionArg::F64 => &[Precision::F64],
        PrecisionArg::F32 => &[Precision::F32],
        PrecisionArg::Both => &[Precision::F64, Precision::F32],
    };
    let mut failed = Vec::new();
    for &p in precisions {
        let cfg = GradCheckConfig {
            samples: a.samples,
            seed: a.seed,
            precision: p,
            ..Default::default()
        };
        let r = gradient_check(&cfg)?;
        let tol = a.tolerance.unwrap_or(match p {
            Precision::F64 => 1e-6,
            Precision::F32 => 1e-3,
        });
        let name = match p {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        };
        println!(
            "{name}: max relative error {:.3e} over {} parameters ({} skipped at rectifier kinks, {} total), tolerance {tol:.0e}",
            r.max_rel_error, r.checked, r.skipped_kinks, r.parameters
        );
        if !(r.max_rel_error < tol) {
            failed.push(name);
        }
    }
    ensure!(failed.is_empty(), "gradient check above tolerance for {}", failed.join(", "));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_file_safe() {
        assert_eq!(target_stem("syn-00001"), "syn-00001");
        assert_eq!(target_stem("a/b c"), "a_b_c");
        assert_eq!(target_stem(".."), "_..");
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!(parse_fractions("100, 50,10").unwrap(), vec![1.0, 0.5, 0.1]);
        assert!(parse_fractions("0").is_err());
        assert!(parse_fractions("120").is_err());
        assert!(parse_fractions("x").is_err());
    }

    #[test]
    fn ratio_parsing() {
        let r = parse_ratios("0.6,0.2,0.2").unwrap();
        assert_eq!((r.train, r.val, r.test), (0.6, 0.2, 0.2));
        assert!(parse_ratios("0.5,0.5").is_err());
    }
}
