use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use textnorm::codec::{encode_source, encode_target, render_symbols, Representation};
use textnorm::corpus::{corpus_to_string, parse_corpus, Sentence, SpokenForm};
use textnorm::neural::{check_seq2seq, AdamConfig, Checkpoint, Dtype, GradCheckOptions, Seq2SeqCheck};
use textnorm::pipeline::{
    evaluate, normalize_sentence, side_by_side, EvalReport, ModelBundle, ModelVerbalizer, ReferenceVerbalizer, RunMode,
    TokenTagger, TokenVerbalizer,
};
use textnorm::single_pass::{self, train_single_pass, SinglePassConfig, SinglePassModel};
use textnorm::synth;
use textnorm::tagger::{self, pretrain_masked_lm, ContextEncoderMode, MlmConfig, PretrainedEncoder};
use textnorm::train::write_log;
use textnorm::two_stage::{self, train_two_stage, TwoStageConfig, TwoStageModel};
use textnorm::verbalizer::{build_lexicon, CoverageLexicon};

use crate::config::{self, RunConfig};
use crate::error::CliError;
use crate::{CliResult, Command, Common, CorpusArgs, ModeArg, RunArgs};

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Validate { corpus, common } => {
            let cfg = load_config(&common)?;
            validate(&cfg, &corpus)
        }
        Command::Encode { corpus, repr, out, common } => {
            let cfg = load_config(&common)?;
            let sentences = read_split(&cfg, &corpus)?;
            let mut text = String::new();
            for s in &sentences {
                text.push_str(&render_symbols(&encode_source(s, repr)));
                text.push('\n');
                text.push_str(&render_symbols(&encode_target(s, repr)));
                text.push('\n');
            }
            emit(out.as_deref(), &text)
        }
        Command::Generate { count, out, common } => {
            let cfg = load_config(&common)?;
            let seed = require_seed(&common, &cfg)?;
            let out = out.or(cfg.paths.out.clone());
            emit(out.as_deref(), &corpus_to_string(&synth::generate(count, seed)))
        }
        Command::Pretrain { corpus, steps, checkpoint, common } => {
            let cfg = load_config(&common)?;
            pretrain(&cfg, &common, &corpus, steps, checkpoint)
        }
        Command::Train { corpus, mode, repr, encoder, pretrained, steps, checkpoint, lexicon, log, common } => {
            let cfg = load_config(&common)?;
            let opts = TrainOptions { mode, repr, encoder, pretrained, steps, checkpoint, lexicon, log };
            train(&cfg, &common, &corpus, opts)
        }
        Command::Predict { corpus, run, out, common } => {
            let cfg = load_config(&common)?;
            let sentences = read_split(&cfg, &corpus)?;
            let model = load_model(&cfg, &run)?;
            let lexicon = load_lexicon(&cfg, &run)?;
            let mut text = String::new();
            with_bundle(&cfg, &run, &model, lexicon.as_ref(), |bundle, mode| {
                for s in &sentences {
                    let r = normalize_sentence(bundle, s, mode)?;
                    text.push_str(&format!("{}\t{}\n", s.id, r.predicted.join(" ")));
                }
                Ok(())
            })?;
            emit(out.as_deref(), &text)
        }
        Command::Evaluate { corpus, run, out, common } => {
            let cfg = load_config(&common)?;
            let sentences = read_split(&cfg, &corpus)?;
            let model = load_model(&cfg, &run)?;
            let lexicon = load_lexicon(&cfg, &run)?;
            let report = with_bundle(&cfg, &run, &model, lexicon.as_ref(), |bundle, mode| {
                Ok(evaluate(bundle, &sentences, mode)?)
            })?;
            if let Some(path) = out.or(cfg.paths.out.clone()) {
                write_file(&path, report.to_jsonl().as_bytes())?;
                info!("wrote report to {}", path.display());
            }
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Report { base, against, out, common } => {
            load_config(&common)?;
            let a = read_report(&base)?;
            let b = read_report(&against)?;
            let diff = side_by_side(&a, &b)?;
            let mut text = String::new();
            text.push_str(&format!("base     {:<28} SER {}\n", a.mode, a.ser()));
            text.push_str(&format!("against  {:<28} SER {}\n", b.mode, b.ser()));
            match a.error_reduction_to(&b) {
                Ok(r) => text.push_str(&format!("error reduction {:.1}%\n", r * 100.0)),
                Err(_) => text.push_str("error reduction n/a (base has no errors)\n"),
            }
            text.push('\n');
            text.push_str(&diff.render("base", "against"));
            emit(out.as_deref(), &text)
        }
        Command::Gradcheck { samples, common } => {
            let cfg = load_config(&common)?;
            let seed = common.seed.or(cfg.seed).unwrap_or(0);
            let opts = GradCheckOptions { samples_per_group: samples, seed, ..GradCheckOptions::default() };
            let report = check_seq2seq(&Seq2SeqCheck::default(), &opts)?;
            for g in &report.groups {
                println!("{:<14} {:>4} coords  max rel err {:.3e}", g.group, g.checked, g.max_rel_error);
            }
            println!(
                "max rel err {:.3e} over {} coordinates (tolerance {:e})",
                report.max_rel_error, report.checked, opts.tolerance
            );
            Ok(())
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    if common.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    if common.threads > 1 {
        info!("--threads {}: running sequentially", common.threads);
    }
    let cfg = match &common.config {
        Some(path) => config::load(path).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    for path in [&cfg.paths.corpus, &cfg.paths.pretrained].into_iter().flatten() {
        if !path.exists() {
            return Err(CliError::Usage(format!("configured path {} does not exist", path.display())));
        }
    }
    Ok(cfg)
}

fn require_seed(common: &Common, cfg: &RunConfig) -> CliResult<u64> {
    common.seed.or(cfg.seed).ok_or_else(|| CliError::Usage("a seed is required (--seed or `seed` in the config)".into()))
}

fn require_path(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or_else(|| configured.clone()).ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn read_corpus(path: &Path) -> CliResult<Vec<Sentence>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_corpus(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_split(cfg: &RunConfig, args: &CorpusArgs) -> CliResult<Vec<Sentence>> {
    let path = require_path(args.corpus.clone(), &cfg.paths.corpus, "--corpus")?;
    let sentences = args.split.select(&read_corpus(&path)?);
    if sentences.is_empty() {
        return Err(CliError::Data(format!("{}: the selected split is empty", path.display())));
    }
    Ok(sentences)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes()).map_err(|e| CliError::Internal(format!("stdout: {e}")))
        }
    }
}

fn validate(cfg: &RunConfig, args: &CorpusArgs) -> CliResult {
    let path = require_path(args.corpus.clone(), &cfg.paths.corpus, "--corpus")?;
    let sentences = args.split.select(&read_corpus(&path)?);
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    let (mut tokens, mut self_copy, mut silent, mut words) = (0, 0, 0, 0);
    let mut notes = Vec::new();
    let mut seen = HashSet::new();
    for s in &sentences {
        if !seen.insert(s.id.as_str()) {
            notes.push(format!("sentence {}: duplicate id", s.id));
        }
        let chars = s.detokenize().0.chars().count();
        if chars > cfg.model.max_len {
            notes.push(format!("sentence {}: {chars} characters exceed max_len {}", s.id, cfg.model.max_len));
        }
        for t in &s.tokens {
            tokens += 1;
            *classes.entry(t.class.label().to_string()).or_insert(0) += 1;
            match &t.spoken {
                SpokenForm::SelfCopy => self_copy += 1,
                SpokenForm::Silent => silent += 1,
                SpokenForm::Words(w) => {
                    words += 1;
                    if w.len() == 1 && w[0] == t.written {
                        notes.push(format!("sentence {}: {:?} spells out its own written form", s.id, t.written));
                    }
                }
            }
        }
    }
    println!("sentences    {}", sentences.len());
    println!("tokens       {tokens}");
    println!("self         {self_copy}");
    println!("silent       {silent}");
    println!("non-trivial  {words}");
    println!("\nclass                count");
    for (class, n) in &classes {
        println!("{class:<20} {n:>5}");
    }
    if !notes.is_empty() {
        println!("\n{} notes", notes.len());
        for n in &notes {
            println!("  {n}");
        }
    }
    Ok(())
}

fn adam(lr: f64) -> AdamConfig {
    AdamConfig { learning_rate: lr, ..AdamConfig::default() }
}

fn pretrain(
    cfg: &RunConfig,
    common: &Common,
    args: &CorpusArgs,
    steps: Option<usize>,
    checkpoint: Option<PathBuf>,
) -> CliResult {
    let seed = require_seed(common, cfg)?;
    let out = require_path(checkpoint, &cfg.paths.pretrained, "--checkpoint")?;
    let sentences = read_split(cfg, args)?;
    let mlm = MlmConfig {
        model: cfg.model.to_model_config(seed).map_err(CliError::Usage)?,
        steps: steps.unwrap_or(cfg.pretrain.steps),
        batch_size: cfg.train.batch_size,
        mask_rate: cfg.pretrain.mask_rate,
        adam: adam(cfg.pretrain.learning_rate),
        clip: cfg.train.clip,
        seed,
    };
    let model = pretrain_masked_lm(&sentences, &mlm)?;
    if let Some(last) = model.log.last() {
        info!("final masked-character loss {:.4}", last.loss);
    }
    save_checkpoint(&out, &model.to_checkpoint())
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> CliResult {
    let bytes = ck.to_bytes(Dtype::F64);
    write_file(path, &bytes)?;
    println!("checkpoint {} sha256 {}", path.display(), textnorm::neural::checkpoint::digest_bytes(&bytes));
    Ok(())
}

struct TrainOptions {
    mode: ModeArg,
    repr: Representation,
    encoder: ContextEncoderMode,
    pretrained: Option<PathBuf>,
    steps: Option<usize>,
    checkpoint: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    log: Option<PathBuf>,
}

fn train(cfg: &RunConfig, common: &Common, args: &CorpusArgs, opts: TrainOptions) -> CliResult {
    let seed = require_seed(common, cfg)?;
    let out = require_path(opts.checkpoint, &cfg.paths.checkpoint, "--checkpoint")?;
    let sentences = read_split(cfg, args)?;
    let model_cfg = cfg.model.to_model_config(seed).map_err(CliError::Usage)?;
    let steps = opts.steps.unwrap_or(cfg.train.steps);
    let log_path = opts.log.or(cfg.paths.log.clone());
    match opts.mode {
        ModeArg::TwoStage => {
            let pretrained = match opts.encoder.needs_pretraining() {
                true => {
                    let path = require_path(opts.pretrained, &cfg.paths.pretrained, "--pretrained")?;
                    Some(PretrainedEncoder::from_checkpoint(Checkpoint::load(&path)?)?)
                }
                false => None,
            };
            let ts = TwoStageConfig {
                model: model_cfg,
                lambda: cfg.train.lambda,
                steps,
                batch_size: cfg.train.batch_size,
                adam: adam(cfg.train.learning_rate),
                clip: cfg.train.clip,
                seed,
                encoder_mode: opts.encoder,
                neighbor_window: cfg.train.neighbor_window,
                schedule: cfg.train.schedule,
            };
            let model = train_two_stage(&sentences, &ts, pretrained.as_ref())?;
            if model.skipped > 0 {
                println!("skipped {} sentences longer than max_len", model.skipped);
            }
            if let Some(path) = log_path {
                let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
                write_log(BufWriter::new(f), &model.log).map_err(|e| CliError::io(&path, e))?;
            }
            if let Some(path) = opts.lexicon.or(cfg.paths.lexicon.clone()) {
                write_file(&path, build_lexicon(&sentences).to_text().as_bytes())?;
            }
            save_checkpoint(&out, &model.to_checkpoint())
        }
        ModeArg::SinglePass => {
            if opts.encoder != ContextEncoderMode::Scratch {
                return Err(CliError::Usage("--encoder applies to the two-stage model only".into()));
            }
            let sp = SinglePassConfig {
                model: model_cfg,
                repr: opts.repr,
                steps,
                batch_size: cfg.train.batch_size,
                adam: adam(cfg.train.learning_rate),
                clip: cfg.train.clip,
                seed,
                schedule: cfg.train.schedule,
            };
            let model = train_single_pass(&sentences, &sp)?;
            if model.skipped > 0 {
                println!("skipped {} sentences longer than max_len", model.skipped);
            }
            if let Some(path) = log_path {
                let mut text = String::new();
                for r in &model.log {
                    text.push_str(&format!("{{\"step\":{},\"loss\":{}}}\n", r.step, r.loss));
                }
                write_file(&path, text.as_bytes())?;
            }
            save_checkpoint(&out, &model.to_checkpoint())
        }
    }
}

enum LoadedModel {
    TwoStage(TwoStageModel),
    SinglePass(SinglePassModel),
}

fn load_model(cfg: &RunConfig, run: &RunArgs) -> CliResult<LoadedModel> {
    let path = require_path(run.checkpoint.clone(), &cfg.paths.checkpoint, "--checkpoint")?;
    let ck = Checkpoint::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let kind = ck.meta.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
    let model = match kind.as_str() {
        two_stage::CHECKPOINT_KIND => LoadedModel::TwoStage(TwoStageModel::from_checkpoint(ck)?),
        single_pass::CHECKPOINT_KIND => LoadedModel::SinglePass(SinglePassModel::from_checkpoint(ck)?),
        tagger::pretrain::CHECKPOINT_KIND => {
            return Err(CliError::Usage(format!("{} holds a pretrained encoder, not a model", path.display())))
        }
        other => return Err(CliError::Data(format!("{}: unknown checkpoint kind {other:?}", path.display()))),
    };
    let family = match model {
        LoadedModel::TwoStage(_) => ModeArg::TwoStage,
        LoadedModel::SinglePass(_) => ModeArg::SinglePass,
    };
    if run.mode.is_some_and(|m| m != family) {
        return Err(CliError::Usage(format!("{} holds a {kind} model", path.display())));
    }
    Ok(model)
}

fn load_lexicon(cfg: &RunConfig, run: &RunArgs) -> CliResult<Option<CoverageLexicon>> {
    match run.lexicon.clone().or(cfg.paths.lexicon.clone()) {
        Some(path) => {
            let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
            Ok(Some(CoverageLexicon::read(BufReader::new(f))?))
        }
        None => Ok(None),
    }
}

fn with_bundle<T>(
    cfg: &RunConfig,
    run: &RunArgs,
    model: &LoadedModel,
    lexicon: Option<&CoverageLexicon>,
    f: impl FnOnce(&ModelBundle<'_>, RunMode) -> CliResult<T>,
) -> CliResult<T> {
    let mut beam = cfg.beam.to_beam();
    if let Some(w) = run.beam {
        beam.width = w;
    }
    if beam.width == 0 {
        return Err(CliError::Usage("beam width must be at least 1".into()));
    }
    match model {
        LoadedModel::TwoStage(m) => {
            if run.golden_tokenized || run.repr.is_some() {
                return Err(CliError::Usage("--golden-tokenized and --repr apply to single-pass models".into()));
            }
            let model_verbalizer = ModelVerbalizer::new(m, beam, lexicon);
            let verbalizer: &dyn TokenVerbalizer =
                if run.oracle_verbalizer { &ReferenceVerbalizer } else { &model_verbalizer };
            let tagger: &dyn TokenTagger = m;
            let bundle = ModelBundle::TwoStage { tagger, verbalizer };
            f(&bundle, RunMode::TwoStage { golden_tags: run.golden_tags })
        }
        LoadedModel::SinglePass(m) => {
            if run.golden_tags || run.oracle_verbalizer || lexicon.is_some() {
                return Err(CliError::Usage(
                    "--golden-tags, --oracle-verbalizer and --lexicon apply to two-stage models".into(),
                ));
            }
            if let Some(r) = run.repr.filter(|r| *r != m.repr()) {
                return Err(CliError::Usage(format!("checkpoint was trained for {}, not {}", m.repr().name(), r.name())));
            }
            let bundle = ModelBundle::SinglePass { model: m, beam };
            f(&bundle, RunMode::SinglePass { repr: m.repr(), golden_tokenized_source: run.golden_tokenized })
        }
    }
}

fn read_report(path: &Path) -> CliResult<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    EvalReport::from_jsonl(&text).map_err(|e| CliError::from(e).with_path(path))
}

impl CliError {
    fn with_path(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{p}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{p}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{p}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{p}: {m}")),
        }
    }
}
