use std::cell::RefCell;
use std::sync::OnceLock;

use proptest::prelude::*;
use textnorm::corpus::{SemioticClass, Sentence, SpokenForm, Split, Token};
use textnorm::neural::{AdamConfig, ModelConfig, NeuralError};
use textnorm::pipeline::{
    evaluate, EvalReport, ModelBundle, ModelVerbalizer, ReferenceTagger, ReferenceVerbalizer, RunMode, TokenTagger,
    TokenVerbalizer,
};
use textnorm::synth::generate;
use textnorm::tagger::{masked_accuracy, pretrain_masked_lm, ContextEncoderMode, MlmConfig, PretrainedEncoder, TagLabel};
use textnorm::two_stage::{train_two_stage, train_two_stage_with, TwoStageConfig, TwoStageModel};
use textnorm::verbalizer::{BeamConfig, Verbalization};

fn tiny_model() -> ModelConfig {
    ModelConfig { d_model: 16, d_ff: 32, n_layers: 1, ..ModelConfig::default() }
}

fn small_two_stage() -> &'static TwoStageModel {
    static MODEL: OnceLock<TwoStageModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = TwoStageConfig { model: tiny_model(), steps: 150, seed: 4, ..TwoStageConfig::default() };
        train_two_stage(&Split::Train.select(&generate(60, 8)), &cfg, None).unwrap()
    })
}

/// Toy corpus split used by the pretraining checks.
fn toy_corpus() -> (Vec<Sentence>, Vec<Sentence>) {
    let corpus = generate(250, 11);
    (Split::Train.select(&corpus), Split::Dev.select(&corpus))
}

fn pretrained() -> &'static PretrainedEncoder {
    static ENCODER: OnceLock<PretrainedEncoder> = OnceLock::new();
    ENCODER.get_or_init(|| pretrain_masked_lm(&toy_corpus().0, &MlmConfig { seed: 1, ..MlmConfig::default() }).unwrap())
}

#[test]
fn pretraining_beats_the_majority_character() {
    let (train, dev) = toy_corpus();
    let acc = masked_accuracy(pretrained(), &dev, &train, 0.15, 5).unwrap();
    assert!(acc.masked > 30);
    assert!(acc.accuracy > acc.majority_baseline, "{acc:?}");
}

/// First multiple of 5 steps with perfect dev tag accuracy.
fn steps_to_perfect_dev_tags(mode: ContextEncoderMode) -> usize {
    let (train, dev) = toy_corpus();
    let cfg = TwoStageConfig { seed: 2, steps: 300, encoder_mode: mode, ..TwoStageConfig::default() };
    let mut reached = None;
    train_two_stage_with(&train, &cfg, Some(pretrained()), |step, m| {
        if step % 5 == 0 && m.tag_accuracy(&dev).unwrap() == 1.0 {
            reached = Some(step);
        }
        reached.is_none()
    })
    .unwrap();
    reached.unwrap_or(usize::MAX)
}

#[test]
fn fine_tuning_reaches_dev_accuracy_no_later_than_scratch() {
    // Measured: fine-tune at step 20, scratch at step 30.
    let fine_tune = steps_to_perfect_dev_tags(ContextEncoderMode::PretrainedFineTune);
    let scratch = steps_to_perfect_dev_tags(ContextEncoderMode::Scratch);
    assert!(scratch <= 300, "scratch never reached perfect dev tags");
    assert!(fine_tune <= scratch, "fine-tune {fine_tune} vs scratch {scratch}");
}

#[test]
fn full_batch_loss_mostly_decreases_over_fifty_steps() {
    let corpus = generate(4, 21);
    let cfg = TwoStageConfig {
        model: tiny_model(),
        steps: 51,
        batch_size: 4,
        adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
        seed: 6,
        ..TwoStageConfig::default()
    };
    let model = train_two_stage(&corpus, &cfg, None).unwrap();
    let losses: Vec<f64> = model.log.iter().map(|r| r.tag_loss + r.lambda * r.verb_loss).collect();
    let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(non_increasing >= 45, "{non_increasing} of 50: {losses:?}");
}

#[test]
fn tags_are_a_pure_function_of_parameters_and_sentence() {
    let model = small_two_stage();
    let restored = TwoStageModel::from_checkpoint(model.to_checkpoint()).unwrap();
    for s in generate(20, 99) {
        let first = model.tag(&s).unwrap();
        assert_eq!(first, model.tag(&s).unwrap());
        assert_eq!(first, restored.tag(&s).unwrap());
        assert_eq!(first.len(), s.tokens.len());
    }
}

/// Records which tokens reach the verbalizer.
struct Recording<'a> {
    inner: &'a dyn TokenVerbalizer,
    calls: RefCell<Vec<(String, usize)>>,
}

impl TokenVerbalizer for Recording<'_> {
    fn verbalize(&self, s: &Sentence, token: usize) -> Result<Verbalization, NeuralError> {
        self.calls.borrow_mut().push((s.id.clone(), token));
        self.inner.verbalize(s, token)
    }
}

#[test]
fn only_tokens_tagged_non_trivial_reach_the_verbalizer() {
    let model = small_two_stage();
    let sentences = generate(30, 5);
    let verbalizer = ModelVerbalizer::new(model, BeamConfig::default(), None);
    for golden_tags in [false, true] {
        let recording = Recording { inner: &verbalizer, calls: RefCell::new(Vec::new()) };
        let bundle = ModelBundle::TwoStage { tagger: model, verbalizer: &recording };
        evaluate(&bundle, &sentences, RunMode::TwoStage { golden_tags }).unwrap();
        let tagger: &dyn TokenTagger = if golden_tags { &ReferenceTagger } else { model };
        let calls = recording.calls.into_inner();
        for s in &sentences {
            let tags = tagger.tag(s).unwrap();
            let expected: Vec<usize> = (0..tags.len()).filter(|&i| tags[i] == TagLabel::NonTrivial).collect();
            let got: Vec<usize> = calls.iter().filter(|(id, _)| *id == s.id).map(|(_, i)| *i).collect();
            assert_eq!(got, expected, "sentence {}", s.id);
        }
    }
}

#[test]
fn golden_tag_failures_always_trace_to_the_verbalizer() {
    let model = small_two_stage();
    let verbalizer = ModelVerbalizer::new(model, BeamConfig::default(), None);
    let bundle = ModelBundle::TwoStage { tagger: model, verbalizer: &verbalizer };
    let report = evaluate(&bundle, &generate(40, 17), RunMode::TwoStage { golden_tags: true }).unwrap();
    for r in report.sentences.iter().filter(|r| r.error) {
        let token = r.offending_token.expect("errors name a token");
        assert!(!r.offending_reference.is_empty(), "{}: token {token} is not non-trivial", r.id);
        assert_ne!(r.offending_reference, vec![r.written[token].clone()]);
    }
}

#[test]
fn evaluation_reports_are_byte_identical_across_runs() {
    let model = small_two_stage();
    let sentences = generate(25, 3);
    let run = || {
        let restored = TwoStageModel::from_checkpoint(model.to_checkpoint()).unwrap();
        let verbalizer = ModelVerbalizer::new(&restored, BeamConfig::default(), None);
        let bundle = ModelBundle::TwoStage { tagger: &restored, verbalizer: &verbalizer };
        evaluate(&bundle, &sentences, RunMode::TwoStage { golden_tags: false }).unwrap().to_jsonl()
    };
    let first = run();
    assert_eq!(first, run());
    assert_eq!(EvalReport::from_jsonl(&first).unwrap().to_jsonl(), first);
}

fn arb_token() -> impl Strategy<Value = Token> {
    let class = prop_oneof![
        Just(SemioticClass::Plain),
        Just(SemioticClass::Punct),
        Just(SemioticClass::Cardinal),
        Just(SemioticClass::Letters),
    ];
    let spoken = prop_oneof![
        Just(SpokenForm::SelfCopy),
        Just(SpokenForm::Silent),
        proptest::collection::vec("[a-z]{1,6}", 1..4).prop_map(SpokenForm::Words),
    ];
    (class, "[A-Za-z0-9.,]{1,5}", spoken).prop_map(|(c, w, s)| Token::new(c, w, s))
}

fn arb_sentences() -> impl Strategy<Value = Vec<Sentence>> {
    proptest::collection::vec(proptest::collection::vec(arb_token(), 1..8), 1..6).prop_map(|ss| {
        ss.into_iter().enumerate().map(|(i, tokens)| Sentence::new(format!("p{i}"), tokens)).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn labels_agree_with_reference_verbalization(sentences in arb_sentences()) {
        for s in &sentences {
            let mut words = Vec::new();
            for t in &s.tokens {
                match TagLabel::from_spoken(&t.spoken) {
                    TagLabel::Trivial => words.push(t.written.clone()),
                    TagLabel::Sil => {}
                    TagLabel::NonTrivial => words.extend(t.spoken_words()),
                }
            }
            prop_assert_eq!(words, s.reference_verbalization());
        }
    }

    #[test]
    fn oracle_pipeline_with_golden_tags_has_zero_ser(sentences in arb_sentences()) {
        let bundle = ModelBundle::TwoStage { tagger: &ReferenceTagger, verbalizer: &ReferenceVerbalizer };
        let report = evaluate(&bundle, &sentences, RunMode::TwoStage { golden_tags: true }).unwrap();
        prop_assert_eq!(report.errors, 0);
        prop_assert_eq!(report.ser().to_string(), "0.0000");
    }
}
