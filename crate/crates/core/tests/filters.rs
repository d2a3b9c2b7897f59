use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;

use instruct_curate::corpus::{Category, ImageRef, InstructionSample};
use instruct_curate::eval::answer_statement;
use instruct_curate::filters::{
    FilterConfig, FilterError, FilterKind, FilterPipeline, FilterReport, FilterScorers,
};
use instruct_curate::scoring::{
    ImageTextScore, NliLabel, PairLabel, PairScore, ScoreBackend, ScoreRequest, ScoreResponse, ScorerError,
    ScorerHandle, ScorerKind, StubScorer, StubTable,
};

struct Counting {
    inner: StubScorer,
    calls: AtomicUsize,
}

impl ScoreBackend for Counting {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(request)
    }
}

fn counting(table: StubTable) -> Arc<Counting> {
    Arc::new(Counting {
        inner: StubScorer::new(table),
        calls: AtomicUsize::new(0),
    })
}

fn scorers(backend: Arc<Counting>) -> FilterScorers {
    FilterScorers {
        sts: Some(ScorerHandle::new(ScorerKind::Sts, backend.clone())),
        clipscore: Some(ScorerHandle::new(ScorerKind::Clipscore, backend.clone())),
        nli: Some(ScorerHandle::new(ScorerKind::Nli, backend)),
    }
}

fn caption(id: &str, raw: &str, rewritten: &str) -> InstructionSample {
    InstructionSample {
        id: id.into(),
        source_dataset: "coco".into(),
        category: Category::Captioning,
        instruction: "Describe the image.".into(),
        response: rewritten.into(),
        raw_annotation: Some(raw.into()),
        images: vec![ImageRef::new(format!("{id}.jpg"), 64, 64)],
        metadata: BTreeMap::new(),
    }
}

fn vqa(id: &str, question: &str, raw: &str, rewritten: &str) -> InstructionSample {
    InstructionSample {
        category: Category::VqaPlain,
        instruction: question.into(),
        ..caption(id, raw, rewritten)
    }
}

/// Table entries that let `sample` through every model filter it is routed to.
fn passing_entries(table: &mut StubTable, s: &InstructionSample, sts: f64, clip: f64, nli: NliLabel) {
    let raw = s.raw_annotation.clone().unwrap();
    match s.category {
        Category::Captioning => {
            table.sts.push(PairScore { texts: [raw, s.response.clone()], score: sts });
            for p in instruct_curate::filters::split_paragraphs(&s.response) {
                table.clipscore.push(ImageTextScore {
                    text: p,
                    image_uri: s.images[0].uri.clone(),
                    score: clip,
                });
            }
        }
        _ => table.nli.push(PairLabel {
            texts: [
                answer_statement(&raw, &s.instruction),
                answer_statement(&s.response, &s.instruction),
            ],
            label: nli,
        }),
    }
}

#[test]
fn length_reject_never_reaches_models() {
    let backend = counting(StubTable::default());
    let p = FilterPipeline::new(FilterConfig::default(), scorers(backend.clone())).unwrap();
    let (out, verdicts) = p.run_collect(vec![caption("c1", "a dog", "Dog.")]).unwrap();
    assert_eq!(verdicts[0].rejected_by, Some(FilterKind::Length));
    assert!(!verdicts[0].kept);
    assert_eq!(out.report.total_kept, 0);
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn unchanged_rewrite_rejected() {
    let backend = counting(StubTable::default());
    let p = FilterPipeline::new(FilterConfig::default(), scorers(backend.clone())).unwrap();
    let text = "A brown dog lies on the green grass.";
    let (_, v) = p.run_collect(vec![caption("c1", text, text)]).unwrap();
    assert_eq!(v[0].rejected_by, Some(FilterKind::Change));
    assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn routing_by_category() {
    let cap = caption("c1", "a dog on grass", "A brown dog is lying on the grass.");
    let q = vqa("q1", "What animal is it?", "dog", "The animal in the picture is a dog.");
    let mut table = StubTable::default();
    passing_entries(&mut table, &cap, 0.8, 25.0, NliLabel::Entailment);
    passing_entries(&mut table, &q, 0.8, 25.0, NliLabel::Entailment);
    let backend = counting(table);
    let p = FilterPipeline::new(FilterConfig::default(), scorers(backend.clone())).unwrap();
    let (out, v) = p.run_collect(vec![cap, q]).unwrap();
    assert_eq!(out.report.total_kept, 2);
    assert_eq!(
        v[0].scores.keys().copied().collect::<Vec<_>>(),
        vec![FilterKind::Length, FilterKind::Change, FilterKind::Sts, FilterKind::Clipscore]
    );
    assert_eq!(
        v[1].scores.keys().copied().collect::<Vec<_>>(),
        vec![FilterKind::Length, FilterKind::Change, FilterKind::Nli]
    );
    // sts + one clipscore paragraph + one nli
    assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn paragraph_pruning_flows_into_output() {
    let s = caption("c1", "dog", "A dog rests on the lawn.\n\nThere are cars in the background.");
    let mut table = StubTable::default();
    table.sts.push(PairScore { texts: ["dog".into(), s.response.clone()], score: 0.9 });
    table.clipscore.push(ImageTextScore { text: "A dog rests on the lawn.".into(), image_uri: "c1.jpg".into(), score: 20.1 });
    table.clipscore.push(ImageTextScore {
        text: "There are cars in the background.".into(),
        image_uri: "c1.jpg".into(),
        score: 16.9,
    });
    let p = FilterPipeline::new(FilterConfig::default(), scorers(counting(table))).unwrap();
    let (out, v) = p.run_collect(vec![s]).unwrap();
    assert!(v[0].kept);
    assert_eq!(v[0].scores[&FilterKind::Clipscore], 20.1);
    assert_eq!(out.kept[0].response, "A dog rests on the lawn.");
}

#[test]
fn scorer_failure_carries_sample_id() {
    let s = caption("c9", "dog", "A dog rests on the lawn today.");
    let p = FilterPipeline::new(FilterConfig::default(), scorers(counting(StubTable::default()))).unwrap();
    match p.run_collect(vec![s]) {
        Err(FilterError::Scorer { sample_id, source: ScorerError::StubMiss(_) }) => assert_eq!(sample_id, "c9"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_scorer_is_bad_config() {
    let err = FilterPipeline::new(FilterConfig::default(), FilterScorers::default()).err().unwrap();
    assert!(matches!(err, FilterError::BadConfig(_)));
    // rule filters alone need no scorers
    let cfg = FilterConfig {
        enabled: [FilterKind::Length, FilterKind::Change].into_iter().collect(),
        ..FilterConfig::default()
    };
    assert!(FilterPipeline::new(cfg, FilterScorers::default()).is_ok());
}

#[test]
fn all_pass_stub_keeps_everything() {
    let backend: Arc<dyn ScoreBackend> = Arc::new(StubScorer::all_pass());
    let s = FilterScorers {
        sts: Some(ScorerHandle::new(ScorerKind::Sts, backend.clone())),
        clipscore: Some(ScorerHandle::new(ScorerKind::Clipscore, backend.clone())),
        nli: Some(ScorerHandle::new(ScorerKind::Nli, backend)),
    };
    let corpus: Vec<_> = (0..50)
        .map(|i| {
            if i % 2 == 0 {
                caption(&format!("c{i}"), "a dog", &format!("A photo of a dog, number {i}."))
            } else {
                vqa(&format!("q{i}"), "What is it?", "dog", &format!("It is a dog, number {i}."))
            }
        })
        .collect();
    let p = FilterPipeline::new(FilterConfig::default(), s).unwrap();
    let (out, _) = p.run_collect(corpus).unwrap();
    assert_eq!(out.report.keep_rate, 1.0);
    assert_eq!(out.report.total_rejected(), 0);
}

#[test]
fn verdict_sink_sees_input_order() {
    let backend: Arc<dyn ScoreBackend> = Arc::new(StubScorer::all_pass());
    let s = FilterScorers {
        sts: Some(ScorerHandle::new(ScorerKind::Sts, backend.clone())),
        clipscore: Some(ScorerHandle::new(ScorerKind::Clipscore, backend.clone())),
        nli: Some(ScorerHandle::new(ScorerKind::Nli, backend)),
    };
    let corpus: Vec<_> = (0..3000)
        .map(|i| caption(&format!("c{i:05}"), "x", &format!("A rewritten caption {i}.")))
        .collect();
    let p = FilterPipeline::new(FilterConfig::default(), s).unwrap();
    let mut seen = Vec::new();
    p.run(corpus, |v| {
        seen.push(v.sample_id.clone());
        Ok::<_, ()>(())
    })
    .unwrap();
    let mut sorted = seen.clone();
    sorted.sort();
    assert_eq!(seen, sorted);
}

/// Per-sample model scores, drawn by proptest.
#[derive(Debug, Clone)]
struct Draw {
    vqa: bool,
    len: usize,
    same: bool,
    sts: f64,
    clip: Vec<f64>,
    nli: u8,
}

fn draw() -> impl Strategy<Value = Draw> {
    (
        any::<bool>(),
        5usize..60,
        proptest::bool::weighted(0.1),
        0.0f64..1.0,
        proptest::collection::vec(10.0f64..25.0, 1..4),
        0u8..3,
    )
        .prop_map(|(vqa, len, same, sts, clip, nli)| Draw { vqa, len, same, sts, clip, nli })
}

fn build(draws: &[Draw]) -> (Vec<InstructionSample>, StubTable) {
    let mut table = StubTable::default();
    let mut corpus = Vec::new();
    for (i, d) in draws.iter().enumerate() {
        let raw = format!("raw {i}");
        let body: String = "x".repeat(d.len);
        let rewritten = if d.same {
            raw.clone()
        } else {
            d.clip
                .iter()
                .enumerate()
                .map(|(k, _)| format!("{body} {i}.{k}"))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let s = if d.vqa {
            vqa(&format!("s{i}"), "What is shown?", &raw, &rewritten)
        } else {
            caption(&format!("s{i}"), &raw, &rewritten)
        };
        let label = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction][d.nli as usize];
        passing_entries(&mut table, &s, d.sts, 0.0, label);
        // overwrite the clipscore entries with the drawn per-paragraph scores
        if !d.vqa {
            let n = table.clipscore.len();
            let paras = instruct_curate::filters::split_paragraphs(&s.response).len();
            for (k, slot) in table.clipscore[n - paras..].iter_mut().enumerate() {
                slot.score = d.clip[k.min(d.clip.len() - 1)];
            }
        }
        corpus.push(s);
    }
    (corpus, table)
}

fn run_with(enabled: &BTreeSet<FilterKind>, corpus: &[InstructionSample], table: &StubTable) -> FilterReport {
    let cfg = FilterConfig {
        enabled: enabled.clone(),
        ..FilterConfig::default()
    };
    let p = FilterPipeline::new(cfg, scorers(counting(table.clone()))).unwrap();
    p.run_collect(corpus.to_vec()).unwrap().0.report
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accounting_identity(draws in proptest::collection::vec(draw(), 0..40)) {
        let (corpus, table) = build(&draws);
        let all: BTreeSet<_> = FilterKind::ALL.into_iter().collect();
        let r = run_with(&all, &corpus, &table);
        prop_assert_eq!(r.total_in, corpus.len());
        prop_assert_eq!(r.total_kept + r.total_rejected(), r.total_in);
        if r.total_in > 0 {
            prop_assert_eq!(r.keep_rate, r.total_kept as f64 / r.total_in as f64);
        }
    }

    #[test]
    fn adding_a_filter_never_keeps_more(
        draws in proptest::collection::vec(draw(), 1..30),
        subset in proptest::collection::btree_set(0usize..5, 0..5),
        extra in 0usize..5,
    ) {
        let (corpus, table) = build(&draws);
        let small: BTreeSet<FilterKind> = subset.iter().map(|&i| FilterKind::ALL[i]).collect();
        let mut big = small.clone();
        big.insert(FilterKind::ALL[extra]);
        let a = run_with(&small, &corpus, &table);
        let b = run_with(&big, &corpus, &table);
        prop_assert!(b.total_kept <= a.total_kept);
    }

    #[test]
    fn verdicts_independent_of_batch(draws in proptest::collection::vec(draw(), 2..20), cut in 1usize..19) {
        let (corpus, table) = build(&draws);
        let cut = cut.min(corpus.len() - 1);
        let p = FilterPipeline::new(FilterConfig::default(), scorers(counting(table))).unwrap();
        let (_, whole) = p.run_collect(corpus.clone()).unwrap();
        let (_, mut parts) = p.run_collect(corpus[..cut].to_vec()).unwrap();
        parts.extend(p.run_collect(corpus[cut..].to_vec()).unwrap().1);
        prop_assert_eq!(whole, parts);
    }
}
