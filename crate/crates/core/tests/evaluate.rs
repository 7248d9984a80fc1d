use std::path::PathBuf;

use sketchdial_core::clipart::ClipArtMapping;
use sketchdial_core::codraw::{load_codraw, DialogueSession};
use sketchdial_core::embeddings::EmbeddingTable;
use sketchdial_core::evaluate::{
    replay_evaluate, replay_evaluate_with, replay_session, SessionScore, SimilarityReport,
};
use sketchdial_core::proposer::{CompositionProposer, ProposerConfig, KIND_END};
use sketchdial_core::scene::Scene;
use sketchdial_core::similarity::{ExternalScorer, SimilarityWeights};

fn corpus() -> (Vec<DialogueSession>, EmbeddingTable) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let sessions = load_codraw(dir.join("codraw.json"), &ClipArtMapping::builtin()).unwrap();
    let emb = EmbeddingTable::load(dir.join("embeddings.txt"), None).unwrap();
    (sessions, emb)
}

fn small() -> CompositionProposer {
    CompositionProposer::new(ProposerConfig {
        layers: 1,
        heads: 2,
        model_dim: 16,
        ff_dim: 32,
        max_positions: 256,
        ..ProposerConfig::default()
    })
    .unwrap()
}

#[test]
fn report_mean_is_the_arithmetic_mean() {
    let scores = [4.0, 2.5, 0.0, 5.0];
    let r = SimilarityReport::from_scores(
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| SessionScore {
                session: format!("s{i}"),
                score: s,
                predicted: Scene::default(),
                breakdown: None,
            })
            .collect(),
    );
    assert_eq!(r.mean, 11.5 / 4.0);
    assert_eq!(SimilarityReport::from_scores(Vec::new()).mean, 0.0);
    let mut out = Vec::new();
    r.write_jsonl(&mut out).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[4]["summary"]["mean"], 2.875);
    assert_eq!(lines[1]["session"], "s1");
    assert!(r.table().contains("s3"));
}

#[test]
fn empty_predictions_score_by_truth_size() {
    let (sessions, emb) = corpus();
    let mut m = small();
    m.head_bias_mut()[KIND_END] = 1e3;
    let w = SimilarityWeights::default();
    let r = replay_evaluate(&m, &sessions, &emb, &w).unwrap();
    assert_eq!(r.sessions.len(), sessions.len());
    for (s, sess) in r.sessions.iter().zip(&sessions) {
        assert!(s.predicted.is_empty());
        let want = if sess.target.is_empty() { 5.0 } else { 0.0 };
        assert_eq!(s.score, want, "{}", s.session);
    }
}

#[test]
fn untrained_model_scores_low() {
    let (sessions, emb) = corpus();
    let m = small();
    let r = replay_evaluate(&m, &sessions, &emb, &SimilarityWeights::default()).unwrap();
    assert!(r.mean < 2.0, "mean {}", r.mean);
    let scene = replay_session(&m, &sessions[0], &emb).unwrap();
    assert_eq!(scene.turn_index, sessions[0].turns.len() - 1);
    assert_eq!(scene, r.sessions[0].predicted);
}

#[test]
fn external_scorer_replaces_the_builtin_metric() {
    let (sessions, emb) = corpus();
    let m = small();
    let scorer = ExternalScorer {
        program: "sh".into(),
        args: vec!["-c".into(), "cat >/dev/null; echo 1.5".into()],
    };
    let r = replay_evaluate_with(&m, &sessions[..3], &emb, &scorer).unwrap();
    assert_eq!(r.mean, 1.5);
    assert!(r.sessions.iter().all(|s| s.breakdown.is_none()));
}
