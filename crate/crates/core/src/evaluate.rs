//! Script replay: feed recorded instructions turn by turn, regenerate, score the final scene.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::codraw::DialogueSession;
use crate::embeddings::EmbeddingTable;
use crate::error::{CoreError, Result};
use crate::proposer::CompositionProposer;
use crate::scene::{ContextWindow, Scene, Turn};
use crate::similarity::{
    scene_similarity_breakdown, SceneScorer, SimilarityBreakdown, SimilarityWeights,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionScore {
    pub session: String,
    pub score: f64,
    pub predicted: Scene,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<SimilarityBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub sessions: Vec<SessionScore>,
    pub mean: f64,
}

impl SimilarityReport {
    pub fn from_scores(sessions: Vec<SessionScore>) -> Self {
        let mean = if sessions.is_empty() {
            0.0
        } else {
            sessions.iter().map(|s| s.score).sum::<f64>() / sessions.len() as f64
        };
        Self { sessions, mean }
    }

    /// One JSON object per session, then a summary line.
    pub fn write_jsonl(&self, out: &mut dyn Write) -> Result<()> {
        for s in &self.sessions {
            serde_json::to_writer(&mut *out, s)?;
            writeln!(out)?;
        }
        serde_json::to_writer(
            &mut *out,
            &serde_json::json!({ "summary": { "sessions": self.sessions.len(), "mean": self.mean } }),
        )?;
        writeln!(out)?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(
            t,
            "{:<16} {:>6} {:>7} {:>6} {:>6}",
            "session", "score", "matched", "miss", "pos"
        );
        for s in &self.sessions {
            let (m, miss, pos) = s
                .breakdown
                .as_ref()
                .map_or((0, 0.0, 0.0), |b| (b.matched, b.miss, b.position));
            let _ = writeln!(
                t,
                "{:<16} {:>6.3} {:>7} {:>6.3} {:>6.3}",
                s.session, s.score, m, miss, pos
            );
        }
        let _ = writeln!(t, "{:<16} {:>6.3}", "mean", self.mean);
        t
    }
}

/// Regenerates each turn's scene from the replayed instructions and the model's own
/// previous scenes; returns the final scene.
pub fn replay_session(
    model: &CompositionProposer,
    session: &DialogueSession,
    embeddings: &EmbeddingTable,
) -> Result<Scene> {
    let mut ctx = ContextWindow::default();
    let mut scene = Scene::default();
    for (i, turn) in session.turns.iter().enumerate() {
        ctx.current_instruction = embeddings.text_tokens(&turn.teller);
        scene = model.generate_scene(&ctx)?.scene;
        scene.turn_index = i;
        let instruction = std::mem::take(&mut ctx.current_instruction);
        ctx.push_turn(Turn {
            instruction,
            scene: scene.clone(),
        });
    }
    Ok(scene)
}

pub fn replay_evaluate(
    model: &CompositionProposer,
    sessions: &[DialogueSession],
    embeddings: &EmbeddingTable,
    weights: &SimilarityWeights,
) -> Result<SimilarityReport> {
    let mut out = Vec::with_capacity(sessions.len());
    for s in sessions {
        let predicted = replay_session(model, s, embeddings)?;
        let b = scene_similarity_breakdown(&predicted, &s.target, weights);
        out.push(SessionScore {
            session: s.id.clone(),
            score: b.score,
            predicted,
            breakdown: Some(b),
        });
    }
    Ok(SimilarityReport::from_scores(out))
}

/// Replay scored by an arbitrary scorer (for example an external reference implementation).
pub fn replay_evaluate_with(
    model: &CompositionProposer,
    sessions: &[DialogueSession],
    embeddings: &EmbeddingTable,
    scorer: &dyn SceneScorer,
) -> Result<SimilarityReport> {
    let mut out = Vec::with_capacity(sessions.len());
    for s in sessions {
        let predicted = replay_session(model, s, embeddings)?;
        let score = scorer.score(&predicted, &s.target)?;
        if !(0.0..=5.0).contains(&score) {
            return Err(CoreError::Input(format!(
                "scorer returned {score} outside [0, 5]"
            )));
        }
        out.push(SessionScore {
            session: s.id.clone(),
            score,
            predicted,
            breakdown: None,
        });
    }
    Ok(SimilarityReport::from_scores(out))
}
