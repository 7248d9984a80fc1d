//! Teacher-forced training examples built from dialogue sessions.

use sketchdial_nn::Tensor;

use crate::codraw::DialogueSession;
use crate::embeddings::EmbeddingTable;
use crate::error::{CoreError, Result};
use crate::scene::{
    build_context_sequence, scene_token_row, ContextWindow, InputLabel, SceneToken, Turn, TurnOrder,
};

use super::loss::scene_targets;

/// One input sequence with the positions whose outputs are scored.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub session: String,
    pub rows: Tensor,
    pub labels: Vec<InputLabel>,
    pub slots: Vec<usize>,
    pub targets: Vec<SceneToken>,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn object_count(&self) -> usize {
        self.targets
            .iter()
            .filter(|t| matches!(t, SceneToken::Object(_)))
            .count()
    }
}

/// Session turns as context-window turns (instruction tokens plus the drawer's scene).
pub fn session_turns(session: &DialogueSession, embeddings: &EmbeddingTable) -> Vec<Turn> {
    session
        .turns
        .iter()
        .map(|t| Turn {
            instruction: embeddings.text_tokens(&t.teller),
            scene: t.scene.clone(),
        })
        .collect()
}

/// The window for answering turn `i`: up to `context_turns` preceding turns.
pub fn window_for_turn(turns: &[Turn], i: usize, context_turns: usize) -> ContextWindow {
    ContextWindow {
        turns: turns[i.saturating_sub(context_turns)..i].to_vec(),
        current_instruction: turns[i].instruction.clone(),
    }
}

/// Context sequence for `ctx` followed by the target scene's objects, scored from the
/// prompt onward.
pub fn turn_example(
    session: &str,
    ctx: &ContextWindow,
    target: &crate::scene::Scene,
    order: TurnOrder,
) -> Result<TrainingExample> {
    let mut seq = build_context_sequence(ctx, order)?;
    let prompt = seq.len() - 1;
    for o in &target.objects {
        seq.push(scene_token_row(&SceneToken::Object(*o), None));
    }
    let targets = scene_targets(target);
    Ok(TrainingExample {
        session: session.to_string(),
        rows: Tensor::from_rows(&seq.iter().map(|r| r.vector.clone()).collect::<Vec<_>>())?,
        labels: seq.into_iter().map(|r| r.label).collect(),
        slots: (prompt..prompt + targets.len()).collect(),
        targets,
    })
}

/// Examples for one session. With `pack`, a session whose full history fits in the
/// window becomes a single sequence scored at every turn's scene slots: under the
/// instruction-first order each turn's sequence is a prefix of the next, so a causal
/// model sees exactly the per-turn inputs at those positions.
pub fn session_examples(
    session: &DialogueSession,
    embeddings: &EmbeddingTable,
    order: TurnOrder,
    context_turns: usize,
    pack: bool,
) -> Result<Vec<TrainingExample>> {
    if session.turns.is_empty() {
        return Err(CoreError::Input(format!(
            "session {} has no turns",
            session.id
        )));
    }
    let turns = session_turns(session, embeddings);
    let k = turns.len();
    if pack && order == TurnOrder::InstructionFirst && k <= context_turns + 1 {
        let ctx = window_for_turn(&turns, k - 1, context_turns);
        let mut ex = turn_example(&session.id, &ctx, &turns[k - 1].scene, order)?;
        let mut slots = Vec::new();
        let mut targets = Vec::new();
        let mut turn = 0;
        for (p, label) in ex.labels.iter().enumerate() {
            if *label == InputLabel::Start {
                let scene = &turns[turn].scene;
                slots.extend(p..=p + scene.len());
                targets.extend(scene_targets(scene));
                turn += 1;
            }
        }
        debug_assert_eq!(turn, k);
        ex.slots = slots;
        ex.targets = targets;
        return Ok(vec![ex]);
    }
    (0..k)
        .map(|i| {
            turn_example(
                &session.id,
                &window_for_turn(&turns, i, context_turns),
                &turns[i].scene,
                order,
            )
        })
        .collect()
}

pub fn build_examples(
    sessions: &[DialogueSession],
    embeddings: &EmbeddingTable,
    order: TurnOrder,
    context_turns: usize,
    pack: bool,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for s in sessions {
        out.extend(session_examples(s, embeddings, order, context_turns, pack)?);
    }
    Ok(out)
}
