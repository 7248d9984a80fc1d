//! Scene similarity on a 0 to 5 scale: greedy same-class matching followed by a weighted
//! cost over missing objects, attribute disagreements, displacement and relative layout.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scene::{Scene, SceneObject};

pub const MAX_SCORE: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityWeights {
    pub w_miss: f64,
    pub w_flip: f64,
    pub w_size: f64,
    pub w_sub: f64,
    pub w_pos: f64,
    /// Displacement at which the position term saturates.
    pub d0: f64,
    pub w_rel: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            w_miss: 1.0,
            w_flip: 0.1,
            w_size: 0.1,
            w_sub: 0.05,
            w_pos: 0.5,
            d0: 0.2,
            w_rel: 0.25,
        }
    }
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_miss,
            self.w_flip,
            self.w_size,
            self.w_sub,
            self.w_pos,
            self.w_rel,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::Config(
                "similarity weights must be finite and non-negative".into(),
            ));
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(CoreError::Config(format!(
                "d0 must be positive, got {}",
                self.d0
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let w: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub score: f64,
    pub cost: f64,
    pub matched: usize,
    pub unmatched_truth: usize,
    pub unmatched_pred: usize,
    pub miss: f64,
    pub flip: f64,
    pub size: f64,
    pub subtype: f64,
    pub position: f64,
    pub relation: f64,
}

/// Pairs `(truth index, pred index)`. Candidates are all same-class pairs ordered by
/// distance, then truth index, then prediction index; each is taken if both ends are free.
pub fn greedy_match(pred: &[SceneObject], truth: &[SceneObject]) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            if t.class_id == p.class_id {
                cands.push((distance(t, p), i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; truth.len()];
    let mut used_p = vec![false; pred.len()];
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !used_t[i] && !used_p[j] {
            used_t[i] = true;
            used_p[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

fn distance(a: &SceneObject, b: &SceneObject) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

fn sign_mismatch(a: f64, b: f64) -> f64 {
    if a.signum() != b.signum() || (a == 0.0) != (b == 0.0) {
        1.0
    } else {
        0.0
    }
}

pub fn scene_similarity_breakdown(
    pred: &Scene,
    truth: &Scene,
    w: &SimilarityWeights,
) -> SimilarityBreakdown {
    let (p, t) = (&pred.objects, &truth.objects);
    if p.is_empty() && t.is_empty() {
        return SimilarityBreakdown {
            score: MAX_SCORE,
            ..Default::default()
        };
    }
    let pairs = greedy_match(p, t);
    let unmatched_truth = t.len() - pairs.len();
    let unmatched_pred = p.len() - pairs.len();
    let miss = w.w_miss * (unmatched_truth + unmatched_pred) as f64 / t.len().max(1) as f64;
    let mut b = SimilarityBreakdown {
        matched: pairs.len(),
        unmatched_truth,
        unmatched_pred,
        miss,
        ..Default::default()
    };
    if !pairs.is_empty() {
        let n = pairs.len() as f64;
        for &(i, j) in &pairs {
            let (ti, pi) = (&t[i], &p[j]);
            b.flip += w.w_flip * f64::from(u8::from(ti.flip != pi.flip)) / n;
            b.size += w.w_size * f64::from(u8::from(ti.size_id != pi.size_id)) / n;
            b.subtype += w.w_sub * f64::from(u8::from(ti.subtype_id != pi.subtype_id)) / n;
            b.position += w.w_pos * (distance(ti, pi) / w.d0).min(1.0) / n;
            if pairs.len() > 1 {
                let mut r = 0.0;
                for &(k, _) in pairs.iter().filter(|&&(k, _)| k != i) {
                    let tk = &t[k];
                    r += 0.5
                        * (sign_mismatch(tk.x - pi.x, tk.x - ti.x)
                            + sign_mismatch(tk.y - pi.y, tk.y - ti.y));
                }
                b.relation += w.w_rel * r / (pairs.len() - 1) as f64 / n;
            }
        }
    }
    b.cost = (b.miss + b.flip + b.size + b.subtype + b.position + b.relation).clamp(0.0, 1.0);
    b.score = MAX_SCORE * (1.0 - b.cost);
    b
}

pub fn scene_similarity(pred: &Scene, truth: &Scene, w: &SimilarityWeights) -> f64 {
    scene_similarity_breakdown(pred, truth, w).score
}

/// Scores a scene pair against ground truth.
pub trait SceneScorer {
    fn score(&self, pred: &Scene, truth: &Scene) -> Result<f64>;
}

impl SceneScorer for SimilarityWeights {
    fn score(&self, pred: &Scene, truth: &Scene) -> Result<f64> {
        Ok(scene_similarity(pred, truth, self))
    }
}

/// Delegates scoring to an external program. It receives `{"pred": Scene, "truth": Scene}`
/// on stdin and must print a single number.
#[derive(Clone, Debug)]
pub struct ExternalScorer {
    pub program: String,
    pub args: Vec<String>,
}

impl SceneScorer for ExternalScorer {
    fn score(&self, pred: &Scene, truth: &Scene) -> Result<f64> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let payload = serde_json::json!({ "pred": pred, "truth": truth });
        child
            .stdin
            .take()
            .ok_or_else(|| CoreError::Input("scorer stdin unavailable".into()))?
            .write_all(payload.to_string().as_bytes())?;
        let out = child.wait_with_output()?;
        if !out.status.success() {
            return Err(CoreError::Input(format!(
                "scorer exited with {}",
                out.status
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.trim().parse::<f64>().map_err(|_| {
            CoreError::format(&self.program, format!("scorer printed {:?}", text.trim()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(class: usize, x: f64, y: f64) -> SceneObject {
        SceneObject::new(class, 0, 1, false, x, y).unwrap()
    }

    #[test]
    fn identity_scores_five() {
        let s = Scene::new(vec![obj(3, 0.2, 0.3), obj(5, 0.7, 0.6), obj(3, 0.9, 0.1)]);
        assert_eq!(scene_similarity(&s, &s, &SimilarityWeights::default()), 5.0);
    }

    #[test]
    fn empty_pair_scores_five() {
        let e = Scene::default();
        assert_eq!(scene_similarity(&e, &e, &SimilarityWeights::default()), 5.0);
    }

    #[test]
    fn class_disjoint_scores_zero() {
        let a = Scene::new(vec![obj(3, 0.2, 0.3)]);
        let b = Scene::new(vec![obj(4, 0.2, 0.3), obj(6, 0.5, 0.5)]);
        assert_eq!(scene_similarity(&a, &b, &SimilarityWeights::default()), 0.0);
        assert_eq!(
            scene_similarity(&Scene::default(), &b, &SimilarityWeights::default()),
            0.0
        );
    }

    #[test]
    fn displaced_by_d0_scores_half() {
        let w = SimilarityWeights::default();
        let a = Scene::new(vec![obj(3, 0.2, 0.3)]);
        let b = Scene::new(vec![obj(3, 0.2 + w.d0, 0.3)]);
        assert!((scene_similarity(&a, &b, &w) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn nearest_same_class_is_matched_first() {
        let truth = vec![obj(3, 0.1, 0.1), obj(3, 0.9, 0.9)];
        let pred = vec![obj(3, 0.85, 0.9), obj(3, 0.2, 0.1)];
        assert_eq!(greedy_match(&pred, &truth), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn weights_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        SimilarityWeights::default().save(&p).unwrap();
        assert_eq!(
            SimilarityWeights::load(&p).unwrap(),
            SimilarityWeights::default()
        );
        std::fs::write(&p, r#"{"w_miss":1,"w_flip":0.1,"w_size":0.1,"w_sub":0.05,"w_pos":0.5,"d0":0,"w_rel":0.25}"#).unwrap();
        assert!(SimilarityWeights::load(&p).is_err());
    }
}
