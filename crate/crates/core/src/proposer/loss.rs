//! Layout loss: cross-entropies over token kind, class, subtype, size and flip plus the
//! Euclidean position error, evaluated only at positions that emit a scene token.

use serde::{Deserialize, Serialize};
use sketchdial_nn::{Graph, Tensor, Var};

use crate::classes::{CLASS_COUNT, SIZE_COUNT, SUBTYPE_COUNT};
use crate::error::{CoreError, Result};
use crate::scene::{
    argmax, Scene, SceneObject, SceneToken, CLASS_OFFSET, FLIP_OFFSET, SIZE_OFFSET, SUBTYPE_OFFSET,
    X_INDEX,
};

/// Kind indices shared by the logits and the targets.
pub const KIND_START: usize = 0;
pub const KIND_END: usize = 1;
pub const KIND_OBJECT: usize = 2;

/// Head outputs for one sequence position. Kind, class, subtype, size and flip are logits;
/// the kind logits are `[h_start, h_end, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectPrediction {
    pub kind: [f64; 3],
    pub class: Vec<f64>,
    pub subtype: Vec<f64>,
    pub size: Vec<f64>,
    pub flip: Vec<f64>,
    /// Post-sigmoid `(x, y)`.
    pub position: [f64; 2],
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    logits[target] - m - s.ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ObjectPrediction {
    /// Splits one 102-wide output row into heads.
    pub fn from_output(row: &[f64]) -> Result<Self> {
        if row.len() != X_INDEX + 2 {
            return Err(CoreError::Dimension {
                expected: X_INDEX + 2,
                got: row.len(),
            });
        }
        Ok(Self {
            kind: [row[0], row[1], 0.0],
            class: row[CLASS_OFFSET..SUBTYPE_OFFSET].to_vec(),
            subtype: row[SUBTYPE_OFFSET..SIZE_OFFSET].to_vec(),
            size: row[SIZE_OFFSET..FLIP_OFFSET].to_vec(),
            flip: row[FLIP_OFFSET..X_INDEX].to_vec(),
            position: [sigmoid(row[X_INDEX]), sigmoid(row[X_INDEX + 1])],
        })
    }

    pub fn kind_index(&self) -> usize {
        argmax(&self.kind)
    }

    pub fn kind_probabilities(&self) -> Vec<f64> {
        softmax(&self.kind)
    }

    /// Greedy decoding. People keep their predicted subtype; other classes use subtype 0.
    pub fn to_object(&self) -> SceneObject {
        let class_id = argmax(&self.class);
        SceneObject {
            class_id,
            subtype_id: if crate::classes::is_person(class_id) {
                argmax(&self.subtype)
            } else {
                0
            },
            size_id: argmax(&self.size),
            flip: argmax(&self.flip) == 1,
            x: self.position[0].clamp(0.0, 1.0),
            y: self.position[1].clamp(0.0, 1.0),
        }
    }

    pub fn to_token(&self) -> SceneToken {
        match self.kind_index() {
            KIND_START => SceneToken::Start,
            KIND_END => SceneToken::End,
            _ => SceneToken::Object(self.to_object()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_sub: f64,
    pub lambda_flip: f64,
    pub lambda_size: f64,
    pub lambda_xy: f64,
}

/// Summed loss terms with the counts needed to average them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    pub kind: f64,
    pub class: f64,
    pub subtype: f64,
    pub flip: f64,
    pub size: f64,
    pub xy: f64,
    pub slots: usize,
    pub objects: usize,
    pub kind_correct: usize,
    pub class_correct: usize,
}

/// Averaged loss terms. `L_c` is the class cross-entropy plus the token-kind cross-entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_class")]
    pub l_class: f64,
    #[serde(rename = "L_kind")]
    pub l_kind: f64,
    #[serde(rename = "L_sub")]
    pub l_sub: f64,
    #[serde(rename = "L_flip")]
    pub l_flip: f64,
    #[serde(rename = "L_size")]
    pub l_size: f64,
    #[serde(rename = "L_xy")]
    pub l_xy: f64,
    pub total: f64,
    pub class_accuracy: f64,
    pub kind_accuracy: f64,
}

fn ratio(a: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        a / n as f64
    }
}

impl LossSums {
    pub fn add(&mut self, o: &LossSums) {
        self.kind += o.kind;
        self.class += o.class;
        self.subtype += o.subtype;
        self.flip += o.flip;
        self.size += o.size;
        self.xy += o.xy;
        self.slots += o.slots;
        self.objects += o.objects;
        self.kind_correct += o.kind_correct;
        self.class_correct += o.class_correct;
    }

    pub fn components(&self, w: &LossWeights) -> LossComponents {
        let l_kind = ratio(self.kind, self.slots);
        let l_class = ratio(self.class, self.objects);
        let l_sub = ratio(self.subtype, self.objects);
        let l_flip = ratio(self.flip, self.objects);
        let l_size = ratio(self.size, self.objects);
        let l_xy = ratio(self.xy, self.objects);
        let l_c = l_class + l_kind;
        LossComponents {
            l_c,
            l_class,
            l_kind,
            l_sub,
            l_flip,
            l_size,
            l_xy,
            total: l_c
                + w.lambda_sub * l_sub
                + w.lambda_flip * l_flip
                + w.lambda_size * l_size
                + w.lambda_xy * l_xy,
            class_accuracy: ratio(self.class_correct as f64, self.objects),
            kind_accuracy: ratio(self.kind_correct as f64, self.slots),
        }
    }
}

fn kind_target(t: &SceneToken) -> Result<usize> {
    match t {
        SceneToken::End => Ok(KIND_END),
        SceneToken::Object(_) => Ok(KIND_OBJECT),
        SceneToken::Start => Err(CoreError::Alignment(
            "a start sentinel is never a prediction target".into(),
        )),
    }
}

/// Loss sums computed directly from head outputs, without the autodiff graph.
pub fn loss_cm_eval(preds: &[ObjectPrediction], targets: &[SceneToken]) -> Result<LossSums> {
    if preds.len() != targets.len() {
        return Err(CoreError::Alignment(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut s = LossSums::default();
    for (p, t) in preds.iter().zip(targets) {
        let k = kind_target(t)?;
        s.slots += 1;
        s.kind -= log_softmax(&p.kind, k);
        s.kind_correct += usize::from(p.kind_index() == k);
        if let SceneToken::Object(o) = t {
            s.objects += 1;
            s.class -= log_softmax(&p.class, o.class_id);
            s.subtype -= log_softmax(&p.subtype, o.subtype_id);
            s.size -= log_softmax(&p.size, o.size_id);
            s.flip -= log_softmax(&p.flip, usize::from(o.flip));
            s.xy += ((p.position[0] - o.x).powi(2) + (p.position[1] - o.y).powi(2)).sqrt();
            s.class_correct += usize::from(argmax(&p.class) == o.class_id);
        }
    }
    Ok(s)
}

/// Teacher-forced targets for a scene: each object, then the end sentinel.
pub fn scene_targets(scene: &Scene) -> Vec<SceneToken> {
    let mut t: Vec<SceneToken> = scene
        .objects
        .iter()
        .map(|o| SceneToken::Object(*o))
        .collect();
    t.push(SceneToken::End);
    t
}

/// Averaged loss of predictions against a ground-truth scene (objects followed by the end token).
pub fn loss_cm(
    preds: &[ObjectPrediction],
    truth: &Scene,
    w: &LossWeights,
) -> Result<LossComponents> {
    Ok(loss_cm_eval(preds, &scene_targets(truth))?.components(w))
}

/// Differentiable loss over the rows `slots` of the output `[T, 102]`.
///
/// Sums are divided by `slot_total` and `object_total`, so adding the returned scalars
/// across a batch yields the batch-averaged total.
pub fn graph_loss(
    g: &mut Graph,
    output: Var,
    slots: &[usize],
    targets: &[SceneToken],
    slot_total: usize,
    object_total: usize,
    w: &LossWeights,
) -> Result<(Var, LossSums)> {
    if slots.len() != targets.len() || slots.is_empty() {
        return Err(CoreError::Alignment(format!(
            "{} slots for {} targets",
            slots.len(),
            targets.len()
        )));
    }
    let kinds: Vec<usize> = targets.iter().map(kind_target).collect::<Result<_>>()?;
    let sel = g.gather_rows(output, slots);
    let s_len = slots.len();
    let ends = g.slice_cols(sel, 0, 2);
    let zero = g.constant(Tensor::zeros(&[s_len, 1]));
    let kind_logits = g.concat_cols(&[ends, zero]);
    let kind_ls = g.log_softmax_rows(kind_logits);
    let kind_pick = g.pick(kind_ls, &kinds);
    let kind_sum = g.sum(kind_pick);
    let mut sums = LossSums {
        kind: -g.value(kind_sum).item(),
        slots: s_len,
        ..Default::default()
    };
    for (r, &k) in kinds.iter().enumerate() {
        let row = g.value(kind_logits).row(r);
        sums.kind_correct += usize::from(argmax(row) == k);
    }
    let mut total = g.scale(kind_sum, -1.0 / slot_total.max(1) as f64);

    let objects: Vec<(usize, SceneObject)> = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| match t {
            SceneToken::Object(o) => Some((i, *o)),
            _ => None,
        })
        .collect();
    if !objects.is_empty() {
        let idx: Vec<usize> = objects.iter().map(|(i, _)| *i).collect();
        let rows = g.gather_rows(sel, &idx);
        let ce = |g: &mut Graph, start: usize, width: usize, tgt: Vec<usize>| {
            let logits = g.slice_cols(rows, start, width);
            let ls = g.log_softmax_rows(logits);
            let p = g.pick(ls, &tgt);
            let s = g.sum(p);
            (g.neg(s), logits)
        };
        let (class, class_logits) = ce(
            g,
            CLASS_OFFSET,
            CLASS_COUNT,
            objects.iter().map(|(_, o)| o.class_id).collect(),
        );
        let (sub, _) = ce(
            g,
            SUBTYPE_OFFSET,
            SUBTYPE_COUNT,
            objects.iter().map(|(_, o)| o.subtype_id).collect(),
        );
        let (size, _) = ce(
            g,
            SIZE_OFFSET,
            SIZE_COUNT,
            objects.iter().map(|(_, o)| o.size_id).collect(),
        );
        let (flip, _) = ce(
            g,
            FLIP_OFFSET,
            2,
            objects.iter().map(|(_, o)| usize::from(o.flip)).collect(),
        );
        let raw_xy = g.slice_cols(rows, X_INDEX, 2);
        let xy = g.sigmoid(raw_xy);
        let truth = g.constant(Tensor::from_rows(
            &objects
                .iter()
                .map(|(_, o)| vec![o.x, o.y])
                .collect::<Vec<_>>(),
        )?);
        let diff = g.sub(xy, truth);
        let dist = g.row_norm(diff);
        let xy_sum = g.sum(dist);

        sums.objects = objects.len();
        sums.class = g.value(class).item();
        sums.subtype = g.value(sub).item();
        sums.size = g.value(size).item();
        sums.flip = g.value(flip).item();
        sums.xy = g.value(xy_sum).item();
        for (r, (_, o)) in objects.iter().enumerate() {
            sums.class_correct += usize::from(argmax(g.value(class_logits).row(r)) == o.class_id);
        }

        let inv = 1.0 / object_total.max(1) as f64;
        for (term, weight) in [
            (class, 1.0),
            (sub, w.lambda_sub),
            (size, w.lambda_size),
            (flip, w.lambda_flip),
            (xy_sum, w.lambda_xy),
        ] {
            let t = g.scale(term, weight * inv);
            total = g.add(total, t);
        }
    }
    Ok((total, sums))
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: LossWeights = LossWeights {
        lambda_sub: 0.05,
        lambda_flip: 0.05,
        lambda_size: 0.05,
        lambda_xy: 1.0,
    };

    fn one_hot(n: usize, k: usize) -> Vec<f64> {
        (0..n).map(|i| if i == k { 1e3 } else { 0.0 }).collect()
    }

    fn perfect(o: &SceneObject) -> ObjectPrediction {
        ObjectPrediction {
            kind: [-1e3, -1e3, 0.0],
            class: one_hot(CLASS_COUNT, o.class_id),
            subtype: one_hot(SUBTYPE_COUNT, o.subtype_id),
            size: one_hot(SIZE_COUNT, o.size_id),
            flip: one_hot(2, usize::from(o.flip)),
            position: [o.x, o.y],
        }
    }

    fn end() -> ObjectPrediction {
        ObjectPrediction {
            kind: [-1e3, 1e3, 0.0],
            class: vec![0.0; CLASS_COUNT],
            subtype: vec![0.0; SUBTYPE_COUNT],
            size: vec![0.0; SIZE_COUNT],
            flip: vec![0.0; 2],
            position: [0.5, 0.5],
        }
    }

    fn obj() -> SceneObject {
        SceneObject::new(12, 0, 2, true, 0.3, 0.6).unwrap()
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let scene = Scene::new(vec![obj()]);
        let c = loss_cm(&[perfect(&obj()), end()], &scene, &W).unwrap();
        assert_eq!(c.total, 0.0);
        assert_eq!(c.class_accuracy, 1.0);
    }

    #[test]
    fn uniform_class_logits_cost_ln_58() {
        let mut p = perfect(&obj());
        p.class = vec![0.25; CLASS_COUNT];
        let c = loss_cm(&[p], &Scene::new(vec![obj()]), &W);
        assert!(c.is_err(), "end target missing");
        let mut p = perfect(&obj());
        p.class = vec![0.25; CLASS_COUNT];
        let s = loss_cm_eval(&[p], &[SceneToken::Object(obj())]).unwrap();
        assert!((s.components(&W).l_c - 58f64.ln()).abs() < 1e-12);
        assert!((58f64.ln() - 4.0604).abs() < 1e-4);
    }

    #[test]
    fn three_four_five_position_error() {
        let mut p = perfect(&obj());
        p.position = [obj().x + 0.3, obj().y - 0.4];
        let s = loss_cm_eval(&[p], &[SceneToken::Object(obj())]).unwrap();
        assert!((s.components(&W).l_xy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn start_target_rejected() {
        assert!(matches!(
            loss_cm_eval(&[end()], &[SceneToken::Start]),
            Err(CoreError::Alignment(_))
        ));
    }

    #[test]
    fn graph_and_direct_losses_agree() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|r| {
                (0..102)
                    .map(|c| ((r * 102 + c) as f64 * 0.173).sin() * 2.0)
                    .collect()
            })
            .collect();
        let targets = vec![SceneToken::Object(obj()), SceneToken::End];
        let slots = [1, 3];
        let mut g = Graph::detached();
        let out = g.constant(Tensor::from_rows(&rows).unwrap());
        let (total, sums) = graph_loss(&mut g, out, &slots, &targets, 2, 1, &W).unwrap();
        let preds: Vec<ObjectPrediction> = slots
            .iter()
            .map(|&s| ObjectPrediction::from_output(&rows[s]).unwrap())
            .collect();
        let direct = loss_cm_eval(&preds, &targets).unwrap();
        let a = direct.components(&W);
        assert!((g.value(total).item() - a.total).abs() < 1e-12);
        assert!((sums.class - direct.class).abs() < 1e-12);
        assert!((sums.xy - direct.xy).abs() < 1e-12);
        assert_eq!(sums.kind_correct, direct.kind_correct);
    }
}
