//! Padded, time-major tensors for a batch of normalized drawings.

use sketchdial_nn::Tensor;

use crate::error::{CoreError, Result};
use crate::raster::{drawing_mask, Bitmap};
use crate::stroke::{aspect_ratio, Pen, SketchDrawing, Stroke5};

/// Row that pads every sequence past its end: pen already lifted for good.
pub const PAD_ROW: [f64; 5] = [0.0, 0.0, 0.0, 0.0, 1.0];

/// Conditioning inputs: a filled outline mask and the height-to-width ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorCondition {
    pub mask: Bitmap,
    pub ratio: f64,
}

impl GeneratorCondition {
    pub fn new(mask: Bitmap, ratio: f64) -> Result<Self> {
        if mask.width() != mask.height() {
            return Err(CoreError::Input(format!(
                "mask must be square, got {}x{}",
                mask.width(),
                mask.height()
            )));
        }
        if !(ratio >= 0.0 && ratio.is_finite()) {
            return Err(CoreError::Input(format!(
                "aspect ratio {ratio} must be finite and non-negative"
            )));
        }
        Ok(Self { mask, ratio })
    }

    /// The drawing's own mask and ratio; a zero-width drawing takes `ratio_max`.
    pub fn from_drawing(d: &SketchDrawing, resolution: usize, ratio_max: f64) -> Result<Self> {
        let ratio = match aspect_ratio(d) {
            Ok(r) => r.min(ratio_max),
            Err(CoreError::DegenerateGeometry(_)) => ratio_max,
            Err(e) => return Err(e),
        };
        Self::new(drawing_mask(d, resolution)?, ratio)
    }

    pub fn from_clipart(
        mapping: &crate::clipart::ClipArtMapping,
        class_id: usize,
        subtype_id: usize,
        flip: bool,
        resolution: usize,
    ) -> Result<Self> {
        Self::new(
            mapping.mask(class_id, subtype_id, flip, resolution)?,
            mapping.aspect_ratio(class_id, subtype_id)?,
        )
    }

    pub fn flipped(&self) -> Self {
        Self {
            mask: self.mask.flipped_horizontal(),
            ratio: self.ratio,
        }
    }
}

/// A training drawing with its condition precomputed.
#[derive(Clone, Debug)]
pub struct PreparedSketch {
    pub drawing: SketchDrawing,
    pub condition: GeneratorCondition,
}

#[derive(Clone, Debug)]
pub struct StrokeBatch {
    pub batch: usize,
    /// Decoder steps per sequence.
    pub steps: usize,
    /// Encoder input: point rows, `[steps * batch, 5]`, zero past each length.
    pub encoder_inputs: Tensor,
    /// Per encoder step `[batch, 1]`: 1 while the sequence is still running.
    pub encoder_masks: Vec<Tensor>,
    /// Decoder input: the row preceding each target, `[steps * batch, 5]`.
    pub decoder_inputs: Tensor,
    /// Time-major indices of targets that are real points (scored by the offset likelihood).
    pub offset_rows: Vec<usize>,
    pub target_dx: Tensor,
    pub target_dy: Tensor,
    /// Pen class of every target row, padding included.
    pub target_pen: Vec<usize>,
    pub masks: Tensor,
    pub ratios: Tensor,
}

fn row(d: &SketchDrawing, i: usize) -> [f64; 5] {
    d.strokes.get(i).map_or(PAD_ROW, Stroke5::to_array)
}

impl StrokeBatch {
    /// Packs sketches padded to `steps` point rows (at least the longest one).
    pub fn new(items: &[&PreparedSketch], steps: usize, ratio_max: f64) -> Result<Self> {
        if items.is_empty() {
            return Err(CoreError::Input("empty batch".into()));
        }
        let b = items.len();
        let longest = items.iter().map(|p| p.drawing.len()).max().unwrap_or(0);
        if longest == 0 {
            return Err(CoreError::EmptySketch);
        }
        if steps < longest {
            return Err(CoreError::Input(format!(
                "{steps} steps cannot hold a drawing of {longest} points"
            )));
        }
        let res = items[0].condition.mask.width();
        let mut enc = Vec::with_capacity(steps * b * 5);
        let mut dec = Vec::with_capacity(steps * b * 5);
        let mut masks = Vec::with_capacity(steps);
        let mut offset_rows = Vec::new();
        let mut dx = Vec::new();
        let mut dy = Vec::new();
        let mut pens = Vec::with_capacity(steps * b);
        for t in 0..steps {
            let mut m = Vec::with_capacity(b);
            for (j, p) in items.iter().enumerate() {
                let d = &p.drawing;
                let n = d.len();
                if t < n {
                    enc.extend_from_slice(&row(d, t + 1));
                    m.push(1.0);
                } else {
                    enc.extend_from_slice(&[0.0; 5]);
                    m.push(0.0);
                }
                dec.extend_from_slice(&row(d, t));
                let target = row(d, t + 1);
                if t < n {
                    offset_rows.push(t * b + j);
                    dx.push(target[0]);
                    dy.push(target[1]);
                }
                pens.push(if t < n {
                    d.strokes[t + 1].pen.index()
                } else {
                    Pen::End.index()
                });
            }
            masks.push(Tensor::new(&[b, 1], m)?);
        }
        let mut mask_data = Vec::with_capacity(b * res * res);
        let mut ratios = Vec::with_capacity(b);
        for p in items {
            if p.condition.mask.width() != res {
                return Err(CoreError::Input(
                    "masks in a batch differ in resolution".into(),
                ));
            }
            mask_data.extend(p.condition.mask.to_f64());
            ratios.push(p.condition.ratio.clamp(0.0, ratio_max));
        }
        let k = offset_rows.len();
        Ok(Self {
            batch: b,
            steps,
            encoder_inputs: Tensor::new(&[steps * b, 5], enc)?,
            encoder_masks: masks,
            decoder_inputs: Tensor::new(&[steps * b, 5], dec)?,
            offset_rows,
            target_dx: Tensor::new(&[k, 1], dx)?,
            target_dy: Tensor::new(&[k, 1], dy)?,
            target_pen: pens,
            masks: Tensor::new(&[b, res * res], mask_data)?,
            ratios: Tensor::new(&[b, 1], ratios)?,
        })
    }
}
