//! Stroke-5 sketches: conversion from absolute polylines, normalization and geometry.
//!
//! Row 0 of every drawing is the fixed initial stroke `[0, 0, 1, 0, 0]`. Each following
//! row is one absolute point, stored as the offset from the previous point (the first
//! point is relative to the origin), tagged with the pen state after that point:
//! `pen_down` inside a polyline, `pen_up` at the end of a polyline, `pen_end` on the
//! very last point. The move into the first point is never drawn.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub type Point = [f64; 2];
pub type Polyline = Vec<Point>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pen {
    Down,
    Up,
    End,
}

impl Pen {
    pub fn index(self) -> usize {
        match self {
            Pen::Down => 0,
            Pen::Up => 1,
            Pen::End => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => Pen::Down,
            1 => Pen::Up,
            _ => Pen::End,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke5 {
    pub dx: f64,
    pub dy: f64,
    pub pen: Pen,
}

impl Stroke5 {
    pub const INITIAL: Stroke5 = Stroke5 {
        dx: 0.0,
        dy: 0.0,
        pen: Pen::Down,
    };

    pub fn new(dx: f64, dy: f64, pen: Pen) -> Self {
        Self { dx, dy, pen }
    }

    /// `[dx, dy, p_down, p_up, p_end]`
    pub fn to_array(&self) -> [f64; 5] {
        let mut a = [self.dx, self.dy, 0.0, 0.0, 0.0];
        a[2 + self.pen.index()] = 1.0;
        a
    }

    pub fn from_array(a: &[f64]) -> Result<Self> {
        if a.len() != 5 {
            return Err(CoreError::Dimension {
                expected: 5,
                got: a.len(),
            });
        }
        let bits = &a[2..];
        if bits.iter().filter(|&&b| b == 1.0).count() != 1
            || bits.iter().any(|&b| b != 0.0 && b != 1.0)
        {
            return Err(CoreError::Input(format!(
                "pen bits {bits:?} are not one-hot"
            )));
        }
        let pen = Pen::from_index(bits.iter().position(|&b| b == 1.0).unwrap_or(0));
        Ok(Self::new(a[0], a[1], pen))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchDrawing {
    pub strokes: Vec<Stroke5>,
    pub category: String,
}

impl SketchDrawing {
    /// Converts absolute polylines into Stroke-5.
    pub fn from_raw(polylines: &[Polyline], category: impl Into<String>) -> Result<Self> {
        if polylines.is_empty() || polylines.iter().any(|p| p.is_empty()) {
            return Err(CoreError::EmptySketch);
        }
        let mut strokes = Vec::with_capacity(1 + polylines.iter().map(Vec::len).sum::<usize>());
        strokes.push(Stroke5::INITIAL);
        let mut prev = [0.0, 0.0];
        for (pi, line) in polylines.iter().enumerate() {
            for (k, p) in line.iter().enumerate() {
                let pen = if k + 1 < line.len() {
                    Pen::Down
                } else if pi + 1 < polylines.len() {
                    Pen::Up
                } else {
                    Pen::End
                };
                strokes.push(Stroke5::new(p[0] - prev[0], p[1] - prev[1], pen));
                prev = *p;
            }
        }
        Ok(Self {
            strokes,
            category: category.into(),
        })
    }

    /// Absolute polylines: the inverse of [`SketchDrawing::from_raw`].
    pub fn to_absolute(&self) -> Vec<Polyline> {
        let mut out: Vec<Polyline> = Vec::new();
        let mut current: Polyline = Vec::new();
        let (mut x, mut y) = (0.0, 0.0);
        for s in self.strokes.iter().skip(1) {
            x += s.dx;
            y += s.dy;
            current.push([x, y]);
            if s.pen != Pen::Down {
                out.push(std::mem::take(&mut current));
            }
            if s.pen == Pen::End {
                break;
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
        out
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        let mut acc = [0.0, 0.0];
        self.strokes.iter().skip(1).map(move |s| {
            acc = [acc[0] + s.dx, acc[1] + s.dy];
            acc
        })
    }

    /// Number of point rows (excluding the initial stroke).
    pub fn len(&self) -> usize {
        self.strokes.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the initial stroke and that `pen_end` appears at most once, last.
    pub fn validate(&self) -> Result<()> {
        if self.strokes.first() != Some(&Stroke5::INITIAL) {
            return Err(CoreError::Input(
                "drawing must start with the initial stroke".into(),
            ));
        }
        let ends: Vec<usize> = self
            .strokes
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, s)| s.pen == Pen::End)
            .map(|(i, _)| i)
            .collect();
        if ends.len() > 1 || ends.first().is_some_and(|&i| i + 1 != self.strokes.len()) {
            return Err(CoreError::Input(
                "pen_end must occur at most once, on the final row".into(),
            ));
        }
        if self
            .strokes
            .iter()
            .any(|s| !s.dx.is_finite() || !s.dy.is_finite())
        {
            return Err(CoreError::Input("non-finite offset".into()));
        }
        Ok(())
    }

    /// Bounding box `(xmin, ymin, xmax, ymax)` of the absolute points.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.points();
        let first = it.next()?;
        Some(it.fold((first[0], first[1], first[0], first[1]), |b, p| {
            (b.0.min(p[0]), b.1.min(p[1]), b.2.max(p[0]), b.3.max(p[1]))
        }))
    }

    /// Translates so the first point sits at the origin (its offset row becomes zero).
    pub fn anchored(&self) -> Self {
        let mut d = self.clone();
        if let Some(s) = d.strokes.get_mut(1) {
            s.dx = 0.0;
            s.dy = 0.0;
        }
        d
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut d = self.clone();
        for s in d.strokes.iter_mut().skip(1) {
            s.dx *= k;
            s.dy *= k;
        }
        d
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut d = self.clone();
        for s in d.strokes.iter_mut() {
            s.dx = -s.dx;
        }
        d
    }

    /// Rows as `[dx, dy, p_down, p_up, p_end]`.
    pub fn to_rows(&self) -> Vec<[f64; 5]> {
        self.strokes.iter().map(Stroke5::to_array).collect()
    }
}

/// Height over width of the drawing's extent.
pub fn aspect_ratio(d: &SketchDrawing) -> Result<f64> {
    let (xmin, ymin, xmax, ymax) = d.bounds().ok_or(CoreError::EmptySketch)?;
    let w = xmax - xmin;
    if w <= 0.0 {
        return Err(CoreError::DegenerateGeometry(
            "drawing has zero width".into(),
        ));
    }
    Ok((ymax - ymin) / w)
}

/// Population standard deviation of all `dx` and `dy` values (initial rows excluded).
pub fn offset_std(drawings: &[SketchDrawing]) -> Result<f64> {
    let values: Vec<f64> = drawings
        .iter()
        .flat_map(|d| d.strokes.iter().skip(1).flat_map(|s| [s.dx, s.dy]))
        .collect();
    if values.is_empty() {
        return Err(CoreError::DegenerateCorpus("corpus has no offsets".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CoreError::DegenerateCorpus(
            "offsets have zero variance".into(),
        ));
    }
    Ok(sigma)
}

/// Divides every offset by the corpus-wide standard deviation; returns it for denormalizing.
pub fn normalize_offsets(drawings: &[SketchDrawing]) -> Result<(Vec<SketchDrawing>, f64)> {
    let sigma = offset_std(drawings)?;
    Ok((
        drawings.iter().map(|d| d.scaled(1.0 / sigma)).collect(),
        sigma,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_segment_layout() {
        let d = SketchDrawing::from_raw(&[vec![[0.0, 0.0], [3.0, 4.0]]], "x").unwrap();
        assert_eq!(
            d.to_rows(),
            vec![
                [0.0, 0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0, 0.0],
                [3.0, 4.0, 0.0, 0.0, 1.0]
            ]
        );
        d.validate().unwrap();
    }

    #[test]
    fn two_polylines_have_one_pen_up() {
        let raw = vec![
            vec![[1.0, 1.0], [2.0, 1.0]],
            vec![[5.0, 5.0], [6.0, 7.0], [7.0, 7.0]],
        ];
        let d = SketchDrawing::from_raw(&raw, "x").unwrap();
        let ups: Vec<usize> = d
            .strokes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.pen == Pen::Up)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ups, vec![2]);
        assert_eq!(d.to_absolute(), raw);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            SketchDrawing::from_raw(&[], "x"),
            Err(CoreError::EmptySketch)
        ));
        assert!(SketchDrawing::from_raw(&[vec![]], "x").is_err());
    }

    #[test]
    fn normalization_examples() {
        let d = SketchDrawing {
            strokes: vec![
                Stroke5::INITIAL,
                Stroke5::new(-1.0, 1.0, Pen::Down),
                Stroke5::new(1.0, -1.0, Pen::End),
            ],
            category: "x".into(),
        };
        let (out, sigma) = normalize_offsets(std::slice::from_ref(&d)).unwrap();
        assert_eq!(sigma, 1.0);
        assert_eq!(out[0], d);
        let (out10, sigma10) = normalize_offsets(&[d.scaled(10.0)]).unwrap();
        assert!((sigma10 - 10.0).abs() < 1e-12);
        for (a, b) in out10[0].strokes.iter().zip(&out[0].strokes) {
            assert!((a.dx - b.dx).abs() < 1e-12 && (a.dy - b.dy).abs() < 1e-12);
        }
        let flat = SketchDrawing {
            strokes: vec![Stroke5::INITIAL, Stroke5::new(0.0, 0.0, Pen::End)],
            category: "x".into(),
        };
        assert!(matches!(
            normalize_offsets(&[flat]),
            Err(CoreError::DegenerateCorpus(_))
        ));
    }

    #[test]
    fn aspect_ratio_examples() {
        let square = SketchDrawing::from_raw(
            &[vec![
                [0.0, 0.0],
                [1.0, 0.0],
                [1.0, 1.0],
                [0.0, 1.0],
                [0.0, 0.0],
            ]],
            "s",
        )
        .unwrap();
        assert_eq!(aspect_ratio(&square).unwrap(), 1.0);
        let wide =
            SketchDrawing::from_raw(&[vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]]], "s")
                .unwrap();
        assert_eq!(aspect_ratio(&wide).unwrap(), 0.5);
        assert!((aspect_ratio(&wide.scaled(3.7)).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(aspect_ratio(&wide.flipped_horizontal()).unwrap(), 0.5);
        let vertical = SketchDrawing::from_raw(&[vec![[0.0, 0.0], [0.0, 5.0]]], "s").unwrap();
        assert!(matches!(
            aspect_ratio(&vertical),
            Err(CoreError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn validate_rejects_misplaced_end() {
        let d = SketchDrawing {
            strokes: vec![
                Stroke5::INITIAL,
                Stroke5::new(1.0, 0.0, Pen::End),
                Stroke5::new(1.0, 0.0, Pen::Down),
            ],
            category: "x".into(),
        };
        assert!(d.validate().is_err());
        let d = SketchDrawing {
            strokes: vec![Stroke5::new(1.0, 0.0, Pen::Down)],
            category: "x".into(),
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn stroke_array_round_trip() {
        let s = Stroke5::new(0.5, -2.0, Pen::Up);
        assert_eq!(Stroke5::from_array(&s.to_array()).unwrap(), s);
        assert!(Stroke5::from_array(&[0.0, 0.0, 1.0, 1.0, 0.0]).is_err());
    }
}
