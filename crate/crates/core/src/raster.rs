//! Bitmaps, line rasterization and span-filled outline masks.

use std::io::Write;

use crate::error::{CoreError, Result};
use crate::stroke::{Polyline, SketchDrawing};

pub const MASK_RESOLUTION: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bitmap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CoreError::Input("bitmap needs a positive size".into()));
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width * height],
        })
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(CoreError::Input(format!(
                "{} bits for a {width}x{height} bitmap",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixels as `0.0`/`1.0`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, self.get(self.width - 1 - x, y));
            }
        }
        out
    }

    /// `true` where either bitmap is set.
    pub fn union(&self, other: &Bitmap) -> Self {
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a || *b)
            .collect();
        Self {
            bits,
            ..self.clone()
        }
    }

    pub fn is_subset_of(&self, other: &Bitmap) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Plain ASCII portable bitmap (`P1`).
    pub fn write_pbm(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "P1\n{} {}", self.width, self.height)?;
        for y in 0..self.height {
            let row: Vec<&str> = (0..self.width)
                .map(|x| if self.get(x, y) { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    /// 8-bit grayscale PNG with ink drawn black on white.
    pub fn write_png(&self, w: impl Write) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| CoreError::Io(std::io::Error::other(e)))?;
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 0 } else { 255 }).collect();
        writer
            .write_image_data(&data)
            .map_err(|e| CoreError::Io(std::io::Error::other(e)))?;
        Ok(())
    }
}

/// Sets every pixel of the 8-connected Bresenham line between two pixels.
pub fn draw_line(b: &mut Bitmap, from: (i64, i64), to: (i64, i64)) {
    let (mut x0, mut y0) = from;
    let (x1, y1) = to;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as usize) < b.width && (y0 as usize) < b.height {
            b.set(x0 as usize, y0 as usize, true);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Rasterizes absolute polylines, fitted to the grid with preserved aspect ratio, centered,
/// leaving a one-pixel margin. Single-point polylines become single pixels.
pub fn render_polylines(lines: &[Polyline], width: usize, height: usize) -> Result<Bitmap> {
    let mut b = Bitmap::new(width, height)?;
    let pts: Vec<[f64; 2]> = lines.iter().flatten().copied().collect();
    if pts.is_empty() {
        return Ok(b);
    }
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &pts {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let span_w = width.saturating_sub(3) as f64;
    let span_h = height.saturating_sub(3) as f64;
    let (bw, bh) = (xmax - xmin, ymax - ymin);
    let scale = match (bw > 0.0, bh > 0.0) {
        (true, true) => (span_w / bw).min(span_h / bh),
        (true, false) => span_w / bw,
        (false, true) => span_h / bh,
        (false, false) => 0.0,
    };
    let (cx, cy) = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0);
    let (px, py) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let to_pixel = |p: &[f64; 2]| -> (i64, i64) {
        let x = (px + (p[0] - cx) * scale).round() as i64;
        let y = (py + (p[1] - cy) * scale).round() as i64;
        (x.clamp(0, width as i64 - 1), y.clamp(0, height as i64 - 1))
    };
    for line in lines {
        if line.len() == 1 {
            let p = to_pixel(&line[0]);
            draw_line(&mut b, p, p);
        }
        for w in line.windows(2) {
            draw_line(&mut b, to_pixel(&w[0]), to_pixel(&w[1]));
        }
    }
    Ok(b)
}

pub fn render(d: &SketchDrawing, width: usize, height: usize) -> Result<Bitmap> {
    render_polylines(&d.to_absolute(), width, height)
}

/// Span-filled outline mask: a pixel is set when it lies between the leftmost and
/// rightmost ink of its row, or between the topmost and bottommost ink of its column.
pub fn build_mask(b: &Bitmap) -> Bitmap {
    let (w, h) = (b.width, b.height);
    let mut out = Bitmap {
        width: w,
        height: h,
        bits: vec![false; w * h],
    };
    for y in 0..h {
        let row = &b.bits[y * w..(y + 1) * w];
        if let (Some(l), Some(r)) = (row.iter().position(|&v| v), row.iter().rposition(|&v| v)) {
            out.bits[y * w + l..=y * w + r]
                .iter_mut()
                .for_each(|v| *v = true);
        }
    }
    for x in 0..w {
        let top = (0..h).find(|&y| b.get(x, y));
        let bottom = (0..h).rev().find(|&y| b.get(x, y));
        if let (Some(t), Some(bt)) = (top, bottom) {
            for y in t..=bt {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Masks for clip-art silhouettes use exactly the same span construction.
pub fn mask_from_clipart(silhouette: &Bitmap) -> Bitmap {
    build_mask(silhouette)
}

/// Mask of a drawing rendered at `res × res`.
pub fn drawing_mask(d: &SketchDrawing, res: usize) -> Result<Bitmap> {
    Ok(build_mask(&render(d, res, res)?))
}

/// Intersection over union; two blank bitmaps count as identical.
pub fn iou(a: &Bitmap, b: &Bitmap) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(CoreError::Input("IoU of differently sized bitmaps".into()));
    }
    let (mut inter, mut uni) = (0usize, 0usize);
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(*x && *y);
        uni += usize::from(*x || *y);
    }
    Ok(if uni == 0 {
        1.0
    } else {
        inter as f64 / uni as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_ascii(rows: &[&str]) -> Bitmap {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        Bitmap::from_bits(w, h, bits).unwrap()
    }

    #[test]
    fn horizontal_segment_occupies_one_row() {
        let b = render_polylines(&[vec![[0.0, 0.0], [5.0, 0.0]]], 8, 8).unwrap();
        let rows = (0..8).filter(|&y| (0..8).any(|x| b.get(x, y))).count();
        assert_eq!(rows, 1);
        assert_eq!(b.count(), 6);
    }

    #[test]
    fn stationary_drawing_is_one_pixel() {
        let b = render_polylines(&[vec![[2.0, 2.0], [2.0, 2.0]]], 8, 8).unwrap();
        assert_eq!(b.count(), 1);
        let b = render_polylines(&[vec![[2.0, 2.0]]], 8, 8).unwrap();
        assert_eq!(b.count(), 1);
    }

    #[test]
    fn diagonal_has_at_least_length_pixels() {
        for k in 1..20 {
            let mut b = Bitmap::new(32, 32).unwrap();
            draw_line(&mut b, (0, 0), (k, k / 2));
            assert!(b.count() as i64 >= k + 1);
        }
    }

    #[test]
    fn margin_and_centering() {
        let b = render_polylines(&[vec![[0.0, 0.0], [10.0, 10.0]]], 16, 16).unwrap();
        assert!(b.get(1, 1) && b.get(14, 14));
        assert!(!b.get(0, 0) && !b.get(15, 15));
    }

    #[test]
    fn hollow_rectangle_fills() {
        let b = from_ascii(&["......", ".####.", ".#..#.", ".#..#.", ".####.", "......"]);
        let m = build_mask(&b);
        let expect = from_ascii(&["......", ".####.", ".####.", ".####.", ".####.", "......"]);
        assert_eq!(m, expect);
    }

    #[test]
    fn single_pixel_and_blank() {
        let b = from_ascii(&["...", ".#.", "..."]);
        assert_eq!(build_mask(&b), b);
        let blank = Bitmap::new(4, 4).unwrap();
        assert_eq!(build_mask(&blank), blank);
    }

    #[test]
    fn s_shape_loses_concavity() {
        let b = from_ascii(&[
            "#####", //
            "#....", //
            "#####", //
            "....#", //
            "#####",
        ]);
        let m = build_mask(&b);
        assert_eq!(m.count(), 25);
        assert!(b.is_subset_of(&m));
    }

    #[test]
    fn iou_cases() {
        let a = from_ascii(&["##", ".."]);
        let b = from_ascii(&["#.", "#."]);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let blank = Bitmap::new(2, 2).unwrap();
        assert_eq!(iou(&blank, &blank).unwrap(), 1.0);
    }

    #[test]
    fn pbm_and_png_output() {
        let b = from_ascii(&["#.", ".#"]);
        let mut pbm = Vec::new();
        b.write_pbm(&mut pbm).unwrap();
        assert_eq!(String::from_utf8(pbm).unwrap(), "P1\n2 2\n1 0\n0 1\n");
        let mut png_bytes = Vec::new();
        b.write_png(&mut png_bytes).unwrap();
        assert_eq!(&png_bytes[1..4], b"PNG");
    }
}
