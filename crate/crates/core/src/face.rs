//! Face ROI geometry: face box from landmarks, rigid alignment, skin mask
//! and the block grid used for pooling.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Frame, Point, LANDMARK_COUNT};

/// Box height is this multiple of the chin to eyebrow-center distance.
pub const FACE_HEIGHT_FACTOR: f64 = 1.2;

#[derive(Debug, Error)]
pub enum FaceError {
    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(&'static str),
    #[error("face box lies entirely outside the frame")]
    OutsideFrame,
    #[error("face {width}x{height} is smaller than the {rows}x{cols} grid")]
    GridTooLarge { width: usize, height: usize, rows: usize, cols: usize },
    #[error("grid dimensions must be positive")]
    EmptyGrid,
    #[error("landmark schema: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FaceError>;

/// Semantic landmark index sets. The 81-point ordering depends on the
/// landmark detector, so it lives in configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkSchema {
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub cheek_left: Vec<usize>,
    pub cheek_right: Vec<usize>,
    pub chin: Vec<usize>,
    pub eyebrow_center: Vec<usize>,
}

impl Default for LandmarkSchema {
    /// A 68-point-style contour/brow/eye layout in the first 68 slots.
    fn default() -> Self {
        Self {
            left_eye: (36..=41).collect(),
            right_eye: (42..=47).collect(),
            cheek_left: vec![1],
            cheek_right: vec![15],
            chin: vec![8],
            eyebrow_center: vec![19, 24],
        }
    }
}

impl LandmarkSchema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| FaceError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| FaceError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in self.sets() {
            if set.is_empty() {
                return Err(FaceError::Schema(format!("{name} is empty")));
            }
            if let Some(i) = set.iter().find(|&&i| i >= LANDMARK_COUNT) {
                return Err(FaceError::Schema(format!("{name} index {i} out of range")));
            }
        }
        Ok(())
    }

    fn sets(&self) -> [(&'static str, &[usize]); 6] {
        [
            ("left_eye", &self.left_eye),
            ("right_eye", &self.right_eye),
            ("cheek_left", &self.cheek_left),
            ("cheek_right", &self.cheek_right),
            ("chin", &self.chin),
            ("eyebrow_center", &self.eyebrow_center),
        ]
    }
}

fn centroid(points: &[Point], idx: &[usize]) -> Point {
    let inv = 1.0 / idx.len() as f64;
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(sx, sy), &i| (sx + points[i].x, sy + points[i].y));
    Point::new(sx * inv, sy * inv)
}

/// Rotate `p` about the origin by an angle with the given cos/sin.
#[inline]
fn rotate(p: Point, cos: f64, sin: f64) -> Point {
    Point::new(p.x * cos - p.y * sin, p.x * sin + p.y * cos)
}

/// Oriented face box in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBox {
    pub center: Point,
    pub width: f64,
    pub height: f64,
    /// Angle of the left-to-right eye line, degrees, image coordinates.
    pub rotation_deg: f64,
}

/// Face box from one frame's landmarks.
///
/// The landmarks are first rotated so the eye line is horizontal; width is
/// then the horizontal cheek-to-cheek distance and height is 1.2 times the
/// vertical chin to eyebrow-center distance, with the box bottom on the chin.
pub fn face_box(points: &[Point], schema: &LandmarkSchema) -> Result<FaceBox> {
    if points.len() != LANDMARK_COUNT {
        return Err(FaceError::DegenerateLandmarks("expected 81 landmarks"));
    }
    let left = centroid(points, &schema.left_eye);
    let right = centroid(points, &schema.right_eye);
    let (dx, dy) = (right.x - left.x, right.y - left.y);
    if dx.hypot(dy) < 1e-9 {
        return Err(FaceError::DegenerateLandmarks("coincident eye centers"));
    }
    let theta = dy.atan2(dx);
    let (sin, cos) = theta.sin_cos();
    let upright = |p: Point| rotate(p, cos, -sin);

    let cheek_l = upright(centroid(points, &schema.cheek_left));
    let cheek_r = upright(centroid(points, &schema.cheek_right));
    let chin = upright(centroid(points, &schema.chin));
    let brow = upright(centroid(points, &schema.eyebrow_center));

    let width = (cheek_r.x - cheek_l.x).abs();
    let h = (chin.y - brow.y).abs();
    if width <= 0.0 || h <= 0.0 {
        return Err(FaceError::DegenerateLandmarks("zero-size face box"));
    }
    let height = FACE_HEIGHT_FACTOR * h;
    let cx = 0.5 * (cheek_l.x + cheek_r.x);
    // box grows from the chin towards (and past) the eyebrows
    let cy = if chin.y >= brow.y { chin.y - 0.5 * height } else { chin.y + 0.5 * height };
    Ok(FaceBox {
        center: rotate(Point::new(cx, cy), cos, sin),
        width,
        height,
        rotation_deg: theta.to_degrees(),
    })
}

/// Upright face crop at source resolution; `valid` flags samples that fell
/// inside the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub valid: Vec<bool>,
}

impl AlignedFace {
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Rigid (rotation + translation) resampling of the face box into an
/// axis-aligned crop, bilinear, no scaling.
pub fn align_face(frame: &Frame, fbox: &FaceBox) -> Result<AlignedFace> {
    let out_w = (fbox.width.round() as usize).max(1);
    let out_h = (fbox.height.round() as usize).max(1);
    let (sin, cos) = fbox.rotation_deg.to_radians().sin_cos();
    let half_w = 0.5 * (out_w as f64 - 1.0);
    let half_h = 0.5 * (out_h as f64 - 1.0);
    // snapped to the pixel lattice so an unrotated box is a plain crop
    let ox = (fbox.center.x - cos * half_w + sin * half_h).round();
    let oy = (fbox.center.y - sin * half_w - cos * half_h).round();

    let c = frame.channels;
    let max_x = frame.width as f64 - 1.0;
    let max_y = frame.height as f64 - 1.0;
    let mut data = vec![0f32; out_w * out_h * c];
    let mut valid = vec![false; out_w * out_h];
    let mut any = false;
    for v in 0..out_h {
        for u in 0..out_w {
            let (uf, vf) = (u as f64, v as f64);
            let sx = ox + cos * uf - sin * vf;
            let sy = oy + sin * uf + cos * vf;
            if !(-1e-9..=max_x + 1e-9).contains(&sx) || !(-1e-9..=max_y + 1e-9).contains(&sy) {
                continue;
            }
            let sx = sx.clamp(0.0, max_x);
            let sy = sy.clamp(0.0, max_y);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(frame.width - 1);
            let y1 = (y0 + 1).min(frame.height - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let (p00, p10, p01, p11) =
                (frame.pixel(x0, y0), frame.pixel(x1, y0), frame.pixel(x0, y1), frame.pixel(x1, y1));
            let o = (v * out_w + u) * c;
            for k in 0..c {
                let top = p00[k] as f64 * (1.0 - fx) + p10[k] as f64 * fx;
                let bottom = p01[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
                data[o + k] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
            valid[v * out_w + u] = true;
            any = true;
        }
    }
    if !any {
        return Err(FaceError::OutsideFrame);
    }
    Ok(AlignedFace { width: out_w, height: out_h, channels: c, data, valid })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl SkinMask {
    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|m| **m).count() as f64 / self.data.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|m| *m)
    }
}

/// Fixed YCrCb skin rule: Cr in [133, 173], Cb in [77, 127], Y > 40.
#[inline]
pub fn is_skin(r: f64, g: f64, b: f64) -> bool {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cr = (r - y) * 0.713 + 128.0;
    let cb = (b - y) * 0.564 + 128.0;
    y > 40.0 && (133.0..=173.0).contains(&cr) && (77.0..=127.0).contains(&cb)
}

/// Skin mask of an aligned face. Samples outside the source frame are never
/// skin; single-channel faces pass every valid sample.
pub fn skin_mask(face: &AlignedFace) -> SkinMask {
    let data = (0..face.width * face.height)
        .map(|i| {
            if !face.valid[i] {
                return false;
            }
            if face.channels != 3 {
                return true;
            }
            let p = &face.data[i * 3..i * 3 + 3];
            is_skin(p[0] as f64, p[1] as f64, p[2] as f64)
        })
        .collect();
    SkinMask { width: face.width, height: face.height, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// Row-major block grid over a face crop.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiGrid {
    pub rows: usize,
    pub cols: usize,
    pub regions: Vec<Region>,
}

impl RoiGrid {
    pub fn n_blocks(&self) -> usize {
        self.rows * self.cols
    }
}

/// Equal tiling; remainder pixels go to the last row and column.
pub fn grid_blocks(width: usize, height: usize, rows: usize, cols: usize) -> Result<RoiGrid> {
    if rows == 0 || cols == 0 {
        return Err(FaceError::EmptyGrid);
    }
    if width < cols || height < rows {
        return Err(FaceError::GridTooLarge { width, height, rows, cols });
    }
    let (bw, bh) = (width / cols, height / rows);
    let mut regions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let h = if r + 1 == rows { height - bh * r } else { bh };
        for c in 0..cols {
            let w = if c + 1 == cols { width - bw * c } else { bw };
            regions.push(Region { x: c * bw, y: r * bh, width: w, height: h });
        }
    }
    Ok(RoiGrid { rows, cols, regions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Landmarks with cheeks at x=100/200, eyebrow center y=80, chin y=180.
    fn reference_landmarks() -> Vec<Point> {
        let s = LandmarkSchema::default();
        let mut pts = vec![Point::new(150.0, 130.0); LANDMARK_COUNT];
        for &i in &s.left_eye {
            pts[i] = Point::new(125.0, 100.0);
        }
        for &i in &s.right_eye {
            pts[i] = Point::new(175.0, 100.0);
        }
        pts[s.cheek_left[0]] = Point::new(100.0, 120.0);
        pts[s.cheek_right[0]] = Point::new(200.0, 120.0);
        pts[s.chin[0]] = Point::new(150.0, 180.0);
        pts[s.eyebrow_center[0]] = Point::new(130.0, 80.0);
        pts[s.eyebrow_center[1]] = Point::new(170.0, 80.0);
        pts
    }

    fn transform(pts: &[Point], deg: f64, tx: f64, ty: f64) -> Vec<Point> {
        let (s, c) = deg.to_radians().sin_cos();
        pts.iter().map(|p| {
            let r = rotate(*p, c, s);
            Point::new(r.x + tx, r.y + ty)
        })
        .collect()
    }

    #[test]
    fn reference_box() {
        let b = face_box(&reference_landmarks(), &LandmarkSchema::default()).unwrap();
        assert!((b.width - 100.0).abs() < 1e-12);
        assert!((b.height - 120.0).abs() < 1e-12);
        assert!(b.rotation_deg.abs() < 1e-12);
        assert!((b.center.x - 150.0).abs() < 1e-12);
        assert!((b.center.y - 120.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_box() {
        let pts = transform(&reference_landmarks(), 10.0, 0.0, 0.0);
        let b = face_box(&pts, &LandmarkSchema::default()).unwrap();
        assert!((b.rotation_deg - 10.0).abs() < 1e-9);
        assert!((b.width - 100.0).abs() < 1e-9);
        assert!((b.height - 120.0).abs() < 1e-9);
    }

    #[test]
    fn coincident_eyes_rejected() {
        let s = LandmarkSchema::default();
        let mut pts = reference_landmarks();
        for &i in s.left_eye.iter().chain(&s.right_eye) {
            pts[i] = Point::new(150.0, 100.0);
        }
        assert!(matches!(face_box(&pts, &s), Err(FaceError::DegenerateLandmarks(_))));
    }

    proptest! {
        #[test]
        fn box_invariant_under_rigid_motion(deg in -40.0f64..40.0, tx in -500.0f64..500.0, ty in -500.0f64..500.0) {
            let s = LandmarkSchema::default();
            let base = face_box(&reference_landmarks(), &s).unwrap();
            let moved = face_box(&transform(&reference_landmarks(), deg, tx, ty), &s).unwrap();
            prop_assert!((moved.width - base.width).abs() < 1e-9);
            prop_assert!((moved.height - base.height).abs() < 1e-9);
        }

        #[test]
        fn grid_tiles_exactly(w in 1usize..200, h in 1usize..200, rows in 1usize..8, cols in 1usize..8) {
            prop_assume!(w >= cols && h >= rows);
            let g = grid_blocks(w, h, rows, cols).unwrap();
            prop_assert_eq!(g.regions.len(), rows * cols);
            let mut cover = vec![0u8; w * h];
            for r in &g.regions {
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        cover[y * w + x] += 1;
                    }
                }
            }
            prop_assert!(cover.iter().all(|&c| c == 1));
        }
    }

    fn gradient_frame(w: usize, h: usize) -> Frame {
        let mut f = Frame::filled(w, h, &[0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                f.pixel_mut(x, y).copy_from_slice(&[x as u8, y as u8, (x + y) as u8]);
            }
        }
        f
    }

    #[test]
    fn unrotated_alignment_is_plain_crop() {
        let frame = gradient_frame(64, 48);
        let fbox = FaceBox { center: Point::new(30.0, 20.0), width: 20.0, height: 16.0, rotation_deg: 0.0 };
        let face = align_face(&frame, &fbox).unwrap();
        assert_eq!((face.width, face.height), (20, 16));
        let ox = (30.0f64 - 9.5).round() as usize;
        let oy = (20.0f64 - 7.5).round() as usize;
        for v in 0..16 {
            for u in 0..20 {
                let src = frame.pixel(ox + u, oy + v);
                let dst = face.pixel(u, v);
                for k in 0..3 {
                    assert_eq!(dst[k], src[k] as f32);
                }
            }
        }
        assert!(face.valid.iter().all(|v| *v));
    }

    #[test]
    fn uniform_frame_gives_uniform_crop() {
        let frame = Frame::filled(80, 80, &[200, 140, 120]);
        for deg in [0.0, 7.0, -23.0, 45.0] {
            let fbox = FaceBox { center: Point::new(40.0, 40.0), width: 30.0, height: 36.0, rotation_deg: deg };
            let face = align_face(&frame, &fbox).unwrap();
            for i in 0..face.width * face.height {
                assert!(face.valid[i]);
                let p = &face.data[i * 3..i * 3 + 3];
                assert!((p[0] - 200.0).abs() < 1e-4 && (p[1] - 140.0).abs() < 1e-4 && (p[2] - 120.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn box_outside_frame_rejected() {
        let frame = Frame::filled(32, 32, &[1, 2, 3]);
        let fbox = FaceBox { center: Point::new(500.0, 500.0), width: 20.0, height: 20.0, rotation_deg: 0.0 };
        assert!(matches!(align_face(&frame, &fbox), Err(FaceError::OutsideFrame)));
    }

    #[test]
    fn partially_outside_marks_invalid() {
        let frame = Frame::filled(32, 32, &[1, 2, 3]);
        let fbox = FaceBox { center: Point::new(0.0, 16.0), width: 20.0, height: 20.0, rotation_deg: 0.0 };
        let face = align_face(&frame, &fbox).unwrap();
        let n_valid = face.valid.iter().filter(|v| **v).count();
        assert!(n_valid > 0 && n_valid < face.valid.len());
    }

    fn uniform_face(color: &[f32]) -> AlignedFace {
        let n = 10 * 10;
        AlignedFace {
            width: 10,
            height: 10,
            channels: color.len(),
            data: color.iter().copied().cycle().take(n * color.len()).collect(),
            valid: vec![true; n],
        }
    }

    #[test]
    fn skin_rule() {
        assert!(skin_mask(&uniform_face(&[200.0, 140.0, 120.0])).fraction() > 0.99);
        assert!(skin_mask(&uniform_face(&[0.0, 255.0, 0.0])).fraction() < 0.01);
        let nir = skin_mask(&uniform_face(&[17.0]));
        assert_eq!(nir.fraction(), 1.0);
        let a = uniform_face(&[180.0, 120.0, 100.0]);
        assert_eq!(skin_mask(&a), skin_mask(&a));
    }

    #[test]
    fn grid_sizes() {
        let g = grid_blocks(100, 100, 5, 5).unwrap();
        assert_eq!(g.n_blocks(), 25);
        assert!(g.regions.iter().all(|r| r.width == 20 && r.height == 20));

        let g = grid_blocks(101, 101, 5, 5).unwrap();
        assert_eq!(g.regions[4].width, 21);
        assert_eq!(g.regions[24].height, 21);
        assert_eq!(g.regions[0].width, 20);

        assert!(matches!(grid_blocks(3, 3, 5, 5), Err(FaceError::GridTooLarge { .. })));
        assert!(matches!(grid_blocks(3, 3, 0, 1), Err(FaceError::EmptyGrid)));
    }

    #[test]
    fn schema_toml_round_trip() {
        let s = LandmarkSchema::default();
        assert_eq!(LandmarkSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
        let bad = "left_eye=[1]\nright_eye=[2]\ncheek_left=[3]\ncheek_right=[4]\nchin=[99]\neyebrow_center=[5]\n";
        assert!(LandmarkSchema::from_toml_str(bad).is_err());
    }
}
