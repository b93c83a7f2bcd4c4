//! Top-down orthographic heightmaps, grasp-centric patches and task masks.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Part, Point2, Pose};
use crate::physics::Grasp;

pub const FRAME_SIZE: usize = 256;
pub const FRAME_RESOLUTION: f64 = 1.0;
pub const PATCH_SIZE: usize = 96;
pub const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE;
pub const NOGO_RADIUS: f64 = 20.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("part extends outside the {size}x{size} frame")]
    OutOfFrame { size: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Heightmap in mm above the table; pixel `(row, col)` covers
/// `origin + [col, col+1) x [row, row+1)` scaled by `resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Point2,
    pub values: Vec<f32>,
}

impl DepthImage {
    pub fn zeros(width: usize, height: usize, resolution: f64, origin: Point2) -> Self {
        DepthImage { width, height, resolution, origin, values: vec![0.0; width * height] }
    }

    /// The default frame: 256x256 at 1mm/px centred on the world origin.
    pub fn standard() -> Self {
        let half = 0.5 * FRAME_SIZE as f64 * FRAME_RESOLUTION;
        DepthImage::zeros(FRAME_SIZE, FRAME_SIZE, FRAME_RESOLUTION, Point2::new(-half, -half))
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Point2 {
        self.origin
            + Point2::new((col as f64 + 0.5) * self.resolution, (row as f64 + 0.5) * self.resolution)
    }

    /// Bilinear lookup between pixel centres; samples off the frame read 0.
    pub fn sample_bilinear(&self, p: Point2) -> f32 {
        let inv = 1.0 / self.resolution;
        let fx = (p.x - self.origin.x) * inv - 0.5;
        let fy = (p.y - self.origin.y) * inv - 0.5;
        let (x0, y0) = (floor(fx), floor(fy));
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let (w, h) = (self.width as i64, self.height as i64);
        let (a, b, c, d) = if x0 >= 0 && y0 >= 0 && x0 + 1 < w && y0 + 1 < h {
            let i = (y0 * w + x0) as usize;
            let top = &self.values[i..i + 2];
            let bot = &self.values[i + self.width..i + self.width + 2];
            (top[0], top[1], bot[0], bot[1])
        } else {
            let at = |r: i64, c: i64| -> f32 {
                if r < 0 || c < 0 || r >= h || c >= w {
                    0.0
                } else {
                    self.values[(r * w + c) as usize]
                }
            };
            (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1))
        };
        let top = a * (1.0 - tx) + b * tx;
        let bot = c * (1.0 - tx) + d * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Index of the pixel containing `p`, if on the frame.
    pub fn pixel_at(&self, p: Point2) -> Option<usize> {
        let c = floor((p.x - self.origin.x) / self.resolution);
        let r = floor((p.y - self.origin.y) / self.resolution);
        if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
            return None;
        }
        Some(r as usize * self.width + c as usize)
    }

    /// 16-bit binary PGM, value = round(mm * 100).
    pub fn write_pgm(&self, path: &Path) -> Result<(), RenderError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        for &v in &self.values {
            let q = (v as f64 * 100.0).round().clamp(0.0, 65535.0) as u16;
            out.write_all(&q.to_be_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Binary contact and no-go masks aligned with a `DepthImage`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMasks {
    pub width: usize,
    pub height: usize,
    pub contact: Vec<u8>,
    pub nogo: Vec<u8>,
}

impl TaskMasks {
    pub fn write_pbm(mask: &[u8], width: usize, height: usize, path: &Path) -> Result<(), RenderError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "P4\n{width} {height}\n")?;
        for row in mask.chunks(width) {
            for byte in row.chunks(8) {
                let mut b = 0u8;
                for (i, &m) in byte.iter().enumerate() {
                    if m != 0 {
                        b |= 0x80 >> i;
                    }
                }
                out.write_all(&[b])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Grasp-centric resample, grasp axis along patch columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub depth: Vec<f32>,
    pub masks: Option<[Vec<u8>; 2]>,
}

pub fn render_depth(part: &Part, pose: &Pose) -> Result<DepthImage, RenderError> {
    let mut img = DepthImage::standard();
    render_into(&mut img, part, pose)?;
    Ok(img)
}

pub fn render_into(img: &mut DepthImage, part: &Part, pose: &Pose) -> Result<(), RenderError> {
    let t = pose.transform();
    let lo = img.origin;
    let hi = img.origin
        + Point2::new(img.width as f64 * img.resolution, img.height as f64 * img.resolution);
    let mut crossings: Vec<f64> = Vec::new();
    for region in part.regions() {
        let rings: Vec<Vec<Point2>> =
            region.shape.rings().map(|r| r.iter().map(|&p| t.apply(p)).collect()).collect();
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for p in &rings[0] {
            if p.x < lo.x || p.y < lo.y || p.x > hi.x || p.y > hi.y {
                return Err(RenderError::OutOfFrame { size: img.width });
            }
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
        let z = region.z_high as f32;
        let r0 = (((ymin - lo.y) / img.resolution - 0.5).floor().max(0.0)) as usize;
        let r1 = (((ymax - lo.y) / img.resolution - 0.5).ceil() as usize).min(img.height - 1);
        for row in r0..=r1 {
            let y = lo.y + (row as f64 + 0.5) * img.resolution;
            crossings.clear();
            for ring in &rings {
                let n = ring.len();
                for i in 0..n {
                    let a = ring[i];
                    let b = ring[(i + 1) % n];
                    if (a.y > y) != (b.y > y) {
                        crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                    }
                }
            }
            crossings.sort_by(f64::total_cmp);
            for span in crossings.chunks_exact(2) {
                // pixel centres strictly inside [x0, x1)
                let c0 = ((span[0] - lo.x) / img.resolution - 0.5).ceil().max(0.0) as usize;
                let c1 = ((span[1] - lo.x) / img.resolution - 0.5).ceil();
                let c1 = (c1.max(0.0) as usize).min(img.width);
                let base = row * img.width;
                for v in &mut img.values[base + c0.min(c1)..base + c1] {
                    if *v < z {
                        *v = z;
                    }
                }
            }
        }
    }
    Ok(())
}

/// World position of the insertion-frame origin for a posed part.
pub fn insertion_origin(part: &Part, pose: &Pose) -> Point2 {
    pose.transform().apply(part.insertion_frame().translation())
}

pub fn make_masks(part: &Part, pose: &Pose, depth: &DepthImage) -> TaskMasks {
    let origin = insertion_origin(part, pose);
    let n = depth.width * depth.height;
    let mut contact = vec![0u8; n];
    let mut nogo = vec![0u8; n];
    for row in 0..depth.height {
        for col in 0..depth.width {
            let i = row * depth.width + col;
            if depth.values[i] <= 0.0 {
                continue;
            }
            if (depth.pixel_center(row, col) - origin).norm() < NOGO_RADIUS {
                nogo[i] = 1;
            } else {
                contact[i] = 1;
            }
        }
    }
    TaskMasks { width: depth.width, height: depth.height, contact, nogo }
}

/// World point sampled by patch pixel `(row, col)` for a grasp centred at
/// `center` with axis angle `angle`.
pub fn patch_point(center: Point2, angle: f64, row: usize, col: usize) -> Point2 {
    let h = 0.5 * PATCH_SIZE as f64;
    let local = Point2::new(col as f64 + 0.5 - h, row as f64 + 0.5 - h);
    center + local.rotate(angle)
}

/// `v.floor()` for frame-sized values without the libm call that baseline
/// x86-64 makes for it.
fn floor(v: f64) -> i64 {
    let t = v as i64;
    if (t as f64) > v { t - 1 } else { t }
}

/// 96x96 window around the grasp centre (world coordinates), rotated so the
/// grasp axis runs along the columns.
pub fn extract_patch(depth: &DepthImage, grasp: &Grasp, masks: Option<&TaskMasks>) -> Patch {
    let center = Point2::new(grasp.x, grasp.y);
    let (s, c) = grasp.theta.sin_cos();
    let h = 0.5 * PATCH_SIZE as f64;
    let mut out = vec![0.0f32; PATCH_LEN];
    let mut mk = masks.map(|_| [vec![0u8; PATCH_LEN], vec![0u8; PATCH_LEN]]);
    for row in 0..PATCH_SIZE {
        let ly = row as f64 + 0.5 - h;
        for col in 0..PATCH_SIZE {
            let lx = col as f64 + 0.5 - h;
            let p = Point2::new(center.x + c * lx - s * ly, center.y + s * lx + c * ly);
            let i = row * PATCH_SIZE + col;
            out[i] = depth.sample_bilinear(p);
            if let (Some(m), Some(dst)) = (masks, mk.as_mut()) {
                if let Some(k) = depth.pixel_at(p) {
                    dst[0][i] = m.contact[k];
                    dst[1][i] = m.nogo[k];
                }
            }
        }
    }
    Patch { depth: out, masks: mk }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Family, Polygon, Region, Transform2};

    fn cuboid(w: f64, h: f64, z: f64) -> Part {
        let shape = Polygon::rectangle(Point2::new(-w / 2.0, -h / 2.0), Point2::new(w / 2.0, h / 2.0)).unwrap();
        Part::new(1, Family::Shape, vec![Region { shape, z_low: 0.0, z_high: z }], Transform2::IDENTITY, None)
            .unwrap()
    }

    #[test]
    fn cuboid_covers_hundred_pixels() {
        let img = render_depth(&cuboid(10.0, 10.0, 5.0), &Pose::default()).unwrap();
        assert_eq!(img.values.iter().filter(|&&v| v == 5.0).count(), 100);
        assert_eq!(img.values.iter().filter(|&&v| v != 0.0 && v != 5.0).count(), 0);
    }

    #[test]
    fn out_of_frame_is_error() {
        let r = render_depth(&cuboid(10.0, 10.0, 5.0), &Pose::planar(125.0, 0.0, 0.0));
        assert!(matches!(r, Err(RenderError::OutOfFrame { .. })));
    }

    #[test]
    fn empty_depth_gives_empty_patch() {
        let img = DepthImage::standard();
        let p = extract_patch(&img, &Grasp::new(3.0, -2.0, 1.0, 0.4), None);
        assert!(p.depth.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masks_partition_silhouette() {
        let part = cuboid(60.0, 30.0, 8.0);
        let pose = Pose::planar(10.0, -5.0, 0.3);
        let img = render_depth(&part, &pose).unwrap();
        let m = make_masks(&part, &pose, &img);
        for i in 0..img.values.len() {
            let s = (img.values[i] > 0.0) as u8;
            assert_eq!(m.contact[i] + m.nogo[i], s);
        }
    }
}
