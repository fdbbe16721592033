//! Procedural rendering of grid scenes.
//!
//! Channels 0..3 carry RGB color, channel 3 carries a material texture
//! (a checkerboard for metal, flat low intensity for rubber). Shapes are
//! drawn as squares, shaded discs (spheres) and flat discs (cylinders).

use crate::tensor::Tensor;

use super::{Scene, SceneObject};

pub const CIN: usize = 4;

/// Image pixels per feature cell along each axis.
pub const PIXELS_PER_CELL: usize = 4;

const RGB: [[f64; 3]; 8] = [
    [0.50, 0.50, 0.50], // gray
    [0.10, 0.25, 0.90], // blue
    [0.55, 0.35, 0.15], // brown
    [0.95, 0.90, 0.10], // yellow
    [0.90, 0.10, 0.10], // red
    [0.10, 0.80, 0.20], // green
    [0.60, 0.20, 0.80], // purple
    [0.10, 0.85, 0.90], // cyan
];

const RADIUS: [f64; 2] = [0.40, 0.26]; // large, small; in cell units
const METAL: [f64; 2] = [1.0, 0.6];
const RUBBER: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    /// `[CIN, 4R, 4C]`
    pub image: Tensor,
    /// One `[R, C]` binary mask per object, stacked as `[n, R, C]`.
    pub segmentation: Tensor,
}

impl Rendering {
    pub fn mask(&self, object: usize) -> &[f64] {
        let (r, c) = (self.segmentation.shape()[1], self.segmentation.shape()[2]);
        &self.segmentation.data()[object * r * c..(object + 1) * r * c]
    }

    /// Feature cells not covered by any object.
    pub fn background(&self) -> Vec<bool> {
        let s = self.segmentation.shape();
        let cells = s[1] * s[2];
        (0..cells)
            .map(|i| (0..s[0]).all(|o| self.segmentation.data()[o * cells + i] == 0.0))
            .collect()
    }
}

struct Placed {
    cx: f64,
    cy: f64,
    r: f64,
}

fn place(o: &SceneObject, cell_w: f64, cell_h: f64) -> Placed {
    Placed {
        cx: (o.col as f64 + 0.5 + o.dx) * cell_w,
        cy: (o.row as f64 + 0.5 + o.dy) * cell_h,
        r: RADIUS[o.size] * cell_w.min(cell_h),
    }
}

/// Shading factor of pixel center (x, y), or `None` outside the object.
fn coverage(o: &SceneObject, p: &Placed, x: f64, y: f64) -> Option<f64> {
    let (ex, ey) = (x - p.cx, y - p.cy);
    match o.shape {
        0 => (ex.abs() <= 0.9 * p.r && ey.abs() <= 0.9 * p.r).then_some(1.0),
        1 => {
            let rho2 = (ex * ex + ey * ey) / (p.r * p.r);
            (rho2 <= 1.0).then_some(1.0 - 0.5 * rho2)
        }
        _ => (ex * ex + ey * ey <= p.r * p.r).then_some(1.0),
    }
}

/// Renders a scene at feature resolution `rows`×`cols` (image is 4× larger).
pub fn render_scene(scene: &Scene, rows: usize, cols: usize) -> Rendering {
    let (h, w) = (rows * PIXELS_PER_CELL, cols * PIXELS_PER_CELL);
    let cell_w = w as f64 / scene.grid as f64;
    let cell_h = h as f64 / scene.grid as f64;
    let mut image = vec![0.0; CIN * h * w];
    // owner[pixel] = object index + 1, 0 for background
    let mut owner = vec![0usize; h * w];
    for (k, o) in scene.objects.iter().enumerate() {
        let p = place(o, cell_w, cell_h);
        let y0 = ((p.cy - p.r).floor().max(0.0)) as usize;
        let y1 = ((p.cy + p.r).ceil() as usize).min(h);
        let x0 = ((p.cx - p.r).floor().max(0.0)) as usize;
        let x1 = ((p.cx + p.r).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let Some(shade) = coverage(o, &p, x as f64 + 0.5, y as f64 + 0.5) else {
                    continue;
                };
                let px = y * w + x;
                owner[px] = k + 1;
                for ch in 0..3 {
                    image[ch * h * w + px] = RGB[o.color][ch] * shade;
                }
                image[3 * h * w + px] = if o.material == 0 { METAL[(x + y) % 2] } else { RUBBER };
            }
        }
    }

    let n = scene.objects.len();
    let mut seg = vec![0.0; n * rows * cols];
    let mut counts = vec![0usize; n];
    let mut best: Vec<(usize, usize)> = vec![(0, 0); n]; // (pixels, cell)
    let half = PIXELS_PER_CELL * PIXELS_PER_CELL / 2;
    for fy in 0..rows {
        for fx in 0..cols {
            let mut per = vec![0usize; n];
            for y in fy * PIXELS_PER_CELL..(fy + 1) * PIXELS_PER_CELL {
                for x in fx * PIXELS_PER_CELL..(fx + 1) * PIXELS_PER_CELL {
                    if let Some(k) = owner[y * w + x].checked_sub(1) {
                        per[k] += 1;
                    }
                }
            }
            let cell = fy * cols + fx;
            for k in 0..n {
                if per[k] > best[k].0 {
                    best[k] = (per[k], cell);
                }
            }
            // first object wins ties
            if let Some((k, &c)) = per.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))) {
                if c >= half {
                    seg[k * rows * cols + cell] = 1.0;
                    counts[k] += 1;
                }
            }
        }
    }
    // Objects too small to own any cell outright keep their best cell.
    for k in 0..n {
        if counts[k] == 0 && best[k].0 > 0 {
            let cell = best[k].1;
            if (0..n).all(|j| seg[j * rows * cols + cell] == 0.0) {
                seg[k * rows * cols + cell] = 1.0;
            }
        }
    }

    Rendering {
        image: Tensor::new(vec![CIN, h, w], image).expect("image shape"),
        segmentation: Tensor::new(vec![n, rows, cols], seg).expect("segmentation shape"),
    }
}
