/// A 4-connected region of mask cells at or above a threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    /// Flat cell indices (`row * cols + col`), in scan order.
    pub cells: Vec<usize>,
    /// Sum of mask values over the cells.
    pub mass: f64,
    /// Mask-weighted mean `(row, col)`, in cell units.
    pub center: (f64, f64),
}

impl Component {
    /// Cell containing the center of mass. Cell `i` spans `[i - 0.5, i + 0.5)`.
    pub fn center_cell(&self, rows: usize, cols: usize) -> usize {
        let snap = |x: f64, n: usize| ((x + 0.5).floor().max(0.0) as usize).min(n - 1);
        snap(self.center.0, rows) * cols + snap(self.center.1, cols)
    }
}

/// Connected components of `{cells >= threshold}`, ordered by first cell.
pub fn attended_components(mask: &[f64], rows: usize, cols: usize, threshold: f64) -> Vec<Component> {
    assert_eq!(mask.len(), rows * cols, "mask is not {rows}x{cols}");
    let on: Vec<bool> = mask.iter().map(|&v| v >= threshold).collect();
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut cells = Vec::new();
        while let Some(i) = stack.pop() {
            cells.push(i);
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if on[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        cells.sort_unstable();
        let mass: f64 = cells.iter().map(|&i| mask[i]).sum();
        let (mut sr, mut sc) = (0.0, 0.0);
        for &i in &cells {
            sr += mask[i] * (i / cols) as f64;
            sc += mask[i] * (i % cols) as f64;
        }
        out.push(Component {
            cells,
            mass,
            center: (sr / mass, sc / mass),
        });
    }
    out
}
