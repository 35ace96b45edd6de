//! Torus geometry and a uniform grid for radius queries.

use padsim_core::SeId;

/// Shortest signed displacement from `a` to `b` on a circle of length `side`.
pub fn torus_delta(a: f64, b: f64, side: f64) -> f64 {
    let d = (b - a).rem_euclid(side);
    if d > side / 2.0 {
        d - side
    } else {
        d
    }
}

pub fn torus_distance(a: (f64, f64), b: (f64, f64), side: f64) -> f64 {
    torus_delta(a.0, b.0, side).hypot(torus_delta(a.1, b.1, side))
}

/// Wraps a coordinate into `[0, side)`.
pub fn wrap(x: f64, side: f64) -> f64 {
    let w = x.rem_euclid(side);
    // rem_euclid of a tiny negative number rounds up to `side`.
    if w >= side {
        0.0
    } else {
        w
    }
}

/// Points bucketed into square cells at least `radius` wide, so every point
/// within `radius` of a query lies in the 3×3 block around the query's cell.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    side: f64,
    radius: f64,
    n: usize,
    cell: f64,
    cells: Vec<Vec<(SeId, f64, f64)>>,
}

const MAX_CELLS_PER_AXIS: usize = 1024;

impl SpatialGrid {
    pub fn new(side: f64, radius: f64) -> Self {
        let n = if radius > 0.0 { ((side / radius).floor() as usize).clamp(1, MAX_CELLS_PER_AXIS) } else { 1 };
        SpatialGrid { side, radius, n, cell: side / n as f64, cells: vec![Vec::new(); n * n] }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn index(&self, v: f64) -> usize {
        ((v / self.cell) as usize).min(self.n - 1)
    }

    pub fn clear(&mut self) {
        self.cells.iter_mut().for_each(Vec::clear);
    }

    pub fn insert(&mut self, id: SeId, x: f64, y: f64) {
        let (cx, cy) = (self.index(x), self.index(y));
        self.cells[cy * self.n + cx].push((id, x, y));
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(Vec::is_empty)
    }

    /// Appends every point within `radius` (inclusive, torus metric) of `(x, y)`.
    pub fn neighbors_within(&self, x: f64, y: f64, out: &mut Vec<SeId>) {
        if self.radius <= 0.0 {
            return;
        }
        let r2 = self.radius * self.radius;
        let n = self.n as isize;
        let (cx, cy) = (self.index(x) as isize, self.index(y) as isize);
        let span: &[isize] = if n >= 3 { &[-1, 0, 1] } else { &[0, 1, 2][..self.n] };
        for &dy in span {
            for &dx in span {
                let (gx, gy) = if n >= 3 { ((cx + dx).rem_euclid(n), (cy + dy).rem_euclid(n)) } else { (dx, dy) };
                for &(id, px, py) in &self.cells[(gy * n + gx) as usize] {
                    let ddx = torus_delta(x, px, self.side);
                    let ddy = torus_delta(y, py, self.side);
                    if ddx * ddx + ddy * ddy <= r2 {
                        out.push(id);
                    }
                }
            }
        }
    }
}

/// Linear scan with the same metric, for checking the grid.
pub fn brute_force_within(points: &[(SeId, f64, f64)], x: f64, y: f64, radius: f64, side: f64) -> Vec<SeId> {
    if radius <= 0.0 {
        return Vec::new();
    }
    let r2 = radius * radius;
    points
        .iter()
        .filter(|(_, px, py)| {
            let dx = torus_delta(x, *px, side);
            let dy = torus_delta(y, *py, side);
            dx * dx + dy * dy <= r2
        })
        .map(|(id, _, _)| *id)
        .collect()
}
