//! Node deployment, the cell / square / rectangle partition of the box, and
//! the geometric predicates used by routing and load analysis.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{param, Error, Result};
use crate::seed;

/// Slack used when turning real-valued grid ratios into integer counts.
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(self.x + t * (other.x - self.x), self.y + t * (other.y - self.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }
}

/// Nodes of one Poisson deployment on the square box `[0, side]²`.
///
/// Node ids are dense and follow the order in which the seeded RNG placed them.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub side: f64,
    pub intensity: f64,
    pub seed: u64,
    positions: Vec<Point>,
}

impl NodeField {
    pub fn from_positions(side: f64, intensity: f64, seed: u64, positions: Vec<Point>) -> Self {
        Self { side, intensity, seed, positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, id: NodeId) -> Point {
        self.positions[id.index()]
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, Point)> + '_ {
        self.positions.iter().enumerate().map(|(i, p)| (NodeId(i as u32), *p))
    }

    /// Writes the `# side intensity seed` header followed by one `id x y` row per node.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {} {} {}", fmt_sig(self.side), fmt_sig(self.intensity), self.seed)?;
        for (id, p) in self.nodes() {
            writeln!(out, "{} {} {}", id, fmt_sig(p.x), fmt_sig(p.y))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Usage("empty node table".into()))??;
        let fields: Vec<&str> = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Usage("node table header must start with '#'".into()))?
            .split_whitespace()
            .collect();
        if fields.len() != 3 {
            return Err(Error::Usage(format!("bad node table header: {header}")));
        }
        let side = parse_f64(fields[0])?;
        let intensity = parse_f64(fields[1])?;
        let seed = fields[2].parse::<u64>().map_err(|e| Error::Usage(format!("bad seed {:?}: {e}", fields[2])))?;
        let mut positions = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(Error::Usage(format!("bad node row: {line}")));
            }
            let id: usize = cols[0].parse().map_err(|e| Error::Usage(format!("bad node id {:?}: {e}", cols[0])))?;
            if id != positions.len() {
                return Err(Error::Usage(format!("node ids must be dense, got {id}")));
            }
            positions.push(Point::new(parse_f64(cols[1])?, parse_f64(cols[2])?));
        }
        Ok(Self { side, intensity, seed, positions })
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Usage(format!("bad number {s:?}: {e}")))
}

/// Nine significant digits in scientific notation.
pub(crate) fn fmt_sig(v: f64) -> String {
    format!("{v:.8e}")
}

/// Deploys a homogeneous Poisson point process on `[0, side]²`.
pub fn deploy_poisson(intensity: f64, side: f64, seed: u64) -> Result<NodeField> {
    if !(intensity > 0.0) || !intensity.is_finite() {
        return param(format!("intensity must be positive, got {intensity}"));
    }
    if !(side > 0.0) || !side.is_finite() {
        return param(format!("side must be positive, got {side}"));
    }
    let mut rng = seed::rng(seed, &[seed::stream::DEPLOY]);
    let mean = intensity * side * side;
    let count = Poisson::new(mean).map_err(|e| Error::Parameter(format!("poisson mean {mean}: {e}")))?.sample(&mut rng)
        as usize;
    let positions = (0..count).map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side)).collect();
    Ok(NodeField { side, intensity, seed, positions })
}

/// Probability that a cell of side `c` holds at least one node of a unit-intensity process.
pub fn open_probability(c: f64) -> f64 {
    -(-c * c).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellCoord {
    pub col: u32,
    pub row: u32,
}

impl CellCoord {
    pub const fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }

    pub fn is_adjacent(&self, other: &CellCoord) -> bool {
        let dc = (self.col as i64 - other.col as i64).abs();
        let dr = (self.row as i64 - other.row as i64).abs();
        dc + dr == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SquareId {
    pub col: u32,
    pub row: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    /// Left-to-right paths inside a horizontal rectangle.
    LeftRight,
    /// Top-to-bottom paths inside a vertical rectangle.
    TopBottom,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::LeftRight => "LR",
            Orientation::TopBottom => "TB",
        })
    }
}

/// A horizontal (`LeftRight`) or vertical (`TopBottom`) rectangle, one square thick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RectId {
    pub orientation: Orientation,
    pub index: u32,
}

impl RectId {
    pub fn horizontal(index: u32) -> Self {
        Self { orientation: Orientation::LeftRight, index }
    }

    pub fn vertical(index: u32) -> Self {
        Self { orientation: Orientation::TopBottom, index }
    }
}

impl fmt::Display for RectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.orientation {
            Orientation::LeftRight => write!(f, "H{}", self.index),
            Orientation::TopBottom => write!(f, "V{}", self.index),
        }
    }
}

/// Cell grid, square grid and rectangle index over the box.
///
/// Squares have side exactly `c1 ln n` (n = side²) and are laid from the
/// origin; `floor(side / square_side)` of them fit per box side and the
/// leftover strip along the top and right edges is the margin. Cells split
/// each square into `ceil(square_side / c)` per side, so the realised cell side
/// never exceeds `c`. The cell lattice continues into the margin so every
/// point of the box has a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub side: f64,
    pub c: f64,
    pub c1: f64,
    pub cell_side: f64,
    pub square_side: f64,
    pub cells_per_square_side: u32,
    pub squares_per_box_side: u32,
    /// Number of cell columns (and rows) covering the whole box, margin included.
    pub cells_per_box_side: u32,
}

impl Partition {
    pub fn new(side: f64, c: f64, c1: f64) -> Result<Self> {
        if !(side > 0.0 && c > 0.0 && c1 > 0.0) {
            return param(format!("partition needs positive side, c, c1 (got {side}, {c}, {c1})"));
        }
        let log_n = (side * side).ln();
        if !(log_n > 0.0) {
            return param(format!("box side {side} gives ln n <= 0"));
        }
        let square_side = c1 * log_n;
        let squares = (side / square_side + GRID_EPS).floor();
        if squares < 1.0 {
            return param(format!("box side {side} is smaller than one square of side {square_side}"));
        }
        let cells_per_square_side = (square_side / c - GRID_EPS).ceil().max(1.0) as u32;
        let cell_side = square_side / cells_per_square_side as f64;
        let cells_per_box_side = (side / cell_side - GRID_EPS).ceil().max(1.0) as u32;
        Ok(Self {
            side,
            c,
            c1,
            cell_side,
            square_side,
            cells_per_square_side,
            squares_per_box_side: squares as u32,
            cells_per_box_side,
        })
    }

    /// `n` for a unit-intensity deployment on this box.
    pub fn n(&self) -> f64 {
        self.side * self.side
    }

    pub fn log_n(&self) -> f64 {
        self.n().ln()
    }

    /// Side of the region covered by squares.
    pub fn grid_extent(&self) -> f64 {
        self.squares_per_box_side as f64 * self.square_side
    }

    /// Cells along one side of the squared region.
    pub fn grid_cells(&self) -> u32 {
        self.squares_per_box_side * self.cells_per_square_side
    }

    pub fn square_count(&self) -> usize {
        (self.squares_per_box_side as usize).pow(2)
    }

    pub fn cell_count(&self) -> usize {
        (self.cells_per_box_side as usize).pow(2)
    }

    pub fn cell_of(&self, p: &Point) -> CellCoord {
        let last = self.cells_per_box_side - 1;
        let col = ((p.x / self.cell_side).floor().max(0.0) as u32).min(last);
        let row = ((p.y / self.cell_side).floor().max(0.0) as u32).min(last);
        CellCoord { col, row }
    }

    pub fn cell_index(&self, cell: CellCoord) -> usize {
        cell.row as usize * self.cells_per_box_side as usize + cell.col as usize
    }

    pub fn cell_from_index(&self, index: usize) -> CellCoord {
        let w = self.cells_per_box_side as usize;
        CellCoord::new((index % w) as u32, (index / w) as u32)
    }

    pub fn cell_rect(&self, cell: CellCoord) -> Rect {
        let s = self.cell_side;
        let x0 = cell.col as f64 * s;
        let y0 = cell.row as f64 * s;
        Rect::new(x0, y0, (x0 + s).min(self.side), (y0 + s).min(self.side))
    }

    pub fn square_of_cell(&self, cell: CellCoord) -> Option<SquareId> {
        let m = self.cells_per_square_side;
        let k = self.squares_per_box_side;
        let (col, row) = (cell.col / m, cell.row / m);
        (col < k && row < k).then_some(SquareId { col, row })
    }

    pub fn square_of(&self, p: &Point) -> Option<SquareId> {
        self.square_of_cell(self.cell_of(p))
    }

    /// Square of the point after clamping it onto the squared region.
    pub fn clamped_square_of(&self, p: &Point) -> SquareId {
        let last = self.squares_per_box_side - 1;
        let col = ((p.x / self.square_side).floor().max(0.0) as u32).min(last);
        let row = ((p.y / self.square_side).floor().max(0.0) as u32).min(last);
        SquareId { col, row }
    }

    pub fn clamp_to_grid(&self, p: &Point) -> Point {
        let g = self.grid_extent();
        Point::new(p.x.clamp(0.0, g), p.y.clamp(0.0, g))
    }

    pub fn square_index(&self, sq: SquareId) -> usize {
        sq.row as usize * self.squares_per_box_side as usize + sq.col as usize
    }

    pub fn square_from_index(&self, index: usize) -> SquareId {
        let k = self.squares_per_box_side as usize;
        SquareId { col: (index % k) as u32, row: (index / k) as u32 }
    }

    pub fn square_rect(&self, sq: SquareId) -> Rect {
        let s = self.square_side;
        Rect::new(sq.col as f64 * s, sq.row as f64 * s, (sq.col + 1) as f64 * s, (sq.row + 1) as f64 * s)
    }

    pub fn squares(&self) -> impl Iterator<Item = SquareId> + '_ {
        (0..self.square_count()).map(|i| self.square_from_index(i))
    }

    /// All rectangles: horizontal ones first, then vertical ones.
    pub fn rectangles(&self) -> impl Iterator<Item = RectId> {
        let k = self.squares_per_box_side;
        (0..k).map(RectId::horizontal).chain((0..k).map(RectId::vertical))
    }

    /// Cell-coordinate origin and (rows, cols) of a rectangle, in its own orientation.
    ///
    /// Horizontal rectangles are `m` rows by `k·m` columns; vertical ones are
    /// `k·m` rows by `m` columns. Local row 0 is the lowest (smallest y).
    pub fn rect_cells(&self, rect: RectId) -> (CellCoord, u32, u32) {
        let m = self.cells_per_square_side;
        let long = self.grid_cells();
        match rect.orientation {
            Orientation::LeftRight => (CellCoord::new(0, rect.index * m), m, long),
            Orientation::TopBottom => (CellCoord::new(rect.index * m, 0), long, m),
        }
    }

    /// Rectangle of the given orientation passing through a square.
    pub fn rect_through(&self, sq: SquareId, orientation: Orientation) -> RectId {
        match orientation {
            Orientation::LeftRight => RectId::horizontal(sq.row),
            Orientation::TopBottom => RectId::vertical(sq.col),
        }
    }
}

/// Per-cell occupancy for one deployment on one partition.
///
/// A cell is open iff at least one node lies in it.
#[derive(Debug, Clone)]
pub struct SiteGrid {
    cells_per_side: u32,
    offsets: Vec<u32>,
    occupants: Vec<NodeId>,
    node_cell: Vec<u32>,
}

impl SiteGrid {
    pub fn is_open(&self, index: usize) -> bool {
        self.offsets[index + 1] > self.offsets[index]
    }

    pub fn occupants(&self, index: usize) -> &[NodeId] {
        &self.occupants[self.offsets[index] as usize..self.offsets[index + 1] as usize]
    }

    pub fn cell_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn cells_per_side(&self) -> u32 {
        self.cells_per_side
    }

    /// Cell index holding a node.
    pub fn cell_of_node(&self, id: NodeId) -> usize {
        self.node_cell[id.index()] as usize
    }

    pub fn open_count(&self) -> usize {
        (0..self.cell_count()).filter(|&i| self.is_open(i)).count()
    }

    /// Openness of the cells that make up a rectangle, row-major with local row 0 lowest.
    pub fn rect_view(&self, partition: &Partition, rect: RectId) -> LocalGrid {
        let (origin, rows, cols) = partition.rect_cells(rect);
        let mut open = Vec::with_capacity((rows * cols) as usize);
        for r in 0..rows {
            for c in 0..cols {
                let cell = CellCoord::new(origin.col + c, origin.row + r);
                open.push(self.is_open(partition.cell_index(cell)));
            }
        }
        LocalGrid { rows, cols, open }
    }
}

/// Builds the occupancy of every cell of the partition.
pub fn classify_sites(field: &NodeField, partition: &Partition) -> Result<SiteGrid> {
    if (field.side - partition.side).abs() > GRID_EPS * partition.side.max(1.0) {
        return param(format!("field side {} does not match partition side {}", field.side, partition.side));
    }
    let cells = partition.cell_count();
    let node_cell: Vec<u32> =
        field.positions().iter().map(|p| partition.cell_index(partition.cell_of(p)) as u32).collect();
    let mut offsets = vec![0u32; cells + 1];
    for &c in &node_cell {
        offsets[c as usize + 1] += 1;
    }
    for i in 0..cells {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut occupants = vec![NodeId(0); node_cell.len()];
    for (i, &c) in node_cell.iter().enumerate() {
        occupants[fill[c as usize] as usize] = NodeId(i as u32);
        fill[c as usize] += 1;
    }
    Ok(SiteGrid { cells_per_side: partition.cells_per_box_side, offsets, occupants, node_cell })
}

/// Open/closed pattern of a rectangle in its local frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalGrid {
    pub rows: u32,
    pub cols: u32,
    pub open: Vec<bool>,
}

impl LocalGrid {
    pub fn new(rows: u32, cols: u32, open: Vec<bool>) -> Self {
        assert_eq!(open.len(), (rows * cols) as usize, "grid size mismatch");
        Self { rows, cols, open }
    }

    pub fn filled(rows: u32, cols: u32, value: bool) -> Self {
        Self::new(rows, cols, vec![value; (rows * cols) as usize])
    }

    #[inline]
    pub fn is_open(&self, row: u32, col: u32) -> bool {
        self.open[(row * self.cols + col) as usize]
    }

    pub fn transpose(&self) -> LocalGrid {
        let mut open = Vec::with_capacity(self.open.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                open.push(self.is_open(r, c));
            }
        }
        LocalGrid { rows: self.cols, cols: self.rows, open }
    }
}

/// True iff the closed segment `ab` meets the closed rectangle (touching counts).
pub fn segment_crosses_square(a: &Point, b: &Point, square: &Rect) -> bool {
    // Liang-Barsky clipping on the parameter interval [0, 1].
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [(-dx, a.x - square.x0), (dx, square.x1 - a.x), (-dy, a.y - square.y0), (dy, square.y1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Bucket grid over a fixed point set for radius queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    bucket: f64,
    width: usize,
    offsets: Vec<u32>,
    items: Vec<u32>,
}

impl SpatialIndex {
    /// Indexes `points` (item i at `points[i]`) over `[0, extent]²` with the given bucket side.
    pub fn new(points: &[Point], extent: f64, bucket: f64) -> Self {
        let bucket = bucket.max(extent / 4096.0).max(f64::MIN_POSITIVE);
        let width = ((extent / bucket).ceil() as usize).max(1);
        let key = |p: &Point| {
            let cx = ((p.x / bucket).floor().max(0.0) as usize).min(width - 1);
            let cy = ((p.y / bucket).floor().max(0.0) as usize).min(width - 1);
            cy * width + cx
        };
        let mut offsets = vec![0u32; width * width + 1];
        for p in points {
            offsets[key(p) + 1] += 1;
        }
        for i in 0..width * width {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut items = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let k = key(p);
            items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        Self { bucket, width, offsets, items }
    }

    /// Calls `f` for every item whose bucket intersects the square of half-side `r`
    /// around `center`. Callers filter by exact distance.
    pub fn for_each_candidate(&self, center: &Point, r: f64, mut f: impl FnMut(u32)) {
        let lo = |v: f64| ((v / self.bucket).floor().max(0.0) as usize).min(self.width - 1);
        let (x0, x1) = (lo(center.x - r), lo(center.x + r));
        let (y0, y1) = (lo(center.y - r), lo(center.y + r));
        for by in y0..=y1 {
            for bx in x0..=x1 {
                let b = by * self.width + bx;
                for &item in &self.items[self.offsets[b] as usize..self.offsets[b + 1] as usize] {
                    f(item);
                }
            }
        }
    }
}
