//! Grid archive, variation and repertoire metrics shared by the real and the
//! imagined repertoire.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Controller parameters, every component in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genotype(Vec<f64>);

impl Genotype {
    pub fn new(params: Vec<f64>) -> Result<Self> {
        if let Some(bad) = params.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("genotype component {bad} outside [0, 1]")));
        }
        Ok(Self(params))
    }

    /// Builds a genotype, clamping every component into `[0, 1]`.
    pub fn clamped(mut params: Vec<f64>) -> Self {
        for p in &mut params {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self(params)
    }

    pub fn random<R: Rng + ?Sized>(dims: usize, rng: &mut R) -> Self {
        Self((0..dims).map(|_| rng.random::<f64>()).collect())
    }

    pub fn filled(dims: usize, value: f64) -> Self {
        Self::clamped(vec![value; dims])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ego-frame final planar displacement of a behaviour, in metres.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub x: f64,
    pub y: f64,
}

impl Descriptor {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn clamped(x: f64, y: f64, bd_max: f64) -> Self {
        Self {
            x: x.clamp(-bd_max, bd_max),
            y: y.clamp(-bd_max, bd_max),
        }
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Real,
    Imagined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub genotype: Genotype,
    pub bd: Descriptor,
    pub fitness: f64,
    pub origin: Origin,
    /// Mean ensemble disagreement along the imagined rollout; zero for
    /// solutions never seen by the model.
    pub disagreement: f64,
}

impl Solution {
    pub fn real(genotype: Genotype, bd: Descriptor, fitness: f64) -> Self {
        Self {
            genotype,
            bd,
            fitness,
            origin: Origin::Real,
            disagreement: 0.0,
        }
    }
}

/// Regular `R x R` discretisation of `[-bd_max, bd_max]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub bd_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 40,
            bd_max: 1.0,
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.bd_max / self.resolution as f64
    }

    /// Length of the diagonal of the descriptor space.
    pub fn diameter(&self) -> f64 {
        2.0 * std::f64::consts::SQRT_2 * self.bd_max
    }

    fn axis_index(&self, v: f64) -> usize {
        let r = self.resolution;
        let scaled = (v + self.bd_max) / (2.0 * self.bd_max) * r as f64;
        if scaled <= 0.0 || scaled.is_nan() {
            0
        } else {
            (scaled.floor() as usize).min(r - 1)
        }
    }

    /// `(row, col)` of a descriptor; row follows `bd.x`, col follows `bd.y`.
    pub fn cell_index(&self, bd: &Descriptor) -> (usize, usize) {
        (self.axis_index(bd.x), self.axis_index(bd.y))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Descriptor {
        let w = self.cell_width();
        Descriptor::new(
            -self.bd_max + (row as f64 + 0.5) * w,
            -self.bd_max + (col as f64 + 0.5) * w,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    AddedNew,
    Replaced,
    Rejected,
}

impl AddOutcome {
    pub fn accepted(self) -> bool {
        !matches!(self, AddOutcome::Rejected)
    }
}

/// A stored solution together with the insertion counter value at the time
/// it entered the archive.
#[derive(Clone, Debug, PartialEq)]
pub struct Elite {
    pub solution: Solution,
    pub inserted_at: u64,
}

#[derive(Clone, Debug)]
pub struct Archive {
    grid: GridSpec,
    dims: usize,
    cells: Vec<Option<Elite>>,
    filled: usize,
    next_insert: u64,
}

impl Archive {
    pub fn new(grid: GridSpec, dims: usize) -> Self {
        Self {
            grid,
            dims,
            cells: vec![None; grid.cells()],
            filled: 0,
            next_insert: 0,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn fill_count(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    fn slot(&self, row: usize, col: usize) -> usize {
        row * self.grid.resolution + col
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Elite> {
        self.cells[self.slot(row, col)].as_ref()
    }

    pub fn elite_for(&self, bd: &Descriptor) -> Option<&Elite> {
        let (r, c) = self.grid.cell_index(bd);
        self.get(r, c)
    }

    /// Outcome `try_add` would produce, without mutating.
    pub fn would_add(&self, sol: &Solution) -> AddOutcome {
        match self.elite_for(&sol.bd) {
            None => AddOutcome::AddedNew,
            Some(e) if sol.fitness > e.solution.fitness => AddOutcome::Replaced,
            Some(_) => AddOutcome::Rejected,
        }
    }

    pub fn try_add(&mut self, sol: Solution) -> AddOutcome {
        let outcome = self.would_add(&sol);
        if outcome.accepted() {
            let (r, c) = self.grid.cell_index(&sol.bd);
            let slot = self.slot(r, c);
            if outcome == AddOutcome::AddedNew {
                self.filled += 1;
            }
            self.cells[slot] = Some(Elite {
                solution: sol,
                inserted_at: self.next_insert,
            });
            self.next_insert += 1;
        }
        outcome
    }

    /// Occupied cells in row-major order with their indices.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &Elite)> + '_ {
        let r = self.grid.resolution;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, e)| e.as_ref().map(|e| ((i / r, i % r), e)))
    }

    /// Uniformly drawn stored solution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Elite> {
        if self.filled == 0 {
            return None;
        }
        let k = rng.random_range(0..self.filled);
        self.iter().nth(k).map(|(_, e)| e)
    }

    pub fn coverage(&self) -> f64 {
        self.filled as f64 / self.grid.cells() as f64
    }

    /// Sum of `fitness - floor` over occupied cells.
    pub fn qd_score(&self, fitness_floor: f64) -> f64 {
        self.iter()
            .map(|(_, e)| e.solution.fitness - fitness_floor)
            .sum()
    }

    /// Line-oriented dump: a header with `R`, `B_max` and `D`, then one
    /// `cell_x,cell_y,fitness,bd_x,bd_y,g_0..g_{D-1}` line per stored solution.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# R={} B_max={} D={}\n",
            self.grid.resolution, self.grid.bd_max, self.dims
        );
        for ((r, c), e) in self.iter() {
            let s = &e.solution;
            let _ = write!(out, "{r},{c},{},{},{}", s.fitness, s.bd.x, s.bd.y);
            for g in s.genotype.as_slice() {
                let _ = write!(out, ",{g}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(key))
                .ok_or(Error::Parse {
                    line: 1,
                    msg: format!("header lacks {key}"),
                })
        };
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let resolution: usize = field("R=")?
            .parse()
            .map_err(|e| parse_err(1, format!("{e}")))?;
        let bd_max: f64 = field("B_max=")?
            .parse()
            .map_err(|e| parse_err(1, format!("{e}")))?;
        let dims: usize = field("D=")?
            .parse()
            .map_err(|e| parse_err(1, format!("{e}")))?;
        let mut archive = Archive::new(GridSpec { resolution, bd_max }, dims);
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 + dims {
                return Err(parse_err(
                    line_no,
                    format!("expected {} fields, got {}", 5 + dims, fields.len()),
                ));
            }
            let nums = fields
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(line_no, format!("{e}")))?;
            let genotype = Genotype::new(nums[5..].to_vec())?;
            let sol = Solution::real(genotype, Descriptor::new(nums[3], nums[4]), nums[2]);
            let (r, c) = archive.grid.cell_index(&sol.bd);
            if (r as f64, c as f64) != (nums[0], nums[1]) {
                return Err(parse_err(line_no, "cell does not match descriptor".into()));
            }
            archive.try_add(sol);
        }
        Ok(archive)
    }

    /// The text dump's rows under a named CSV header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_x,cell_y,fitness,bd_x,bd_y");
        for i in 0..self.dims {
            let _ = write!(out, ",g{i}");
        }
        out.push('\n');
        out.push_str(self.to_text().split_once('\n').map_or("", |(_, rows)| rows));
        out
    }

    /// FNV-1a hash of the text dump; equal archives give equal checksums.
    pub fn checksum(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mean distance from `bd` to its `k` nearest stored descriptors. An empty
/// archive yields the descriptor-space diameter.
pub fn novelty(archive: &Archive, bd: &Descriptor, k: usize) -> f64 {
    novelty_with_ceiling(archive, bd, k, archive.grid().diameter())
}

pub fn novelty_with_ceiling(archive: &Archive, bd: &Descriptor, k: usize, ceiling: f64) -> f64 {
    let k = k.max(1);
    let mut dists: Vec<f64> = archive.iter().map(|(_, e)| e.solution.bd.distance(bd)).collect();
    if dists.is_empty() {
        return ceiling;
    }
    let k = k.min(dists.len());
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    dists[..k].iter().sum::<f64>() / k as f64
}

/// Iso+LineDD variation. Draws `D` isotropic normals first, then the single
/// line normal.
pub fn iso_dd<R: Rng + ?Sized>(
    x1: &Genotype,
    x2: &Genotype,
    sigma_iso: f64,
    sigma_line: f64,
    rng: &mut R,
) -> Genotype {
    debug_assert_eq!(x1.len(), x2.len());
    let iso: Vec<f64> = (0..x1.len()).map(|_| rng.sample(StandardNormal)).collect();
    let line: f64 = rng.sample(StandardNormal);
    let params = x1
        .as_slice()
        .iter()
        .zip(x2.as_slice())
        .zip(iso)
        .map(|((a, b), n)| a + sigma_iso * n + sigma_line * (b - a) * line)
        .collect();
    Genotype::clamped(params)
}
