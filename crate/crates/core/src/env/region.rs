use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Obstacle {
    fn clearance(&self, x: f64, y: f64) -> f64 {
        (x - self.cx).hypot(y - self.cy) - self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionKind {
    /// Safe disc centred on the origin; everything outside is dangerous.
    Circle { radius: f64 },
    /// Closed square room `[-half_width, half_width]^2` with column obstacles.
    Room {
        half_width: f64,
        obstacles: Vec<Obstacle>,
    },
}

/// Nearest constraint feature of a room. Walls come first in index order
/// (east, west, north, south), then obstacles in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Boundary,
    Wall(usize),
    Obstacle(usize),
}

/// Known dangerous region together with the normalisation of the safety
/// value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyRegion {
    pub kind: RegionKind,
    /// Safety offset subtracted from the distance, metres.
    pub beta: f64,
    /// Largest distance value reachable in the region.
    pub d_max: f64,
}

const ROOM_GRID: usize = 200;

impl SafetyRegion {
    pub fn circle(radius: f64, beta: f64) -> Result<Self> {
        if radius <= 0.0 || beta < 0.0 || beta >= radius {
            return Err(Error::Config(format!(
                "circle needs radius > beta >= 0 (radius {radius}, beta {beta})"
            )));
        }
        Ok(Self {
            kind: RegionKind::Circle { radius },
            beta,
            d_max: radius,
        })
    }

    pub fn room(half_width: f64, obstacles: Vec<Obstacle>, beta: f64) -> Result<Self> {
        if half_width <= 0.0 {
            return Err(Error::Config("room half width must be positive".into()));
        }
        let mut region = Self {
            kind: RegionKind::Room {
                half_width,
                obstacles,
            },
            beta,
            d_max: f64::INFINITY,
        };
        region.d_max = region.max_distance();
        if region.d_max <= beta || beta < 0.0 {
            return Err(Error::Config(format!(
                "room needs d_max {} > beta {beta} >= 0",
                region.d_max
            )));
        }
        Ok(region)
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        match &self.kind {
            RegionKind::Circle { .. } => &[],
            RegionKind::Room { obstacles, .. } => obstacles,
        }
    }

    /// Signed distance from `(x, y)` to the dangerous set, positive in the
    /// safe region, together with the feature that attains it.
    pub fn distance_with_feature(&self, x: f64, y: f64) -> (f64, Feature) {
        match &self.kind {
            RegionKind::Circle { radius } => (radius - x.hypot(y), Feature::Boundary),
            RegionKind::Room {
                half_width,
                obstacles,
            } => {
                let walls = [half_width - x, half_width + x, half_width - y, half_width + y];
                let mut best = (walls[0], Feature::Wall(0));
                for (i, w) in walls.iter().enumerate().skip(1) {
                    if *w < best.0 {
                        best = (*w, Feature::Wall(i));
                    }
                }
                for (i, o) in obstacles.iter().enumerate() {
                    let d = o.clearance(x, y);
                    if d < best.0 {
                        best = (d, Feature::Obstacle(i));
                    }
                }
                best
            }
        }
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        self.distance_with_feature(x, y).0
    }

    /// Normalised safety value; positive exactly when the distance to the
    /// dangerous set exceeds `beta`, and never above one.
    pub fn epsilon(&self, x: f64, y: f64) -> f64 {
        let eps = (self.distance(x, y) - self.beta) / (self.d_max - self.beta);
        eps.min(1.0)
    }

    /// Planar gradient of `epsilon`. Zero at the centre of a circle.
    pub fn epsilon_gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let scale = 1.0 / (self.d_max - self.beta);
        let (_, feature) = self.distance_with_feature(x, y);
        let dir = match (feature, &self.kind) {
            (Feature::Boundary, _) => {
                let n = x.hypot(y);
                if n == 0.0 {
                    [0.0, 0.0]
                } else {
                    [-x / n, -y / n]
                }
            }
            (Feature::Wall(0), _) => [-1.0, 0.0],
            (Feature::Wall(1), _) => [1.0, 0.0],
            (Feature::Wall(2), _) => [0.0, -1.0],
            (Feature::Wall(_), _) => [0.0, 1.0],
            (Feature::Obstacle(i), RegionKind::Room { obstacles, .. }) => {
                let o = &obstacles[i];
                let (dx, dy) = (x - o.cx, y - o.cy);
                let n = dx.hypot(dy);
                if n == 0.0 {
                    [0.0, 0.0]
                } else {
                    [dx / n, dy / n]
                }
            }
            (Feature::Obstacle(_), RegionKind::Circle { .. }) => unreachable!(),
        };
        [dir[0] * scale, dir[1] * scale]
    }

    /// Whether a point touches a physical obstacle column.
    pub fn touches_obstacle(&self, x: f64, y: f64) -> bool {
        self.obstacles().iter().any(|o| o.clearance(x, y) <= 0.0)
    }

    /// Moves a point back inside the room and out of any obstacle it
    /// penetrated. Circles have no physical boundary.
    pub fn project_free(&self, x: f64, y: f64) -> (f64, f64) {
        let RegionKind::Room {
            half_width,
            obstacles,
        } = &self.kind
        else {
            return (x, y);
        };
        let (mut x, mut y) = (x.clamp(-half_width, *half_width), y.clamp(-half_width, *half_width));
        for o in obstacles {
            let (dx, dy) = (x - o.cx, y - o.cy);
            let n = dx.hypot(dy);
            if n < o.radius {
                if n == 0.0 {
                    x = o.cx + o.radius;
                } else {
                    x = o.cx + dx / n * o.radius;
                    y = o.cy + dy / n * o.radius;
                }
            }
        }
        (x, y)
    }

    /// Grid maximum of the distance, refined by a local pattern search from
    /// every grid point that could lie next to the true maximum.
    fn max_distance(&self) -> f64 {
        let RegionKind::Room { half_width, .. } = &self.kind else {
            unreachable!("circle d_max is analytic")
        };
        let h = 2.0 * half_width / ROOM_GRID as f64;
        let mut samples = Vec::with_capacity((ROOM_GRID + 1) * (ROOM_GRID + 1));
        for i in 0..=ROOM_GRID {
            for j in 0..=ROOM_GRID {
                let (x, y) = (-half_width + i as f64 * h, -half_width + j as f64 * h);
                samples.push((self.distance(x, y), x, y));
            }
        }
        let grid_max = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let slack = h * std::f64::consts::SQRT_2;
        samples
            .iter()
            .filter(|s| s.0 >= grid_max - slack)
            .map(|&(d, x, y)| self.refine(d, x, y, h))
            .fold(grid_max, f64::max)
    }

    fn refine(&self, mut best: f64, mut x: f64, mut y: f64, mut step: f64) -> f64 {
        const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
        const DIRS: [(f64, f64); 8] = [
            (1.0, 0.0),
            (-1.0, 0.0),
            (0.0, 1.0),
            (0.0, -1.0),
            (H, H),
            (-H, H),
            (H, -H),
            (-H, -H),
        ];
        while step > 1e-12 {
            let mut moved = false;
            for (dx, dy) in DIRS {
                let (nx, ny) = (x + dx * step, y + dy * step);
                let d = self.distance(nx, ny);
                if d > best {
                    best = d;
                    x = nx;
                    y = ny;
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        best
    }
}

pub const OBSTACLE_RADIUS: f64 = 0.15;
const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

/// Square room of half width 2 m with `n_obstacles` columns placed by seeded
/// rejection sampling. Centres keep 0.6 m from each other and 0.5 m from
/// the walls and from the start pose at the origin.
pub fn make_room(n_obstacles: usize, seed: u64, beta: f64) -> Result<SafetyRegion> {
    let half_width: f64 = 2.0;
    let margin = 0.5;
    let min_gap = 0.6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(n_obstacles);
    let mut attempts = 0;
    // Sequential adsorption gets close to jamming at 15 columns, so a stuck
    // layout is discarded and restarted within the same attempt budget.
    let mut stuck = 0;
    while obstacles.len() < n_obstacles {
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::ObstaclePlacement {
                requested: n_obstacles,
                attempts,
            });
        }
        attempts += 1;
        let lim: f64 = half_width - margin;
        let (cx, cy): (f64, f64) = (rng.random_range(-lim..=lim), rng.random_range(-lim..=lim));
        let ok = cx.hypot(cy) >= margin
            && obstacles
                .iter()
                .all(|o| (o.cx - cx).hypot(o.cy - cy) >= min_gap);
        if ok {
            obstacles.push(Obstacle {
                cx,
                cy,
                radius: OBSTACLE_RADIUS,
            });
            stuck = 0;
        } else {
            stuck += 1;
            if stuck > 2_000 {
                obstacles.clear();
                stuck = 0;
            }
        }
    }
    SafetyRegion::room(half_width, obstacles, beta)
}
