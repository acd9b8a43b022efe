//! Synthetic crossroad trajectories.
//!
//! A vehicle approaches an intersection centered at the origin from the south,
//! driving north along `x = 0` at a fixed speed per step. At the center it
//! goes forward (north), turns left (west) or turns right (east). Gaussian
//! noise is added to every step's velocity. The context is the last two
//! positions before the center; the future is the next three positions,
//! starting at the center.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::trajectory::Trajectory;

/// Past steps per example.
pub const PAST_STEPS: usize = 2;
/// Future steps per example.
pub const FUTURE_STEPS: usize = 3;
/// Spatial dimension.
pub const SPACE_DIM: usize = 2;

pub const DATASET_FORMAT: &str = "dsf-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Forward,
    Left,
    Right,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::Forward, Route::Left, Route::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Forward => "forward",
            Route::Left => "left",
            Route::Right => "right",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Route::Forward => 0,
            Route::Left => 1,
            Route::Right => 2,
        }
    }

    /// Unit heading after the intersection center.
    fn exit_heading(self) -> [f64; 2] {
        match self {
            Route::Forward => [0.0, 1.0],
            Route::Left => [-1.0, 0.0],
            Route::Right => [1.0, 0.0],
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Route::Forward),
            "left" => Ok(Route::Left),
            "right" => Ok(Route::Right),
            other => Err(Error::parse("route", format!("unknown route `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Probabilities of forward, left and right.
    pub route_probs: [f64; 3],
    /// Standard deviation of the per-step velocity noise; 0 gives noiseless routes.
    pub noise_std: f64,
    /// Distance travelled per step.
    pub speed: f64,
    pub road_width: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::balanced()
    }
}

impl ScenarioConfig {
    pub fn balanced() -> Self {
        Self {
            route_probs: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            noise_std: 0.05,
            speed: 0.5,
            road_width: 2.0,
        }
    }

    pub fn imbalanced() -> Self {
        Self {
            route_probs: [0.8, 0.1, 0.1],
            ..Self::balanced()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.route_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::config(format!(
                "route probabilities must be non-negative: {:?}",
                self.route_probs
            )));
        }
        let total: f64 = self.route_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("route probabilities sum to {total}, not 1")));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise std must be non-negative"));
        }
        if !(self.speed > 0.0) {
            return Err(Error::config("speed must be positive"));
        }
        if !(self.road_width > 0.0) {
            return Err(Error::config("road width must be positive"));
        }
        Ok(())
    }
}

/// One sample: past context `h` (H×D) and future `x` (T×D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataExample {
    pub id: usize,
    pub route: Route,
    pub past: Trajectory,
    pub future: Trajectory,
}

impl DataExample {
    /// Flattened context features fed to the networks.
    pub fn context(&self) -> &[f64] {
        self.past.as_flat()
    }
}

/// Draws `n` examples; identical `(cfg, n, seed)` give identical data.
pub fn generate(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<Vec<DataExample>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::config("cannot generate an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let total_steps = PAST_STEPS + FUTURE_STEPS;
    let mut examples = Vec::with_capacity(n);
    for id in 0..n {
        let route = draw_route(&cfg.route_probs, &mut rng);
        // start one step before the first recorded past position
        let mut pos = [0.0, -((PAST_STEPS + 1) as f64) * cfg.speed];
        let mut points = Vec::with_capacity(total_steps);
        for step in 0..total_steps {
            // arc length at the end of this step, measured from the center
            let s_end = (step as f64 - PAST_STEPS as f64) * cfg.speed;
            let heading = if s_end <= 0.0 { [0.0, 1.0] } else { route.exit_heading() };
            for d in 0..SPACE_DIM {
                pos[d] += cfg.speed * heading[d] + noise.sample(&mut rng);
            }
            points.push(pos.to_vec());
        }
        let past = Trajectory::from_points(&points[..PAST_STEPS])?;
        let future = Trajectory::from_points(&points[PAST_STEPS..])?;
        examples.push(DataExample {
            id,
            route,
            past,
            future,
        });
    }
    Ok(examples)
}

fn draw_route<R: Rng>(probs: &[f64; 3], rng: &mut R) -> Route {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (route, p) in Route::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *route;
        }
    }
    // u landed in the round-off gap above the cumulative sum
    *Route::ALL
        .iter()
        .zip(probs)
        .rev()
        .find(|(_, p)| **p > 0.0)
        .map(|(r, _)| r)
        .unwrap_or(&Route::Forward)
}

/// Classifies a future by the direction from its first to its final position,
/// measured against the northbound approach axis: within 60° is forward,
/// otherwise the sign picks left (west) or right (east).
///
/// Returns `None` when the displacement is zero.
pub fn classify_route(future: &Trajectory) -> Option<Route> {
    let first = future.point(0);
    let last = future.final_point();
    let dx = last[0] - first[0];
    let dy = last[1] - first[1];
    if dx == 0.0 && dy == 0.0 || !(dx.is_finite() && dy.is_finite()) {
        return None;
    }
    let angle = dx.atan2(dy).to_degrees();
    Some(if angle.abs() < 60.0 {
        Route::Forward
    } else if angle < 0.0 {
        Route::Left
    } else {
        Route::Right
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::parse("split", format!("unknown split `{other}`"))),
        }
    }
}

fn column_header() -> String {
    let mut cols = vec!["id".to_string(), "split".into(), "route".into()];
    for t in 0..PAST_STEPS {
        cols.push(format!("h{t}_x"));
        cols.push(format!("h{t}_y"));
    }
    for t in 0..FUTURE_STEPS {
        cols.push(format!("x{t}_x"));
        cols.push(format!("x{t}_y"));
    }
    cols.join("\t")
}

/// Tab-separated dataset text: a format line, a column header, one record per line.
pub fn format_dataset(split: Split, examples: &[DataExample]) -> String {
    let mut out = format!(
        "# {DATASET_FORMAT} H={PAST_STEPS} T={FUTURE_STEPS} D={SPACE_DIM}\n{}\n",
        column_header()
    );
    for ex in examples {
        let mut fields = vec![ex.id.to_string(), split.as_str().into(), ex.route.to_string()];
        fields.extend(ex.past.as_flat().iter().map(|v| v.to_string()));
        fields.extend(ex.future.as_flat().iter().map(|v| v.to_string()));
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<(Split, Vec<DataExample>)> {
    let mut lines = text.lines();
    let format_line = lines.next().unwrap_or_default();
    if !format_line.starts_with(&format!("# {DATASET_FORMAT}")) {
        return Err(Error::parse("dataset", "missing format line"));
    }
    if lines.next() != Some(column_header().as_str()) {
        return Err(Error::parse("dataset", "unexpected column header"));
    }
    let n_values = (PAST_STEPS + FUTURE_STEPS) * SPACE_DIM;
    let mut split = None;
    let mut examples = Vec::new();
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let ctx = || format!("dataset record {}", lineno + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 + n_values {
            return Err(Error::parse(ctx(), format!("expected {} fields", 3 + n_values)));
        }
        let id = fields[0].parse().map_err(|e| Error::parse(ctx(), format!("{e}")))?;
        let s: Split = fields[1].parse()?;
        if *split.get_or_insert(s) != s {
            return Err(Error::parse(ctx(), "mixed splits in one file"));
        }
        let route = fields[2].parse()?;
        let values = fields[3..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::parse(ctx(), format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        let (past, future) = values.split_at(PAST_STEPS * SPACE_DIM);
        examples.push(DataExample {
            id,
            route,
            past: Trajectory::from_flat(PAST_STEPS, SPACE_DIM, past.to_vec())?,
            future: Trajectory::from_flat(FUTURE_STEPS, SPACE_DIM, future.to_vec())?,
        });
    }
    let split = split.ok_or_else(|| Error::parse("dataset", "no records"))?;
    Ok((split, examples))
}

pub fn write_dataset(path: &Path, split: Split, examples: &[DataExample]) -> Result<()> {
    io::write_atomic(path, format_dataset(split, examples).as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<(Split, Vec<DataExample>)> {
    parse_dataset(&io::read_to_string(path)?)
}
