//! Synthetic deployments and noisy pairwise range measurements.
//!
//! Nodes are placed i.i.d. uniformly over a rectangle. The first `n_anchors`
//! nodes are anchors (known positions); the rest are agents. Each unordered
//! pair gets one measurement
//!
//! ```text
//! x_ij = |p_i - p_j| + n_L + b * n_N,   n_L ~ N(0, sigma2), b ~ Bernoulli(p_B), n_N ~ U[lo, hi]
//! ```
//!
//! clamped at zero and mirrored so the matrix is exactly symmetric.

use std::fmt::Write as _;
use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line} (byte {offset}): {msg}")]
    Parse { line: usize, offset: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// `N x 2` coordinates in meters.
    pub positions: Array2<f64>,
    pub n_anchors: usize,
    pub area: (f64, f64),
    pub seed: u64,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.positions.nrows()
    }

    pub fn n_agents(&self) -> usize {
        self.n() - self.n_anchors
    }

    pub fn anchors(&self) -> Range<usize> {
        0..self.n_anchors
    }

    pub fn agents(&self) -> Range<usize> {
        self.n_anchors..self.n()
    }

    /// Noiseless Euclidean distance matrix.
    pub fn true_distances(&self) -> Array2<f64> {
        let n = self.n();
        let p = &self.positions;
        Array2::from_shape_fn((n, n), |(i, j)| {
            let dx = p[[i, 0]] - p[[j, 0]];
            let dy = p[[i, 1]] - p[[j, 1]];
            dx.hypot(dy)
        })
    }

    /// Builds a scenario from explicit coordinates.
    pub fn from_positions(
        positions: Array2<f64>,
        n_anchors: usize,
        area: (f64, f64),
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        check_counts(positions.nrows(), n_anchors, area)?;
        if positions.ncols() != 2 {
            return Err(ScenarioError::Config(format!(
                "positions need 2 columns, got {}",
                positions.ncols()
            )));
        }
        for (i, row) in positions.outer_iter().enumerate() {
            let (x, y) = (row[0], row[1]);
            if !(0.0..=area.0).contains(&x) || !(0.0..=area.1).contains(&y) {
                return Err(ScenarioError::Config(format!(
                    "node {i} at ({x}, {y}) lies outside the {}x{} area",
                    area.0, area.1
                )));
            }
        }
        Ok(Self { positions, n_anchors, area, seed })
    }

    /// Positions as CSV with header `id,x,y,is_anchor` and 0-based ids.
    pub fn positions_csv(&self) -> String {
        let mut out = String::from("id,x,y,is_anchor\n");
        for i in 0..self.n() {
            let _ = writeln!(
                out,
                "{i},{:.16e},{:.16e},{}",
                self.positions[[i, 0]],
                self.positions[[i, 1]],
                u8::from(i < self.n_anchors)
            );
        }
        out
    }
}

fn check_counts(n: usize, n_anchors: usize, area: (f64, f64)) -> Result<(), ScenarioError> {
    if n_anchors == 0 || n_anchors >= n {
        return Err(ScenarioError::Config(format!(
            "need 1 <= anchors < nodes, got {n_anchors} anchors for {n} nodes"
        )));
    }
    if !(area.0 > 0.0 && area.1 > 0.0 && area.0.is_finite() && area.1.is_finite()) {
        return Err(ScenarioError::Config(format!(
            "area must be positive, got {}x{}",
            area.0, area.1
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// LOS Gaussian variance (m^2).
    pub sigma2: f64,
    /// NLOS occurrence probability.
    pub p_b: f64,
    pub nlos_low: f64,
    pub nlos_high: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma2: 0.1, p_b: 0.1, nlos_low: 0.0, nlos_high: 10.0 }
    }
}

impl NoiseConfig {
    pub fn new(sigma2: f64, p_b: f64) -> Self {
        Self { sigma2, p_b, ..Self::default() }
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(ScenarioError::Config(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        if !(0.0..=1.0).contains(&self.p_b) {
            return Err(ScenarioError::Config(format!("p_B must lie in [0, 1], got {}", self.p_b)));
        }
        if !(0.0 <= self.nlos_low && self.nlos_low <= self.nlos_high && self.nlos_high.is_finite()) {
            return Err(ScenarioError::Config(format!(
                "NLOS bounds must satisfy 0 <= low <= high, got [{}, {}]",
                self.nlos_low, self.nlos_high
            )));
        }
        Ok(())
    }
}

/// Measured distances and the record of which pairs drew an NLOS bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    pub x: Array2<f64>,
    pub nlos_mask: Array2<bool>,
}

impl MeasurementMatrix {
    /// Validates symmetry and the zero diagonal.
    pub fn new(x: Array2<f64>, nlos_mask: Array2<bool>) -> Result<Self, ScenarioError> {
        let n = x.nrows();
        if x.ncols() != n || nlos_mask.dim() != (n, n) {
            return Err(ScenarioError::Config(format!(
                "measurement matrix {:?} and mask {:?} must both be square and equal",
                x.dim(),
                nlos_mask.dim()
            )));
        }
        for i in 0..n {
            if x[[i, i]] != 0.0 || nlos_mask[[i, i]] {
                return Err(ScenarioError::Config(format!("nonzero diagonal at row {i}")));
            }
            for j in i + 1..n {
                if x[[i, j]].to_bits() != x[[j, i]].to_bits() || nlos_mask[[i, j]] != nlos_mask[[j, i]] {
                    return Err(ScenarioError::Config(format!(
                        "not symmetric at row {i} column {j}"
                    )));
                }
                if !(x[[i, j]] >= 0.0 && x[[i, j]].is_finite()) {
                    return Err(ScenarioError::Config(format!(
                        "invalid distance {} at row {i} column {j}",
                        x[[i, j]]
                    )));
                }
            }
        }
        Ok(Self { x, nlos_mask })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn max_distance(&self) -> f64 {
        self.x.iter().copied().fold(0.0, f64::max)
    }
}

/// Draws `n` positions uniformly over `area`.
pub fn generate_scenario(
    n: usize,
    n_anchors: usize,
    area: (f64, f64),
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    check_counts(n, n_anchors, area)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ux = Uniform::new_inclusive(0.0, area.0).expect("positive width");
    let uy = Uniform::new_inclusive(0.0, area.1).expect("positive height");
    let mut positions = Array2::zeros((n, 2));
    for i in 0..n {
        positions[[i, 0]] = ux.sample(&mut rng);
        positions[[i, 1]] = uy.sample(&mut rng);
    }
    Ok(Scenario { positions, n_anchors, area, seed })
}

/// Noisy measurements for every pair. The Gaussian, Bernoulli and uniform
/// draws use separate streams of one seed, and every stream is advanced once
/// per pair regardless of the other draws.
pub fn measure_distances(
    s: &Scenario,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<MeasurementMatrix, ScenarioError> {
    noise.validate()?;
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k);
        r
    };
    let (mut g_rng, mut b_rng, mut u_rng) = (stream(1), stream(2), stream(3));
    let normal = Normal::new(0.0, noise.sigma2.sqrt()).expect("validated sigma2");
    let unif = Uniform::new_inclusive(noise.nlos_low, noise.nlos_high).expect("validated bounds");

    let n = s.n();
    let d = s.true_distances();
    let mut x = Array2::zeros((n, n));
    let mut mask = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in i + 1..n {
            let nl: f64 = normal.sample(&mut g_rng);
            let b = b_rng.random::<f64>() < noise.p_b;
            let nn: f64 = unif.sample(&mut u_rng);
            let v = (d[[i, j]] + nl + if b { nn } else { 0.0 }).max(0.0);
            x[[i, j]] = v;
            x[[j, i]] = v;
            mask[[i, j]] = b;
            mask[[j, i]] = b;
        }
    }
    MeasurementMatrix::new(x, mask)
}

const HEADER: &str = "NETLOC v1";

/// Text encoding; see [`parse_scenario`] for the layout.
pub fn serialize_scenario(s: &Scenario, m: &MeasurementMatrix) -> String {
    let n = s.n();
    let mut out = String::with_capacity(n * n * 26);
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "{} {} {:.16e} {:.16e} {}", n, s.n_anchors, s.area.0, s.area.1, s.seed);
    for i in 0..n {
        let _ = writeln!(out, "{:.16e} {:.16e}", s.positions[[i, 0]], s.positions[[i, 1]]);
    }
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.16e}", m.x[[i, j]]);
        }
        out.push('\n');
    }
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(' ');
            }
            out.push(if m.nlos_mask[[i, j]] { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

struct Lines<'a> {
    text: &'a str,
    offset: usize,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse { line: self.line, offset: self.offset, msg: msg.into() }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, ScenarioError> {
        let rest = &self.text[self.offset..];
        if rest.is_empty() {
            self.line += 1;
            return Err(self.err(format!("unexpected end of input, expected {what}")));
        }
        let Some(end) = rest.find('\n') else {
            self.line += 1;
            return Err(self.err(format!("truncated {what}: missing newline")));
        };
        self.line += 1;
        let line = &rest[..end];
        self.offset += end + 1;
        Ok(line.strip_suffix('\r').unwrap_or(line))
    }

    fn line_start(&self, line: &str) -> usize {
        self.offset - line.len() - 1
    }
}

fn parse_row<T>(
    lines: &mut Lines<'_>,
    what: &str,
    expected: usize,
    mut parse: impl FnMut(&str) -> Option<T>,
) -> Result<Vec<T>, ScenarioError> {
    let line = lines.next(what)?;
    let start = lines.line_start(line);
    let mut out = Vec::with_capacity(expected);
    let mut col_offset = 0;
    for (c, tok) in line.split(' ').enumerate() {
        let at = start + col_offset;
        col_offset += tok.len() + 1;
        if c >= expected {
            return Err(ScenarioError::Parse {
                line: lines.line,
                offset: at,
                msg: format!("{what}: more than {expected} fields"),
            });
        }
        match parse(tok) {
            Some(v) => out.push(v),
            None => {
                return Err(ScenarioError::Parse {
                    line: lines.line,
                    offset: at,
                    msg: format!("{what}: column {c}: cannot parse {tok:?}"),
                })
            }
        }
    }
    if out.len() != expected {
        return Err(ScenarioError::Parse {
            line: lines.line,
            offset: start,
            msg: format!("{what}: expected {expected} fields, found {}", out.len()),
        });
    }
    Ok(out)
}

/// Parses the text encoding:
///
/// ```text
/// NETLOC v1
/// N N_l width height seed
/// N lines "x y"
/// N lines of N measured distances
/// N lines of N 0/1 NLOS flags
/// ```
pub fn parse_scenario(text: &str) -> Result<(Scenario, MeasurementMatrix), ScenarioError> {
    let mut lines = Lines { text, offset: 0, line: 0 };
    let header = lines.next("header")?;
    if header != HEADER {
        return Err(ScenarioError::Parse {
            line: 1,
            offset: 0,
            msg: format!("expected header {HEADER:?}, found {header:?}"),
        });
    }
    let dims_line = lines.next("dimension line")?;
    let dims_at = lines.line_start(dims_line);
    let f: Vec<&str> = dims_line.split(' ').collect();
    let bad_dims = || ScenarioError::Parse {
        line: 2,
        offset: dims_at,
        msg: format!("expected `N N_l width height seed`, found {dims_line:?}"),
    };
    if f.len() != 5 {
        return Err(bad_dims());
    }
    let n: usize = f[0].parse().map_err(|_| bad_dims())?;
    let n_anchors: usize = f[1].parse().map_err(|_| bad_dims())?;
    let width: f64 = f[2].parse().map_err(|_| bad_dims())?;
    let height: f64 = f[3].parse().map_err(|_| bad_dims())?;
    let seed: u64 = f[4].parse().map_err(|_| bad_dims())?;
    check_counts(n, n_anchors, (width, height)).map_err(|e| ScenarioError::Parse {
        line: 2,
        offset: dims_at,
        msg: e.to_string(),
    })?;

    let mut positions = Array2::zeros((n, 2));
    for i in 0..n {
        let row = parse_row(&mut lines, &format!("position row {i}"), 2, |t| t.parse::<f64>().ok())?;
        positions[[i, 0]] = row[0];
        positions[[i, 1]] = row[1];
    }
    let mut x = Array2::zeros((n, n));
    for i in 0..n {
        let row = parse_row(&mut lines, &format!("distance row {i}"), n, |t| t.parse::<f64>().ok())?;
        for (j, v) in row.into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    let mut mask = Array2::from_elem((n, n), false);
    for i in 0..n {
        let row = parse_row(&mut lines, &format!("mask row {i}"), n, |t| match t {
            "0" => Some(false),
            "1" => Some(true),
            _ => None,
        })?;
        for (j, v) in row.into_iter().enumerate() {
            mask[[i, j]] = v;
        }
    }
    if lines.offset != text.len() {
        return Err(lines.err("trailing data after mask"));
    }
    let scenario = Scenario::from_positions(positions, n_anchors, (width, height), seed)
        .map_err(|e| ScenarioError::Parse { line: 3, offset: 0, msg: e.to_string() })?;
    let m = MeasurementMatrix::new(x, mask).map_err(|e| ScenarioError::Parse {
        line: 3 + n,
        offset: 0,
        msg: e.to_string(),
    })?;
    Ok((scenario, m))
}
