//! Learning-curve metrics: trapezoidal area under the requested-instance curve,
//! normalized by a target budget (NAURC), plus budget accounting over round logs.
//!
//! A curve past the budget is linearly interpolated back to it; a curve that
//! stops short holds its last value. The area left of the first knot counts
//! as zero while normalization still uses the whole budget.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::{Outcome, RoundEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Requested (charged) instances.
    pub x: f64,
    /// Performance after labeling `x` instances.
    pub y: f64,
}

impl CurvePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Non-empty list of points with strictly increasing `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    points: Vec<CurvePoint>,
}

impl Curve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("curve has no points".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite curve point ({}, {})",
                p.x, p.y
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].x <= w[0].x) {
            return Err(Error::InvalidArgument(format!(
                "curve x must increase strictly, got {} then {}",
                w[0].x, w[1].x
            )));
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(x, y)| CurvePoint::new(x, y)).collect())
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn first(&self) -> CurvePoint {
        self.points[0]
    }

    pub fn last(&self) -> CurvePoint {
        *self.points.last().unwrap()
    }
}

/// Trapezoid between two consecutive knots.
pub fn aurc_segment(p: CurvePoint, next: CurvePoint) -> Result<f64> {
    if !(next.x > p.x) {
        return Err(Error::InvalidArgument(format!(
            "segment x must increase, got {} then {}",
            p.x, next.x
        )));
    }
    Ok((next.y + p.y) / 2.0 * (next.x - p.x))
}

/// Index of the last knot at or left of `budget`.
fn knot_before(curve: &Curve, budget: f64) -> Result<usize> {
    if !budget.is_finite() || budget < curve.first().x {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} lies below the first knot at x = {}",
            curve.first().x
        )));
    }
    Ok(curve.points.partition_point(|p| p.x <= budget) - 1)
}

/// Curve value at `budget`: linear between straddling knots, held at the last
/// knot when the curve ends at or before the budget.
pub fn interpolate_at_budget(curve: &Curve, budget: f64) -> Result<f64> {
    let k = knot_before(curve, budget)?;
    let pk = curve.points[k];
    match curve.points.get(k + 1) {
        None => Ok(pk.y),
        Some(_) if pk.x == budget => Ok(pk.y),
        Some(next) => Ok(pk.y + (next.y - pk.y) * (budget - pk.x) / (next.x - pk.x)),
    }
}

/// Normalized area under the curve up to `budget`.
pub fn naurc(curve: &Curve, budget: f64) -> Result<f64> {
    let k = knot_before(curve, budget)?;
    if !(budget > curve.first().x) || !(budget > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} must exceed the first knot at x = {} and 0",
            curve.first().x
        )));
    }
    let mut area = 0.0;
    for w in curve.points[..=k].windows(2) {
        area += aurc_segment(w[0], w[1])?;
    }
    let pk = curve.points[k];
    let y_budget = interpolate_at_budget(curve, budget)?;
    area += (y_budget + pk.y) / 2.0 * (budget - pk.x);
    Ok(area / budget)
}

/// How labeling effort is counted on the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accounting {
    /// Every issued request costs one, and every selected image costs its
    /// labelable instances.
    #[default]
    Instance,
    /// Only image selections count, each by its labelable instances.
    Image,
}

impl std::str::FromStr for Accounting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instance" => Ok(Accounting::Instance),
            "image" => Ok(Accounting::Image),
            _ => Err(Error::Config(format!(
                "unknown accounting mode `{s}`; valid: instance, image"
            ))),
        }
    }
}

/// Cumulative cost at the end of each round present in `events`, rounds in
/// ascending order.
pub fn accounting_x(events: &[RoundEvent], mode: Accounting) -> Vec<f64> {
    let mut rounds: Vec<usize> = events.iter().map(|e| e.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    let mut total = 0.0;
    rounds
        .into_iter()
        .map(|round| {
            for e in events.iter().filter(|e| e.round == round) {
                total += match (e.outcome, mode) {
                    (Outcome::Image, _) => e.labelable.unwrap_or(0) as f64,
                    (Outcome::Matched | Outcome::Null, Accounting::Instance) if e.charged => 1.0,
                    _ => 0.0,
                };
            }
            total
        })
        .collect()
}

/// Reads an `x,y` CSV; lines starting with `#` are skipped.
pub fn read_curve_csv<R: Read>(reader: R) -> Result<Curve> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
        return Err(Error::InvalidArgument(format!(
            "curve CSV header must be `x,y`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    for rec in rdr.deserialize() {
        let p: CurvePoint = rec?;
        points.push(p);
    }
    Curve::new(points)
}

/// Writes an `x,y` CSV, preceded by `# ...` comment lines.
pub fn write_curve_csv<W: Write>(
    mut w: W,
    curve: &Curve,
    comments: &[String],
) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "x,y")?;
    for p in curve.points() {
        writeln!(w, "{},{}", p.x, p.y)?;
    }
    Ok(())
}
