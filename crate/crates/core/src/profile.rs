use serde::{Deserialize, Serialize};

/// A scalar function of true time: constant or a piecewise-linear table.
///
/// Outside the table span the end values are held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Table(Vec<[f64; 2]>),
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant(0.0)
    }
}

impl From<f64> for Profile {
    fn from(v: f64) -> Self {
        Profile::Constant(v)
    }
}

impl Profile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Table(points) => {
                let Some(first) = points.first() else { return 0.0 };
                let last = points[points.len() - 1];
                if t <= first[0] {
                    return first[1];
                }
                if t >= last[0] {
                    return last[1];
                }
                let i = points.partition_point(|p| p[0] <= t);
                let (a, b) = (points[i - 1], points[i]);
                if b[0] == a[0] {
                    return b[1];
                }
                a[1] + (t - a[0]) / (b[0] - a[0]) * (b[1] - a[1])
            }
        }
    }

    /// Smallest value over `[start, end]`.
    pub fn min_over(&self, start: f64, end: f64) -> f64 {
        self.sample_points(start, end).fold(f64::INFINITY, f64::min)
    }

    /// Largest value over `[start, end]`.
    pub fn max_over(&self, start: f64, end: f64) -> f64 {
        self.sample_points(start, end).fold(f64::NEG_INFINITY, f64::max)
    }

    // Extremes of a piecewise-linear function sit on its knots or the ends.
    fn sample_points(&self, start: f64, end: f64) -> impl Iterator<Item = f64> + '_ {
        let knots: Vec<f64> = match self {
            Profile::Constant(_) => Vec::new(),
            Profile::Table(p) => p.iter().map(|p| p[0]).filter(|&t| t > start && t < end).collect(),
        };
        [start, end].into_iter().chain(knots).map(move |t| self.eval(t))
    }

    pub fn validate(&self, name: &str, lo: f64, hi: f64) -> Result<(), String> {
        let values: Vec<f64> = match self {
            Profile::Constant(v) => vec![*v],
            Profile::Table(p) => {
                if p.windows(2).any(|w| w[1][0] < w[0][0]) {
                    return Err(format!("{name}: table times must be non-decreasing"));
                }
                p.iter().map(|p| p[1]).collect()
            }
        };
        for v in values {
            if v.is_nan() || v < lo || v > hi {
                return Err(format!("{name}: value {v} outside [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}
