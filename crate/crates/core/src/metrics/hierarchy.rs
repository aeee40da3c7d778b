use serde::{Deserialize, Serialize};

use super::rmsse;
use crate::error::{Error, Result};

/// One aggregation level: every base series maps to one group, and each group
/// carries a weight. Weights within a level sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub name: String,
    /// `groups[s]` is the group index of base series `s`.
    pub groups: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Aggregation levels over a set of base series, loadable from TOML:
///
/// ```toml
/// series = ["a", "b", "c"]
/// [[levels]]
/// name = "total"
/// groups = [0, 0, 0]
/// weights = [1.0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySpec {
    #[serde(default)]
    pub series: Vec<String>,
    pub levels: Vec<Level>,
}

impl HierarchySpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Hierarchy(e.to_string()))
    }

    /// Two levels: each series on its own with `weights`, and their total.
    pub fn base_and_total(weights: Vec<f64>) -> Self {
        let n = weights.len();
        Self {
            series: Vec::new(),
            levels: vec![
                Level {
                    name: "series".into(),
                    groups: (0..n).collect(),
                    weights,
                },
                Level {
                    name: "total".into(),
                    groups: vec![0; n],
                    weights: vec![1.0],
                },
            ],
        }
    }

    fn series_name(&self, s: usize) -> String {
        self.series.get(s).cloned().unwrap_or_else(|| format!("#{s}"))
    }

    pub fn validate(&self, n_series: usize) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Hierarchy("no levels defined".into()));
        }
        if !self.series.is_empty() && self.series.len() != n_series {
            return Err(Error::Hierarchy(format!(
                "{} series names for {n_series} series",
                self.series.len()
            )));
        }
        for level in &self.levels {
            if level.groups.len() < n_series {
                return Err(Error::Hierarchy(format!(
                    "level `{}` does not assign series {}",
                    level.name,
                    self.series_name(level.groups.len())
                )));
            }
            if level.groups.len() > n_series {
                return Err(Error::Hierarchy(format!(
                    "level `{}` assigns {} series but there are {n_series}",
                    level.name,
                    level.groups.len()
                )));
            }
            let k = level.weights.len();
            if let Some(s) = level.groups.iter().position(|&g| g >= k) {
                return Err(Error::Hierarchy(format!(
                    "level `{}` puts series {} in group {} but only {k} weights are given",
                    level.name,
                    self.series_name(s),
                    level.groups[s]
                )));
            }
            if let Some(g) = (0..k).find(|g| !level.groups.contains(g)) {
                return Err(Error::Hierarchy(format!(
                    "level `{}` group {g} has no series",
                    level.name
                )));
            }
            if level.weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::Hierarchy(format!(
                    "level `{}` has a negative weight",
                    level.name
                )));
            }
            let total: f64 = level.weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Hierarchy(format!(
                    "level `{}` weights sum to {total}, expected 1",
                    level.name
                )));
            }
        }
        Ok(())
    }
}

/// Group weights proportional to summed revenue, e.g. price times units over
/// the final weeks of history.
pub fn revenue_weights(groups: &[usize], revenue: &[f64]) -> Result<Vec<f64>> {
    if groups.len() != revenue.len() {
        return Err(Error::Hierarchy(format!(
            "{} group assignments for {} revenue values",
            groups.len(),
            revenue.len()
        )));
    }
    let k = groups.iter().max().map_or(0, |g| g + 1);
    let mut w = vec![0.0; k];
    for (&g, &r) in groups.iter().zip(revenue) {
        w[g] += r;
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Hierarchy("total revenue must be positive".into()));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelScore {
    pub name: String,
    /// Weighted sum of group RMSSEs.
    pub score: f64,
    pub groups: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WrmsseReport {
    /// Mean of the level scores.
    pub score: f64,
    pub levels: Vec<LevelScore>,
}

impl WrmsseReport {
    /// `(level, group, rmsse)` sorted worst first.
    pub fn worst(&self, n: usize) -> Vec<(String, usize, f64)> {
        let mut all: Vec<(String, usize, f64)> = self
            .levels
            .iter()
            .flat_map(|l| l.groups.iter().enumerate().map(move |(g, &r)| (l.name.clone(), g, r)))
            .collect();
        all.sort_by(|a, b| b.2.total_cmp(&a.2));
        all.truncate(n);
        all
    }
}

fn aggregate(rows: &[Vec<f64>], groups: &[usize], k: usize) -> Vec<Vec<f64>> {
    let len = rows.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; len]; k];
    for (row, &g) in rows.iter().zip(groups) {
        for (o, v) in out[g].iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Weighted RMSSE across hierarchy levels. Each argument holds one row per
/// base series; base series are summed into group series per level.
pub fn wrmsse(
    forecasts: &[Vec<f64>],
    actuals: &[Vec<f64>],
    histories: &[Vec<f64>],
    spec: &HierarchySpec,
) -> Result<WrmsseReport> {
    let n = forecasts.len();
    if actuals.len() != n || histories.len() != n || n == 0 {
        return Err(Error::Hierarchy(format!(
            "{n} forecasts, {} actuals, {} histories",
            actuals.len(),
            histories.len()
        )));
    }
    for rows in [forecasts, actuals, histories] {
        if rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(Error::Hierarchy("series must share one length per input".into()));
        }
    }
    spec.validate(n)?;
    let mut levels = Vec::with_capacity(spec.levels.len());
    for level in &spec.levels {
        let k = level.weights.len();
        let f = aggregate(forecasts, &level.groups, k);
        let a = aggregate(actuals, &level.groups, k);
        let h = aggregate(histories, &level.groups, k);
        let groups = (0..k)
            .map(|g| {
                let label = if k == 1 && level.groups.len() > 1 {
                    level.name.clone()
                } else {
                    format!("{}[{g}]", level.name)
                };
                rmsse(&f[g], &a[g], &h[g], &label)
            })
            .collect::<Result<Vec<_>>>()?;
        let score = groups.iter().zip(&level.weights).map(|(r, w)| r * w).sum();
        levels.push(LevelScore {
            name: level.name.clone(),
            score,
            groups,
        });
    }
    let score = levels.iter().map(|l| l.score).sum::<f64>() / levels.len() as f64;
    Ok(WrmsseReport { score, levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    type Rows = Vec<Vec<f64>>;

    fn sample() -> (Rows, Rows, Rows) {
        let h = vec![
            vec![1.0, 3.0, 2.0, 5.0],
            vec![0.0, 2.0, 2.5, 1.0],
            vec![4.0, 4.5, 3.0, 6.0],
        ];
        let f = vec![vec![4.0, 5.0], vec![1.5, 1.0], vec![5.0, 5.5]];
        let a = vec![vec![5.0, 4.0], vec![1.0, 2.0], vec![6.0, 5.0]];
        (f, a, h)
    }

    fn three_level() -> HierarchySpec {
        HierarchySpec {
            series: vec!["a".into(), "b".into(), "c".into()],
            levels: vec![
                Level {
                    name: "item".into(),
                    groups: vec![0, 1, 2],
                    weights: vec![0.5, 0.2, 0.3],
                },
                Level {
                    name: "store".into(),
                    groups: vec![0, 0, 1],
                    weights: vec![0.6, 0.4],
                },
                Level {
                    name: "total".into(),
                    groups: vec![0, 0, 0],
                    weights: vec![1.0],
                },
            ],
        }
    }

    #[test]
    fn hand_computed_three_level() {
        let (f, a, h) = sample();
        let r = wrmsse(&f, &a, &h, &three_level()).unwrap();
        let item = 0.5 * rmsse(&f[0], &a[0], &h[0], "").unwrap()
            + 0.2 * rmsse(&f[1], &a[1], &h[1], "").unwrap()
            + 0.3 * rmsse(&f[2], &a[2], &h[2], "").unwrap();
        let sum2 = |x: &[Vec<f64>]| -> Vec<f64> { x[0].iter().zip(&x[1]).map(|(p, q)| p + q).collect() };
        let store =
            0.6 * rmsse(&sum2(&f), &sum2(&a), &sum2(&h), "").unwrap() + 0.4 * rmsse(&f[2], &a[2], &h[2], "").unwrap();
        let sum3 = |x: &[Vec<f64>]| -> Vec<f64> { (0..x[0].len()).map(|t| x[0][t] + x[1][t] + x[2][t]).collect() };
        let total = rmsse(&sum3(&f), &sum3(&a), &sum3(&h), "").unwrap();
        let expect = (item + store + total) / 3.0;
        assert!((r.score - expect).abs() < 1e-12);
        let mean = r.levels.iter().map(|l| l.score).sum::<f64>() / 3.0;
        assert!((mean - r.score).abs() < 1e-12);
    }

    #[test]
    fn perfect_forecast_scores_zero() {
        let (_, a, h) = sample();
        assert_eq!(wrmsse(&a, &a, &h, &three_level()).unwrap().score, 0.0);
    }

    #[test]
    fn orphan_series_is_named() {
        let (f, a, h) = sample();
        let mut spec = three_level();
        spec.levels[1].groups.pop();
        let err = wrmsse(&f, &a, &h, &spec).unwrap_err().to_string();
        assert!(err.contains("series c"), "{err}");
    }

    #[test]
    fn weights_must_sum_to_one() {
        let (f, a, h) = sample();
        let mut spec = three_level();
        spec.levels[0].weights = vec![0.5, 0.5, 0.5];
        assert!(matches!(wrmsse(&f, &a, &h, &spec), Err(Error::Hierarchy(_))));
    }

    #[test]
    fn revenue_weighting() {
        let w = revenue_weights(&[0, 1, 1], &[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn toml_spec() {
        let spec = HierarchySpec::from_toml_str(
            "series = [\"a\", \"b\"]\n[[levels]]\nname = \"total\"\ngroups = [0, 0]\nweights = [1.0]\n",
        )
        .unwrap();
        spec.validate(2).unwrap();
    }
}
