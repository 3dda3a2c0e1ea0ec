//! Marginal effect of relatedness density along distance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use crate::error::{Error, Result};
use crate::panel::PeriodGroup;
use crate::table::TableWriter;

/// Interval boundaries in km.
pub const DEFAULT_GRID_KM: [f64; 6] = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPoint {
    pub distance_km: f64,
    pub log_dist_std: f64,
    pub effect: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve {
    pub spec: String,
    pub period: Option<PeriodGroup>,
    pub points: Vec<MarginalPoint>,
}

/// Effect `β_ω + β_int x (+ β_period)` and its standard error at each grid
/// distance, with `x` the sample-standardized `ln(d + δ)`.
pub fn marginal_effects(
    fit: &FitResult,
    grid_km: &[f64],
    delta_km: f64,
    period: Option<PeriodGroup>,
) -> Result<MarginalCurve> {
    let need = |name: &str| {
        fit.index(name)
            .ok_or_else(|| Error::Spec(format!("fit `{}` has no `{name}` coefficient", fit.spec.name)))
    };
    let mut terms = vec![need("omega")?, need("omega_x_log_dist")?];
    match period {
        Some(PeriodGroup::Covid) => terms.push(need("omega_x_covid")?),
        Some(PeriodGroup::Recovery) => terms.push(need("omega_x_recovery")?),
        _ => {}
    }
    let moments = fit.standardization.moments("log_dist")?;
    let mut points = Vec::with_capacity(grid_km.len());
    for &d in grid_km {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::param("distance grid", d, "[0, inf)"));
        }
        let x = moments.standardize((d + delta_km).ln());
        let weights: Vec<f64> = terms.iter().enumerate().map(|(k, _)| if k == 1 { x } else { 1.0 }).collect();
        let effect: f64 = terms
            .iter()
            .zip(&weights)
            .map(|(&j, w)| w * fit.coefficients[j].estimate)
            .sum();
        let mut var = 0.0;
        for (a, wa) in terms.iter().zip(&weights) {
            for (b, wb) in terms.iter().zip(&weights) {
                var += wa * wb * fit.covariance[*a][*b];
            }
        }
        points.push(MarginalPoint {
            distance_km: d,
            log_dist_std: x,
            effect,
            se: var.max(0.0).sqrt(),
        });
    }
    Ok(MarginalCurve {
        spec: fit.spec.name.clone(),
        period,
        points,
    })
}

impl MarginalCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = TableWriter::create(path, &["distance_km", "effect", "se"])?;
        for p in &self.points {
            w.row([p.distance_km.to_string(), p.effect.to_string(), p.se.to_string()])?;
        }
        w.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::fit::{spec_by_name, Coefficient};
    use crate::panel::{Moments, StandardizationReport};
    use std::collections::BTreeMap;

    fn fake_fit(beta: [f64; 3], cov: [[f64; 3]; 3]) -> FitResult {
        let spec = spec_by_name("eq6_pooled").unwrap();
        let coefficients = ["omega", "omega_x_log_dist", "log_dist"]
            .iter()
            .zip(beta)
            .map(|(n, b)| Coefficient { name: n.to_string(), estimate: b, se: 0.0, t: 0.0, p: 1.0, stars: String::new() })
            .collect();
        let mut variables = BTreeMap::new();
        variables.insert("log_dist".to_string(), Moments { mean: 1.0, sd: 0.5 });
        FitResult {
            spec,
            coefficients,
            covariance: cov.iter().map(|r| r.to_vec()).collect(),
            n_obs: 10,
            n_dropped_singletons: 0,
            r2: 0.0,
            within_r2: 0.0,
            demean_iterations: 1,
            covariance_repaired: false,
            min_eigenvalue: 0.0,
            standardization: StandardizationReport { sample: "s".into(), n: 10, log_mode: "log1p".into(), variables },
        }
    }

    #[test]
    fn constant_se_without_interaction_uncertainty() {
        let fit = fake_fit([0.3, -0.1, -0.2], [[0.04, 0.0, 0.01], [0.0, 0.0, 0.0], [0.01, 0.0, 0.09]]);
        let curve = marginal_effects(&fit, &DEFAULT_GRID_KM, 0.025, None).unwrap();
        for p in &curve.points {
            assert!((p.se - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_closed_form_and_decreases() {
        let cov = [[0.04, -0.003, 0.0], [-0.003, 0.01, 0.0], [0.0, 0.0, 0.09]];
        let fit = fake_fit([0.3, -0.1, -0.2], cov);
        let curve = marginal_effects(&fit, &DEFAULT_GRID_KM, 0.025, None).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].effect < w[0].effect);
        }
        for (p, d) in curve.points.iter().zip(DEFAULT_GRID_KM) {
            let x = ((d + 0.025f64).ln() - 1.0) / 0.5;
            assert!((p.effect - (0.3 - 0.1 * x)).abs() < 1e-14);
            let se = (0.04 + x * x * 0.01 + 2.0 * x * -0.003f64).sqrt();
            assert!((p.se - se).abs() < 1e-14);
        }
    }

    #[test]
    fn missing_interaction_is_a_spec_error() {
        let mut fit = fake_fit([0.3, -0.1, -0.2], [[0.0; 3]; 3]);
        fit.coefficients[1].name = "something_else".into();
        assert!(matches!(marginal_effects(&fit, &DEFAULT_GRID_KM, 0.025, None), Err(Error::Spec(_))));
        let fit = fake_fit([0.3, -0.1, -0.2], [[0.0; 3]; 3]);
        assert!(matches!(
            marginal_effects(&fit, &DEFAULT_GRID_KM, 0.025, Some(PeriodGroup::Covid)),
            Err(Error::Spec(_))
        ));
    }
}
