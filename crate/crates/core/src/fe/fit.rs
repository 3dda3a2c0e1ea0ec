//! Named regression specifications and the panel-level estimator.

use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::cov::two_way_cov;
use super::demean::{drop_singletons, within_transform, Factor};
use super::ols::ols;
use crate::error::{Error, Result};
use crate::panel::{sort_rows, standardize, Interval, LogMode, PanelRow, PeriodGroup, StandardizationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    Omega,
    LogDist,
    OmegaXLogDist,
    OmegaXCovid,
    OmegaXRecovery,
}

impl Regressor {
    pub fn name(self) -> &'static str {
        match self {
            Regressor::Omega => "omega",
            Regressor::LogDist => "log_dist",
            Regressor::OmegaXLogDist => "omega_x_log_dist",
            Regressor::OmegaXCovid => "omega_x_covid",
            Regressor::OmegaXRecovery => "omega_x_recovery",
        }
    }

    pub fn value(self, r: &PanelRow) -> f64 {
        match self {
            Regressor::Omega => r.omega_std,
            Regressor::LogDist => r.log_dist_std,
            Regressor::OmegaXLogDist => r.omega_std * r.log_dist_std,
            Regressor::OmegaXCovid => r.omega_std * f64::from(u8::from(r.covid)),
            Regressor::OmegaXRecovery => r.omega_std * f64::from(u8::from(r.recovery)),
        }
    }

    fn uses_distance(self) -> bool {
        matches!(self, Regressor::LogDist | Regressor::OmegaXLogDist)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeFactor {
    Destination,
    Residence,
    Amenity,
    Year,
}

impl FeFactor {
    /// Absorption order.
    pub const ALL: [FeFactor; 4] = [FeFactor::Destination, FeFactor::Residence, FeFactor::Amenity, FeFactor::Year];

    pub fn name(self) -> &'static str {
        match self {
            FeFactor::Destination => "destination",
            FeFactor::Residence => "residence",
            FeFactor::Amenity => "amenity",
            FeFactor::Year => "year",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Sample {
    All,
    Period(PeriodGroup),
    Interval(Interval),
    DestType(char),
}

impl Sample {
    fn contains(&self, r: &PanelRow, types: Option<&BTreeMap<usize, char>>) -> Result<bool> {
        Ok(match self {
            Sample::All => true,
            Sample::Period(PeriodGroup::Covid) => r.covid,
            Sample::Period(PeriodGroup::Recovery) => r.recovery,
            Sample::Period(PeriodGroup::PreCovid) => !r.covid && !r.recovery,
            Sample::Interval(i) => r.interval == *i,
            Sample::DestType(t) => {
                let types = types.ok_or_else(|| Error::Spec("type-split fit needs cluster type labels".into()))?;
                types.get(&r.dest) == Some(t)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FeOptions {
    fn default() -> Self {
        FeOptions { tol: 1e-8, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub name: String,
    pub regressors: Vec<Regressor>,
    pub fixed_effects: Vec<FeFactor>,
    pub sample: Sample,
}

impl RegressionSpec {
    fn new(name: String, regressors: Vec<Regressor>, fixed_effects: Vec<FeFactor>, sample: Sample) -> Self {
        RegressionSpec {
            name,
            regressors,
            fixed_effects,
            sample,
        }
    }

    pub fn uses_distance(&self) -> bool {
        self.regressors.iter().any(|r| r.uses_distance())
    }
}

/// Every built-in specification, in reporting order.
pub fn named_specs() -> Vec<RegressionSpec> {
    use Regressor::*;
    let all_fe = FeFactor::ALL.to_vec();
    let no_year = vec![FeFactor::Destination, FeFactor::Residence, FeFactor::Amenity];
    let eq6 = vec![Omega, OmegaXLogDist, LogDist];
    let mut specs = vec![
        RegressionSpec::new("eq6_pooled".into(), eq6.clone(), all_fe.clone(), Sample::All),
        RegressionSpec::new("eq6_precovid".into(), eq6.clone(), no_year.clone(), Sample::Period(PeriodGroup::PreCovid)),
        RegressionSpec::new("eq6_covid".into(), eq6.clone(), all_fe.clone(), Sample::Period(PeriodGroup::Covid)),
        RegressionSpec::new("eq6_recovery".into(), eq6, no_year, Sample::Period(PeriodGroup::Recovery)),
        RegressionSpec::new(
            "joint_pooled".into(),
            vec![Omega, OmegaXLogDist, LogDist, OmegaXCovid, OmegaXRecovery],
            all_fe.clone(),
            Sample::All,
        ),
    ];
    for iv in Interval::ALL {
        let mut regs = vec![Omega, OmegaXCovid, OmegaXRecovery];
        if iv != Interval::Zero {
            regs.push(LogDist);
        }
        specs.push(RegressionSpec::new(
            format!("eq7_interval_{}", iv.slug()),
            regs,
            all_fe.clone(),
            Sample::Interval(iv),
        ));
    }
    for t in ['A', 'B', 'C', 'D', 'E'] {
        specs.push(RegressionSpec::new(
            format!("eq7_type_{t}"),
            vec![Omega, OmegaXCovid, OmegaXRecovery, LogDist],
            all_fe.clone(),
            Sample::DestType(t),
        ));
    }
    specs
}

pub fn spec_by_name(name: &str) -> Result<RegressionSpec> {
    let specs = named_specs();
    specs.iter().find(|s| s.name == name).cloned().ok_or_else(|| {
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        Error::Spec(format!("unknown spec `{name}`; available: {}", names.join(", ")))
    })
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Output of the array-level estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_obs: usize,
    pub n_dropped_singletons: usize,
    pub r2: f64,
    pub within_r2: f64,
    pub iterations: usize,
    pub cov_repaired: bool,
    pub min_eigenvalue: f64,
}

fn subset<T: Copy>(v: &[T], keep: &[bool]) -> Vec<T> {
    v.iter().zip(keep).filter_map(|(x, k)| k.then_some(*x)).collect()
}

/// Absorbs `factors`, runs OLS on the demeaned data and clusters the
/// covariance two ways. `x` holds one vector per regressor.
pub fn estimate(
    y: &[f64],
    x: &[Vec<f64>],
    names: &[String],
    factors: &[Factor],
    cluster_a: &[u32],
    cluster_b: &[u32],
    opts: FeOptions,
) -> Result<Estimate> {
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("no observations"));
    }
    if x.iter().any(|c| c.len() != n) || cluster_a.len() != n || cluster_b.len() != n {
        return Err(Error::invalid("regressor or cluster columns do not align with y"));
    }
    let (keep, dropped) = if factors.is_empty() {
        (vec![true; n], 0)
    } else {
        drop_singletons(factors)
    };
    let factors: Vec<Factor> = factors.iter().map(|f| f.subset(&keep)).collect();
    let y = subset(y, &keep);
    let m = y.len();
    if m == 0 {
        return Err(Error::DegenerateSample("every observation is a fixed-effect singleton".into()));
    }
    let ybar = y.iter().sum::<f64>() / m as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(x.len() + 1);
    cols.push(y);
    cols.extend(x.iter().map(|c| subset(c, &keep)));
    let iterations = within_transform(&mut cols, &factors, opts.tol, opts.max_iter)?;
    let yt = DVector::from_vec(cols.remove(0));
    let k = cols.len();
    let xt = DMatrix::from_fn(m, k, |i, j| cols[j][i]);
    let tss_within = yt.norm_squared();
    if !(tss_within > 0.0) {
        return Err(Error::DegenerateSample("outcome is fully absorbed by the fixed effects".into()));
    }
    let fit = ols(&yt, &xt, names)?;
    let rss = fit.residuals.norm_squared();
    let cov = two_way_cov(
        &xt,
        &fit.residuals,
        &fit.xtx_inv,
        &subset(cluster_a, &keep),
        &subset(cluster_b, &keep),
        k,
    )?;
    Ok(Estimate {
        names: names.to_vec(),
        beta: fit.beta,
        cov: cov.matrix(),
        n_obs: m,
        n_dropped_singletons: dropped,
        r2: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        within_r2: 1.0 - rss / tss_within,
        iterations,
        cov_repaired: cov.repaired,
        min_eigenvalue: cov.min_eigenvalue,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: RegressionSpec,
    pub coefficients: Vec<Coefficient>,
    pub covariance: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_dropped_singletons: usize,
    pub r2: f64,
    pub within_r2: f64,
    pub demean_iterations: usize,
    pub covariance_repaired: bool,
    pub min_eigenvalue: f64,
    pub standardization: StandardizationReport,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.coefficients.iter().position(|c| c.name == name)
    }

    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn cov(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.covariance[self.index(a)?][self.index(b)?])
    }
}

/// Restricts the panel to the spec's sample, restandardizes on that sample
/// and estimates with destination and residence clustering.
pub fn fit(
    spec: &RegressionSpec,
    rows: &[PanelRow],
    types: Option<&BTreeMap<usize, char>>,
    log_mode: LogMode,
    opts: FeOptions,
) -> Result<FitResult> {
    let mut sample = Vec::new();
    for r in rows {
        if spec.sample.contains(r, types)? {
            sample.push(r.clone());
        }
    }
    if sample.is_empty() {
        return Err(Error::DegenerateSample(format!("sample for `{}` is empty", spec.name)));
    }
    sort_rows(&mut sample);
    let report = standardize(&mut sample, &spec.name, log_mode, spec.uses_distance())?;

    let y: Vec<f64> = sample.iter().map(|r| r.y).collect();
    let x: Vec<Vec<f64>> = spec
        .regressors
        .iter()
        .map(|reg| sample.iter().map(|r| reg.value(r)).collect())
        .collect();
    let names: Vec<String> = spec.regressors.iter().map(|r| r.name().to_string()).collect();
    let factors: Vec<Factor> = spec
        .fixed_effects
        .iter()
        .map(|f| match f {
            FeFactor::Destination => Factor::from_keys(f.name(), &sample.iter().map(|r| r.dest).collect::<Vec<_>>()),
            FeFactor::Residence => Factor::from_keys(f.name(), &sample.iter().map(|r| r.res).collect::<Vec<_>>()),
            FeFactor::Amenity => {
                Factor::from_keys(f.name(), &sample.iter().map(|r| r.amenity.as_str()).collect::<Vec<_>>())
            }
            FeFactor::Year => Factor::from_keys(f.name(), &sample.iter().map(|r| r.year).collect::<Vec<_>>()),
        })
        .collect();
    let a: Vec<u32> = sample.iter().map(|r| r.dest as u32).collect();
    let b: Vec<u32> = sample.iter().map(|r| r.res as u32).collect();
    let est = estimate(&y, &x, &names, &factors, &a, &b, opts)?;

    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = est.cov[(j, j)].max(0.0).sqrt();
            let t = est.beta[j] / se;
            let p = erfc(t.abs() / std::f64::consts::SQRT_2);
            Coefficient {
                name: name.clone(),
                estimate: est.beta[j],
                se,
                t,
                p,
                stars: stars(p).to_string(),
            }
        })
        .collect();
    let k = names.len();
    Ok(FitResult {
        spec: spec.clone(),
        coefficients,
        covariance: (0..k).map(|i| (0..k).map(|j| est.cov[(i, j)]).collect()).collect(),
        n_obs: est.n_obs,
        n_dropped_singletons: est.n_dropped_singletons,
        r2: est.r2,
        within_r2: est.within_r2,
        demean_iterations: est.iterations,
        covariance_repaired: est.cov_repaired,
        min_eigenvalue: est.min_eigenvalue,
        standardization: report,
    })
}

/// Side-by-side coefficient table: estimates with stars, clustered standard
/// errors beneath, then fixed effects and fit statistics.
pub fn format_table(fits: &[FitResult]) -> String {
    let mut rows: Vec<&'static str> = Vec::new();
    for f in fits {
        for r in &f.spec.regressors {
            if !rows.contains(&r.name()) {
                rows.push(r.name());
            }
        }
    }
    let label_w = rows.iter().map(|r| r.len()).chain(["Observations".len()]).max().unwrap_or(12) + 2;
    let col_w = fits.iter().map(|f| f.spec.name.len()).max().unwrap_or(0).max(12) + 2;
    let mut out = String::new();
    let line = |out: &mut String, label: &str, cells: Vec<String>| {
        write!(out, "{label:<label_w$}").unwrap();
        for c in cells {
            write!(out, "{c:>col_w$}").unwrap();
        }
        out.push('\n');
    };
    line(&mut out, "Dependent variable: y", vec![]);
    line(&mut out, "", fits.iter().map(|f| f.spec.name.clone()).collect());
    line(&mut out, "Model:", (1..=fits.len()).map(|i| format!("({i})")).collect());
    for name in &rows {
        let mut est = Vec::new();
        let mut se = Vec::new();
        for f in fits {
            match f.coef(name) {
                Some(c) => {
                    est.push(format!("{:.4}{}", c.estimate, c.stars));
                    se.push(format!("({:.4})", c.se));
                }
                None => {
                    est.push(String::new());
                    se.push(String::new());
                }
            }
        }
        line(&mut out, name, est);
        line(&mut out, "", se);
    }
    out.push_str("Fixed-effects\n");
    for fe in FeFactor::ALL {
        let marks = fits
            .iter()
            .map(|f| if f.spec.fixed_effects.contains(&fe) { "Yes".to_string() } else { String::new() })
            .collect();
        line(&mut out, fe.name(), marks);
    }
    out.push_str("Fit statistics\n");
    line(&mut out, "Observations", fits.iter().map(|f| f.n_obs.to_string()).collect());
    line(&mut out, "R2", fits.iter().map(|f| format!("{:.5}", f.r2)).collect());
    line(&mut out, "Within R2", fits.iter().map(|f| format!("{:.5}", f.within_r2)).collect());
    out.push_str("Clustered (destination & residence) standard errors in parentheses\n");
    out.push_str("Signif. codes: ***: 0.01, **: 0.05, *: 0.1\n");
    out
}
