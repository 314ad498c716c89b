//! Cross-meter statistics: Pearson, Spearman and Kendall tau-b correlations,
//! the least-squares model predicting wall energy from chip energy, and its
//! goodness of fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, MeasurementRow};
use crate::job::{Codec, Process};
use crate::trace::Scope;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("every pair is tied")]
    AllTied,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("relative error needs positive reference values (index {0})")]
    NonPositiveReference(usize),
    #[error("no {0}-scope meter in the dataset")]
    NoMeter(&'static str),
    #[error("meter {0} is not in the dataset")]
    UnknownMeter(String),
}

fn check_pair(x: &[f64], y: &[f64], need: usize) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < need {
        return Err(AnalysisError::TooFew {
            need,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite(i % x.len()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Centered second moments (sxx, syy, sxy).
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(sxx, syy, sxy), (a, b)| {
        let (dx, dy) = (a - mx, b - my);
        (sxx + dx * dx, syy + dy * dy, sxy + dx * dy)
    })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check_pair(x, y, 2)?;
    let (sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check_pair(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Kendall tau-b by pair enumeration.
pub fn kendall(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check_pair(x, y, 2)?;
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite");
            let dy = y[i].partial_cmp(&y[j]).expect("finite");
            use std::cmp::Ordering::Equal;
            match (dx == Equal, dy == Equal) {
                (true, true) => {
                    tied_x += 1;
                    tied_y += 1;
                }
                (true, false) => tied_x += 1,
                (false, true) => tied_y += 1,
                (false, false) if dx == dy => concordant += 1,
                (false, false) => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tied_x) as f64) * ((n0 - tied_y) as f64);
    if denom == 0.0 {
        return Err(AnalysisError::AllTied);
    }
    Ok(((concordant - discordant) as f64 / denom.sqrt()).clamp(-1.0, 1.0))
}

/// Least-squares line `hw ≈ slope · sw + intercept` and its fit quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    /// `1 - SS_res / SS_tot`.
    pub r2: f64,
    /// Mean of `|prediction - hw| / hw`.
    pub epsilon: f64,
    pub n_points: usize,
}

impl FitResult {
    pub fn predict(&self, sw: f64) -> f64 {
        self.slope * sw + self.intercept
    }
}

pub fn fit_linear(sw: &[f64], hw: &[f64]) -> Result<FitResult, AnalysisError> {
    check_pair(sw, hw, 3)?;
    if let Some(i) = hw.iter().position(|&v| !(v > 0.0)) {
        return Err(AnalysisError::NonPositiveReference(i));
    }
    let (sxx, syy, sxy) = moments(sw, hw);
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let slope = sxy / sxx;
    let intercept = mean(hw) - slope * mean(sw);
    let mut ss_res = 0.0;
    let mut rel = 0.0;
    for (&x, &y) in sw.iter().zip(hw) {
        let r = slope * x + intercept - y;
        ss_res += r * r;
        rel += r.abs() / y;
    }
    let r2 = if ss_res == 0.0 {
        1.0
    } else if syy == 0.0 {
        0.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        slope,
        intercept,
        r2,
        epsilon: rel / sw.len() as f64,
        n_points: sw.len(),
    })
}

/// One row of the cross-meter correlation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub codec: Codec,
    pub process: Process,
    pub pcc: f64,
    pub scc: f64,
    pub kcc: f64,
    pub fit: FitResult,
}

/// Table groups in presentation order.
pub const GROUPS: [(Codec, Process); 4] = [
    (Codec::X264, Process::Encode),
    (Codec::X264, Process::Decode),
    (Codec::X265, Process::Encode),
    (Codec::X265, Process::Decode),
];

/// Minimum pairs for a group to be reported.
pub const MIN_GROUP_PAIRS: usize = 3;

/// The wall-scope (reference) and chip-scope (estimator) meters to compare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeterPair {
    pub hw: String,
    pub sw: String,
}

/// First wall-scope and first chip-scope meter, unless overridden.
pub fn select_meters(
    dataset: &Dataset,
    hw: Option<&str>,
    sw: Option<&str>,
) -> Result<MeterPair, AnalysisError> {
    let pick = |want: Option<&str>, scope: Scope, name: &'static str| match want {
        Some(id) => dataset
            .meter(id)
            .map(|m| m.meter_id.clone())
            .ok_or_else(|| AnalysisError::UnknownMeter(id.to_string())),
        None => dataset
            .meters
            .iter()
            .find(|m| m.scope == scope)
            .map(|m| m.meter_id.clone())
            .ok_or(AnalysisError::NoMeter(name)),
    };
    Ok(MeterPair {
        hw: pick(hw, Scope::Wall, "wall")?,
        sw: pick(sw, Scope::Chip, "chip")?,
    })
}

/// Energies of the two meters for every job measured by both.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paired {
    pub sw: Vec<f64>,
    pub hw: Vec<f64>,
}

/// Pairs measurements by job id within each (codec, process) group.
/// Unpaired jobs are reported in the returned warnings.
pub fn pair_measurements(
    rows: &[MeasurementRow],
    meters: &MeterPair,
) -> (BTreeMap<(Codec, Process), Paired>, Vec<String>) {
    let mut sw_by_job: BTreeMap<&str, &MeasurementRow> = BTreeMap::new();
    let mut hw_by_job: BTreeMap<&str, &MeasurementRow> = BTreeMap::new();
    for r in rows {
        if r.meter_id == meters.sw {
            sw_by_job.insert(&r.job_id, r);
        } else if r.meter_id == meters.hw {
            hw_by_job.insert(&r.job_id, r);
        }
    }
    let mut groups: BTreeMap<(Codec, Process), Paired> = BTreeMap::new();
    let mut warnings = Vec::new();
    // dataset order keeps the output independent of map iteration details
    for r in rows.iter().filter(|r| r.meter_id == meters.hw) {
        match sw_by_job.get(r.job_id.as_str()) {
            Some(s) => {
                let g = groups.entry((r.codec, r.process)).or_default();
                g.sw.push(s.energy_j);
                g.hw.push(r.energy_j);
            }
            None => warnings.push(format!("job {} has no {} measurement", r.job_id, meters.sw)),
        }
    }
    for job in sw_by_job.keys().filter(|j| !hw_by_job.contains_key(*j)) {
        warnings.push(format!("job {job} has no {} measurement", meters.hw));
    }
    (groups, warnings)
}

/// Correlations and fit per (codec, process), pooling all sequences,
/// resolutions and crf values of a group.
pub fn correlate_groups(
    rows: &[MeasurementRow],
    meters: &MeterPair,
) -> (Vec<CorrelationReport>, Vec<String>) {
    let (groups, mut warnings) = pair_measurements(rows, meters);
    let mut reports = Vec::new();
    for (codec, process) in GROUPS {
        let Some(p) = groups.get(&(codec, process)) else {
            warnings.push(format!("{codec} {process}: no paired measurements"));
            continue;
        };
        if p.sw.len() < MIN_GROUP_PAIRS {
            warnings.push(format!(
                "{codec} {process}: only {} pairs, need {MIN_GROUP_PAIRS}",
                p.sw.len()
            ));
            continue;
        }
        let stats = pearson(&p.sw, &p.hw).and_then(|pcc| {
            Ok(CorrelationReport {
                codec,
                process,
                pcc,
                scc: spearman(&p.sw, &p.hw)?,
                kcc: kendall(&p.sw, &p.hw)?,
                fit: fit_linear(&p.sw, &p.hw)?,
            })
        });
        match stats {
            Ok(r) => reports.push(r),
            Err(e) => warnings.push(format!("{codec} {process}: {e}")),
        }
    }
    (reports, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn pearson_examples() {
        assert!(close(pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0));
        assert!(close(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0));
        assert!(close(pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(), 0.8));
        assert_eq!(pearson(&[1., 2.], &[1.]), Err(AnalysisError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1., 1.], &[1., 2.]), Err(AnalysisError::ZeroVariance));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10., 10., 20.]), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[3., 1., 2.]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn spearman_examples() {
        assert!(close(spearman(&[1., 5., 9.], &[0.1, 7., 100.]).unwrap(), 1.0));
        let expected = pearson(&[1., 2., 3.], &[1.5, 1.5, 3.]).unwrap();
        assert!(close(spearman(&[1., 2., 3.], &[10., 10., 20.]).unwrap(), expected));
        assert!(close(spearman(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(), 0.8));
    }

    #[test]
    fn kendall_examples() {
        assert!(close(kendall(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0));
        assert!(close(kendall(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(), 4.0 / 6.0));
        assert!(close(kendall(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0));
        assert_eq!(kendall(&[1., 1.], &[2., 2.]), Err(AnalysisError::AllTied));
    }

    #[test]
    fn fit_examples() {
        let sw = [1., 2., 3., 7.];
        let hw: Vec<f64> = sw.iter().map(|x| 2.0 * x + 3.0).collect();
        let f = fit_linear(&sw, &hw).unwrap();
        assert!(close(f.slope, 2.0) && close(f.intercept, 3.0));
        assert_eq!((f.r2, f.epsilon), (1.0, 0.0));

        // normal equations on three points
        let f = fit_linear(&[1., 2., 3.], &[3., 5., 8.]).unwrap();
        assert!(close(f.slope, 2.5));
        assert!(close(f.intercept, 16.0 / 3.0 - 5.0));
        assert!(fit_linear(&[1., 2.], &[1., 2.]).is_err());
        assert_eq!(
            fit_linear(&[1., 2., 3.], &[1., 0., 2.]),
            Err(AnalysisError::NonPositiveReference(1))
        );
        assert_eq!(fit_linear(&[2., 2., 2.], &[1., 2., 3.]), Err(AnalysisError::ZeroVariance));
    }

    fn row(job: &str, meter: &str, codec: Codec, process: Process, e: f64) -> MeasurementRow {
        MeasurementRow {
            job_id: job.into(),
            meter_id: meter.into(),
            process,
            codec,
            width: 1280,
            height: 720,
            fps: 30,
            crf: 30,
            energy_j: e,
            n_samples: 40,
            mean_w: 1.0,
            std_w: 0.0,
            reliable: true,
            bitrate_kbps: None,
        }
    }

    #[test]
    fn groups_and_skips() {
        let meters = MeterPair {
            hw: "hw".into(),
            sw: "sw".into(),
        };
        let mut rows = Vec::new();
        for (gi, (codec, process)) in GROUPS.iter().enumerate() {
            let n = if gi == 3 { 2 } else { 5 };
            for i in 0..n {
                let job = format!("{gi}_{i}");
                let sw = 10.0 + (i * i) as f64;
                rows.push(row(&job, "sw", *codec, *process, sw));
                rows.push(row(&job, "hw", *codec, *process, 1.5 * sw + 4.0));
            }
        }
        rows.push(row("orphan", "sw", Codec::X264, Process::Encode, 1.0));
        let (reports, warnings) = correlate_groups(&rows, &meters);
        assert_eq!(reports.len(), 3);
        assert_eq!(
            reports.iter().map(|r| (r.codec, r.process)).collect::<Vec<_>>(),
            GROUPS[..3].to_vec()
        );
        assert!(reports.iter().all(|r| close(r.pcc, 1.0) && close(r.fit.slope, 1.5)));
        assert!(warnings.iter().any(|w| w.contains("orphan")));
        assert!(warnings.iter().any(|w| w.contains("x265 decode")));
    }
}
