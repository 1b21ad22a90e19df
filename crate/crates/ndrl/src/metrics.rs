//! Agronomic and algorithmic evaluation metrics.

use crate::error::{Error, Result};

/// One comparison-table row.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricsRow {
    pub label: String,
    pub irrigation_mm: f64,
    pub fertilizer_n_kgha: f64,
    pub yield_kgha: f64,
    pub iwp_kg_m3: f64,
    pub npfp_kg_kg: f64,
}

impl MetricsRow {
    pub fn compute(label: &str, irrigation: f64, nitrogen: f64, yield_kgha: f64) -> Result<Self> {
        Ok(MetricsRow {
            label: label.to_string(),
            irrigation_mm: irrigation,
            fertilizer_n_kgha: nitrogen,
            yield_kgha,
            iwp_kg_m3: iwp(yield_kgha, irrigation)?,
            npfp_kg_kg: npfp(yield_kgha, nitrogen)?,
        })
    }
}

/// Irrigation water productivity, kg/m³. 1 mm over 1 ha is 10 m³, hence
/// the factor 10 in the denominator.
pub fn iwp(yield_kgha: f64, irrigation_mm: f64) -> Result<f64> {
    if irrigation_mm <= 0.0 {
        return Err(Error::InvalidArgument(
            "IWP undefined for zero irrigation".into(),
        ));
    }
    if yield_kgha < 0.0 {
        return Err(Error::InvalidArgument("negative yield".into()));
    }
    Ok(yield_kgha / (irrigation_mm * 10.0))
}

/// Nitrogen partial factor productivity, kg yield per kg applied N.
pub fn npfp(yield_kgha: f64, nitrogen_kgha: f64) -> Result<f64> {
    if nitrogen_kgha <= 0.0 {
        return Err(Error::InvalidArgument(
            "NPFP undefined for zero nitrogen".into(),
        ));
    }
    if yield_kgha < 0.0 {
        return Err(Error::InvalidArgument("negative yield".into()));
    }
    Ok(yield_kgha / nitrogen_kgha)
}

/// Cumulative yield-to-action-step ratio over an episode prefix: pooled
/// yield sum divided by pooled step sum (not a mean of per-episode ratios).
pub fn cyasr(yields: &[f64], action_steps: &[usize], up_to_episode: usize) -> Result<f64> {
    if yields.len() != action_steps.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    let n = up_to_episode.min(yields.len());
    if n == 0 {
        return Err(Error::InvalidArgument("empty episode prefix".into()));
    }
    let total_steps: usize = action_steps[..n].iter().sum();
    if total_steps == 0 {
        return Err(Error::InvalidArgument("zero total action steps".into()));
    }
    let total_yield: f64 = yields[..n].iter().sum();
    Ok(total_yield / total_steps as f64)
}

/// Trailing-window mean of per-episode rewards, one point per episode.
/// Windows larger than the available prefix average what exists.
pub fn avg_cumulative_reward(rewards: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    Ok((0..rewards.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &rewards[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

fn check_pair(observed: &[f64], predicted: &[f64]) -> Result<()> {
    if observed.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} observed vs {} predicted",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    Ok(())
}

/// Normalized RMSE as a percentage of the observed mean.
pub fn nrmse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::InvalidArgument("zero observed mean".into()));
    }
    let mse = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p) * (o - p))
        .sum::<f64>()
        / n;
    Ok(100.0 * mse.sqrt() / mean)
}

/// Willmott index of agreement:
/// 1 - sum (P - O)^2 / sum (|P - mean(O)| + |O - mean(O)|)^2.
pub fn d_index(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    if observed.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let num: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (p - o) * (p - o))
        .sum();
    let den: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| {
            let d = (p - mean).abs() + (o - mean).abs();
            d * d
        })
        .sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "d-index undefined: all values equal the mean".into(),
        ));
    }
    Ok(1.0 - num / den)
}

/// Squared Pearson correlation.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    if observed.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()));
    }
    let n = observed.len() as f64;
    let mo = observed.iter().sum::<f64>() / n;
    let mp = predicted.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vo = 0.0;
    let mut vp = 0.0;
    for (o, p) in observed.iter().zip(predicted) {
        cov += (o - mo) * (p - mp);
        vo += (o - mo) * (o - mo);
        vp += (p - mp) * (p - mp);
    }
    if vo == 0.0 || vp == 0.0 {
        return Err(Error::InvalidArgument("zero variance".into()));
    }
    Ok((cov * cov) / (vo * vp))
}
