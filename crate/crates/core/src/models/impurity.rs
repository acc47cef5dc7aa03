use super::ModelError;

fn check(p: &[f64]) -> Result<(), ModelError> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(ModelError::InvalidProbabilities(p.to_vec()));
    }
    Ok(())
}

/// `1 - Σ p_i²`
pub fn gini_impurity(p: &[f64]) -> Result<f64, ModelError> {
    check(p)?;
    Ok(gini_unchecked(p))
}

/// `-Σ p_i log2 p_i`, with `0 log 0 = 0`.
pub fn entropy_impurity(p: &[f64]) -> Result<f64, ModelError> {
    check(p)?;
    Ok(entropy_unchecked(p))
}

pub(crate) fn gini_unchecked(p: &[f64]) -> f64 {
    1.0 - p.iter().map(|v| v * v).sum::<f64>()
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>()
}
