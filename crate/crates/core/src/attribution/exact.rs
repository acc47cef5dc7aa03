use super::{check_width, coalition_value, Attribution, AttributionError, BackgroundSet, Method, ScoreFn};

/// Largest feature count accepted by [`exact_shapley`].
pub const EXACT_CAP: usize = 15;

/// `|S|!(M−|S|−1)!/M!` for every coalition size.
pub(crate) fn shapley_weights(m: usize) -> Vec<f64> {
    // 1 / (M · C(M−1, s))
    let mut out = Vec::with_capacity(m);
    let mut binom = 1.0;
    for s in 0..m {
        out.push(1.0 / (m as f64 * binom));
        binom = binom * (m - 1 - s) as f64 / (s + 1) as f64;
    }
    out
}

/// Shapley values by enumerating all `2^M` coalitions.
pub fn exact_shapley(model: &dyn ScoreFn, x: &[f64], bg: &BackgroundSet) -> Result<Attribution, AttributionError> {
    check_width(model, x, bg)?;
    let m = x.len();
    if m > EXACT_CAP {
        return Err(AttributionError::TooManyFeatures { features: m, cap: EXACT_CAP });
    }
    let n_masks = 1usize << m;
    let mut in_s = vec![false; m];
    let mut buf = Vec::with_capacity(m);
    let values: Vec<f64> = (0..n_masks)
        .map(|mask| {
            for (i, s) in in_s.iter_mut().enumerate() {
                *s = mask >> i & 1 == 1;
            }
            coalition_value(model, x, &in_s, bg, &mut buf)
        })
        .collect();
    let w = shapley_weights(m);
    let mut phi = vec![0.0; m];
    for mask in 0..n_masks {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += w[size] * (values[mask | 1 << i] - values[mask]);
            }
        }
    }
    Ok(Attribution::new(Method::Exact, phi, values[0], values[n_masks - 1]))
}
