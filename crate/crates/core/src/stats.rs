//! Population statistics with order-independent reductions.
//!
//! Values are sorted before summation, so any permutation of the input
//! (transposes, flips, reordered manifests) produces bit-identical results.

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn sum(values: &[f64]) -> f64 {
    sorted(values).iter().sum()
}

/// Population mean; `None` on empty input.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    Some((v.iter().sum::<f64>() / v.len() as f64).clamp(v[0], v[v.len() - 1]))
}

/// Population variance (divides by N); `None` on empty input.
pub fn variance(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    let n = v.len() as f64;
    // Clamping keeps the mean of a constant sample exactly at that constant.
    let m = (v.iter().sum::<f64>() / n).clamp(v[0], v[v.len() - 1]);
    Some(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

pub fn std_dev(values: &[f64]) -> Option<f64> {
    variance(values).map(f64::sqrt)
}
