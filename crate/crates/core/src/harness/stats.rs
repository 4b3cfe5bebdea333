use crate::error::{Error, Result};
use crate::optimizers::WorkerState;

/// `(a_t − b_t) / ref_t`; positive where `b` is ahead.
pub fn relative_convergence_diff(a: &[f64], b: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.len() != reference.len() {
        return Err(Error::shape(
            format!("curves of length {}", a.len()),
            format!("{} and {}", b.len(), reference.len()),
        ));
    }
    a.iter()
        .zip(b)
        .zip(reference)
        .enumerate()
        .map(|(i, ((x, y), r))| {
            if *r == 0.0 {
                Err(Error::Undefined {
                    index: i,
                    message: "reference curve is zero".into(),
                })
            } else {
                Ok((x - y) / r)
            }
        })
        .collect()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} values", x.len()), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined {
            index: if sxx == 0.0 { 0 } else { 1 },
            message: "correlation of a constant sequence".into(),
        });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// L2 norm over coordinates of the population standard deviation of φ
/// across the given replicas.
pub fn replica_weight_std(states: &[WorkerState]) -> Result<f64> {
    let phis: Vec<&[f64]> = states.iter().map(|s| &s.phi[..]).collect();
    weight_std(&phis)
}

pub fn weight_std(replicas: &[&[f64]]) -> Result<f64> {
    if replicas.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "weight spread needs at least 2 replicas, got {}",
            replicas.len()
        )));
    }
    let d = replicas[0].len();
    if let Some(bad) = replicas.iter().find(|r| r.len() != d) {
        return Err(Error::shape(format!("dimension {d}"), bad.len()));
    }
    let r = replicas.len() as f64;
    let mut total = 0.0;
    for k in 0..d {
        let mean = replicas.iter().map(|p| p[k]).sum::<f64>() / r;
        total += replicas.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / r;
    }
    Ok(total.sqrt())
}

/// Divides by the largest entry, as for plotting relative spread.
pub fn normalize_to_max(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(0.0f64, f64::max);
    if m == 0.0 {
        return xs.to_vec();
    }
    xs.iter().map(|x| x / m).collect()
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}
