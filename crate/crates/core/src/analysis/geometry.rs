use super::AnalysisError;
use crate::rng::Rng;
use crate::tensor::{dot, norm};

/// Angle between two nonzero vectors, accurate near 0 and near pi.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let mut diff = 0.0;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Angle subtended by a chord of length `chord` on the unit sphere.
pub fn chord_angle(chord: f64) -> f64 {
    2.0 * (chord / 2.0).asin()
}

/// Directions a rotation may take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationSubspace {
    /// Any direction orthogonal to `w`.
    Full,
    /// Orthogonal to `w` and to the all-ones vector, so balanced neurons
    /// stay balanced.
    ZeroMean,
}

/// Rotates unit vector `w` by exactly `alpha` radians towards a uniformly
/// random orthogonal direction: `cos(alpha) w + sin(alpha) u`.
pub fn rotate_neuron(
    w: &[f64],
    alpha: f64,
    subspace: RotationSubspace,
    rng: &mut Rng,
) -> Result<Vec<f64>, AnalysisError> {
    let d = w.len();
    let needed = match subspace {
        RotationSubspace::Full => 2,
        RotationSubspace::ZeroMean => 3,
    };
    if d < needed {
        return Err(AnalysisError::Dimension { needed, actual: d });
    }
    let n = norm(w);
    if (n - 1.0).abs() > 1e-9 {
        return Err(AnalysisError::NonUnit(n));
    }
    if !(0.0..=std::f64::consts::PI).contains(&alpha) {
        return Err(AnalysisError::AngleRange(alpha));
    }
    let u = loop {
        let mut z = rng.gaussian_vec(d, 1.0);
        if subspace == RotationSubspace::ZeroMean {
            let m = z.iter().sum::<f64>() / d as f64;
            z.iter_mut().for_each(|v| *v -= m);
        }
        // two passes of Gram-Schmidt keep u orthogonal to w at rounding level
        for _ in 0..2 {
            let p = dot(&z, w);
            z.iter_mut().zip(w).for_each(|(zi, wi)| *zi -= p * wi);
        }
        let zn = norm(&z);
        if zn > 1e-8 {
            z.iter_mut().for_each(|v| *v /= zn);
            break z;
        }
    };
    let (s, c) = alpha.sin_cos();
    Ok(w.iter().zip(&u).map(|(wi, ui)| c * wi + s * ui).collect())
}
