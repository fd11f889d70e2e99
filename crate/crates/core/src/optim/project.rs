use super::OptimError;

/// Which balanced-network constraints a projection enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Constraints {
    /// Zero coordinate sum (balanced excitation and inhibition).
    pub mean: bool,
    /// Unit Euclidean norm.
    pub norm: bool,
}

impl Constraints {
    pub const BOTH: Constraints = Constraints {
        mean: true,
        norm: true,
    };

    pub fn any(self) -> bool {
        self.mean || self.norm
    }
}

/// Projects `w` onto the balanced constraint set in place: centre first,
/// then rescale to unit norm.
pub fn project_balanced_in_place(w: &mut [f64], c: Constraints) -> Result<(), OptimError> {
    let d = w.len();
    if d < 2 {
        return Err(OptimError::FanIn(d));
    }
    if c.mean {
        let m = w.iter().sum::<f64>() / d as f64;
        w.iter_mut().for_each(|v| *v -= m);
    }
    if c.norm {
        let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n >= 1e-12) {
            return Err(OptimError::DegenerateNeuron {
                group: String::new(),
                row: 0,
                norm: n,
            });
        }
        w.iter_mut().for_each(|v| *v /= n);
    }
    Ok(())
}

/// Returns the projection of `w` onto the balanced constraint set.
pub fn project_balanced(w: &[f64], c: Constraints) -> Result<Vec<f64>, OptimError> {
    let mut out = w.to_vec();
    project_balanced_in_place(&mut out, c)?;
    Ok(out)
}

/// Largest `|sum(w)|` and `| ||w|| - 1 |` over the rows of a matrix.
pub fn constraint_residuals(values: &[f64], fan_in: usize) -> (f64, f64) {
    let mut mean_res: f64 = 0.0;
    let mut norm_res: f64 = 0.0;
    for row in values.chunks(fan_in) {
        let s: f64 = row.iter().sum();
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        mean_res = mean_res.max(s.abs());
        norm_res = norm_res.max((n - 1.0).abs());
    }
    (mean_res, norm_res)
}
