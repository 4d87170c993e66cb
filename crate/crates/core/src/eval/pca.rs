use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Two-component PCA of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    /// Projection of each input point onto (PC1, PC2).
    pub coords: Vec<[f64; 2]>,
    /// Sample variance (divisor n − 1) along each component.
    pub variances: [f64; 2],
    pub total_variance: f64,
    /// Unit loading vectors; each has its largest-magnitude entry positive.
    pub components: [Vec<f64>; 2],
}

impl Pca2 {
    pub fn explained_ratio(&self) -> [f64; 2] {
        [
            self.variances[0] / self.total_variance,
            self.variances[1] / self.total_variance,
        ]
    }
}

/// Mean-centers the points and takes the top two eigenvectors of their
/// covariance. When there are fewer points than dimensions the eigenproblem
/// is solved on the `n×n` Gram matrix instead, which shares the nonzero
/// spectrum.
pub fn pca2(features: &[Vec<f64>]) -> Result<Pca2> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs >= 2 points, got {n}")));
    }
    let p = features[0].len();
    if p == 0 || features.iter().any(|f| f.len() != p) {
        return Err(Error::dim("pca2", "points must share a nonzero dimension"));
    }
    let mut x = DMatrix::from_fn(n, p, |i, j| features[i][j]);
    for j in 0..p {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let denom = (n - 1) as f64;
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / denom;
    if total_variance <= 0.0 || !total_variance.is_finite() {
        return Err(Error::Degenerate("zero-variance features".into()));
    }
    let mut components: [Vec<f64>; 2] = [vec![0.0; p], vec![0.0; p]];
    let mut variances = [0.0; 2];
    let top = |eig: &SymmetricEigen<f64, nalgebra::Dyn>| {
        let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        idx
    };
    if p <= n {
        let cov = x.transpose() * &x / denom;
        let eig = SymmetricEigen::new(cov);
        for (k, &i) in top(&eig).iter().take(2).enumerate() {
            components[k] = eig.eigenvectors.column(i).iter().copied().collect();
        }
    } else {
        let gram = &x * x.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        for (k, &i) in top(&eig).iter().take(2).enumerate() {
            let mut v = x.transpose() * eig.eigenvectors.column(i);
            // A near-null Gram eigenvector maps back onto PC1 through
            // rounding; keep the components orthogonal.
            if k == 1 {
                let c0 = nalgebra::DVector::from_column_slice(&components[0]);
                let dot = v.dot(&c0);
                v -= c0 * dot;
            }
            let norm = v.norm();
            components[k] = if norm > 0.0 {
                v.iter().map(|a| a / norm).collect()
            } else {
                vec![0.0; p]
            };
        }
    }
    for c in &mut components {
        let lead = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let row = x.row(i);
            [0, 1].map(|k| row.iter().zip(&components[k]).map(|(a, b)| a * b).sum())
        })
        .collect();
    for k in 0..2 {
        variances[k] = coords.iter().map(|c| c[k] * c[k]).sum::<f64>() / denom;
    }
    Ok(Pca2 {
        coords,
        variances,
        total_variance,
        components,
    })
}
