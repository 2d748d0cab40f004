use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{binary_feature_name, level_feature_name, ConfounderValues, Dataset};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Orthogonal polynomial of a standardized continuous confounder.
    Polynomial { degree: usize },
    Binary,
    /// One indicator of a categorical level. The first (reference) level is
    /// kept for balance reporting but dropped from model fits.
    Level { level: String, reference: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub source: String,
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn in_model(&self) -> bool {
        !matches!(self.kind, FeatureKind::Level { reference: true, .. })
    }
}

/// Numeric feature matrix derived from the confounders.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    features: Vec<FeatureMeta>,
    expansion_order: usize,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn features(&self) -> &[FeatureMeta] {
        &self.features
    }

    pub fn expansion_order(&self) -> usize {
        self.expansion_order
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.matrix.column(j).iter().copied().collect()
    }

    /// Columns used for model fits: every feature except categorical
    /// reference levels (which are collinear with an intercept).
    pub fn model_matrix(&self) -> (DMatrix<f64>, Vec<String>) {
        let idx: Vec<usize> = (0..self.features.len())
            .filter(|&j| self.features[j].in_model())
            .collect();
        let m = self.matrix.select_columns(idx.iter());
        let names = idx.iter().map(|&j| self.features[j].name.clone()).collect();
        (m, names)
    }

    /// Restricts to features whose source confounder is in `sources`.
    pub fn subset_sources(&self, sources: &[String]) -> DesignMatrix {
        let idx: Vec<usize> = (0..self.features.len())
            .filter(|&j| sources.contains(&self.features[j].source))
            .collect();
        DesignMatrix {
            matrix: self.matrix.select_columns(idx.iter()),
            features: idx.iter().map(|&j| self.features[j].clone()).collect(),
            expansion_order: self.expansion_order,
        }
    }
}

/// Builds the design: continuous confounders are standardized and expanded
/// into `m` orthogonal polynomial columns (Gram-Schmidt on the sample inner
/// product, each scaled to unit sd), binaries pass through as 0/1 and
/// categoricals become one indicator per level.
pub fn design_matrix(d: &Dataset, m: usize) -> Result<DesignMatrix> {
    if !(1..=3).contains(&m) {
        return Err(Error::invalid("dataset", format!("expansion order {m} not in 1..=3")));
    }
    let n = d.n_rows();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut features = Vec::new();
    for c in d.confounders()? {
        match &c.values {
            ConfounderValues::Continuous(x) => {
                let mean = stats::mean(x);
                let sd = stats::sd(x);
                if sd == 0.0 || !sd.is_finite() {
                    return Err(Error::Data(format!(
                        "continuous confounder `{}` is constant",
                        c.name
                    )));
                }
                let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
                let polys = orthogonal_polynomials(&z, m).ok_or_else(|| {
                    Error::Data(format!(
                        "continuous confounder `{}` has too few distinct values for expansion order {m}",
                        c.name
                    ))
                })?;
                for (k, p) in polys.into_iter().enumerate() {
                    let degree = k + 1;
                    features.push(FeatureMeta {
                        name: if degree == 1 {
                            c.name.clone()
                        } else {
                            format!("{}^{degree}", c.name)
                        },
                        source: c.name.clone(),
                        kind: FeatureKind::Polynomial { degree },
                    });
                    cols.push(p);
                }
            }
            ConfounderValues::Binary { values, levels } => {
                features.push(FeatureMeta {
                    name: binary_feature_name(&c.name, &levels[1]),
                    source: c.name.clone(),
                    kind: FeatureKind::Binary,
                });
                cols.push(values.clone());
            }
            ConfounderValues::Categorical { levels, codes } => {
                for (l, level) in levels.iter().enumerate() {
                    features.push(FeatureMeta {
                        name: level_feature_name(&c.name, level),
                        source: c.name.clone(),
                        kind: FeatureKind::Level {
                            level: level.clone(),
                            reference: l == 0,
                        },
                    });
                    cols.push(codes.iter().map(|&k| f64::from(u8::from(k == l))).collect());
                }
            }
        }
    }
    let matrix = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok(DesignMatrix {
        matrix,
        features,
        expansion_order: m,
    })
}

/// Degree 1..=m orthogonal polynomial columns of an already standardized `z`.
/// Each column has mean 0 and unit sample sd; `None` when a column vanishes.
fn orthogonal_polynomials(z: &[f64], m: usize) -> Option<Vec<Vec<f64>>> {
    let n = z.len();
    let scale = ((n - 1) as f64).sqrt();
    let mut out: Vec<Vec<f64>> = vec![z.to_vec()];
    for degree in 2..=m {
        let mut v: Vec<f64> = z.iter().map(|x| x.powi(degree as i32)).collect();
        let raw_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // two passes of modified Gram-Schmidt against 1 and lower degrees
        for _ in 0..2 {
            let mu = stats::mean(&v);
            v.iter_mut().for_each(|x| *x -= mu);
            for q in &out {
                let qq: f64 = q.iter().map(|x| x * x).sum();
                let proj = q.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / qq;
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 * raw_norm.max(1.0) {
            return None;
        }
        let f = scale / norm;
        v.iter_mut().for_each(|x| *x *= f);
        out.push(v);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Confounder, Dataset};

    fn one_continuous(x: Vec<f64>) -> Dataset {
        let n = x.len();
        let t = (0..n).map(|i| (i % 2) as f64).collect();
        Dataset::from_parts(
            t,
            vec![0.0; n],
            vec![Confounder {
                name: "x".into(),
                values: ConfounderValues::Continuous(x),
            }],
        )
        .unwrap()
    }

    #[test]
    fn order_one_is_standardized() {
        let d = one_continuous(vec![3., 5., 9., 1., 2., 7.]);
        let dm = design_matrix(&d, 1).unwrap();
        let c = dm.column(0);
        assert!(stats::mean(&c).abs() < 1e-12);
        assert!((stats::sd(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_two_orthogonal_on_symmetric_grid() {
        let x: Vec<f64> = (0..30).map(|i| [-1.0, 0.0, 1.0][i % 3]).collect();
        let d = one_continuous(x);
        let dm = design_matrix(&d, 2).unwrap();
        let (a, b) = (dm.column(0), dm.column(1));
        let ip: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
        assert!(ip.abs() < 1e-10, "inner product {ip}");
        assert!(stats::mean(&b).abs() < 1e-12);
        // degree-2 values are a function of x^2 only
        assert!((b[0] - b[2]).abs() < 1e-12);
    }

    #[test]
    fn two_valued_continuous_cannot_expand() {
        let d = one_continuous(vec![0., 1., 0., 1., 0., 1.]);
        assert!(design_matrix(&d, 1).is_ok());
        assert!(design_matrix(&d, 2).is_err());
    }

    #[test]
    fn constant_continuous_rejected() {
        let d = one_continuous(vec![2.0; 6]);
        let msg = design_matrix(&d, 1).unwrap_err().to_string();
        assert!(msg.contains("`x`"), "{msg}");
    }

    #[test]
    fn race_expands_to_four_indicators() {
        let levels: Vec<String> = ["African American", "Hispanic", "White", "other"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let codes: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let d = Dataset::from_parts(
            (0..12).map(|i| (i % 2) as f64).collect(),
            vec![0.0; 12],
            vec![Confounder {
                name: "Race".into(),
                values: ConfounderValues::Categorical { levels, codes },
            }],
        )
        .unwrap();
        let dm = design_matrix(&d, 1).unwrap();
        let names: Vec<&str> = dm.features().iter().map(|f| f.name.as_str()).collect();
        assert_eq!(
            names,
            ["Race:African American", "Race:Hispanic", "Race:White", "Race:other"]
        );
        let (mm, mnames) = dm.model_matrix();
        assert_eq!(mm.ncols(), 3);
        assert!(!mnames.contains(&"Race:African American".to_string()));
    }
}
