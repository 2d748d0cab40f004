//! Seeded synthetic designs with known treatment effects, used by the test
//! suites, the benchmarks and the bundled example data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Confounder, ConfounderValues, Dataset};
use crate::error::Result;
use crate::estimators::sigmoid;

const REGIONS: [&str; 3] = ["north", "south", "west"];

/// Treatment assignment strength; `Null` draws treatment independently of
/// the confounders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assignment {
    Confounded,
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub tau: f64,
    pub assignment: Assignment,
    pub seed: u64,
}

impl Design {
    pub fn confounded(n: usize, tau: f64, seed: u64) -> Self {
        Self {
            n,
            tau,
            assignment: Assignment::Confounded,
            seed,
        }
    }

    pub fn null(n: usize, seed: u64) -> Self {
        Self {
            n,
            tau: 0.0,
            assignment: Assignment::Null,
            seed,
        }
    }
}

/// Coefficients of the linear treatment logit and outcome model on
/// (age, score, dose, female, region=south, region=west).
const PS_COEF: [f64; 6] = [0.6, -0.5, 0.5, 0.5, 0.4, -0.3];
const PS_INTERCEPT: f64 = -0.4;
const Y_COEF: [f64; 6] = [1.0, 0.8, -0.6, 0.7, 0.5, -0.4];
const Y_INTERCEPT: f64 = 10.0;

/// Five confounders (three continuous, one binary, one three-level
/// categorical), logistic treatment assignment linear in them, and a linear
/// outcome with constant effect `tau` plus standard normal noise.
pub fn generate(design: &Design) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let n = design.n;
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut region = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x = [
            z1,
            0.5 * z1 + 0.866 * z2,
            rng.random_range(-1.5..1.5),
            f64::from(u8::from(rng.random::<f64>() < 0.45)),
        ];
        let r = match rng.random::<f64>() {
            u if u < 0.5 => 0,
            u if u < 0.8 => 1,
            _ => 2,
        };
        let row = [x[0], x[1], x[2], x[3], f64::from(u8::from(r == 1)), f64::from(u8::from(r == 2))];
        let logit = PS_INTERCEPT + row.iter().zip(PS_COEF).map(|(a, b)| a * b).sum::<f64>();
        let p = match design.assignment {
            Assignment::Confounded => sigmoid(logit),
            Assignment::Null => 0.4,
        };
        let ti = f64::from(u8::from(rng.random::<f64>() < p));
        let noise: f64 = StandardNormal.sample(&mut rng);
        let yi = Y_INTERCEPT + design.tau * ti + row.iter().zip(Y_COEF).map(|(a, b)| a * b).sum::<f64>() + noise;
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
        region.push(r);
        t.push(ti);
        y.push(yi);
    }
    let [age, score, dose, female, _, _] = cols;
    // put the continuous confounders on familiar scales
    let age = age.iter().map(|v| 40.0 + 12.0 * v).collect();
    let score = score.iter().map(|v| 100.0 + 15.0 * v).collect();
    Dataset::from_parts(
        t,
        y,
        vec![
            Confounder { name: "age".into(), values: ConfounderValues::Continuous(age) },
            Confounder { name: "score".into(), values: ConfounderValues::Continuous(score) },
            Confounder { name: "dose".into(), values: ConfounderValues::Continuous(dose) },
            Confounder {
                name: "female".into(),
                values: ConfounderValues::Binary { values: female, levels: ["0".into(), "1".into()] },
            },
            Confounder {
                name: "region".into(),
                values: ConfounderValues::Categorical {
                    levels: REGIONS.iter().map(|s| s.to_string()).collect(),
                    codes: region,
                },
            },
        ],
    )
}

/// A design with one confounder withheld from the returned dataset.
pub struct HiddenConfounder {
    pub observed: Dataset,
    pub hidden: Vec<f64>,
    pub tau: f64,
}

/// Two observed continuous confounders and a hidden standard normal `u`
/// that raises both the treatment odds and the outcome.
pub fn hidden_confounder(n: usize, tau: f64, seed: u64) -> Result<HiddenConfounder> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x1, mut x2, mut u, mut t, mut y) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let h: f64 = rng.sample(StandardNormal);
        let ti = f64::from(u8::from(rng.random::<f64>() < sigmoid(-0.2 + 0.5 * a - 0.4 * b + 0.8 * h)));
        let e: f64 = rng.sample(StandardNormal);
        y.push(tau * ti + a + 0.5 * b + 0.8 * h + e);
        x1.push(a);
        x2.push(b);
        u.push(h);
        t.push(ti);
    }
    let observed = Dataset::from_parts(
        t,
        y,
        vec![
            Confounder { name: "x1".into(), values: ConfounderValues::Continuous(x1) },
            Confounder { name: "x2".into(), values: ConfounderValues::Continuous(x2) },
        ],
    )?;
    Ok(HiddenConfounder { observed, hidden: u, tau })
}

/// Serializes a configured dataset as CSV: treatment, outcome, then the
/// confounders in order, with categorical levels written by name.
pub fn to_csv(d: &Dataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let confounders = d.confounders()?;
    let mut header = vec![d.treatment_column()?.to_string(), d.outcome_column()?.to_string()];
    header.extend(confounders.iter().map(|c| c.name.clone()));
    let io = |e: csv::Error| crate::error::Error::Data(format!("csv write: {e}"));
    w.write_record(&header).map_err(io)?;
    let (t, y) = (d.treatment()?, d.outcome()?);
    for i in 0..d.n_rows() {
        let mut rec = vec![format_num(t[i]), format_num(y[i])];
        for c in confounders {
            rec.push(match &c.values {
                ConfounderValues::Continuous(v) => format_num(v[i]),
                ConfounderValues::Binary { values, levels } => levels[values[i] as usize].clone(),
                ConfounderValues::Categorical { levels, codes } => levels[codes[i]].clone(),
            });
        }
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Data(format!("csv write: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn format_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assign_roles, load_csv, ColumnRole, ParseOptions, RoleAssignment};
    use std::collections::BTreeMap;

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&Design::confounded(200, 2.0, 9)).unwrap();
        let b = generate(&Design::confounded(200, 2.0, 9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.confounders().unwrap().len(), 5);
    }

    #[test]
    fn csv_round_trip_keeps_roles_and_values() {
        let d = generate(&Design::confounded(50, 2.0, 1)).unwrap();
        let text = to_csv(&d).unwrap();
        let raw = load_csv(text.as_bytes(), &ParseOptions::default()).unwrap();
        let roles: BTreeMap<String, ColumnRole> = [
            ("treatment", ColumnRole::Treatment),
            ("outcome", ColumnRole::Outcome),
            ("age", ColumnRole::ContinuousConfounder),
            ("score", ColumnRole::ContinuousConfounder),
            ("dose", ColumnRole::ContinuousConfounder),
            ("female", ColumnRole::BinaryConfounder),
            ("region", ColumnRole::CategoricalConfounder),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let back = assign_roles(&raw, &RoleAssignment { roles, treated_level: "1".into() }).unwrap();
        assert_eq!(back.treatment().unwrap(), d.treatment().unwrap());
        for (a, b) in back.outcome().unwrap().iter().zip(d.outcome().unwrap()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
