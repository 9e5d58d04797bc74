//! JSON problem files.
//!
//! ```json
//! {
//!   "n": 3, "p": 1, "m": 2,
//!   "objective": [{"kind": "quadratic", "params": {"a": 1.0}}],
//!   "equality": {"triplets": [[0, 0, 1.0], [0, 1, 1.0], [0, 2, 1.0]], "b": [3.0]},
//!   "inequalities": [
//!     {"kind": "upper_bound", "index": 0, "bound": 0.5},
//!     {"kind": "ball", "support": [1, 2], "center": [0.0, 0.0], "radius": 2.0}
//!   ]
//! }
//! ```
//!
//! Indices are 0-based. A single objective entry is repeated for every
//! variable. `equality.b` may be a number, repeated for every row. Unknown
//! fields are rejected everywhere.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use saddleflow::lagrangian::ReferenceSaddle;
use saddleflow::problem::{
    generate_circulant, generate_tridiag_toeplitz, BallConstraint, ConvexProgram,
    InequalityConstraint, ObjectiveTerm,
};
use saddleflow::SparseMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub objective: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equality: Option<EqualitySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inequalities: Vec<InequalitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_point: Option<Vec<f64>>,
    /// Known saddle point, used for Lyapunov columns and certificates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum TermSpec {
    Quadratic { a: f64 },
    Quartic {},
    AbsValue { w: f64 },
    PiecewiseQuadratic { c_plus: f64, c_minus: f64 },
    LinearCombination { terms: Vec<WeightedTerm> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedTerm {
    pub weight: f64,
    pub term: TermSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqualitySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    /// `[row, col, value]` entries; duplicates are summed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplets: Option<Vec<(usize, usize, f64)>>,
    pub b: RhsSpec,
}

/// Banded generators; both produce an `n × n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Circulant with wraparound corners.
    Circulant {
        diag: f64,
        upper: f64,
        lower: f64,
    },
    TridiagToeplitz {
        lower: f64,
        diag: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhsSpec {
    Constant(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InequalitySpec {
    /// `x_index ≤ bound`.
    UpperBound { index: usize, bound: f64 },
    /// One `x_i ≤ bound` per listed index, or per variable when omitted.
    UpperBounds {
        bound: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        indices: Option<Vec<usize>>,
    },
    /// `Σ c_i x_i ≤ rhs` from `[index, c_i]` pairs.
    Halfspace { coeffs: Vec<(usize, f64)>, rhs: f64 },
    /// `‖x_S − center‖ ≤ radius`.
    Ball {
        support: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
}

/// A program read from disk, plus its optional known saddle.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub program: ConvexProgram,
    pub reference: Option<ReferenceSaddle>,
}

impl TermSpec {
    pub fn build(&self) -> ObjectiveTerm {
        match self {
            TermSpec::Quadratic { a } => ObjectiveTerm::Quadratic { a: *a },
            TermSpec::Quartic {} => ObjectiveTerm::Quartic,
            TermSpec::AbsValue { w } => ObjectiveTerm::AbsValue { w: *w },
            TermSpec::PiecewiseQuadratic { c_plus, c_minus } => ObjectiveTerm::PiecewiseQuadratic {
                c_plus: *c_plus,
                c_minus: *c_minus,
            },
            TermSpec::LinearCombination { terms } => ObjectiveTerm::LinearCombination(
                terms.iter().map(|w| (w.weight, w.term.build())).collect(),
            ),
        }
    }
}

impl ProblemFile {
    /// Parse JSON text; errors carry the offending field path and position.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                anyhow!("{inner}")
            } else {
                anyhow!("field `{path}`: {inner}")
            }
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid problem file {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    /// Check declared sizes against the content and build the program.
    pub fn build(&self) -> Result<LoadedProblem> {
        let n = self.n;
        if n == 0 {
            bail!("field `n`: must be at least 1");
        }
        let terms: Vec<ObjectiveTerm> = match self.objective.len() {
            1 => vec![self.objective[0].build(); n],
            len if len == n => self.objective.iter().map(TermSpec::build).collect(),
            len => bail!("field `objective`: expected 1 or {n} entries, found {len}"),
        };
        for (i, t) in terms.iter().enumerate() {
            t.validate()
                .with_context(|| format!("field `objective[{i}]`"))?;
        }

        let (a, b) = match &self.equality {
            None => (SparseMatrix::empty(n), Vec::new()),
            Some(eq) => {
                let a = match (&eq.generator, &eq.triplets) {
                    (Some(g), None) => match *g {
                        GeneratorSpec::Circulant { diag, upper, lower } => {
                            generate_circulant(n, diag, upper, lower)
                        }
                        GeneratorSpec::TridiagToeplitz { lower, diag, upper } => {
                            generate_tridiag_toeplitz(n, lower, diag, upper)
                        }
                    }
                    .context("field `equality.generator`")?,
                    (None, Some(t)) => SparseMatrix::from_triplets(self.p, n, t.iter().copied())
                        .context("field `equality.triplets`")?,
                    _ => bail!("field `equality`: give exactly one of `generator` and `triplets`"),
                };
                let b = match &eq.b {
                    RhsSpec::Constant(v) => vec![*v; a.rows()],
                    RhsSpec::Vector(v) => v.clone(),
                };
                (a, b)
            }
        };
        if a.rows() != self.p {
            bail!(
                "field `p`: declared {} but the equality block has {} rows",
                self.p,
                a.rows()
            );
        }
        if b.len() != self.p {
            bail!(
                "field `equality.b`: expected {} entries, found {}",
                self.p,
                b.len()
            );
        }

        let mut ineqs = Vec::new();
        for (k, spec) in self.inequalities.iter().enumerate() {
            let ctx = || format!("field `inequalities[{k}]`");
            let check = |i: usize| {
                if i >= n {
                    Err(anyhow!("index {i} out of range for n = {n}"))
                } else {
                    Ok(i)
                }
            };
            match spec {
                InequalitySpec::UpperBound { index, bound } => {
                    ineqs.push(InequalityConstraint::upper_bound(
                        check(*index).with_context(ctx)?,
                        *bound,
                    ));
                }
                InequalitySpec::UpperBounds { bound, indices } => {
                    let idx: Vec<usize> = indices.clone().unwrap_or_else(|| (0..n).collect());
                    for i in idx {
                        ineqs.push(InequalityConstraint::upper_bound(
                            check(i).with_context(ctx)?,
                            *bound,
                        ));
                    }
                }
                InequalitySpec::Halfspace { coeffs, rhs } => {
                    for &(i, _) in coeffs {
                        check(i).with_context(ctx)?;
                    }
                    ineqs.push(
                        InequalityConstraint::halfspace(coeffs.iter().copied(), *rhs)
                            .with_context(ctx)?,
                    );
                }
                InequalitySpec::Ball {
                    support,
                    center,
                    radius,
                } => {
                    for &i in support {
                        check(i).with_context(ctx)?;
                    }
                    if center.len() != support.len() {
                        return Err(anyhow!(
                            "center has {} entries but support has {}",
                            center.len(),
                            support.len()
                        ))
                        .with_context(ctx);
                    }
                    if !(*radius > 0.0 && radius.is_finite()) {
                        return Err(anyhow!("radius must be positive, got {radius}"))
                            .with_context(ctx);
                    }
                    let mut sorted = support.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted != *support {
                        return Err(anyhow!("support must be strictly increasing"))
                            .with_context(ctx);
                    }
                    let oracle = BallConstraint {
                        center: center.clone(),
                        radius: *radius,
                    };
                    ineqs.push(
                        InequalityConstraint::smooth(support.clone(), Arc::new(oracle))
                            .with_context(ctx)?,
                    );
                }
            }
        }
        if ineqs.len() != self.m {
            bail!(
                "field `m`: declared {} but the inequalities expand to {} constraints",
                self.m,
                ineqs.len()
            );
        }
        if let Some(s) = &self.slater_point {
            if s.len() != n {
                bail!(
                    "field `slater_point`: expected {n} entries, found {}",
                    s.len()
                );
            }
        }

        let program = ConvexProgram::new(terms, a, b, ineqs, self.slater_point.clone())?;
        let reference = match &self.reference {
            None => None,
            Some(r) => Some(
                ReferenceSaddle::external(&program, r.x_star.clone(), r.lambda_star.clone())
                    .context("field `reference`")?,
            ),
        };
        Ok(LoadedProblem { program, reference })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use saddleflow::problem::Builtin;

    const EXAMPLE1_N4: &str = r#"{
        "n": 4, "p": 4, "m": 4,
        "objective": [{"kind": "linear_combination", "params": {"terms": [
            {"weight": 1.0, "term": {"kind": "quartic", "params": {}}},
            {"weight": 1.0, "term": {"kind": "abs_value", "params": {"w": 1.0}}}
        ]}}],
        "equality": {"generator": {"kind": "circulant", "diag": 0.0, "upper": 1.0, "lower": 0.5}, "b": 0.2},
        "inequalities": [{"kind": "upper_bounds", "bound": 0.5}]
    }"#;

    #[test]
    fn file_reproduces_builtin() {
        let loaded = ProblemFile::parse(EXAMPLE1_N4).unwrap().build().unwrap();
        let builtin = Builtin::QuarticAbsCirculant.build(4).unwrap();
        assert_eq!(loaded.program.terms(), builtin.terms());
        assert_eq!(loaded.program.a(), builtin.a());
        assert_eq!(loaded.program.b(), builtin.b());
        let x = [0.7, -0.2, 0.5, 0.1];
        assert_eq!(
            loaded.program.eval_g(&x).unwrap(),
            builtin.eval_g(&x).unwrap()
        );
    }

    #[test]
    fn unknown_field_is_named() {
        let text = EXAMPLE1_N4.replace("\"bound\": 0.5", "\"bound\": 0.5, \"bonud\": 1");
        let err = format!("{:#}", ProblemFile::parse(&text).unwrap_err());
        assert!(err.contains("inequalities[0]"), "{err}");
        assert!(err.contains("bonud"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_term_parameter_is_rejected() {
        let text = EXAMPLE1_N4.replace("{\"w\": 1.0}", "{\"w\": 1.0, \"shift\": 2.0}");
        let err = format!("{:#}", ProblemFile::parse(&text).unwrap_err());
        assert!(err.contains("shift"), "{err}");
    }

    #[test]
    fn count_mismatches_are_reported() {
        let text = EXAMPLE1_N4.replace("\"m\": 4", "\"m\": 3");
        let err = format!(
            "{:#}",
            ProblemFile::parse(&text).unwrap().build().unwrap_err()
        );
        assert!(err.contains("field `m`"), "{err}");

        let text = EXAMPLE1_N4.replace("\"b\": 0.2", "\"b\": [0.2, 0.2]");
        let err = format!(
            "{:#}",
            ProblemFile::parse(&text).unwrap().build().unwrap_err()
        );
        assert!(err.contains("equality.b"), "{err}");
    }

    #[test]
    fn ball_and_halfspace_parse() {
        let text = r#"{
            "n": 3, "p": 1, "m": 2,
            "objective": [{"kind": "quadratic", "params": {"a": 1.0}}],
            "equality": {"triplets": [[0, 0, 1.0], [0, 1, 1.0], [0, 2, 1.0]], "b": [3.0]},
            "inequalities": [
                {"kind": "halfspace", "coeffs": [[2, 1.0], [0, -1.0]], "rhs": 1.0},
                {"kind": "ball", "support": [0, 1], "center": [2.0, 0.0], "radius": 1.5}
            ],
            "reference": {"x_star": [1.0, 1.0, 1.0], "lambda_star": [-1.0]}
        }"#;
        let loaded = ProblemFile::parse(text).unwrap().build().unwrap();
        assert_eq!(loaded.program.m(), 2);
        let g = loaded.program.eval_g(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g, vec![-1.0, 4.0 - 2.25]);
        assert_eq!(loaded.reference.unwrap().lambda_star, vec![-1.0]);
    }

    #[test]
    fn round_trip() {
        let file = ProblemFile::parse(EXAMPLE1_N4).unwrap();
        assert_eq!(ProblemFile::parse(&file.to_json()).unwrap(), file);
    }
}
