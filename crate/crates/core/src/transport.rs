//! Unbalanced optimal transport between topic embeddings, and the
//! distance-threshold matchers used as baselines.
//!
//! The plan minimizes
//! `F(T) = <C,T> + l_at * GKL(T 1 | a_tilde) + l_a * GKL(T^T 1 | a)`
//! over nonnegative `J x K` matrices. Rows index the new batch's topics,
//! columns the previous step's topics.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_distance, minkowski_distance};
use crate::error::{Error, Result};
use crate::etm::rows;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "p", rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
    Minkowski(f64),
}

impl Metric {
    pub fn distance(&self, u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
        match *self {
            Metric::Cosine => cosine_distance(u, v),
            Metric::Euclidean => minkowski_distance(u, v, 2.0),
            Metric::Minkowski(p) => minkowski_distance(u, v, p),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Metric::Minkowski(p) if !(p >= 1.0) => Err(Error::InvalidConfig(format!(
                "minkowski order must be at least 1, got {p}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Cosine => write!(f, "cosine"),
            Metric::Euclidean => write!(f, "euclidean"),
            Metric::Minkowski(p) => write!(f, "minkowski:{p}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// `cosine`, `euclidean`, or `minkowski:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "cosine" => Metric::Cosine,
            "euclidean" => Metric::Euclidean,
            _ => {
                let p = s
                    .strip_prefix("minkowski:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))?;
                Metric::Minkowski(p)
            }
        };
        m.validate()?;
        Ok(m)
    }
}

/// `J x K` nonnegative costs between new (rows) and previous (columns) topics.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub c: Array2<f64>,
    pub metric: Metric,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn cols(&self) -> usize {
        self.c.ncols()
    }

    /// Divides every cost by `scale`, which must be positive and finite.
    pub fn scaled(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("cost scale must be positive, got {scale}")));
        }
        self.c.mapv_inplace(|x| x / scale);
        Ok(self)
    }
}

pub fn cost_matrix(alpha_new: &Array2<f64>, alpha_prev: &Array2<f64>, metric: Metric) -> Result<CostMatrix> {
    metric.validate()?;
    if alpha_new.nrows() != alpha_prev.nrows() {
        return Err(Error::Dimension(format!(
            "embedding dimensions differ: {} vs {}",
            alpha_new.nrows(),
            alpha_prev.nrows()
        )));
    }
    let (j, k) = (alpha_new.ncols(), alpha_prev.ncols());
    let mut c = Array2::zeros((j, k));
    for r in 0..j {
        for s in 0..k {
            c[[r, s]] = metric.distance(alpha_new.column(r), alpha_prev.column(s))?;
        }
    }
    Ok(CostMatrix { c, metric })
}

pub const DEFAULT_LAMBDA: f64 = 0.09;
pub const DEFAULT_DISCOVERY_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UotConfig {
    /// Penalty on the column marginal (previous topics).
    pub lambda_a: f64,
    /// Penalty on the row marginal (new topics).
    pub lambda_atilde: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Plan entries below this are zeroed on output.
    pub mass_tol: f64,
    /// Cost at which an isolated row counts as undiscovered; `None` keeps
    /// only the absolute `mass_tol` rule.
    pub discovery_cutoff: Option<f64>,
}

impl Default for UotConfig {
    fn default() -> Self {
        Self {
            lambda_a: DEFAULT_LAMBDA,
            lambda_atilde: DEFAULT_LAMBDA,
            max_iter: 1000,
            tol: 1e-6,
            mass_tol: 1e-8,
            discovery_cutoff: Some(DEFAULT_DISCOVERY_CUTOFF),
        }
    }
}

impl UotConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {x}")))
            }
        };
        positive("lambda_a", self.lambda_a)?;
        positive("lambda_atilde", self.lambda_atilde)?;
        positive("tol", self.tol)?;
        positive("mass_tol", self.mass_tol)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        if let Some(c) = self.discovery_cutoff {
            positive("discovery_cutoff", c)?;
        }
        Ok(())
    }

    /// Fraction of its own mass a 1x1 row keeps at cost `discovery_cutoff`:
    /// `exp(-cutoff / (l_a + l_at))`. Zero without a cutoff.
    pub fn discovery_ratio(&self) -> f64 {
        self.discovery_cutoff
            .map_or(0.0, |c| (-c / (self.lambda_a + self.lambda_atilde)).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub t: Array2<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `F` at the starting point and after every iteration, before truncation.
    pub trace: Vec<f64>,
}

/// Diagnostic export of a solved problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDump {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TransportPlan {
    pub fn dump(&self, cost: &CostMatrix) -> PlanDump {
        PlanDump {
            c: rows(&cost.c),
            t: rows(&self.t),
            objective: self.objective,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    pub fn row_mass(&self) -> Array1<f64> {
        self.t.sum_axis(Axis(1))
    }
}

fn gkl(x: &Array1<f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&x, &y)| if x > 0.0 { x * (x / y).ln() - x + y } else { y })
        .sum()
}

/// The objective `F(T)`.
pub fn objective(
    c: &Array2<f64>,
    t: &Array2<f64>,
    a_tilde: ArrayView1<'_, f64>,
    a: ArrayView1<'_, f64>,
    cfg: &UotConfig,
) -> f64 {
    let transport: f64 = c.iter().zip(t).map(|(c, t)| c * t).sum();
    transport
        + cfg.lambda_atilde * gkl(&t.sum_axis(Axis(1)), a_tilde)
        + cfg.lambda_a * gkl(&t.sum_axis(Axis(0)), a)
}

fn check_masses(name: &str, m: ArrayView1<'_, f64>, len: usize) -> Result<()> {
    if m.len() != len {
        return Err(Error::Dimension(format!("{name} has length {} but {len} is required", m.len())));
    }
    if m.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidConfig(format!("{name} masses must be positive and finite")));
    }
    Ok(())
}

/// Majorization-minimization for KL-relaxed transport without entropy:
/// `T <- K * T / (rowsum^r1 colsum^r2)` with
/// `K = a_tilde^r1 a^r2 exp(-C / (l_at + l_a))`, `r1 = l_at / (l_at + l_a)`,
/// starting from `a_tilde a^T`. Every iterate is entrywise nonnegative.
pub fn uot_solve(
    cost: &CostMatrix,
    a_tilde: ArrayView1<'_, f64>,
    a: ArrayView1<'_, f64>,
    cfg: &UotConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    let (j, k) = cost.c.dim();
    if j == 0 || k == 0 {
        return Err(Error::Dimension(format!("cost matrix is {j}x{k}")));
    }
    check_masses("a_tilde", a_tilde, j)?;
    check_masses("a", a, k)?;
    if cost.c.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Numerical("costs must be finite and nonnegative".into()));
    }

    let total = cfg.lambda_atilde + cfg.lambda_a;
    let (r1, r2) = (cfg.lambda_atilde / total, cfg.lambda_a / total);
    let kernel = Array2::from_shape_fn((j, k), |(r, s)| {
        a_tilde[r].powf(r1) * a[s].powf(r2) * (-cost.c[[r, s]] / total).exp()
    });
    let mut t = Array2::from_shape_fn((j, k), |(r, s)| a_tilde[r] * a[s]);

    let eval = |t: &Array2<f64>| {
        let f = objective(&cost.c, t, a_tilde, a, cfg);
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::Numerical(format!("transport objective became {f}")))
        }
    };
    let mut f = eval(&t)?;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let row = t.sum_axis(Axis(1)).mapv(|x| x.powf(r1));
        let col = t.sum_axis(Axis(0)).mapv(|x| x.powf(r2));
        for r in 0..j {
            for s in 0..k {
                let denom = row[r] * col[s];
                t[[r, s]] = if denom > 0.0 { kernel[[r, s]] * t[[r, s]] / denom } else { 0.0 };
            }
        }
        iterations += 1;
        let next = eval(&t)?;
        trace.push(next);
        let change = (f - next).abs();
        f = next;
        if change <= cfg.tol * f.abs() {
            converged = true;
            break;
        }
    }

    t.mapv_inplace(|x| if x < cfg.mass_tol { 0.0 } else { x });
    let objective = eval(&t)?;
    Ok(TransportPlan {
        t,
        objective,
        iterations,
        converged,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assignment {
    Matched(usize),
    New,
}

impl Assignment {
    pub fn matched(&self) -> Option<usize> {
        match *self {
            Assignment::Matched(k) => Some(k),
            Assignment::New => None,
        }
    }
}

/// First index of the maximum; `None` for an empty row.
fn argmax(row: ArrayView1<'_, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in row.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

fn argmin(row: ArrayView1<'_, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in row.iter().enumerate() {
        if best.is_none_or(|(_, b)| x < b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

/// Baseline matcher: nearest previous topic if strictly closer than
/// `threshold`, otherwise new. Ties go to the smaller index.
pub fn match_by_distance(cost: &CostMatrix, threshold: f64) -> Vec<Assignment> {
    cost.c
        .rows()
        .into_iter()
        .map(|row| match argmin(row) {
            Some(k) if row[k] < threshold => Assignment::Matched(k),
            _ => Assignment::New,
        })
        .collect()
}

/// Row `j` is new when its total mass is at most `mass_tol`; otherwise it
/// maps to its largest entry, ties to the smaller index.
pub fn assign_from_plan(plan: &TransportPlan, mass_tol: f64) -> Vec<Assignment> {
    let thresholds = vec![mass_tol; plan.t.nrows()];
    assign_with_thresholds(plan, &thresholds)
}

/// As [`assign_from_plan`], with row `j` also new when its mass is at most
/// `cfg.discovery_ratio() * a_tilde[j]`.
pub fn assign_with_discovery(plan: &TransportPlan, a_tilde: ArrayView1<'_, f64>, cfg: &UotConfig) -> Vec<Assignment> {
    let ratio = cfg.discovery_ratio();
    let thresholds: Vec<f64> = a_tilde.iter().map(|&m| cfg.mass_tol.max(ratio * m)).collect();
    assign_with_thresholds(plan, &thresholds)
}

fn assign_with_thresholds(plan: &TransportPlan, thresholds: &[f64]) -> Vec<Assignment> {
    plan.t
        .rows()
        .into_iter()
        .zip(thresholds)
        .map(|(row, &tol)| {
            if row.sum() <= tol {
                Assignment::New
            } else {
                argmax(row).map_or(Assignment::New, Assignment::Matched)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn plan(t: Array2<f64>) -> TransportPlan {
        TransportPlan {
            t,
            objective: 0.0,
            iterations: 0,
            converged: true,
            trace: vec![],
        }
    }

    fn cm(c: Array2<f64>) -> CostMatrix {
        CostMatrix { c, metric: Metric::Cosine }
    }

    #[test]
    fn identical_embeddings_have_zero_diagonal() {
        let a = array![[1.0, 0.5, -2.0], [0.3, 2.0, 1.0]];
        for m in [Metric::Cosine, Metric::Euclidean, Metric::Minkowski(1.0), Metric::Minkowski(3.0)] {
            let c = cost_matrix(&a, &a, m).unwrap();
            for i in 0..3 {
                assert!(c.c[[i, i]].abs() < 1e-12, "{m}");
            }
        }
    }

    #[test]
    fn cost_matrix_entries() {
        let c = cost_matrix(&array![[1.0], [0.0]], &array![[0.0], [1.0]], Metric::Cosine).unwrap();
        assert!((c.c[[0, 0]] - 1.0).abs() < 1e-12);
        let c = cost_matrix(&array![[0.0], [0.0]], &array![[1.0], [2.0]], Metric::Minkowski(1.0)).unwrap();
        assert!((c.c[[0, 0]] - 3.0).abs() < 1e-12);
        assert!(matches!(
            cost_matrix(&array![[0.0], [0.0]], &array![[1.0], [2.0]], Metric::Cosine),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cost_matrix(&array![[0.0]], &array![[1.0], [2.0]], Metric::Cosine),
            Err(Error::Dimension(_))
        ));
        assert!(cost_matrix(&array![[1.0]], &array![[1.0]], Metric::Minkowski(0.5)).is_err());
    }

    #[test]
    fn metric_parses() {
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
        assert_eq!("minkowski:3".parse::<Metric>().unwrap(), Metric::Minkowski(3.0));
        assert!("minkowski:0.5".parse::<Metric>().is_err());
        assert!("manhattan".parse::<Metric>().is_err());
        let m = Metric::Minkowski(1.5);
        assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
    }

    fn solve_1x1(c: f64) -> f64 {
        let cfg = UotConfig { tol: 1e-15, max_iter: 100_000, ..UotConfig::default() };
        let p = uot_solve(&cm(array![[c]]), array![1.0].view(), array![1.0].view(), &cfg).unwrap();
        p.t[[0, 0]]
    }

    #[test]
    fn zero_cost_fixed_point() {
        assert!((solve_1x1(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_by_one_closed_form() {
        // stationarity of c t + 2 l (t ln t - t + 1): c + 2 l ln t = 0
        let expected = (-0.5f64 / 0.18).exp();
        assert!((solve_1x1(0.5) - expected).abs() < 1e-6);
        assert!((expected - 0.0622).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = UotConfig::default();
        let empty = cm(Array2::zeros((0, 2)));
        assert!(matches!(
            uot_solve(&empty, array![].view(), array![0.5, 0.5].view(), &cfg),
            Err(Error::Dimension(_))
        ));
        let c = cm(array![[f64::NAN]]);
        assert!(matches!(
            uot_solve(&c, array![1.0].view(), array![1.0].view(), &cfg),
            Err(Error::Numerical(_))
        ));
        let c = cm(array![[0.1]]);
        assert!(uot_solve(&c, array![0.0].view(), array![1.0].view(), &cfg).is_err());
        assert!(uot_solve(&c, array![1.0, 1.0].view(), array![1.0].view(), &cfg).is_err());
    }

    #[test]
    fn symmetric_zero_cost_recovers_marginals() {
        let cfg = UotConfig { tol: 1e-14, ..UotConfig::default() };
        let a = Array1::from_elem(4, 0.25);
        let p = uot_solve(&cm(Array2::zeros((4, 4))), a.view(), a.view(), &cfg).unwrap();
        for (r, c) in p.t.sum_axis(Axis(1)).iter().zip(p.t.sum_axis(Axis(0)).iter()) {
            assert!((r - 0.25).abs() < 1e-6);
            assert!((c - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn distance_matcher() {
        assert_eq!(match_by_distance(&cm(array![[0.1, 0.9]]), 0.5), vec![Assignment::Matched(0)]);
        assert_eq!(match_by_distance(&cm(array![[0.8, 0.9]]), 0.5), vec![Assignment::New]);
        assert_eq!(match_by_distance(&cm(array![[0.2, 0.2]]), 0.5), vec![Assignment::Matched(0)]);
        assert_eq!(match_by_distance(&cm(array![[0.5]]), 0.5), vec![Assignment::New]);
    }

    #[test]
    fn plan_assignment_rules() {
        let p = plan(array![[0.0, 0.3], [0.0, 0.0], [1e-12, 1e-12], [0.2, 0.2]]);
        assert_eq!(
            assign_from_plan(&p, 1e-8),
            vec![Assignment::Matched(1), Assignment::New, Assignment::New, Assignment::Matched(0)]
        );
    }

    #[test]
    fn relative_discovery_rule() {
        let cfg = UotConfig::default();
        let ratio = cfg.discovery_ratio();
        assert!((ratio - (-0.5f64 / 0.18).exp()).abs() < 1e-15);
        let a_tilde = array![0.5, 0.5];
        let p = plan(array![[0.3, 0.01], [0.5 * ratio * 0.9, 0.0]]);
        assert_eq!(
            assign_with_discovery(&p, a_tilde.view(), &cfg),
            vec![Assignment::Matched(0), Assignment::New]
        );
        let absolute = UotConfig { discovery_cutoff: None, ..cfg };
        assert_eq!(
            assign_with_discovery(&p, a_tilde.view(), &absolute),
            vec![Assignment::Matched(0), Assignment::Matched(0)]
        );
    }

    #[test]
    fn isolated_row_is_discovered() {
        // a new topic far from every previous one keeps little mass
        let c = cm(array![[0.05, 0.9, 0.95], [0.9, 0.1, 0.9], [0.95, 0.9, 0.92]]);
        let m = Array1::from_elem(3, 1.0 / 3.0);
        let cfg = UotConfig::default();
        let p = uot_solve(&c, m.view(), m.view(), &cfg).unwrap();
        assert_eq!(
            assign_with_discovery(&p, m.view(), &cfg),
            vec![Assignment::Matched(0), Assignment::Matched(1), Assignment::New]
        );
    }

    #[test]
    fn plan_dump_serializes_expected_keys() {
        let c = cm(array![[0.5]]);
        let p = uot_solve(&c, array![1.0].view(), array![1.0].view(), &UotConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(p.dump(&c)).unwrap();
        for key in ["C", "T", "objective", "iterations", "converged"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    fn instance() -> impl Strategy<Value = (Array2<f64>, Array1<f64>, Array1<f64>)> {
        (1usize..=6, 1usize..=6).prop_flat_map(|(j, k)| {
            (
                proptest::collection::vec(0.0f64..2.0, j * k),
                proptest::collection::vec(0.05f64..1.0, j),
                proptest::collection::vec(0.05f64..1.0, k),
            )
                .prop_map(move |(c, at, a)| {
                    (Array2::from_shape_vec((j, k), c).unwrap(), Array1::from(at), Array1::from(a))
                })
        })
    }

    proptest! {
        #[test]
        fn iterates_are_monotone_and_nonnegative((c, at, a) in instance()) {
            let p = uot_solve(&cm(c), at.view(), a.view(), &UotConfig::default()).unwrap();
            for w in p.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            prop_assert!(p.t.iter().all(|&x| x >= 0.0 && x.is_finite()));
        }

        #[test]
        fn assignment_ignores_positive_rescaling(
            t in proptest::collection::vec(0.0f64..1.0, 12),
            s in 1e-3f64..1e3,
        ) {
            let t = Array2::from_shape_vec((4, 3), t).unwrap();
            let a = assign_from_plan(&plan(t.clone()), 0.0);
            let b = assign_from_plan(&plan(t * s), 0.0);
            prop_assert_eq!(a, b);
        }
    }
}
