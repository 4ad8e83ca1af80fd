use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::{
    assign_with_discovery, cost_matrix, match_by_distance, uot_solve, Assignment, CostMatrix, Metric,
    TransportPlan, UotConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Weight of the new embedding in a merge.
    pub omega: f64,
    pub uot: UotConfig,
    pub metric: Metric,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            omega: 0.5,
            uot: UotConfig::default(),
            metric: Metric::Cosine,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::InvalidConfig(format!("omega must lie in [0, 1], got {}", self.omega)));
        }
        self.uot.validate()
    }
}

/// New topic `j` merged into previous column `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub j: usize,
    pub k: usize,
}

/// New topic `j` appended as merged column `column`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub j: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub matches: Vec<Match>,
    pub discoveries: Vec<Discovery>,
}

impl MergeReport {
    pub fn matched_to(&self, j: usize) -> Option<usize> {
        self.matches.iter().find(|m| m.j == j).map(|m| m.k)
    }

    pub fn is_discovery(&self, j: usize) -> bool {
        self.discoveries.iter().any(|d| d.j == j)
    }

    /// Report of raw per-row assignments with no contest resolution, so
    /// several rows may name the same previous column. New rows are numbered
    /// from `k_prev` in row order.
    pub fn from_assignments(assignments: &[Assignment], k_prev: usize) -> Self {
        let mut report = Self { matches: Vec::new(), discoveries: Vec::new() };
        for (j, a) in assignments.iter().enumerate() {
            match a {
                Assignment::Matched(k) => report.matches.push(Match { j, k: *k }),
                Assignment::New => {
                    let column = k_prev + report.discoveries.len();
                    report.discoveries.push(Discovery { j, column });
                }
            }
        }
        report
    }
}

/// Applies per-row assignments. Matched rows blend into their previous
/// column, `omega * new + (1 - omega) * prev`; when several rows pick the
/// same column, the one with the largest `strength` (ties: smaller `j`)
/// claims it and the rest are appended unmerged. Unmatched previous columns
/// are kept as they are. Appended columns follow increasing `j`.
pub fn merge_assignments(
    alpha_new: &Array2<f64>,
    alpha_prev: &Array2<f64>,
    assignments: &[Assignment],
    strength: &[f64],
    omega: f64,
) -> Result<(Array2<f64>, MergeReport)> {
    let (l, j) = alpha_new.dim();
    let k = alpha_prev.ncols();
    if alpha_prev.nrows() != l || assignments.len() != j || strength.len() != j {
        return Err(Error::Dimension(format!(
            "merge inputs disagree: new {l}x{j}, previous {}x{k}, {} assignments, {} strengths",
            alpha_prev.nrows(),
            assignments.len(),
            strength.len()
        )));
    }
    let mut owner: Vec<Option<usize>> = vec![None; k];
    for (r, a) in assignments.iter().enumerate() {
        if let Assignment::Matched(c) = *a {
            if c >= k {
                return Err(Error::Dimension(format!("row {r} assigned to column {c} of {k}")));
            }
            if owner[c].is_none_or(|o| strength[r] > strength[o]) {
                owner[c] = Some(r);
            }
        }
    }

    let mut merged = alpha_prev.clone();
    let mut matches = Vec::new();
    for (c, o) in owner.iter().enumerate() {
        if let Some(r) = *o {
            let blended = &alpha_new.column(r) * omega + &alpha_prev.column(c) * (1.0 - omega);
            merged.column_mut(c).assign(&blended);
            matches.push(Match { j: r, k: c });
        }
    }
    matches.sort_by_key(|m| m.j);

    let mut appended = Vec::new();
    let mut discoveries = Vec::new();
    for (r, a) in assignments.iter().enumerate() {
        let owns = a.matched().is_some_and(|c| owner[c] == Some(r));
        if !owns {
            discoveries.push(Discovery { j: r, column: k + appended.len() });
            appended.push(alpha_new.column(r).insert_axis(Axis(1)));
        }
    }
    if !appended.is_empty() {
        let mut parts = vec![merged.view()];
        parts.extend(appended.iter().cloned());
        merged = concatenate(Axis(1), &parts)
            .expect("columns share the embedding dimension")
            .as_standard_layout()
            .into_owned();
    }
    Ok((merged, MergeReport { matches, discoveries }))
}

/// Merge driven by a transport plan: rows map to their largest-mass column
/// unless their mass falls under the discovery threshold.
pub fn merge_alphas(
    alpha_new: &Array2<f64>,
    alpha_prev: &Array2<f64>,
    plan: &TransportPlan,
    a_tilde: ArrayView1<'_, f64>,
    omega: f64,
    uot: &UotConfig,
) -> Result<(Array2<f64>, MergeReport)> {
    if plan.t.dim() != (alpha_new.ncols(), alpha_prev.ncols()) {
        return Err(Error::Dimension(format!(
            "plan is {:?} but topics are {}x{}",
            plan.t.dim(),
            alpha_new.ncols(),
            alpha_prev.ncols()
        )));
    }
    let assignments = assign_with_discovery(plan, a_tilde, uot);
    let strength: Vec<f64> = assignments
        .iter()
        .enumerate()
        .map(|(r, a)| a.matched().map_or(0.0, |c| plan.t[[r, c]]))
        .collect();
    merge_assignments(alpha_new, alpha_prev, &assignments, &strength, omega)
}

/// Costs between new and previous topics. Non-cosine metrics are divided by
/// the mean distance of the previous embeddings from the origin under the
/// same metric, so one penalty scale fits all.
pub fn scaled_cost(alpha_new: &Array2<f64>, alpha_prev: &Array2<f64>, metric: Metric) -> Result<CostMatrix> {
    let cost = cost_matrix(alpha_new, alpha_prev, metric)?;
    match metric {
        Metric::Cosine => Ok(cost),
        _ => cost.scaled(mean_metric_norm(alpha_prev, metric)?),
    }
}

/// Cosine cutoff translated to `metric`: the chord length `sqrt(2 c)` for
/// normalized non-cosine costs.
pub fn metric_cutoff(cosine_cutoff: f64, metric: Metric) -> f64 {
    match metric {
        Metric::Cosine => cosine_cutoff,
        _ => (2.0 * cosine_cutoff).sqrt(),
    }
}

pub fn mean_norm(alpha: &Array2<f64>) -> f64 {
    mean_metric_norm(alpha, Metric::Euclidean).expect("euclidean norms are defined")
}

fn mean_metric_norm(alpha: &Array2<f64>, metric: Metric) -> Result<f64> {
    let k = alpha.ncols().max(1) as f64;
    let zero = ndarray::Array1::zeros(alpha.nrows());
    let mut total = 0.0;
    for c in alpha.columns() {
        total += metric.distance(c, zero.view())?;
    }
    Ok(total / k)
}

/// Outcome of one transport-based merge, with the solved plan.
#[derive(Debug, Clone)]
pub struct SolvedMerge {
    pub alpha: Array2<f64>,
    pub report: MergeReport,
    pub cost: CostMatrix,
    pub plan: TransportPlan,
}

/// Uniform masses, cost, plan and merge in one call.
pub fn uot_merge(alpha_new: &Array2<f64>, alpha_prev: &Array2<f64>, cfg: &MergeConfig) -> Result<SolvedMerge> {
    cfg.validate()?;
    let cost = scaled_cost(alpha_new, alpha_prev, cfg.metric)?;
    let (j, k) = (cost.rows(), cost.cols());
    let a_tilde = Array1::from_elem(j, 1.0 / j.max(1) as f64);
    let a = Array1::from_elem(k, 1.0 / k.max(1) as f64);
    let plan = uot_solve(&cost, a_tilde.view(), a.view(), &cfg.uot)?;
    let (alpha, report) = merge_alphas(alpha_new, alpha_prev, &plan, a_tilde.view(), cfg.omega, &cfg.uot)?;
    Ok(SolvedMerge { alpha, report, cost, plan })
}

/// Distance-threshold merge used as a baseline; closer rows claim contested
/// columns.
pub fn distance_merge(
    alpha_new: &Array2<f64>,
    alpha_prev: &Array2<f64>,
    metric: Metric,
    threshold: f64,
    omega: f64,
) -> Result<(Array2<f64>, MergeReport)> {
    let cost = cost_matrix(alpha_new, alpha_prev, metric)?;
    let assignments = match_by_distance(&cost, threshold);
    let strength: Vec<f64> = assignments
        .iter()
        .enumerate()
        .map(|(r, a)| a.matched().map_or(0.0, |c| -cost.c[[r, c]]))
        .collect();
    merge_assignments(alpha_new, alpha_prev, &assignments, &strength, omega)
}
