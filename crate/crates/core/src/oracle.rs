//! Exact Fréchet bounds by per-signature optimal transport.
//!
//! Conditioning on `Z = z` splits the bound into independent transport
//! problems between the empirical rows with signature `z` and the label-model
//! row `P(Y | Z = z)`, weighted by the empirical frequency of `z`.

use serde::{Deserialize, Serialize};

use crate::domain::{DatasetView, GMatrix, LabelModel};
use crate::error::{Error, Result};

/// Largest `n·|Y|·|Z|` the oracle accepts.
pub const ORACLE_SIZE_LIMIT: usize = 1_000_000;

const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportInstance {
    /// `rows × classes` cost matrix, row-major.
    pub costs: Vec<Vec<f64>>,
    pub row_mass: Vec<f64>,
    pub col_mass: Vec<f64>,
}

impl TransportInstance {
    pub fn num_rows(&self) -> usize {
        self.row_mass.len()
    }

    pub fn num_cols(&self) -> usize {
        self.col_mass.len()
    }

    fn check(&self) -> Result<()> {
        if self.costs.len() != self.num_rows()
            || self.costs.iter().any(|r| r.len() != self.num_cols())
        {
            return Err(Error::Argument("transport cost matrix has the wrong shape".into()));
        }
        if self
            .row_mass
            .iter()
            .chain(&self.col_mass)
            .any(|m| !(*m >= 0.0))
        {
            return Err(Error::Inconsistent("negative transport mass".into()));
        }
        let rows: f64 = self.row_mass.iter().sum();
        let cols: f64 = self.col_mass.iter().sum();
        if (rows - cols).abs() > MASS_TOL {
            return Err(Error::Inconsistent(format!(
                "row mass {rows} differs from column mass {cols}"
            )));
        }
        Ok(())
    }

    fn negated(&self) -> Self {
        Self {
            costs: self
                .costs
                .iter()
                .map(|r| r.iter().map(|c| -c).collect())
                .collect(),
            row_mass: self.row_mass.clone(),
            col_mass: self.col_mass.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureContribution {
    pub z_id: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub lower: f64,
    pub upper: f64,
    pub per_signature: Vec<SignatureContribution>,
}

/// Minimum-cost plan for two classes.
///
/// Rows are sorted by `c(·,1) − c(·,0)` and the class-1 mass is filled
/// greedily from the cheapest rows, splitting the boundary row.
pub fn transport_binary(inst: &TransportInstance) -> Result<f64> {
    inst.check()?;
    if inst.num_cols() != 2 {
        return Err(Error::Argument(format!(
            "binary transport needs 2 columns, got {}",
            inst.num_cols()
        )));
    }
    let mut order: Vec<usize> = (0..inst.num_rows()).collect();
    let diff = |i: usize| inst.costs[i][1] - inst.costs[i][0];
    order.sort_by(|&i, &j| diff(i).total_cmp(&diff(j)).then(i.cmp(&j)));

    let mut cost: f64 = (0..inst.num_rows())
        .map(|i| inst.row_mass[i] * inst.costs[i][0])
        .sum();
    let mut remaining = inst.col_mass[1];
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = inst.row_mass[i].min(remaining);
        cost += take * diff(i);
        remaining -= take;
    }
    Ok(cost)
}

/// Minimum-cost plan for any number of classes, by the transportation
/// simplex (u-v potentials, north-west corner start).
pub fn transport_general(inst: &TransportInstance) -> Result<f64> {
    inst.check()?;
    let cols: Vec<usize> = (0..inst.num_cols())
        .filter(|&j| inst.col_mass[j] > 0.0)
        .collect();
    let rows: Vec<usize> = (0..inst.num_rows())
        .filter(|&i| inst.row_mass[i] > 0.0)
        .collect();
    if rows.is_empty() || cols.is_empty() {
        return Ok(0.0);
    }
    let costs: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| cols.iter().map(|&j| inst.costs[i][j]).collect())
        .collect();
    let supply: Vec<f64> = rows.iter().map(|&i| inst.row_mass[i]).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| inst.col_mass[j]).collect();
    let mut simplex = TransportSimplex::north_west(costs, supply, demand);
    simplex.solve()?;
    Ok(simplex.cost())
}

struct TransportSimplex {
    costs: Vec<Vec<f64>>,
    flow: Vec<Vec<f64>>,
    basic: Vec<Vec<bool>>,
    m: usize,
    n: usize,
}

impl TransportSimplex {
    fn north_west(costs: Vec<Vec<f64>>, mut supply: Vec<f64>, mut demand: Vec<f64>) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut flow = vec![vec![0.0; n]; m];
        let mut basic = vec![vec![false; n]; m];
        let (mut i, mut j) = (0, 0);
        // exactly m + n - 1 basic cells
        while i < m && j < n {
            let q = supply[i].min(demand[j]);
            flow[i][j] = q;
            basic[i][j] = true;
            supply[i] -= q;
            demand[j] -= q;
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 {
                i += 1;
            } else if supply[i] <= demand[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            costs,
            flow,
            basic,
            m,
            n,
        }
    }

    fn cost(&self) -> f64 {
        self.flow
            .iter()
            .zip(&self.costs)
            .map(|(f, c)| f.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    /// Potentials with `u[0] = 0` and `u[i] + v[j] = c[i][j]` on basic cells.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.m];
        let mut v = vec![f64::NAN; self.n];
        u[0] = 0.0;
        // rows are nodes 0..m, columns m..m+n
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if node < self.m {
                let i = node;
                for j in 0..self.n {
                    if self.basic[i][j] && v[j].is_nan() {
                        v[j] = self.costs[i][j] - u[i];
                        stack.push(self.m + j);
                    }
                }
            } else {
                let j = node - self.m;
                for i in 0..self.m {
                    if self.basic[i][j] && u[i].is_nan() {
                        u[i] = self.costs[i][j] - v[j];
                        stack.push(i);
                    }
                }
            }
        }
        (u, v)
    }

    /// Path of basic cells from row `i0` to column `j0` in the basis tree.
    fn tree_path(&self, i0: usize, j0: usize) -> Vec<(usize, usize)> {
        let total = self.m + self.n;
        let mut parent = vec![usize::MAX; total];
        parent[i0] = i0;
        let mut queue = std::collections::VecDeque::from([i0]);
        while let Some(node) = queue.pop_front() {
            if node == self.m + j0 {
                break;
            }
            if node < self.m {
                for j in 0..self.n {
                    let next = self.m + j;
                    if self.basic[node][j] && parent[next] == usize::MAX {
                        parent[next] = node;
                        queue.push_back(next);
                    }
                }
            } else {
                let j = node - self.m;
                for i in 0..self.m {
                    if self.basic[i][j] && parent[i] == usize::MAX {
                        parent[i] = node;
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut path = Vec::new();
        let mut node = self.m + j0;
        while node != i0 {
            let p = parent[node];
            let cell = if node < self.m {
                (node, p - self.m)
            } else {
                (p, node - self.m)
            };
            path.push(cell);
            node = p;
        }
        path.reverse();
        path
    }

    fn solve(&mut self) -> Result<()> {
        let max_pivots = 50 * (self.m + self.n) * (self.m + self.n).max(10);
        let mut degenerate_run = 0usize;
        for _ in 0..max_pivots {
            let (u, v) = self.potentials();
            let scale = self
                .costs
                .iter()
                .flatten()
                .fold(1.0_f64, |m, c| m.max(c.abs()));
            let tol = 1e-12 * scale;
            // Dantzig's rule, lowest index on ties; Bland's rule once
            // degenerate pivots pile up.
            let bland = degenerate_run > self.m + self.n;
            let mut entering: Option<(usize, usize, f64)> = None;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    if self.basic[i][j] {
                        continue;
                    }
                    let r = self.costs[i][j] - u[i] - v[j];
                    if r < -tol && entering.is_none_or(|(_, _, best)| r < best) {
                        entering = Some((i, j, r));
                        if bland {
                            break 'scan;
                        }
                    }
                }
            }
            let Some((ei, ej, _)) = entering else {
                return Ok(());
            };

            // Cycle: entering cell (+), then the tree path from column ej
            // back to row ei alternating -, +, ...
            let mut path = self.tree_path(ei, ej);
            path.reverse();
            let minus: Vec<(usize, usize)> = path
                .iter()
                .copied()
                .enumerate()
                .filter(|(k, _)| k % 2 == 0)
                .map(|(_, c)| c)
                .collect();
            let plus: Vec<(usize, usize)> = path
                .iter()
                .copied()
                .enumerate()
                .filter(|(k, _)| k % 2 == 1)
                .map(|(_, c)| c)
                .collect();
            let theta = minus
                .iter()
                .map(|&(i, j)| self.flow[i][j])
                .fold(f64::INFINITY, f64::min);
            let leaving = *minus
                .iter()
                .filter(|&&(i, j)| self.flow[i][j] <= theta)
                .min()
                .expect("cycle has a decreasing cell");

            for &(i, j) in &minus {
                self.flow[i][j] -= theta;
            }
            for &(i, j) in &plus {
                self.flow[i][j] += theta;
            }
            self.flow[ei][ej] += theta;
            self.basic[ei][ej] = true;
            self.basic[leaving.0][leaving.1] = false;
            self.flow[leaving.0][leaving.1] = 0.0;
            if theta <= 0.0 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
        }
        Err(Error::Numerical {
            reason: "transportation simplex exceeded its pivot budget".into(),
            iterations: max_pivots,
            last_iterate: Vec::new(),
        })
    }
}

fn solve_min(inst: &TransportInstance) -> Result<f64> {
    if inst.num_cols() == 2 {
        transport_binary(inst)
    } else {
        transport_general(inst)
    }
}

/// Per-signature transport instances: rows are the samples with that
/// signature (mass `1/n` each), columns carry `P̂(z)·P(y|z)`.
pub fn transport_instances(
    data: &DatasetView,
    model: &LabelModel,
    g: &GMatrix,
) -> Result<Vec<(usize, TransportInstance)>> {
    model.check_covers(data)?;
    if g.n() != data.n() || g.num_classes() != model.num_classes() {
        return Err(Error::Argument("cost matrix shape does not match data/model".into()));
    }
    let n = data.n();
    if n == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let k = model.num_classes();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); data.num_signatures()];
    for (i, &z) in data.z_ids().iter().enumerate() {
        members[z].push(i);
    }
    let w = 1.0 / n as f64;
    let instances = members
        .into_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(z, rows)| {
            let pz = rows.len() as f64 * w;
            let inst = TransportInstance {
                costs: rows
                    .iter()
                    .map(|&i| (0..k).map(|y| g.values()[[i, y]]).collect())
                    .collect(),
                row_mass: vec![w; rows.len()],
                col_mass: (0..k).map(|y| pz * model.prob(z, y)).collect(),
            };
            (z, inst)
        })
        .collect();
    Ok(instances)
}

/// Exact empirical Fréchet bounds `[L, U]`.
pub fn exact_bounds(data: &DatasetView, model: &LabelModel, g: &GMatrix) -> Result<OracleResult> {
    let size = data.n() * model.num_classes() * data.num_signatures();
    if size > ORACLE_SIZE_LIMIT {
        return Err(Error::TooLarge {
            size,
            limit: ORACLE_SIZE_LIMIT,
        });
    }
    let mut per_signature = Vec::new();
    for (z_id, inst) in transport_instances(data, model, g)? {
        let lower = solve_min(&inst)?;
        let upper = -solve_min(&inst.negated())?;
        per_signature.push(SignatureContribution { z_id, lower, upper });
    }
    Ok(OracleResult {
        lower: per_signature.iter().map(|c| c.lower).sum(),
        upper: per_signature.iter().map(|c| c.upper).sum(),
        per_signature,
    })
}
