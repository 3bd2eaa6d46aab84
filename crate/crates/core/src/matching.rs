//! Exact linear-sum-assignment and slot identity alignment.
//!
//! Frame-to-frame identity is maintained by solving the assignment problem
//! on a cosine-distance cost matrix between consecutive slot sets. The
//! solver is a shortest-augmenting-path implementation with dual potentials
//! (Jonker-Volgenant style), O(K^3) worst case, deterministic tie-breaking
//! by index order.

use serde::Serialize;

use crate::binding::SlotSet;
use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity_f64, LabelMap};

/// Square matrix of finite assignment costs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    k: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(k: usize, costs: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("cost matrix must be at least 1x1"));
        }
        if costs.len() != k * k {
            return Err(Error::input(format!(
                "cost matrix needs {} entries for k={k}, got {}",
                k * k,
                costs.len()
            )));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("cost matrix entries must be finite"));
        }
        Ok(CostMatrix { k, costs })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.k + col]
    }
}

/// A cost-minimizing bijection `i -> perm[i]` with its total cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    /// Fraction of fixed points, `#{i : perm[i] = i} / K`.
    pub fn identity_fraction(&self) -> f64 {
        let fixed = self
            .perm
            .iter()
            .enumerate()
            .filter(|(i, &p)| *i == p)
            .count();
        fixed as f64 / self.perm.len() as f64
    }

    /// Positions of the inverse mapping: `inverse[perm[i]] = i`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0usize; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }
}

/// Cosine-distance cost matrix between two slot sets:
/// `C[i][j] = 1 - cos(prev_i, curr_j)`, entries in `[0, 2]`.
pub fn slot_cost_matrix(prev: &SlotSet, curr: &SlotSet) -> Result<CostMatrix> {
    if prev.k() != curr.k() {
        return Err(Error::config(format!(
            "slot count mismatch: {} vs {}",
            prev.k(),
            curr.k()
        )));
    }
    if prev.dim() != curr.dim() {
        return Err(Error::config(format!(
            "slot dim mismatch: {} vs {}",
            prev.dim(),
            curr.dim()
        )));
    }
    let k = prev.k();
    let mut costs = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            costs.push(1.0 - cosine_similarity_f64(prev.slot(i), curr.slot(j)));
        }
    }
    CostMatrix::new(k, costs)
}

/// Cosine-distance costs plus a spatial term,
/// `C[i][j] += weight * dist(prev_pos_i, curr_pos_j) / sqrt(2)`,
/// for positions normalized into the unit square. `weight = 0` reproduces
/// [`slot_cost_matrix`] exactly.
pub fn slot_cost_matrix_with_positions(
    prev: &SlotSet,
    curr: &SlotSet,
    prev_pos: &[(f64, f64)],
    curr_pos: &[(f64, f64)],
    weight: f64,
) -> Result<CostMatrix> {
    let base = slot_cost_matrix(prev, curr)?;
    if weight == 0.0 {
        return Ok(base);
    }
    let k = base.k();
    if prev_pos.len() != k || curr_pos.len() != k {
        return Err(Error::config(format!(
            "position lists must have length {k}, got {} and {}",
            prev_pos.len(),
            curr_pos.len()
        )));
    }
    if !weight.is_finite() || weight < 0.0 {
        return Err(Error::config(format!(
            "position weight must be finite and >= 0, got {weight}"
        )));
    }
    let mut costs = Vec::with_capacity(k * k);
    for (i, &(pr, pc)) in prev_pos.iter().enumerate() {
        for (j, &(cr, cc)) in curr_pos.iter().enumerate() {
            let dist = ((pr - cr).powi(2) + (pc - cc).powi(2)).sqrt();
            costs.push(base.get(i, j) + weight * dist / std::f64::consts::SQRT_2);
        }
    }
    CostMatrix::new(k, costs)
}

/// Exact LSAP by shortest augmenting paths over reduced costs.
pub fn solve_assignment(c: &CostMatrix) -> Result<Assignment> {
    let k = c.k();
    // Column k is a virtual root for each augmentation.
    let mut potential_row = vec![0.0f64; k];
    let mut potential_col = vec![0.0f64; k + 1];
    let mut row_of_col = vec![usize::MAX; k + 1];
    let mut prev_col = vec![usize::MAX; k + 1];

    for row in 0..k {
        row_of_col[k] = row;
        let mut min_to = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        let mut j_cur = k;
        loop {
            used[j_cur] = true;
            let i_cur = row_of_col[j_cur];
            let mut delta = f64::INFINITY;
            let mut j_next = usize::MAX;
            for j in 0..k {
                if used[j] {
                    continue;
                }
                let reduced = c.get(i_cur, j) - potential_row[i_cur] - potential_col[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    prev_col[j] = j_cur;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j_next = j;
                }
            }
            debug_assert!(
                j_next != usize::MAX,
                "square matrix always has a next column"
            );
            for j in 0..=k {
                if used[j] {
                    potential_row[row_of_col[j]] += delta;
                    potential_col[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j_cur = j_next;
            if row_of_col[j_cur] == usize::MAX {
                break;
            }
        }
        // Augment along the recorded path back to the virtual column.
        while j_cur != k {
            let j = prev_col[j_cur];
            row_of_col[j_cur] = row_of_col[j];
            j_cur = j;
        }
    }

    let mut perm = vec![usize::MAX; k];
    for (j, &row) in row_of_col.iter().take(k).enumerate() {
        if row != usize::MAX {
            perm[row] = j;
        }
    }
    debug_assert!(perm.iter().all(|&p| p != usize::MAX));
    let total_cost = perm.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
    Ok(Assignment { perm, total_cost })
}

/// Re-orders `curr` so its slots align positionally with `prev` and carries
/// the previous identities over: output position `i` holds current slot
/// `perm[i]` with `prev`'s identity `i`. The mask is relabeled to match.
pub fn apply_assignment(
    curr: &SlotSet,
    curr_masks: &LabelMap,
    assignment: &Assignment,
    prev: &SlotSet,
) -> Result<(SlotSet, LabelMap)> {
    let k = prev.k();
    if curr.k() != k || assignment.perm.len() != k {
        return Err(Error::config(format!(
            "apply_assignment size mismatch: prev {}, curr {}, perm {}",
            k,
            curr.k(),
            assignment.perm.len()
        )));
    }
    if curr.dim() != prev.dim() {
        return Err(Error::config("slot dim mismatch in apply_assignment"));
    }

    let mut slots = Vec::with_capacity(k * curr.dim());
    for i in 0..k {
        slots.extend_from_slice(curr.slot(assignment.perm[i]));
    }
    let aligned = SlotSet::new(slots, curr.dim(), prev.identities().to_vec())?;

    // Identity of current slot j becomes prev identity at inverse[j].
    let inverse = assignment.inverse();
    let mut relabel = std::collections::HashMap::new();
    for (j, &inv) in inverse.iter().enumerate() {
        relabel.insert(curr.identities()[j], prev.identities()[inv]);
    }
    let labels = curr_masks
        .labels()
        .iter()
        .map(|&l| {
            if l == crate::tensor::BACKGROUND {
                Ok(l)
            } else {
                relabel.get(&l).copied().ok_or_else(|| {
                    Error::input(format!("mask label {l} does not match any slot identity"))
                })
            }
        })
        .collect::<Result<Vec<i32>>>()?;
    let relabeled = LabelMap::new(curr_masks.height(), curr_masks.width(), labels)?;
    Ok((aligned, relabeled))
}

/// Fraction of slots whose optimal match between two frames is the identity
/// assignment.
pub fn hungarian_identity_ratio(prev: &SlotSet, curr: &SlotSet) -> Result<f64> {
    let cost = slot_cost_matrix(prev, curr)?;
    let assignment = solve_assignment(&cost)?;
    Ok(assignment.identity_fraction())
}
