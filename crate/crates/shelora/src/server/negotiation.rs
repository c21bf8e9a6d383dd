//! Negotiation of the shared encryption column set `Res`.
//!
//! Clients bid the columns they can afford to encrypt together with
//! order-preserving sensitivity codes. The server walks the budget
//! groups in ascending budget order; a group with a single client gets
//! its own top choices, while larger groups split the remaining quota
//! between three candidate lists:
//!
//! * `Clients`: columns proposed by this budget group, ranked by the
//!   group's minimum code (consensus sensitivity);
//! * `Common`: columns ranked by how many clients proposed them;
//! * `Sensitivity`: columns ranked by the maximum code any proposer
//!   reported.
//!
//! The split `(a, b, c)` is tuned per group by a sequential
//! expected-improvement search over the simplex, scored by the
//! coverage-minus-risk objective. Codes stand in for raw sensitivities
//! everywhere on the server: ordering decisions are exact under the
//! encoding, while the risk ratio uses code magnitudes as a monotone
//! proxy (the server never sees raw scores).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ServerError;
use crate::crypto::OpeCode;

/// One client's encryption bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBid {
    pub client_id: u64,
    pub rank: usize,
    /// Budget: how many columns this client can afford to encrypt.
    pub k: usize,
    /// Proposed columns, the client's most sensitive first.
    pub columns: Vec<usize>,
    /// Order-preserving sensitivity codes aligned with `columns`.
    pub codes: Vec<OpeCode>,
}

impl SensitivityBid {
    fn validate(&self) -> Result<(), ServerError> {
        if self.columns.len() != self.codes.len() {
            return Err(ServerError::Validation(format!(
                "client {}: {} columns but {} codes",
                self.client_id,
                self.columns.len(),
                self.codes.len()
            )));
        }
        if self.k > self.columns.len() {
            // A budget above the proposal count is unusual but legal;
            // it can surface as a negotiation shortfall.
            log::debug!(
                "client {}: budget {} exceeds {} proposed columns",
                self.client_id,
                self.k,
                self.columns.len()
            );
        }
        let unique: BTreeSet<_> = self.columns.iter().collect();
        if unique.len() != self.columns.len() {
            return Err(ServerError::Validation(format!(
                "client {}: duplicate proposed columns",
                self.client_id
            )));
        }
        Ok(())
    }
}

/// Search settings for the coefficient optimizer.
#[derive(Debug, Clone, Copy)]
pub struct NegotiationOptions {
    /// Number of sequential proposals the optimizer may evaluate.
    pub n_opt: usize,
    /// Seed for the optimizer's exploration tie-breaking.
    pub seed: u64,
}

impl Default for NegotiationOptions {
    fn default() -> Self {
        NegotiationOptions { n_opt: 50, seed: 0 }
    }
}

/// Outcome of a negotiation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationResult {
    /// Agreed encryption columns, ascending.
    pub res: Vec<usize>,
    /// Last tuned `(a, b, c)` split; the uniform split when no budget
    /// group needed tuning.
    pub coefficients: (f64, f64, f64),
    /// Objective value of `res` against all bids.
    pub score: f64,
    /// Columns the largest budget could not fill because the union of
    /// proposals ran out; zero in the normal case.
    pub shortfall: usize,
}

/// Negotiates with default options.
pub fn negotiate(bids: &[SensitivityBid]) -> Result<NegotiationResult, ServerError> {
    negotiate_with(bids, &NegotiationOptions::default())
}

pub fn negotiate_with(
    bids: &[SensitivityBid],
    opts: &NegotiationOptions,
) -> Result<NegotiationResult, ServerError> {
    if bids.is_empty() {
        return Err(ServerError::Validation("no bids".into()));
    }
    for bid in bids {
        bid.validate()?;
    }

    let (common, sensitivity) = column_lists(bids);
    let union_size = sensitivity.len();

    // Budget groups in ascending budget order; zero budgets select
    // nothing and are skipped outright.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, bid) in bids.iter().enumerate() {
        if bid.k > 0 {
            groups.entry(bid.k).or_default().push(idx);
        }
    }

    let mut res: BTreeSet<usize> = BTreeSet::new();
    let mut coefficients = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
    let mut max_k = 0usize;

    for (&k, members) in &groups {
        max_k = k;
        let lambda = k.saturating_sub(res.len());
        if lambda == 0 {
            continue;
        }
        if members.len() == 1 {
            // Greedy path: the lone client's own ranking decides.
            let bid = &bids[members[0]];
            let mut picked = 0usize;
            for col in &bid.columns {
                if picked == lambda {
                    break;
                }
                if res.insert(*col) {
                    picked += 1;
                }
            }
            // Overlap with earlier groups can leave the quota short;
            // fall back to the global sensitivity ranking.
            backfill(&mut res, lambda - picked, &sensitivity);
        } else {
            let clients = group_clients_list(bids, members);
            let ctx = SelectionContext {
                lambda,
                res: res.clone(),
                clients,
                common: common.clone(),
                sensitivity: sensitivity.clone(),
            };
            let (a, b, c) = optimize_coefficients(&ctx, bids, opts);
            coefficients = (a, b, c);
            for col in ctx.select(a, b) {
                res.insert(col);
            }
        }
    }

    let shortfall = max_k.saturating_sub(res.len());
    if shortfall > 0 {
        log::warn!(
            "negotiation shortfall: largest budget {max_k} exceeds the {union_size} proposed columns"
        );
    }

    let res: Vec<usize> = res.into_iter().collect();
    let score = objective_score(&res, bids);
    Ok(NegotiationResult {
        res,
        coefficients,
        score,
        shortfall,
    })
}

fn backfill(res: &mut BTreeSet<usize>, mut need: usize, sensitivity: &[usize]) {
    for col in sensitivity {
        if need == 0 {
            break;
        }
        if res.insert(*col) {
            need -= 1;
        }
    }
}

/// Builds the `Common` and `Sensitivity` candidate lists over the
/// union of proposed columns.
///
/// `Common` is ordered by descending proposal frequency, `Sensitivity`
/// by descending maximum code; both fall back to the lower column
/// index so the ordering is total.
pub fn column_lists(bids: &[SensitivityBid]) -> (Vec<usize>, Vec<usize>) {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    let mut max_code: BTreeMap<usize, u64> = BTreeMap::new();
    for bid in bids {
        for (col, code) in bid.columns.iter().zip(&bid.codes) {
            *freq.entry(*col).or_insert(0) += 1;
            let entry = max_code.entry(*col).or_insert(0);
            *entry = (*entry).max(code.0);
        }
    }
    let mut common: Vec<usize> = freq.keys().copied().collect();
    common.sort_by(|&x, &y| {
        freq[&y]
            .cmp(&freq[&x])
            .then(max_code[&y].cmp(&max_code[&x]))
            .then(x.cmp(&y))
    });
    let mut sensitivity: Vec<usize> = freq.keys().copied().collect();
    sensitivity.sort_by(|&x, &y| max_code[&y].cmp(&max_code[&x]).then(x.cmp(&y)));
    (common, sensitivity)
}

/// Candidate list of one budget group: the group's columns ranked by
/// their minimum code within the group (descending), so a column only
/// ranks high when every proposer in the group deems it sensitive.
pub fn group_clients_list(bids: &[SensitivityBid], members: &[usize]) -> Vec<usize> {
    let mut min_code: BTreeMap<usize, u64> = BTreeMap::new();
    for &idx in members {
        let bid = &bids[idx];
        for (col, code) in bid.columns.iter().zip(&bid.codes) {
            let entry = min_code.entry(*col).or_insert(u64::MAX);
            *entry = (*entry).min(code.0);
        }
    }
    let mut cols: Vec<usize> = min_code.keys().copied().collect();
    cols.sort_by(|&x, &y| min_code[&y].cmp(&min_code[&x]).then(x.cmp(&y)));
    cols
}

/// Coverage-minus-risk objective for a candidate `res`.
///
/// Coverage of a client is the fraction of its proposal inside `res`;
/// risk is the code mass of its proposal left outside `res` relative
/// to its total code mass. The score is the worst coverage minus the
/// worst risk. A client with an empty proposal is vacuously covered.
pub fn objective_score(res: &[usize], bids: &[SensitivityBid]) -> f64 {
    let (min_cov, max_risk) = coverage_and_risk(res, bids);
    min_cov - max_risk
}

/// The two halves of the negotiation objective: the worst per-client
/// coverage of proposed columns and the worst per-client share of
/// coded sensitivity mass left outside `res`. Empty proposals are
/// vacuously covered.
pub fn coverage_and_risk(res: &[usize], bids: &[SensitivityBid]) -> (f64, f64) {
    let res_set: BTreeSet<usize> = res.iter().copied().collect();
    let mut min_cov = 1.0f64;
    let mut max_risk = 0.0f64;
    for bid in bids {
        if bid.columns.is_empty() {
            log::debug!("client {}: empty proposal, coverage vacuously 1", bid.client_id);
            continue;
        }
        let inside = bid
            .columns
            .iter()
            .filter(|c| res_set.contains(c))
            .count();
        let cov = inside as f64 / bid.columns.len() as f64;
        let total: f64 = bid.codes.iter().map(|c| c.as_f64()).sum();
        let outside: f64 = bid
            .columns
            .iter()
            .zip(&bid.codes)
            .filter(|(col, _)| !res_set.contains(col))
            .map(|(_, code)| code.as_f64())
            .sum();
        let risk = if total > 0.0 { outside / total } else { 0.0 };
        min_cov = min_cov.min(cov);
        max_risk = max_risk.max(risk);
    }
    (min_cov, max_risk)
}

/// Frozen selection state for one multi-client budget group.
#[derive(Debug, Clone)]
pub struct SelectionContext {
    /// Remaining quota for this group.
    pub lambda: usize,
    res: BTreeSet<usize>,
    clients: Vec<usize>,
    common: Vec<usize>,
    sensitivity: Vec<usize>,
}

impl SelectionContext {
    pub fn new(
        lambda: usize,
        res: BTreeSet<usize>,
        clients: Vec<usize>,
        common: Vec<usize>,
        sensitivity: Vec<usize>,
    ) -> Self {
        SelectionContext {
            lambda,
            res,
            clients,
            common,
            sensitivity,
        }
    }

    /// Columns a coefficient pair buys: `floor(a * lambda)` from the
    /// group list, `floor(b * lambda)` from the common list, and the
    /// remainder from the sensitivity list, all skipping columns that
    /// are already taken. If the first two lists run dry the
    /// sensitivity list absorbs the difference, so the full quota is
    /// met whenever enough columns exist at all.
    pub fn select(&self, a: f64, b: f64) -> Vec<usize> {
        let quota_a = ((a * self.lambda as f64) + 1e-9).floor() as usize;
        let quota_b = ((b * self.lambda as f64) + 1e-9).floor() as usize;
        let mut picked: Vec<usize> = Vec::with_capacity(self.lambda);
        let mut taken: BTreeSet<usize> = self.res.clone();

        let take = |list: &[usize], quota: usize, picked: &mut Vec<usize>, taken: &mut BTreeSet<usize>| {
            let mut got = 0usize;
            for col in list {
                if got == quota {
                    break;
                }
                if taken.insert(*col) {
                    picked.push(*col);
                    got += 1;
                }
            }
        };

        take(&self.clients, quota_a, &mut picked, &mut taken);
        take(&self.common, quota_b.min(self.lambda - picked.len()), &mut picked, &mut taken);
        take(
            &self.sensitivity,
            self.lambda - picked.len(),
            &mut picked,
            &mut taken,
        );
        picked
    }

    fn scored(&self, a: f64, b: f64, bids: &[SensitivityBid]) -> f64 {
        let mut candidate: Vec<usize> = self.res.iter().copied().collect();
        candidate.extend(self.select(a, b));
        objective_score(&candidate, bids)
    }
}

/// The simplex search works on a 0.05 lattice: `(a, b) = (i, j) / 20`
/// with `i + j <= 20`.
const LATTICE_STEPS: usize = 20;

/// Fixed space-filling start for the sequential search.
const INITIAL_DESIGN: [(usize, usize); 15] = [
    (0, 0),
    (20, 0),
    (0, 20),
    (7, 7),
    (10, 0),
    (0, 10),
    (10, 10),
    (5, 5),
    (14, 3),
    (3, 14),
    (2, 2),
    (9, 2),
    (2, 9),
    (5, 10),
    (10, 5),
];

/// Tunes the list split for one budget group.
///
/// Sequential model-based search: after a fixed initial design, each
/// step fits a radial-basis surrogate to the scores seen so far and
/// proposes the unevaluated lattice point with the best expected
/// improvement (ties broken by the seeded generator). The returned
/// triple is the lexicographically first lattice point among those
/// evaluated that achieve the best score, which makes the result
/// independent of the exploration order once the lattice is exhausted.
pub fn optimize_coefficients(
    ctx: &SelectionContext,
    bids: &[SensitivityBid],
    opts: &NegotiationOptions,
) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_opt = opts.n_opt.max(1);

    let all_points: Vec<(usize, usize)> = (0..=LATTICE_STEPS)
        .flat_map(|i| (0..=LATTICE_STEPS - i).map(move |j| (i, j)))
        .collect();

    let mut evaluated: Vec<((usize, usize), f64)> = Vec::with_capacity(n_opt);
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();

    let coord = |p: (usize, usize)| {
        (
            p.0 as f64 / LATTICE_STEPS as f64,
            p.1 as f64 / LATTICE_STEPS as f64,
        )
    };

    for p in INITIAL_DESIGN {
        if evaluated.len() == n_opt {
            break;
        }
        if seen.insert(p) {
            let (a, b) = coord(p);
            evaluated.push((p, ctx.scored(a, b, bids)));
        }
    }

    while evaluated.len() < n_opt && seen.len() < all_points.len() {
        let best = evaluated
            .iter()
            .map(|(_, s)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        let y_std = {
            let mean = evaluated.iter().map(|(_, s)| *s).sum::<f64>() / evaluated.len() as f64;
            let var = evaluated
                .iter()
                .map(|(_, s)| (*s - mean).powi(2))
                .sum::<f64>()
                / evaluated.len() as f64;
            var.sqrt().max(1e-3)
        };

        let mut best_ei = f64::NEG_INFINITY;
        let mut tied: Vec<(usize, usize)> = Vec::new();
        for &p in &all_points {
            if seen.contains(&p) {
                continue;
            }
            let (px, py) = coord(p);
            let mut wsum = 0.0;
            let mut wysum = 0.0;
            let mut dmin = f64::INFINITY;
            for ((qi, qj), y) in &evaluated {
                let (qx, qy) = coord((*qi, *qj));
                let d2 = (px - qx).powi(2) + (py - qy).powi(2);
                let w = (-d2 / (2.0 * 0.15f64.powi(2))).exp();
                wsum += w;
                wysum += w * y;
                dmin = dmin.min(d2.sqrt());
            }
            let mu = wysum / wsum.max(1e-300);
            let sigma = (y_std * (1.0 - (-dmin / 0.15).exp())).max(1e-9);
            let z = (mu - best) / sigma;
            let ei = (mu - best) * normal_cdf(z) + sigma * normal_pdf(z);
            if ei > best_ei + 1e-15 {
                best_ei = ei;
                tied = vec![p];
            } else if (ei - best_ei).abs() <= 1e-15 {
                tied.push(p);
            }
        }
        let p = tied[rng.gen_range(0..tied.len())];
        seen.insert(p);
        let (a, b) = coord(p);
        evaluated.push((p, ctx.scored(a, b, bids)));
    }

    // Final answer: lexicographically first lattice point among the
    // best-scoring evaluations.
    let best_score = evaluated
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut winners: Vec<(usize, usize)> = evaluated
        .iter()
        .filter(|(_, s)| *s == best_score)
        .map(|(p, _)| *p)
        .collect();
    winners.sort();
    let (a, b) = coord(winners[0]);
    (a, b, (1.0 - a - b).max(0.0))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Abramowitz & Stegun 7.1.26 rational approximation of erf, good to
/// about 1.5e-7, plenty for an acquisition function.
fn normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = sign * (1.0 - poly * (-x * x).exp());
    0.5 * (1.0 + erf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bid(id: u64, columns: Vec<usize>, codes: Vec<u64>) -> SensitivityBid {
        SensitivityBid {
            client_id: id,
            rank: 8,
            k: columns.len(),
            codes: codes.into_iter().map(OpeCode).collect(),
            columns,
        }
    }

    #[test]
    fn objective_score_hand_example() {
        let bids = vec![bid(1, vec![0, 1], vec![3, 1]), bid(2, vec![2], vec![5])];
        let score = objective_score(&[0, 2], &bids);
        assert!((score - 0.25).abs() < 1e-12, "got {score}");
    }

    #[test]
    fn objective_score_full_res_is_one() {
        let bids = vec![bid(1, vec![0, 1], vec![3, 1]), bid(2, vec![2], vec![5])];
        assert_eq!(objective_score(&[0, 1, 2], &bids), 1.0);
    }

    #[test]
    fn objective_score_empty_proposal_is_vacuous() {
        let bids = vec![bid(1, vec![], vec![]), bid(2, vec![0], vec![9])];
        assert_eq!(objective_score(&[0], &bids), 1.0);
    }

    #[test]
    fn singleton_group_takes_its_top_k() {
        // G = {3, 1, 5} ordered by sensitivity, budget 2.
        let mut single = bid(7, vec![3, 1, 5], vec![900, 500, 200]);
        single.k = 2;
        let result = negotiate(&[single]).unwrap();
        assert_eq!(result.res, vec![1, 3]);
        assert_eq!(result.shortfall, 0);
    }

    #[test]
    fn all_zero_budgets_yield_empty_res() {
        let bids = vec![bid(1, vec![], vec![]), bid(2, vec![], vec![])];
        let result = negotiate(&bids).unwrap();
        assert!(result.res.is_empty());
        assert_eq!(result.score, 1.0);
    }

    #[test]
    fn res_size_equals_largest_budget() {
        let bids = vec![
            bid(1, vec![0, 1], vec![50, 40]),
            bid(2, vec![2, 3, 4], vec![90, 80, 70]),
            bid(3, vec![0, 5, 6, 7], vec![95, 60, 30, 20]),
        ];
        let result = negotiate(&bids).unwrap();
        assert_eq!(result.res.len(), 4);
        assert_eq!(result.shortfall, 0);
    }

    #[test]
    fn duplicate_columns_are_rejected() {
        let dup = SensitivityBid {
            client_id: 2,
            rank: 4,
            k: 3,
            columns: vec![0, 1, 0],
            codes: vec![OpeCode(9), OpeCode(4), OpeCode(2)],
        };
        assert!(negotiate(&[dup]).is_err());
    }

    #[test]
    fn budget_beyond_union_reports_shortfall() {
        // Largest budget is 3 but only two distinct columns are ever
        // proposed; res falls back to the full union.
        let a = SensitivityBid {
            client_id: 1,
            rank: 4,
            k: 2,
            columns: vec![0, 1],
            codes: vec![OpeCode(10), OpeCode(5)],
        };
        let b = SensitivityBid {
            client_id: 2,
            rank: 4,
            k: 3,
            columns: vec![0, 1],
            codes: vec![OpeCode(9), OpeCode(4)],
        };
        let result = negotiate(&[a, b]).unwrap();
        assert_eq!(result.res, vec![0, 1]);
        assert_eq!(result.shortfall, 1);
    }

    #[test]
    fn common_list_ranks_by_frequency_then_code() {
        let bids = vec![
            bid(1, vec![0, 1], vec![10, 90]),
            bid(2, vec![0, 2], vec![20, 80]),
            bid(3, vec![3], vec![95]),
        ];
        let (common, sensitivity) = column_lists(&bids);
        assert_eq!(common[0], 0, "column 0 proposed twice");
        // Frequency ties among 1, 2, 3 break by max code: 3 (95), 1 (90), 2 (80).
        assert_eq!(common, vec![0, 3, 1, 2]);
        assert_eq!(sensitivity, vec![3, 1, 2, 0]);
    }

    #[test]
    fn clients_list_ranks_by_group_minimum() {
        let bids = vec![
            bid(1, vec![0, 1], vec![50, 90]),
            bid(2, vec![0, 1], vec![60, 10]),
        ];
        // Column 0: min 50; column 1: min 10.
        let list = group_clients_list(&bids, &[0, 1]);
        assert_eq!(list, vec![0, 1]);
    }

    #[test]
    fn selection_respects_quotas_and_exclusions() {
        let ctx = SelectionContext::new(
            4,
            BTreeSet::from([9]),
            vec![9, 1, 2],
            vec![3, 1, 4],
            vec![5, 6, 7, 8, 1, 2, 3, 4],
        );
        // a = 0.5 -> 2 from clients (skipping 9), b = 0.25 -> 1 from
        // common (skipping 1 already taken -> 3), remainder 1 from
        // sensitivity (5).
        let picks = ctx.select(0.5, 0.25);
        assert_eq!(picks, vec![1, 2, 3, 5]);
    }

    #[test]
    fn selection_backfills_exhausted_lists() {
        let ctx = SelectionContext::new(
            3,
            BTreeSet::new(),
            vec![0],
            vec![0],
            vec![0, 1, 2, 3],
        );
        // Quotas ask for 2 from clients and 1 from common, but both
        // lists only hold column 0; sensitivity absorbs the rest.
        let picks = ctx.select(0.67, 0.33);
        assert_eq!(picks.len(), 3);
        assert_eq!(picks, vec![0, 1, 2]);
    }

    #[test]
    fn optimizer_with_single_proposal_returns_it() {
        let bids = vec![
            bid(1, vec![0, 1], vec![9, 8]),
            bid(2, vec![2, 3], vec![7, 6]),
        ];
        let ctx = SelectionContext::new(
            2,
            BTreeSet::new(),
            vec![0, 1, 2, 3],
            vec![0, 1, 2, 3],
            vec![0, 1, 2, 3],
        );
        let opts = NegotiationOptions { n_opt: 1, seed: 0 };
        let (a, b, c) = optimize_coefficients(&ctx, &bids, &opts);
        // Only (0, 0) from the initial design gets evaluated.
        assert_eq!((a, b, c), (0.0, 0.0, 1.0));
    }

    #[test]
    fn optimizer_matches_coarse_grid_on_dominant_instance() {
        // One shared budget group with a genuine landscape: column 13
        // dominates the sensitivity list while column 10 carries the
        // coverage, so leaning fully on the group list loses badly.
        let bids = vec![
            bid(1, vec![10, 11], vec![50, 40]),
            bid(2, vec![10, 12], vec![48, 38]),
            bid(3, vec![13, 10], vec![1000, 30]),
        ];
        let (common, sensitivity) = column_lists(&bids);
        let clients = group_clients_list(&bids, &[0, 1, 2]);
        let ctx = SelectionContext::new(2, BTreeSet::new(), clients, common, sensitivity);

        // n_opt large enough to exhaust the lattice.
        let opts = NegotiationOptions { n_opt: 300, seed: 7 };
        let (a, b, _) = optimize_coefficients(&ctx, &bids, &opts);
        let opt_score = objective_score(&ctx.select(a, b), &bids);

        // Exhaustive 0.1-granularity oracle.
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=10 {
            for j in 0..=(10 - i) {
                let (ga, gb) = (i as f64 / 10.0, j as f64 / 10.0);
                let score = objective_score(&ctx.select(ga, gb), &bids);
                if score > grid_best {
                    grid_best = score;
                }
            }
        }
        assert!(
            (opt_score - grid_best).abs() <= 1e-9,
            "optimizer {opt_score} vs grid {grid_best}"
        );
        assert!(opt_score > 0.0, "best split should beat the group-only pick");
    }

    #[test]
    fn frequent_columns_win_before_rare_ones() {
        // Column 0 is proposed by every client; with b > 0 it must be
        // selected before any single-proposer column.
        let bids = vec![
            bid(1, vec![0, 1], vec![60, 59]),
            bid(2, vec![0, 2], vec![58, 57]),
            bid(3, vec![0, 3], vec![56, 55]),
        ];
        let (common, sensitivity) = column_lists(&bids);
        let clients = group_clients_list(&bids, &[0, 1, 2]);
        let ctx = SelectionContext::new(1, BTreeSet::new(), clients, common, sensitivity);
        let picks = ctx.select(0.0, 1.0);
        assert_eq!(picks, vec![0]);
    }

    #[test]
    fn negotiate_is_deterministic() {
        let bids = vec![
            bid(1, vec![0, 1, 2], vec![50, 40, 30]),
            bid(2, vec![2, 3, 4], vec![90, 80, 70]),
            bid(3, vec![0, 5], vec![95, 60]),
        ];
        let a = negotiate(&bids).unwrap();
        let b = negotiate(&bids).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_mismatched_code_list() {
        let bad = SensitivityBid {
            client_id: 1,
            rank: 4,
            k: 1,
            columns: vec![0],
            codes: vec![],
        };
        assert!(negotiate(&[bad]).is_err());
    }

    #[test]
    fn oversized_budget_is_legal_but_short() {
        let wishful = SensitivityBid {
            client_id: 1,
            rank: 4,
            k: 2,
            columns: vec![0],
            codes: vec![OpeCode(1)],
        };
        let result = negotiate(&[wishful]).unwrap();
        assert_eq!(result.res, vec![0]);
        assert_eq!(result.shortfall, 1);
    }
}
