//! User-subset representation, the subset <-> class-label bijection, and
//! the classical selection solvers: exhaustive search, greedy augmentation
//! and binary particle swarm optimization.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::ChannelMatrix;
use crate::rate::evaluate_users;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("user indices must be strictly increasing, got {0:?}")]
    Unsorted(Vec<usize>),
    #[error("user index {index} out of range for {n_users} users")]
    IndexOutOfRange { index: usize, n_users: usize },
    #[error("subset has {got} users, expected {expected}")]
    WrongSize { got: usize, expected: usize },
    #[error("label {label} out of range, only {classes} classes")]
    LabelOutOfRange { label: u64, classes: u64 },
    #[error("cannot select {n_select} of {n_users} users")]
    InvalidSelection { n_select: usize, n_users: usize },
}

/// `C(n, k)`; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc * (n - i) / (i + 1);
    }
    u64::try_from(acc).expect("binomial coefficient overflows u64")
}

/// Sorted, duplicate-free set of selected user indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserSubset(Vec<usize>);

impl UserSubset {
    pub fn new(indices: Vec<usize>, n_users: usize) -> Result<Self, SelectionError> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SelectionError::Unsorted(indices));
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= n_users) {
            return Err(SelectionError::IndexOutOfRange { index, n_users });
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates before validating the range.
    pub fn from_unsorted(mut indices: Vec<usize>, n_users: usize) -> Result<Self, SelectionError> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, n_users)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, user: usize) -> bool {
        self.0.binary_search(&user).is_ok()
    }
}

/// Index of a subset in lexicographic order, `0 <= value < C(N_R, N_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel(pub u64);

impl ClassLabel {
    pub fn value(self) -> u64 {
        self.0
    }
}

pub fn combo_rank(subset: &UserSubset, n_users: usize, n_select: usize) -> Result<ClassLabel, SelectionError> {
    if subset.len() != n_select {
        return Err(SelectionError::WrongSize { got: subset.len(), expected: n_select });
    }
    let idx = subset.indices();
    if let Some(&index) = idx.iter().find(|&&i| i >= n_users) {
        return Err(SelectionError::IndexOutOfRange { index, n_users });
    }
    let mut rank = 0;
    let mut next = 0;
    for (pos, &c) in idx.iter().enumerate() {
        // every combination with a smaller value at this position comes first
        for skipped in next..c {
            rank += binomial(n_users - skipped - 1, n_select - pos - 1);
        }
        next = c + 1;
    }
    Ok(ClassLabel(rank))
}

pub fn combo_unrank(label: ClassLabel, n_users: usize, n_select: usize) -> Result<UserSubset, SelectionError> {
    if n_select > n_users {
        return Err(SelectionError::InvalidSelection { n_select, n_users });
    }
    let classes = binomial(n_users, n_select);
    if label.0 >= classes {
        return Err(SelectionError::LabelOutOfRange { label: label.0, classes });
    }
    let mut rank = label.0;
    let mut out = Vec::with_capacity(n_select);
    let mut c = 0;
    for pos in 0..n_select {
        loop {
            let block = binomial(n_users - c - 1, n_select - pos - 1);
            if rank < block {
                break;
            }
            rank -= block;
            c += 1;
        }
        out.push(c);
        c += 1;
    }
    Ok(UserSubset(out))
}

/// Advances `combo` to its lexicographic successor; false after the last one.
pub fn next_combination(combo: &mut [usize], n_users: usize) -> bool {
    let k = combo.len();
    let Some(i) = (0..k).rev().find(|&i| combo[i] < n_users - k + i) else {
        return false;
    };
    combo[i] += 1;
    for j in i + 1..k {
        combo[j] = combo[j - 1] + 1;
    }
    true
}

fn check_selection(h: &ChannelMatrix, n_select: usize) {
    assert!(
        n_select >= 1 && n_select <= h.n_users(),
        "cannot select {n_select} of {} users",
        h.n_users()
    );
}

/// Sum rate of every subset, indexed by class label.
pub fn all_subset_rates(h: &ChannelMatrix, n_select: usize, noise_power: f64) -> Vec<f64> {
    check_selection(h, n_select);
    let n_users = h.n_users();
    let mut combo: Vec<usize> = (0..n_select).collect();
    let mut rates = Vec::with_capacity(binomial(n_users, n_select) as usize);
    loop {
        rates.push(evaluate_users(h, &combo, noise_power).sum_rate);
        if !next_combination(&mut combo, n_users) {
            break;
        }
    }
    rates
}

/// Best subset over all `C(N_R, N_r)` candidates; ties go to the smallest label.
///
/// Panics unless `1 <= n_select <= N_R`.
pub fn exhaustive_search(h: &ChannelMatrix, n_select: usize, noise_power: f64) -> (UserSubset, f64) {
    let rates = all_subset_rates(h, n_select, noise_power);
    let (best, rate) = argmax_first(&rates);
    let subset = combo_unrank(ClassLabel(best as u64), h.n_users(), n_select).expect("label in range");
    (subset, rate)
}

/// Index and value of the maximum; the first index wins ties. NaN never wins.
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Incremental augmentation: each step adds the user whose inclusion gives
/// the highest sum rate. Ties go to the smallest user index.
pub fn greedy_select(h: &ChannelMatrix, n_select: usize, noise_power: f64) -> UserSubset {
    check_selection(h, n_select);
    let n_users = h.n_users();
    let mut chosen: Vec<usize> = Vec::with_capacity(n_select);
    let mut candidate = Vec::with_capacity(n_select);
    for _ in 0..n_select {
        let mut best: Option<(usize, f64)> = None;
        for user in (0..n_users).filter(|u| !chosen.contains(u)) {
            candidate.clear();
            candidate.extend_from_slice(&chosen);
            candidate.push(user);
            candidate.sort_unstable();
            let rate = evaluate_users(h, &candidate, noise_power).sum_rate;
            if best.is_none_or(|(_, r)| rate > r) {
                best = Some((user, rate));
            }
        }
        let (user, _) = best.expect("a remaining user exists");
        chosen.push(user);
    }
    chosen.sort_unstable();
    UserSubset(chosen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpsoParams {
    pub pop_size: usize,
    pub iterations: usize,
    /// Inertia decays linearly from `inertia_start` to `inertia_end`.
    pub inertia_start: f64,
    pub inertia_end: f64,
    pub cognitive: f64,
    pub social: f64,
    pub v_max: f64,
    pub seed: u64,
}

impl Default for BpsoParams {
    fn default() -> Self {
        Self {
            pop_size: 10,
            iterations: 10,
            inertia_start: 0.9,
            inertia_end: 0.4,
            cognitive: 2.0,
            social: 2.0,
            v_max: 4.0,
            seed: 0,
        }
    }
}

impl BpsoParams {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn inertia(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.inertia_start;
        }
        let t = iteration as f64 / (self.iterations - 1) as f64;
        self.inertia_start + (self.inertia_end - self.inertia_start) * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpsoOutcome {
    pub subset: UserSubset,
    pub rate: f64,
    /// Global-best rate after initialization and after each iteration.
    pub best_history: Vec<f64>,
    pub evaluations: usize,
}

struct Particle {
    position: Vec<bool>,
    velocity: Vec<f64>,
    best_position: Vec<bool>,
    best_rate: f64,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn members(position: &[bool]) -> Vec<usize> {
    position.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Forces exactly `n_select` ones: surplus ones with the lowest score are
/// cleared, missing ones are filled from the highest-scoring zeros.
fn repair(position: &mut [bool], scores: &[f64], n_select: usize) {
    let ones = position.iter().filter(|&&b| b).count();
    if ones == n_select {
        return;
    }
    let want = ones < n_select;
    let mut candidates: Vec<usize> = (0..position.len()).filter(|&i| position[i] != want).collect();
    // stable sort keeps the smaller index first among equal scores
    if want {
        candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    } else {
        candidates.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    }
    for &i in candidates.iter().take(ones.abs_diff(n_select)) {
        position[i] = want;
    }
}

/// Binary PSO over membership vectors, keeping every particle feasible.
pub fn bpso_search(h: &ChannelMatrix, n_select: usize, noise_power: f64, params: &BpsoParams) -> BpsoOutcome {
    check_selection(h, n_select);
    assert!(params.pop_size >= 1, "BPSO needs at least one particle");
    let n_users = h.n_users();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut evaluations = 0;
    let mut fitness = |pos: &[bool]| {
        evaluations += 1;
        evaluate_users(h, &members(pos), noise_power).sum_rate
    };

    let mut swarm: Vec<Particle> = Vec::with_capacity(params.pop_size);
    for _ in 0..params.pop_size {
        let mut position = vec![false; n_users];
        for i in sample(&mut rng, n_users, n_select) {
            position[i] = true;
        }
        let velocity = (0..n_users)
            .map(|_| rng.random_range(-params.v_max..=params.v_max))
            .collect();
        let rate = fitness(&position);
        swarm.push(Particle { best_position: position.clone(), position, velocity, best_rate: rate });
    }
    let mut g_idx = 0;
    for (i, p) in swarm.iter().enumerate() {
        if p.best_rate > swarm[g_idx].best_rate {
            g_idx = i;
        }
    }
    let mut g_pos = swarm[g_idx].best_position.clone();
    let mut g_rate = swarm[g_idx].best_rate;
    let mut history = vec![g_rate];

    let mut scores = vec![0.0; n_users];
    for it in 0..params.iterations {
        let w = params.inertia(it);
        for p in swarm.iter_mut() {
            for d in 0..n_users {
                let x = f64::from(u8::from(p.position[d]));
                let pb = f64::from(u8::from(p.best_position[d]));
                let gb = f64::from(u8::from(g_pos[d]));
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = w * p.velocity[d] + params.cognitive * r1 * (pb - x) + params.social * r2 * (gb - x);
                p.velocity[d] = v.clamp(-params.v_max, params.v_max);
                scores[d] = sigmoid(p.velocity[d]);
                p.position[d] = rng.random::<f64>() < scores[d];
            }
            repair(&mut p.position, &scores, n_select);
            let rate = fitness(&p.position);
            if rate > p.best_rate {
                p.best_rate = rate;
                p.best_position.clone_from(&p.position);
            }
        }
        for p in &swarm {
            if p.best_rate > g_rate {
                g_rate = p.best_rate;
                g_pos.clone_from(&p.best_position);
            }
        }
        history.push(g_rate);
    }

    BpsoOutcome {
        subset: UserSubset(members(&g_pos)),
        rate: g_rate,
        best_history: history,
        evaluations,
    }
}

pub fn bpso_select(h: &ChannelMatrix, n_select: usize, noise_power: f64, params: &BpsoParams) -> UserSubset {
    bpso_search(h, n_select, noise_power, params).subset
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel_matrix, ArrayGeometry, ChannelConfig};
    use crate::rate::evaluate_selection;
    use crate::rng::substream;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_h(users: usize, seed: u64) -> ChannelMatrix {
        let cfg = ChannelConfig::new(ArrayGeometry::new(4, 4).unwrap(), users, seed);
        generate_channel_matrix(&cfg, &mut substream(seed, 0))
    }

    fn subset(v: &[usize], n: usize) -> UserSubset {
        UserSubset::new(v.to_vec(), n).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 6), 210);
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(4, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(60, 30), 118_264_581_564_861_424);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(combo_rank(&subset(&[0, 1, 2, 3, 4, 5], 10), 10, 6), Ok(ClassLabel(0)));
        assert_eq!(combo_rank(&subset(&[4, 5, 6, 7, 8, 9], 10), 10, 6), Ok(ClassLabel(209)));
        assert_eq!(combo_rank(&subset(&[0, 1, 2, 3, 4, 6], 10), 10, 6), Ok(ClassLabel(1)));
    }

    #[test]
    fn unrank_examples() {
        assert_eq!(combo_unrank(ClassLabel(0), 4, 2).unwrap().indices(), &[0, 1]);
        assert_eq!(combo_unrank(ClassLabel(5), 4, 2).unwrap().indices(), &[2, 3]);
        assert_eq!(
            combo_unrank(ClassLabel(6), 4, 2),
            Err(SelectionError::LabelOutOfRange { label: 6, classes: 6 })
        );
    }

    #[test]
    fn invalid_subsets_rejected() {
        assert!(matches!(UserSubset::new(vec![2, 1], 4), Err(SelectionError::Unsorted(_))));
        assert!(matches!(UserSubset::new(vec![1, 1], 4), Err(SelectionError::Unsorted(_))));
        assert!(matches!(
            UserSubset::new(vec![1, 4], 4),
            Err(SelectionError::IndexOutOfRange { index: 4, n_users: 4 })
        ));
        assert!(combo_rank(&subset(&[0, 1], 4), 4, 3).is_err());
    }

    #[test]
    fn round_trip_all_labels_10_choose_6() {
        for label in 0..210 {
            let s = combo_unrank(ClassLabel(label), 10, 6).unwrap();
            assert_eq!(combo_rank(&s, 10, 6).unwrap(), ClassLabel(label));
        }
    }

    #[test]
    fn successor_order_matches_rank() {
        let mut combo = vec![0, 1, 2];
        let mut label = 0;
        loop {
            assert_eq!(combo_rank(&subset(&combo, 7), 7, 3).unwrap(), ClassLabel(label));
            label += 1;
            if !next_combination(&mut combo, 7) {
                break;
            }
        }
        assert_eq!(label, binomial(7, 3));
    }

    #[test]
    fn exhaustive_single_candidate() {
        let h = random_h(3, 1);
        let (s, rate) = exhaustive_search(&h, 3, 0.1);
        assert_eq!(s.indices(), &[0, 1, 2]);
        assert!(rate > 0.0);
    }

    #[test]
    fn exhaustive_matches_independent_enumeration() {
        let h = random_h(4, 2);
        let (s, rate) = exhaustive_search(&h, 2, 0.1);
        let mut best = (vec![], f64::NEG_INFINITY);
        for a in 0..4 {
            for b in a + 1..4 {
                let r = evaluate_selection(&h, &subset(&[a, b], 4), 0.1).sum_rate;
                if r > best.1 {
                    best = (vec![a, b], r);
                }
            }
        }
        assert_eq!(s.indices(), best.0.as_slice());
        assert_eq!(rate, best.1);
    }

    #[test]
    fn exhaustive_picks_dominant_user() {
        // near-orthogonal rows: user 2 scaled by 100
        let n_tx = 8;
        let rows: Vec<Vec<Complex64>> = (0..4)
            .map(|u| {
                (0..n_tx)
                    .map(|i| {
                        let base = if i == 2 * u { 1.0 } else { 0.01 };
                        let scale = if u == 2 { 100.0 } else { 1.0 };
                        Complex64::new(base * scale, 0.0)
                    })
                    .collect()
            })
            .collect();
        let h = ChannelMatrix::from_rows(&rows);
        let (s, _) = exhaustive_search(&h, 2, 0.1);
        assert!(s.contains(2));
    }

    #[test]
    fn greedy_full_and_single() {
        let h = random_h(5, 3);
        assert_eq!(greedy_select(&h, 5, 0.1).indices(), &[0, 1, 2, 3, 4]);
        let g = greedy_select(&h, 1, 0.1);
        let (es, _) = exhaustive_search(&h, 1, 0.1);
        assert_eq!(g, es);
    }

    #[test]
    fn greedy_never_beats_exhaustive_and_sometimes_loses() {
        let mut strict = 0;
        for seed in 0..1000 {
            let h = random_h(4, seed);
            let (_, es) = exhaustive_search(&h, 2, 0.1);
            let gr = evaluate_selection(&h, &greedy_select(&h, 2, 0.1), 0.1).sum_rate;
            assert!(gr <= es);
            if gr < es {
                strict += 1;
            }
        }
        assert!(strict > 0);
    }

    #[test]
    fn bpso_without_iterations_returns_best_initial() {
        let h = random_h(6, 4);
        let params = BpsoParams { iterations: 0, ..BpsoParams::with_seed(17) };
        let out = bpso_search(&h, 3, 0.1, &params);
        assert_eq!(out.evaluations, params.pop_size);
        assert_eq!(out.best_history.len(), 1);
        // replay the initialization independently
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..params.pop_size {
            let mut idx = sample(&mut rng, 6, 3).into_vec();
            idx.sort_unstable();
            for _ in 0..6 {
                let _: f64 = rng.random_range(-4.0..=4.0);
            }
            best = best.max(evaluate_users(&h, &idx, 0.1).sum_rate);
        }
        assert_eq!(out.rate, best);
    }

    #[test]
    fn bpso_deterministic_and_monotone() {
        let h = random_h(8, 5);
        let params = BpsoParams::with_seed(3);
        let a = bpso_search(&h, 4, 0.1, &params);
        let b = bpso_search(&h, 4, 0.1, &params);
        assert_eq!(a, b);
        assert_eq!(a.subset.len(), 4);
        assert!(a.best_history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(a.evaluations, 10 + 10 * 10);
        let (_, es) = exhaustive_search(&h, 4, 0.1);
        assert!(a.rate <= es);
        assert_eq!(evaluate_selection(&h, &a.subset, 0.1).sum_rate, a.rate);
    }

    #[test]
    fn repair_keeps_highest_scores() {
        let scores = [0.9, 0.1, 0.5, 0.7];
        let mut pos = vec![true, true, true, true];
        repair(&mut pos, &scores, 2);
        assert_eq!(pos, vec![true, false, false, true]);
        let mut pos = vec![false, true, false, false];
        repair(&mut pos, &scores, 3);
        assert_eq!(pos, vec![true, true, false, true]);
    }

    proptest! {
        #[test]
        fn rank_unrank_bijection(n in 1usize..=12, k_frac in 0.0f64..=1.0, pick in any::<u64>()) {
            let k = ((n as f64) * k_frac).round() as usize;
            let classes = binomial(n, k);
            let label = ClassLabel(pick % classes);
            let s = combo_unrank(label, n, k).unwrap();
            prop_assert_eq!(s.len(), k);
            prop_assert_eq!(combo_rank(&s, n, k).unwrap(), label);
        }

        #[test]
        fn solvers_return_valid_subsets(seed in 0u64..500) {
            let h = random_h(6, seed);
            let g = greedy_select(&h, 3, 0.1);
            let b = bpso_select(&h, 3, 0.1, &BpsoParams::with_seed(seed));
            let (e, es) = exhaustive_search(&h, 3, 0.1);
            for s in [&g, &b, &e] {
                prop_assert_eq!(s.len(), 3);
                prop_assert!(UserSubset::new(s.indices().to_vec(), 6).is_ok());
                prop_assert!(evaluate_selection(&h, s, 0.1).sum_rate <= es);
            }
        }
    }
}
