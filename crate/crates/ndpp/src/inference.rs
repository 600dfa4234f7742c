//! Streaming and online MAP inference: partition greedy, online greedy,
//! online local search with a stash, the 2-neighborhood variant, the offline
//! greedy baseline, and a brute-force oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{f_det, f_det_cols};
use crate::model::{DetCounter, NdppModel, Subset};

/// One stream element: the column pair (v_t, b_t) at stream position t.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamPoint {
    pub index: usize,
    pub v: DVector<f64>,
    pub b: DVector<f64>,
}

impl StreamPoint {
    pub fn new(index: usize, v: DVector<f64>, b: DVector<f64>) -> Self {
        StreamPoint { index, v, b }
    }
}

/// Replays the columns of a model as a stream in index order.
pub fn model_stream(model: &NdppModel) -> Vec<StreamPoint> {
    (0..model.n())
        .map(|i| {
            let (v, b) = model.column(i);
            StreamPoint::new(i, v, b)
        })
        .collect()
}

fn f_of(points: &[&StreamPoint], c: &DMatrix<f64>, counter: &mut DetCounter) -> f64 {
    let m = points.len();
    let d = c.nrows();
    let mut vs = DMatrix::zeros(d, m);
    let mut bs = DMatrix::zeros(d, m);
    for (j, p) in points.iter().enumerate() {
        vs.set_column(j, &p.v);
        bs.set_column(j, &p.b);
    }
    f_det_cols(&vs, &bs, c, counter)
}

/// Improvement rule for the local searches. The paper's existential swap
/// condition leaves scan order open; first-improvement in deterministic
/// index order is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchOrder {
    FirstImprovement,
    BestImprovement,
}

/// State shared by the online algorithms: solution S, stash T, cached
/// columns, the previous-point buffer, and metric counters.
pub struct InferenceState {
    k: usize,
    alpha: f64,
    c: DMatrix<f64>,
    solution: Vec<StreamPoint>,
    stash: Vec<StreamPoint>,
    prev: Option<StreamPoint>,
    f_current: f64,
    val_nz: Option<f64>,
    swap_count: u64,
    pub counter: DetCounter,
    /// (f before, f after) for every accepted swap, in order.
    accepted_swaps: Vec<(f64, f64)>,
    order: SearchOrder,
}

impl InferenceState {
    /// `alpha >= 1` is the improvement factor; the online greedy algorithm
    /// ignores it (its threshold is a plain strict improvement).
    pub fn new(k: usize, alpha: f64, c: DMatrix<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if alpha.is_nan() || alpha < 1.0 {
            return Err(Error::Config(format!("alpha must be >= 1, got {alpha}")));
        }
        Ok(InferenceState {
            k,
            alpha,
            c,
            solution: Vec::new(),
            stash: Vec::new(),
            prev: None,
            f_current: 1.0,
            val_nz: None,
            swap_count: 0,
            counter: DetCounter::new(),
            accepted_swaps: Vec::new(),
            order: SearchOrder::FirstImprovement,
        })
    }

    pub fn with_order(mut self, order: SearchOrder) -> Self {
        self.order = order;
        self
    }

    pub fn solution(&self) -> Subset {
        Subset::from_unsorted(self.solution.iter().map(|p| p.index).collect())
            .expect("solution indices are distinct")
    }

    pub fn stash(&self) -> Subset {
        Subset::from_unsorted(self.stash.iter().map(|p| p.index).collect())
            .expect("stash indices are distinct")
    }

    pub fn objective(&self) -> f64 {
        if self.solution.is_empty() {
            1.0
        } else {
            self.f_current
        }
    }

    /// Accepted swaps counted per displaced index: a double move counts as
    /// two, which keeps |T| <= swap_count for every algorithm.
    pub fn swap_count(&self) -> u64 {
        self.swap_count
    }

    pub fn accepted_swaps(&self) -> &[(f64, f64)] {
        &self.accepted_swaps
    }

    /// First nonzero f(S) observed at |S| = k during the fill phase.
    pub fn val_nz(&self) -> Option<f64> {
        self.val_nz
    }

    /// Recomputes f(S) from scratch, bypassing the incremental cache (one
    /// counted evaluation).
    pub fn recompute_objective(&mut self) -> f64 {
        let refs: Vec<&StreamPoint> = self.solution.iter().collect();
        let mut scratch = self.counter;
        let f = f_of(&refs, &self.c, &mut scratch);
        self.counter = scratch;
        f
    }

    fn insert_sorted(vec: &mut Vec<StreamPoint>, pt: StreamPoint) {
        let pos = vec
            .binary_search_by_key(&pt.index, |p| p.index)
            .unwrap_err();
        vec.insert(pos, pt);
    }

    fn try_fill(&mut self, pt: &StreamPoint) -> bool {
        if self.solution.len() >= self.k {
            return false;
        }
        let mut cand: Vec<&StreamPoint> = self.solution.iter().collect();
        cand.push(pt);
        cand.sort_by_key(|p| p.index);
        let mut counter = self.counter;
        let f_new = f_of(&cand, &self.c, &mut counter);
        self.counter = counter;
        if f_new != 0.0 {
            Self::insert_sorted(&mut self.solution, pt.clone());
            self.f_current = f_new;
            if self.solution.len() == self.k {
                self.val_nz = Some(f_new);
            }
        }
        true
    }

    /// argmax over j in S of f(S u {t} \ {j}); ties resolve to the smallest
    /// index because the scan is ascending and the comparison is strict.
    fn best_single_swap(&mut self, pt: &StreamPoint) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for out in 0..self.solution.len() {
            let mut cand: Vec<&StreamPoint> = self
                .solution
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != out)
                .map(|(_, p)| p)
                .collect();
            cand.push(pt);
            cand.sort_by_key(|p| p.index);
            let mut counter = self.counter;
            let f_new = f_of(&cand, &self.c, &mut counter);
            self.counter = counter;
            if best.is_none_or(|(_, bf)| f_new > bf) {
                best = Some((out, f_new));
            }
        }
        best
    }

    fn apply_single_swap(&mut self, out_pos: usize, pt: StreamPoint, f_new: f64, keep_stash: bool) {
        let removed = self.solution.remove(out_pos);
        Self::insert_sorted(&mut self.solution, pt);
        if keep_stash {
            Self::insert_sorted(&mut self.stash, removed);
        }
        self.accepted_swaps.push((self.f_current, f_new));
        self.f_current = f_new;
        self.swap_count += 1;
    }

    /// One step of the stash-free online greedy algorithm: swap in the new
    /// point whenever the best single swap strictly improves f(S).
    pub fn online_greedy_step(&mut self, pt: StreamPoint) -> Result<()> {
        if self.try_fill(&pt) {
            return Ok(());
        }
        if let Some((out_pos, f_new)) = self.best_single_swap(&pt) {
            if f_new > self.f_current {
                self.apply_single_swap(out_pos, pt, f_new, false);
            }
        }
        Ok(())
    }

    /// One step of the stash-based online local search: a swap must improve
    /// f(S) by a factor > alpha, the displaced index joins the stash, and
    /// single-swap local search runs to a fixpoint.
    pub fn online_lss_step(&mut self, pt: StreamPoint) -> Result<()> {
        if self.try_fill(&pt) {
            return Ok(());
        }
        if let Some((out_pos, f_new)) = self.best_single_swap(&pt) {
            if f_new > self.alpha * self.f_current {
                self.apply_single_swap(out_pos, pt, f_new, true);
                self.local_search_1()?;
            }
        }
        Ok(())
    }

    /// Repeats (a in S, b in T) swaps with ratio > alpha until none remains.
    /// Scan order: a ascending in S, b ascending in T.
    pub fn local_search_1(&mut self) -> Result<()> {
        let cap = 10 * self.k * self.stash.len().max(1);
        let mut iters = 0usize;
        loop {
            let mut chosen: Option<(usize, usize, f64)> = None;
            'scan: for a in 0..self.solution.len() {
                for b in 0..self.stash.len() {
                    let mut cand: Vec<&StreamPoint> = self
                        .solution
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != a)
                        .map(|(_, p)| p)
                        .collect();
                    cand.push(&self.stash[b]);
                    cand.sort_by_key(|p| p.index);
                    let mut counter = self.counter;
                    let f_new = f_of(&cand, &self.c, &mut counter);
                    self.counter = counter;
                    if f_new > self.alpha * self.f_current {
                        match self.order {
                            SearchOrder::FirstImprovement => {
                                chosen = Some((a, b, f_new));
                                break 'scan;
                            }
                            SearchOrder::BestImprovement => {
                                if chosen.is_none_or(|(_, _, cf)| f_new > cf) {
                                    chosen = Some((a, b, f_new));
                                }
                            }
                        }
                    }
                }
            }
            let Some((a, b, f_new)) = chosen else {
                return Ok(());
            };
            let removed = self.solution.remove(a);
            let entered = self.stash.remove(b);
            Self::insert_sorted(&mut self.solution, entered);
            Self::insert_sorted(&mut self.stash, removed);
            self.accepted_swaps.push((self.f_current, f_new));
            self.f_current = f_new;
            self.swap_count += 1;
            iters += 1;
            if iters > cap {
                return Err(Error::SearchCap { cap });
            }
        }
    }

    /// One step of the 2-neighborhood algorithm: candidate moves are all
    /// single swaps with the new point and all double swaps with the buffered
    /// previous point, the global argmax is applied when it beats
    /// alpha * f(S) (single swaps preferred on ties), then 2-neighborhood
    /// local search runs to a fixpoint. The previous-point buffer is always
    /// refreshed, accepted or not.
    pub fn online_two_neighbor_step(&mut self, pt: StreamPoint) -> Result<()> {
        if self.try_fill(&pt) {
            self.prev = Some(pt);
            return Ok(());
        }

        let best_single = self.best_single_swap(&pt);

        let prev = self.prev.clone();
        let mut best_double: Option<(usize, usize, f64)> = None;
        if let Some(prev_pt) = prev.as_ref() {
            let prev_in_s = self.solution.iter().any(|p| p.index == prev_pt.index);
            if prev_pt.index != pt.index && !prev_in_s && self.solution.len() >= 2 {
                for a in 0..self.solution.len() {
                    for b in (a + 1)..self.solution.len() {
                        let mut cand: Vec<&StreamPoint> = self
                            .solution
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| *i != a && *i != b)
                            .map(|(_, p)| p)
                            .collect();
                        cand.push(prev_pt);
                        cand.push(&pt);
                        cand.sort_by_key(|p| p.index);
                        let mut counter = self.counter;
                        let f_new = f_of(&cand, &self.c, &mut counter);
                        self.counter = counter;
                        if best_double.is_none_or(|(_, _, bf)| f_new > bf) {
                            best_double = Some((a, b, f_new));
                        }
                    }
                }
            }
        }

        let single_f = best_single.map(|(_, f)| f).unwrap_or(f64::NEG_INFINITY);
        let double_f = best_double
            .map(|(_, _, f)| f)
            .unwrap_or(f64::NEG_INFINITY);

        let threshold = self.alpha * self.f_current;
        if single_f.max(double_f) > threshold {
            // ties between a single and a double swap prefer the single swap
            if single_f >= double_f {
                let (out_pos, f_new) = best_single.expect("single_f is finite");
                self.apply_single_swap(out_pos, pt.clone(), f_new, true);
            } else {
                let (a, b, f_new) = best_double.expect("double_f is finite");
                let prev_pt = prev.clone().expect("double swap requires a buffered point");
                // remove higher position first so indices stay valid
                let removed_b = self.solution.remove(b);
                let removed_a = self.solution.remove(a);
                // the buffered point may sit in the stash; pull it out first
                if let Some(pos) = self.stash.iter().position(|p| p.index == prev_pt.index) {
                    self.stash.remove(pos);
                }
                Self::insert_sorted(&mut self.solution, prev_pt);
                Self::insert_sorted(&mut self.solution, pt.clone());
                Self::insert_sorted(&mut self.stash, removed_a);
                Self::insert_sorted(&mut self.stash, removed_b);
                self.accepted_swaps.push((self.f_current, f_new));
                self.f_current = f_new;
                // a double move displaces two indices and counts as two swaps
                self.swap_count += 2;
            }
            self.local_search_2()?;
        }
        self.prev = Some(pt);
        Ok(())
    }

    /// First-improvement scan over N_2(S, T): single swaps first (ascending),
    /// then double swaps in lexicographic order, until no move has ratio
    /// > alpha.
    pub fn local_search_2(&mut self) -> Result<()> {
        #[derive(Clone, Copy)]
        enum Move {
            Single(usize, usize),
            Double(usize, usize, usize, usize),
        }
        let cap = 10 * self.k * self.stash.len().max(1);
        let mut iters = 0usize;
        loop {
            let mut chosen: Option<(Move, f64)> = None;
            let mut consider = |mv: Move, f_new: f64, order: SearchOrder| -> bool {
                if order == SearchOrder::FirstImprovement {
                    chosen = Some((mv, f_new));
                    true
                } else {
                    if chosen.as_ref().is_none_or(|(_, cf)| f_new > *cf) {
                        chosen = Some((mv, f_new));
                    }
                    false
                }
            };

            'scan: {
                for a in 0..self.solution.len() {
                    for b in 0..self.stash.len() {
                        let mut cand: Vec<&StreamPoint> = self
                            .solution
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| *i != a)
                            .map(|(_, p)| p)
                            .collect();
                        cand.push(&self.stash[b]);
                        cand.sort_by_key(|p| p.index);
                        let mut counter = self.counter;
                        let f_new = f_of(&cand, &self.c, &mut counter);
                        self.counter = counter;
                        if f_new > self.alpha * self.f_current
                            && consider(Move::Single(a, b), f_new, self.order)
                        {
                            break 'scan;
                        }
                    }
                }
                for a in 0..self.solution.len() {
                    for b in (a + 1)..self.solution.len() {
                        for c1 in 0..self.stash.len() {
                            for c2 in (c1 + 1)..self.stash.len() {
                                let mut cand: Vec<&StreamPoint> = self
                                    .solution
                                    .iter()
                                    .enumerate()
                                    .filter(|(i, _)| *i != a && *i != b)
                                    .map(|(_, p)| p)
                                    .collect();
                                cand.push(&self.stash[c1]);
                                cand.push(&self.stash[c2]);
                                cand.sort_by_key(|p| p.index);
                                let mut counter = self.counter;
                                let f_new = f_of(&cand, &self.c, &mut counter);
                                self.counter = counter;
                                if f_new > self.alpha * self.f_current
                                    && consider(Move::Double(a, b, c1, c2), f_new, self.order)
                                {
                                    break 'scan;
                                }
                            }
                        }
                    }
                }
            }

            let Some((mv, f_new)) = chosen else {
                return Ok(());
            };
            match mv {
                Move::Single(a, b) => {
                    let removed = self.solution.remove(a);
                    let entered = self.stash.remove(b);
                    Self::insert_sorted(&mut self.solution, entered);
                    Self::insert_sorted(&mut self.stash, removed);
                    self.swap_count += 1;
                }
                Move::Double(a, b, c1, c2) => {
                    let removed_b = self.solution.remove(b);
                    let removed_a = self.solution.remove(a);
                    let entered_2 = self.stash.remove(c2);
                    let entered_1 = self.stash.remove(c1);
                    Self::insert_sorted(&mut self.solution, entered_1);
                    Self::insert_sorted(&mut self.solution, entered_2);
                    Self::insert_sorted(&mut self.stash, removed_a);
                    Self::insert_sorted(&mut self.stash, removed_b);
                    self.swap_count += 2;
                }
            }
            self.accepted_swaps.push((self.f_current, f_new));
            self.f_current = f_new;
            iters += 1;
            if iters > cap {
                return Err(Error::SearchCap { cap });
            }
        }
    }
}

/// All size-|S| subsets of S u T differing from S in at most r elements,
/// including S itself. Only r in {1, 2} is supported.
pub fn enumerate_neighborhood(s: &Subset, t: &Subset, r: usize) -> Result<Vec<Subset>> {
    if !(1..=2).contains(&r) {
        return Err(Error::Config(format!("neighborhood radius {r} unsupported")));
    }
    if s.indices().iter().any(|i| t.contains(*i)) {
        return Err(Error::Config("S and T must be disjoint".into()));
    }
    let s_ids = s.indices();
    let t_ids = t.indices();
    let mut out = vec![s.clone()];
    for j in 1..=r.min(s_ids.len()).min(t_ids.len()) {
        for drop in combinations(s_ids.len(), j) {
            for add in combinations(t_ids.len(), j) {
                let mut ids: Vec<usize> = s_ids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !drop.contains(i))
                    .map(|(_, &x)| x)
                    .collect();
                ids.extend(add.iter().map(|&i| t_ids[i]));
                out.push(Subset::from_unsorted(ids).expect("disjoint sets give distinct ids"));
            }
        }
    }
    Ok(out)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Streaming partition greedy: partition i picks the argmax of
/// f(S_{i-1} u {t}) over its block of the stream and commits it at the
/// block boundary. The committed item must have a nonzero value.
pub struct PartitionGreedy {
    n: usize,
    k: usize,
    c: DMatrix<f64>,
    committed: Vec<StreamPoint>,
    f_committed: f64,
    current_partition: usize,
    best: Option<(StreamPoint, f64)>,
    next_t: usize,
    pub counter: DetCounter,
}

impl PartitionGreedy {
    pub fn new(n: usize, k: usize, c: DMatrix<f64>) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("need 1 <= k <= n, got k={k}, n={n}")));
        }
        Ok(PartitionGreedy {
            n,
            k,
            c,
            committed: Vec::new(),
            f_committed: 1.0,
            current_partition: 1,
            best: None,
            next_t: 0,
            counter: DetCounter::new(),
        })
    }

    /// Partition number of 0-based stream position t: ceil((t+1) * k / n).
    fn partition_of(&self, t: usize) -> usize {
        ((t + 1) * self.k).div_ceil(self.n)
    }

    fn commit_best(&mut self) {
        if let Some((pt, f)) = self.best.take() {
            if f > 0.0 {
                InferenceState::insert_sorted(&mut self.committed, pt);
                self.f_committed = f;
            }
        }
    }

    pub fn step(&mut self, pt: StreamPoint) -> Result<()> {
        if self.next_t >= self.n {
            return Err(Error::StreamOverrun {
                declared: self.n,
                got: self.next_t,
            });
        }
        let i = self.partition_of(self.next_t);
        if i > self.current_partition {
            self.commit_best();
            self.current_partition = i;
        }
        let mut cand: Vec<&StreamPoint> = self.committed.iter().collect();
        cand.push(&pt);
        cand.sort_by_key(|p| p.index);
        let f_new = f_of(&cand, &self.c, &mut self.counter);
        if self.best.as_ref().is_none_or(|(_, bf)| f_new > *bf) {
            self.best = Some((pt, f_new));
        }
        self.next_t += 1;
        Ok(())
    }

    /// Commits the final partition and returns the solution.
    pub fn finish(mut self) -> (Subset, f64, DetCounter) {
        self.commit_best();
        let subset = Subset::from_unsorted(self.committed.iter().map(|p| p.index).collect())
            .expect("committed indices are distinct");
        let f = if self.committed.is_empty() {
            1.0
        } else {
            self.f_committed
        };
        (subset, f, self.counter)
    }

    pub fn objective(&self) -> f64 {
        if self.committed.is_empty() {
            1.0
        } else {
            self.f_committed
        }
    }

    pub fn committed_len(&self) -> usize {
        self.committed.len()
    }
}

/// Result of the offline greedy baseline.
#[derive(Clone, Debug)]
pub struct OfflineGreedyResult {
    pub subset: Subset,
    pub value: f64,
    /// True when a round found only zero-valued candidates and stopped early.
    pub stopped_early: bool,
}

/// k rounds over the full ground set; each round adds the argmax of
/// f(S u {j}), ties to the smallest index. Stops early when all candidate
/// values in a round are zero.
pub fn offline_greedy(
    model: &NdppModel,
    k: usize,
    counter: &mut DetCounter,
) -> Result<OfflineGreedyResult> {
    if k > model.n() {
        return Err(Error::Config(format!(
            "k = {k} exceeds ground set size n = {}",
            model.n()
        )));
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut value = 1.0;
    for _round in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..model.n() {
            if chosen.contains(&j) {
                continue;
            }
            let mut ids = chosen.clone();
            ids.push(j);
            let s = Subset::from_unsorted(ids)?;
            let f = f_det(model, &s, counter)?;
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((j, f));
            }
        }
        match best {
            Some((j, f)) if f != 0.0 => {
                chosen.push(j);
                value = f;
            }
            _ => {
                return Ok(OfflineGreedyResult {
                    subset: Subset::from_unsorted(chosen)?,
                    value,
                    stopped_early: true,
                });
            }
        }
    }
    Ok(OfflineGreedyResult {
        subset: Subset::from_unsorted(chosen)?,
        value,
        stopped_early: false,
    })
}

/// Exhaustive MAP oracle: the argmax over all k-subsets and its value.
/// Refuses instances with more than 10^6 candidate subsets. Ties resolve to
/// the lexicographically smallest subset.
pub fn brute_force_map(
    model: &NdppModel,
    k: usize,
    counter: &mut DetCounter,
) -> Result<(Subset, f64)> {
    let n = model.n();
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds n = {n}")));
    }
    let mut count: u128 = 1;
    for i in 0..k {
        count = count * (n - i) as u128 / (i + 1) as u128;
        if count > 1_000_000 {
            return Err(Error::TooLarge(format!(
                "C({n}, {k}) exceeds the 10^6 subset cap"
            )));
        }
    }
    let mut best: Option<(Subset, f64)> = None;
    for ids in combinations(n, k) {
        let s = Subset::new(ids)?;
        let f = f_det(model, &s, counter)?;
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((s, f));
        }
    }
    best.ok_or_else(|| Error::Config("no k-subset exists".into()))
}
