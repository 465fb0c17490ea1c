//! DPLL with two watched literals and chronological backtracking.
//!
//! Branching always takes the lowest unassigned variable and tries `true`
//! first, so the search walks assignments in lexicographic order. Clauses
//! added after a model was returned only remove models, which makes it
//! sound to resume the walk from that model instead of starting over.

/// A signed, 1-based variable id.
pub type Lit = i32;

const UNSET: i8 = 0;

#[derive(Debug, Clone, Copy)]
struct Decision {
    /// Trail length before the decision literal was pushed.
    trail_at: usize,
    lit: Lit,
    flipped: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Solver {
    n_vars: usize,
    clauses: Vec<Vec<Lit>>,
    /// Clause ids watching each literal, indexed by [`Solver::slot`].
    watches: Vec<Vec<u32>>,
    value: Vec<i8>,
    /// Trail index of each assigned variable.
    pos: Vec<usize>,
    trail: Vec<Lit>,
    qhead: usize,
    decisions: Vec<Decision>,
    /// No variable below this one is unassigned.
    scan: usize,
    /// Clauses added since the last solve, checked before searching.
    pending: Vec<u32>,
    unsat: bool,
    /// Statistics.
    pub n_decisions: u64,
    pub n_conflicts: u64,
}

fn var(l: Lit) -> usize {
    l.unsigned_abs() as usize
}

impl Solver {
    pub fn new(n_vars: usize) -> Self {
        Solver {
            n_vars,
            watches: vec![Vec::new(); 2 * (n_vars + 1)],
            value: vec![UNSET; n_vars + 1],
            pos: vec![0; n_vars + 1],
            scan: 1,
            ..Default::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_clauses(&self) -> usize {
        self.clauses.len()
    }

    fn slot(l: Lit) -> usize {
        2 * var(l) + usize::from(l < 0)
    }

    fn lit_value(&self, l: Lit) -> i8 {
        let v = self.value[var(l)];
        if l < 0 {
            -v
        } else {
            v
        }
    }

    /// Adds a clause; allowed at any time, including between solves.
    pub fn add_clause(&mut self, lits: &[Lit]) {
        let mut c: Vec<Lit> = lits.to_vec();
        for &l in &c {
            assert!(l != 0 && var(l) <= self.n_vars, "literal {l} out of range");
        }
        c.sort_unstable_by_key(|&l| (var(l), l));
        c.dedup();
        if c.windows(2).any(|w| w[0] == -w[1]) {
            return;
        }
        if c.is_empty() {
            self.unsat = true;
            return;
        }
        let id = self.clauses.len() as u32;
        self.clauses.push(c);
        self.rewatch(id);
        self.pending.push(id);
    }

    /// Orders the clause so its first two literals are the best watches:
    /// true, then unassigned, then false assigned latest.
    fn rewatch(&mut self, id: u32) {
        let rank = |s: &Solver, l: Lit| -> (i8, usize) {
            match s.lit_value(l) {
                1 => (0, 0),
                0 => (1, 0),
                _ => (2, usize::MAX - s.pos[var(l)]),
            }
        };
        let old: Vec<Lit> = self.clauses[id as usize].iter().take(2).copied().collect();
        for l in old {
            let w = &mut self.watches[Self::slot(l)];
            if let Some(p) = w.iter().position(|&c| c == id) {
                w.swap_remove(p);
            }
        }
        let mut c = std::mem::take(&mut self.clauses[id as usize]);
        for k in 0..c.len().min(2) {
            let best = (k..c.len()).min_by_key(|&i| rank(self, c[i])).unwrap();
            c.swap(k, best);
        }
        for &l in c.iter().take(2) {
            self.watches[Self::slot(l)].push(id);
        }
        self.clauses[id as usize] = c;
    }

    fn assign(&mut self, l: Lit) {
        self.value[var(l)] = if l > 0 { 1 } else { -1 };
        self.pos[var(l)] = self.trail.len();
        self.trail.push(l);
    }

    /// Unit propagation; returns a falsified clause on conflict.
    fn propagate(&mut self) -> Option<u32> {
        while self.qhead < self.trail.len() {
            let falsified = -self.trail[self.qhead];
            self.qhead += 1;
            let slot = Self::slot(falsified);
            let mut ws = std::mem::take(&mut self.watches[slot]);
            let mut i = 0;
            let mut conflict = None;
            while i < ws.len() {
                let id = ws[i];
                let c = &mut self.clauses[id as usize];
                if c.len() == 1 {
                    conflict = Some(id);
                    break;
                }
                if c[0] == falsified {
                    c.swap(0, 1);
                }
                let other = c[0];
                let ov = {
                    let v = self.value[var(other)];
                    if other < 0 {
                        -v
                    } else {
                        v
                    }
                };
                if ov == 1 {
                    i += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..c.len() {
                    let l = c[k];
                    let v = self.value[var(l)];
                    let lv = if l < 0 { -v } else { v };
                    if lv != -1 {
                        c.swap(1, k);
                        self.watches[Self::slot(l)].push(id);
                        ws.swap_remove(i);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                if ov == -1 {
                    conflict = Some(id);
                    break;
                }
                self.assign(other);
                i += 1;
            }
            let rest = std::mem::take(&mut self.watches[slot]);
            ws.extend(rest);
            self.watches[slot] = ws;
            if conflict.is_some() {
                return conflict;
            }
        }
        None
    }

    fn undo_to(&mut self, len: usize) {
        for &l in &self.trail[len..] {
            let v = var(l);
            self.value[v] = UNSET;
            self.scan = self.scan.min(v);
        }
        self.trail.truncate(len);
        self.qhead = self.qhead.min(len);
    }

    /// Flips the latest untried decision. Returns false when none is left.
    fn backtrack(&mut self) -> bool {
        while let Some(d) = self.decisions.pop() {
            self.undo_to(d.trail_at);
            if !d.flipped {
                self.decisions.push(Decision {
                    trail_at: d.trail_at,
                    lit: -d.lit,
                    flipped: true,
                });
                self.assign(-d.lit);
                return true;
            }
        }
        false
    }

    /// Backtracks until clause `id` is no longer falsified, then asserts
    /// it if it became unit.
    fn repair(&mut self, id: u32) -> bool {
        loop {
            self.rewatch(id);
            let c = &self.clauses[id as usize];
            let first = self.lit_value(c[0]);
            let second = c.get(1).map_or(-1, |&l| self.lit_value(l));
            match (first, second) {
                (-1, _) => {
                    self.n_conflicts += 1;
                    if !self.backtrack() {
                        return false;
                    }
                }
                (0, -1) => {
                    let l = c[0];
                    self.assign(l);
                    return true;
                }
                _ => return true,
            }
        }
    }

    /// Finds the next model in search order, or `None` when none is left.
    /// The model is indexed by variable id; index 0 is unused.
    pub fn solve(&mut self) -> Option<Vec<bool>> {
        if self.unsat {
            return None;
        }
        // A returned model is a full assignment; a clause that only
        // removes models leaves everything before it refuted.
        for id in std::mem::take(&mut self.pending) {
            if !self.repair(id) {
                self.unsat = true;
                return None;
            }
        }
        loop {
            if self.propagate().is_some() {
                self.n_conflicts += 1;
                if !self.backtrack() {
                    self.unsat = true;
                    return None;
                }
                continue;
            }
            while self.scan <= self.n_vars && self.value[self.scan] != UNSET {
                self.scan += 1;
            }
            if self.scan > self.n_vars {
                let model = self.value.iter().map(|&v| v == 1).collect();
                return Some(model);
            }
            self.n_decisions += 1;
            let lit = self.scan as Lit;
            self.decisions.push(Decision {
                trail_at: self.trail.len(),
                lit,
                flipped: false,
            });
            self.assign(lit);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(n: usize, cnf: &[&[Lit]]) -> Option<Vec<bool>> {
        let mut s = Solver::new(n);
        for c in cnf {
            s.add_clause(c);
        }
        s.solve()
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(solve(1, &[&[1]]), Some(vec![false, true]));
        assert_eq!(solve(1, &[&[1], &[-1]]), None);
        assert_eq!(solve(2, &[&[]]), None);
        // Lowest variable true first.
        assert_eq!(solve(2, &[&[1, 2]]), Some(vec![false, true, true]));
        assert_eq!(solve(2, &[&[-1, -2], &[1, 2]]), Some(vec![false, true, false]));
    }

    #[test]
    fn pigeonhole_four_into_three() {
        let (p, h) = (4usize, 3usize);
        let x = |i: usize, j: usize| (i * h + j + 1) as Lit;
        let mut s = Solver::new(p * h);
        for i in 0..p {
            s.add_clause(&(0..h).map(|j| x(i, j)).collect::<Vec<_>>());
        }
        for j in 0..h {
            for a in 0..p {
                for b in a + 1..p {
                    s.add_clause(&[-x(a, j), -x(b, j)]);
                }
            }
        }
        assert!(s.solve().is_none());
    }

    #[test]
    fn enumeration_by_blocking_is_exhaustive() {
        // Exactly one of three, enumerated by blocking each model.
        let mut s = Solver::new(3);
        s.add_clause(&[1, 2, 3]);
        for (a, b) in [(1, 2), (1, 3), (2, 3)] {
            s.add_clause(&[-a, -b]);
        }
        let mut seen = Vec::new();
        while let Some(m) = s.solve() {
            let v = (1..=3).find(|&v| m[v]).unwrap();
            seen.push(v);
            s.add_clause(&[-(v as Lit)]);
        }
        assert_eq!(seen, [1, 2, 3]);
    }

    #[test]
    fn clause_added_after_model_with_lower_level_literals() {
        let mut s = Solver::new(4);
        s.add_clause(&[1, 2, 3, 4]);
        let m = s.solve().unwrap();
        assert!(m[1..].iter().all(|&b| b));
        // Falsified by the model, at the lowest decision levels.
        s.add_clause(&[-1, -2]);
        let m = s.solve().unwrap();
        assert!(!(m[1] && m[2]));
        assert_eq!(&m[1..], &[true, false, true, true]);
        s.add_clause(&[-1]);
        let m = s.solve().unwrap();
        assert_eq!(&m[1..], &[false, true, true, true]);
    }
}
