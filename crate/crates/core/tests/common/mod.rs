//! Independent reference implementations used by the integration tests.
//!
//! The measure oracle works straight from raw `(observation byte, action)`
//! pairs with hash maps and exact integer arithmetic for the per-state
//! distances. The transport oracle solves the optimal-transport linear program
//! by enumerating basic feasible solutions over exact rationals.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use playstyle::model::{Action, ObservationTensor, StepRecord, StyleDataset};

pub type Pairs = Vec<(u8, u32)>;

/// Dataset of one-byte observations (shape `[1]`) over `k` discrete actions.
pub fn dataset(pairs: &[(u8, u32)], k: u32) -> StyleDataset {
    let records = pairs
        .iter()
        .map(|&(o, a)| {
            StepRecord::new(
                ObservationTensor::from_bytes(vec![1], vec![o]).unwrap(),
                Action::discrete(a, k).unwrap(),
            )
        })
        .collect();
    StyleDataset::new(None, records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleEncoder {
    Identity,
    Passthrough,
}

impl OracleEncoder {
    pub fn parse_list(spec: &str) -> Vec<Self> {
        spec.split(',')
            .map(|s| match s.trim() {
                "identity" => Self::Identity,
                "passthrough" => Self::Passthrough,
                other => panic!("oracle has no encoder {other}"),
            })
            .collect()
    }

    fn key(self, obs: u8) -> Option<u8> {
        match self {
            Self::Identity => None,
            Self::Passthrough => Some(obs),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMetric {
    W2,
    Bd,
    Bc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleKind {
    Distance,
    Intersection,
    Jaccard,
    Union,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleMeasure {
    pub kind: OracleKind,
    pub metric: OracleMetric,
    pub t: usize,
    /// `true` for count weighting.
    pub frequency: bool,
}

impl OracleMeasure {
    /// `weighting`: `None` for each family's default.
    pub fn named(name: &str, t: usize, weighting: Option<bool>) -> Self {
        use OracleKind::*;
        use OracleMetric::*;
        let (kind, metric) = match name {
            "pd" => (Distance, W2),
            "pd-bd" => (Distance, Bd),
            "ps-int" => (Intersection, W2),
            "ps-int-bd" => (Intersection, Bd),
            "ps-int-bc" => (Intersection, Bc),
            "jaccard" => (Jaccard, W2),
            "ps-union" => (Union, W2),
            "ps-union-bd" => (Union, Bd),
            "ps-union-bc" => (Union, Bc),
            other => panic!("unknown measure {other}"),
        };
        Self {
            kind,
            metric,
            t,
            frequency: weighting.unwrap_or(kind == Distance),
        }
    }
}

type StateKey = (usize, Option<u8>);

fn counts(pairs: &[(u8, u32)], k: u32, encoders: &[OracleEncoder]) -> HashMap<StateKey, Vec<u64>> {
    let mut m: HashMap<StateKey, Vec<u64>> = HashMap::new();
    for &(o, a) in pairs {
        for (e, enc) in encoders.iter().enumerate() {
            m.entry((e, enc.key(o))).or_insert_with(|| vec![0; k as usize])[a as usize] += 1;
        }
    }
    m
}

/// `W₂` under the 0/1 ground metric: the square root of the mass that has to move,
/// `Σᵢ max(aᵢ·n_b − bᵢ·n_a, 0) / (n_a·n_b)`, with an exact integer numerator.
pub fn w2_counts(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb): (u64, u64) = (a.iter().sum(), b.iter().sum());
    let moved: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x * nb).saturating_sub(y * na))
        .sum();
    (moved as f64 / (na * nb) as f64).sqrt()
}

pub fn bc_counts(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb): (u64, u64) = (a.iter().sum(), b.iter().sum());
    if a.iter().zip(b).all(|(&x, &y)| x * nb == y * na) {
        return 1.0;
    }
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| ((x * y) as f64).sqrt()).sum();
    (s / ((na * nb) as f64).sqrt()).min(1.0)
}

pub fn bd_counts(a: &[u64], b: &[u64]) -> f64 {
    let bc = bc_counts(a, b);
    if bc <= 0.0 {
        10.0
    } else {
        (-bc.ln()).clamp(0.0, 10.0)
    }
}

struct PairView {
    raw_intersection: usize,
    union: usize,
    /// `(encoder, count_a, count_b, raw value)` for states passing the threshold.
    states: Vec<(usize, u64, u64, f64)>,
}

fn pair_view(
    m: &OracleMeasure,
    qa: &HashMap<StateKey, Vec<u64>>,
    cb: &HashMap<StateKey, Vec<u64>>,
) -> PairView {
    let keys_a: BTreeSet<&StateKey> = qa.keys().collect();
    let keys_b: BTreeSet<&StateKey> = cb.keys().collect();
    let shared: Vec<&&StateKey> = keys_a.intersection(&keys_b).collect();
    let union = keys_a.union(&keys_b).count();
    let mut states = Vec::new();
    for key in &shared {
        let (a, b) = (&qa[**key], &cb[**key]);
        let (na, nb): (u64, u64) = (a.iter().sum(), b.iter().sum());
        if (na as usize) < m.t || (nb as usize) < m.t {
            continue;
        }
        let raw = match m.metric {
            OracleMetric::W2 => w2_counts(a, b),
            OracleMetric::Bd => bd_counts(a, b),
            OracleMetric::Bc => bc_counts(a, b),
        };
        states.push((key.0, na, nb, raw));
    }
    PairView {
        raw_intersection: shared.len(),
        union,
        states,
    }
}

/// Measure value of `query` against each candidate; `None` when the measure is
/// undefined for lack of comparable states.
pub fn oracle_batch(
    m: &OracleMeasure,
    encoders: &[OracleEncoder],
    k: u32,
    query: &[(u8, u32)],
    candidates: &[Pairs],
) -> Vec<Option<f64>> {
    let q = counts(query, k, encoders);
    let views: Vec<PairView> = candidates
        .iter()
        .map(|c| pair_view(m, &q, &counts(c, k, encoders)))
        .collect();
    let scaled = m.kind != OracleKind::Distance && m.kind != OracleKind::Jaccard && m.metric != OracleMetric::Bc;
    let dbar = if scaled {
        let all: Vec<f64> = views.iter().flat_map(|v| v.states.iter().map(|s| s.3)).collect();
        if all.is_empty() {
            0.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        }
    } else {
        1.0
    };
    let value = |raw: f64| -> f64 {
        if m.metric == OracleMetric::Bc {
            raw
        } else if dbar == 0.0 {
            1.0
        } else {
            (-raw / dbar).exp()
        }
    };
    views
        .iter()
        .map(|v| match m.kind {
            OracleKind::Jaccard => Some(v.raw_intersection as f64 / v.union as f64),
            _ if v.states.is_empty() => match m.kind {
                OracleKind::Union => Some(0.0),
                _ => None,
            },
            OracleKind::Distance => {
                let conditional = |use_b: bool| -> f64 {
                    let mut total = 0.0;
                    let mut used = 0;
                    for e in 0..encoders.len() {
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for &(enc, na, nb, raw) in &v.states {
                            if enc != e {
                                continue;
                            }
                            let w = if !m.frequency {
                                1.0
                            } else if use_b {
                                nb as f64
                            } else {
                                na as f64
                            };
                            num += w * raw;
                            den += w;
                        }
                        if den > 0.0 {
                            total += num / den;
                            used += 1;
                        }
                    }
                    total / used as f64
                };
                Some(-(0.5 * conditional(true) + 0.5 * conditional(false)))
            }
            OracleKind::Intersection | OracleKind::Union => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &(_, na, nb, raw) in &v.states {
                    let w = if m.frequency { (na + nb) as f64 } else { 1.0 };
                    num += w * value(raw);
                    den += w;
                }
                let ps_int = num / den;
                Some(match m.kind {
                    OracleKind::Intersection => ps_int,
                    _ if m.frequency => v.raw_intersection as f64 / v.union as f64 * ps_int,
                    _ => v.states.iter().map(|s| value(s.3)).sum::<f64>() / v.union as f64,
                })
            }
        })
        .collect()
}

// Exact rationals for the transport oracle.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Q {
    n: i128,
    d: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Q {
    pub fn new(n: i128, d: i128) -> Self {
        assert!(d != 0);
        let g = gcd(n, d).max(1);
        let s = if d < 0 { -1 } else { 1 };
        Q { n: s * n / g, d: s * d / g }
    }
    pub fn int(n: i128) -> Self {
        Q { n, d: 1 }
    }
    pub fn zero() -> Self {
        Q::int(0)
    }
    pub fn is_zero(self) -> bool {
        self.n == 0
    }
    pub fn is_negative(self) -> bool {
        self.n < 0
    }
    pub fn add(self, o: Q) -> Q {
        Q::new(self.n * o.d + o.n * self.d, self.d * o.d)
    }
    pub fn sub(self, o: Q) -> Q {
        Q::new(self.n * o.d - o.n * self.d, self.d * o.d)
    }
    pub fn mul(self, o: Q) -> Q {
        Q::new(self.n * o.n, self.d * o.d)
    }
    pub fn div(self, o: Q) -> Q {
        Q::new(self.n * o.d, self.d * o.n)
    }
    pub fn lt(self, o: Q) -> bool {
        self.n * o.d < o.n * self.d
    }
    pub fn to_f64(self) -> f64 {
        self.n as f64 / self.d as f64
    }
}

/// Solves the square system `m x = rhs` exactly; `None` if singular.
fn solve(mut m: Vec<Vec<Q>>, mut rhs: Vec<Q>) -> Option<Vec<Q>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].div(m[col][col]);
                for c in col..n {
                    m[r][c] = m[r][c].sub(f.mul(m[col][c]));
                }
                rhs[r] = rhs[r].sub(f.mul(rhs[col]));
            }
        }
    }
    Some((0..n).map(|i| rhs[i].div(m[i][i])).collect())
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum transport cost `Σ π_ij c_ij` between `p` and `q` over all basic
/// feasible plans (the optimum of a linear program is attained at a vertex).
pub fn transport_lp(p: &[Q], q: &[Q], cost: &dyn Fn(usize, usize) -> Q) -> Q {
    let k = p.len();
    assert_eq!(k, q.len());
    if k == 1 {
        return Q::zero();
    }
    let m = 2 * k - 1;
    let mut best: Option<Q> = None;
    for basis in subsets(k * k, m) {
        // Row sums (k equations) and the first k-1 column sums; the last is implied.
        let mut rows: Vec<Vec<Q>> = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        for i in 0..k {
            rows.push(basis.iter().map(|&c| Q::int((c / k == i) as i128)).collect());
            rhs.push(p[i]);
        }
        for j in 0..k - 1 {
            rows.push(basis.iter().map(|&c| Q::int((c % k == j) as i128)).collect());
            rhs.push(q[j]);
        }
        let Some(x) = solve(rows, rhs) else { continue };
        if x.iter().any(|v| v.is_negative()) {
            continue;
        }
        let total = basis
            .iter()
            .zip(&x)
            .fold(Q::zero(), |acc, (&c, &v)| acc.add(v.mul(cost(c / k, c % k))));
        if best.is_none_or(|b| total.lt(b)) {
            best = Some(total);
        }
    }
    best.expect("the transport polytope is non-empty")
}

pub fn frequencies(counts: &[u64]) -> Vec<Q> {
    let n: u64 = counts.iter().sum();
    counts.iter().map(|&c| Q::new(c as i128, n as i128)).collect()
}

/// `W₂` by exhaustive vertex search with squared ground cost `c2` off the diagonal.
pub fn w2_lp(a: &[u64], b: &[u64], c2: i128) -> f64 {
    let cost = move |i: usize, j: usize| if i == j { Q::zero() } else { Q::int(c2) };
    transport_lp(&frequencies(a), &frequencies(b), &cost).to_f64().sqrt()
}

// Diversity and McNemar references.

/// Plain re-statement of the novelty loop over a full similarity matrix.
pub fn brute_force_diversity(sim: &[Vec<f64>], threshold: f64) -> (usize, Vec<bool>) {
    let mut flags = Vec::new();
    for i in 0..sim.len() {
        let mut novel = true;
        for j in 0..i {
            if sim[i][j] >= threshold {
                novel = false;
            }
        }
        flags.push(novel);
    }
    (flags.iter().filter(|&&f| f).count(), flags)
}

/// Two-sided exact McNemar p-value by enumerating every split of `n` discordant
/// pairs: the total probability of splits no more likely than the observed one.
pub fn mcnemar_enumeration(a_only: u64, b_only: u64) -> f64 {
    let n = (a_only + b_only) as usize;
    if n == 0 {
        return 1.0;
    }
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let observed = row[a_only as usize];
    let extreme: u128 = row.iter().filter(|&&c| c <= observed).sum();
    let total: u128 = 1u128 << n;
    (extreme as f64 / total as f64).min(1.0)
}
