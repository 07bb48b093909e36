//! Finite groups stored as dense multiplication tables.
//!
//! Every element is a dense id in `0..order`. Products, inverses and word
//! distances are plain table lookups, so everything downstream (group
//! diagonals, layers, pooling partitions) indexes into these tables.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type ElemId = usize;

/// Largest group order accepted by the constructors.
pub const MAX_ORDER: usize = 1 << 20;

/// Groups up to this order get an exhaustive associativity check.
const EXHAUSTIVE_CHECK_LIMIT: usize = 64;

/// A finite group with a symmetric generating set and its word metric.
#[derive(Debug, Clone)]
pub struct FiniteGroup {
    order: usize,
    mul_table: Vec<u32>,
    inv_table: Vec<u32>,
    identity: ElemId,
    generators: Vec<ElemId>,
    labels: Option<Vec<String>>,
    word_dist: Vec<usize>,
}

impl PartialEq for FiniteGroup {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.mul_table == other.mul_table
    }
}

impl FiniteGroup {
    /// Builds a group from a row-major `order × order` table where entry
    /// `(g, h)` is the id of `gh`.
    ///
    /// The generating set is closed under inverses and stripped of the
    /// identity; it must reach every element.
    pub fn from_table(
        order: usize,
        table: &[ElemId],
        generators: &[ElemId],
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidOrder(0));
        }
        if order > MAX_ORDER {
            return Err(Error::Capacity {
                requested: order,
                max: MAX_ORDER,
            });
        }
        if table.len() != order * order {
            return Err(Error::InvalidTable(format!(
                "expected {} entries, found {}",
                order * order,
                table.len()
            )));
        }
        if let Some(&bad) = table.iter().find(|&&x| x >= order) {
            return Err(Error::ElementOutOfRange { id: bad, order });
        }
        if let Some(labels) = &labels {
            if labels.len() != order {
                return Err(Error::InvalidTable(format!(
                    "{} labels for {} elements",
                    labels.len(),
                    order
                )));
            }
        }
        let mul_table: Vec<u32> = table.iter().map(|&x| x as u32).collect();
        let at = |a: usize, b: usize| mul_table[a * order + b] as usize;

        // Latin square: every row and column is a permutation.
        let mut seen = vec![usize::MAX; order];
        for a in 0..order {
            for b in 0..order {
                let c = at(a, b);
                if seen[c] == a {
                    return Err(Error::InvalidTable(format!("row {a} repeats element {c}")));
                }
                seen[c] = a;
            }
        }
        let mut seen = vec![usize::MAX; order];
        for b in 0..order {
            for a in 0..order {
                let c = at(a, b);
                if seen[c] == b {
                    return Err(Error::InvalidTable(format!(
                        "column {b} repeats element {c}"
                    )));
                }
                seen[c] = b;
            }
        }

        let identity = (0..order)
            .find(|&e| (0..order).all(|x| at(e, x) == x && at(x, e) == x))
            .ok_or_else(|| Error::InvalidTable("no identity element".into()))?;

        let mut inv_table = vec![0u32; order];
        for g in 0..order {
            let h = (0..order)
                .find(|&h| at(g, h) == identity)
                .ok_or_else(|| Error::InvalidTable(format!("element {g} has no inverse")))?;
            if at(h, g) != identity {
                return Err(Error::InvalidTable(format!(
                    "left and right inverses of {g} differ"
                )));
            }
            inv_table[g] = h as u32;
        }

        let assoc = |a: usize, b: usize, c: usize| at(at(a, b), c) == at(a, at(b, c));
        if order <= EXHAUSTIVE_CHECK_LIMIT {
            for a in 0..order {
                for b in 0..order {
                    for c in 0..order {
                        if !assoc(a, b, c) {
                            return Err(Error::InvalidTable(format!(
                                "associativity fails on ({a}, {b}, {c})"
                            )));
                        }
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(order as u64);
            for _ in 0..10 * order {
                let (a, b, c) = (
                    rng.random_range(0..order),
                    rng.random_range(0..order),
                    rng.random_range(0..order),
                );
                if !assoc(a, b, c) {
                    return Err(Error::InvalidTable(format!(
                        "associativity fails on ({a}, {b}, {c})"
                    )));
                }
            }
        }

        let mut group = FiniteGroup {
            order,
            mul_table,
            inv_table,
            identity,
            generators: Vec::new(),
            labels,
            word_dist: Vec::new(),
        };
        group.set_generators(generators)?;
        Ok(group)
    }

    /// Replaces the generating set (and with it the word metric).
    pub fn with_generators(mut self, generators: &[ElemId]) -> Result<Self> {
        self.set_generators(generators)?;
        Ok(self)
    }

    fn set_generators(&mut self, generators: &[ElemId]) -> Result<()> {
        let mut gens = Vec::with_capacity(2 * generators.len());
        for &s in generators {
            self.check_id(s)?;
            if s != self.identity {
                gens.push(s);
                gens.push(self.inv(s));
            }
        }
        gens.sort_unstable();
        gens.dedup();

        let mut dist = vec![usize::MAX; self.order];
        dist[self.identity] = 0;
        let mut queue = VecDeque::from([self.identity]);
        let mut reached = 1;
        while let Some(g) = queue.pop_front() {
            for &s in &gens {
                let n = self.mul(g, s);
                if dist[n] == usize::MAX {
                    dist[n] = dist[g] + 1;
                    reached += 1;
                    queue.push_back(n);
                }
            }
        }
        if reached != self.order {
            return Err(Error::NotGenerating {
                generators: generators.to_vec(),
                reached,
                order: self.order,
            });
        }
        self.generators = gens;
        self.word_dist = dist;
        Ok(())
    }

    pub fn check_id(&self, id: ElemId) -> Result<()> {
        if id < self.order {
            Ok(())
        } else {
            Err(Error::ElementOutOfRange {
                id,
                order: self.order,
            })
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn mul(&self, a: ElemId, b: ElemId) -> ElemId {
        self.mul_table[a * self.order + b] as usize
    }

    #[inline]
    pub fn inv(&self, g: ElemId) -> ElemId {
        self.inv_table[g] as usize
    }

    pub fn identity(&self) -> ElemId {
        self.identity
    }

    /// Symmetric generating set, sorted by id.
    pub fn generators(&self) -> &[ElemId] {
        &self.generators
    }

    pub fn word_dist(&self, g: ElemId) -> usize {
        self.word_dist[g]
    }

    pub fn word_dists(&self) -> &[usize] {
        &self.word_dist
    }

    pub fn diameter(&self) -> usize {
        self.word_dist.iter().copied().max().unwrap_or(0)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, g: ElemId) -> String {
        match &self.labels {
            Some(l) => l[g].clone(),
            None => g.to_string(),
        }
    }

    /// Looks an element up by label, falling back to a decimal id.
    pub fn find(&self, name: &str) -> Option<ElemId> {
        if let Some(labels) = &self.labels {
            if let Some(i) = labels.iter().position(|l| l == name) {
                return Some(i);
            }
        }
        name.parse::<usize>().ok().filter(|&i| i < self.order)
    }

    /// The full multiplication table, row-major.
    pub fn table(&self) -> Vec<ElemId> {
        self.mul_table.iter().map(|&x| x as usize).collect()
    }

    pub fn is_abelian(&self) -> bool {
        (0..self.order).all(|a| (0..a).all(|b| self.mul(a, b) == self.mul(b, a)))
    }

    /// Elements with word distance at most `k`, sorted by (distance, id).
    pub fn word_ball(&self, k: usize) -> Vec<ElemId> {
        let mut ball: Vec<ElemId> = (0..self.order).filter(|&g| self.word_dist[g] <= k).collect();
        ball.sort_by_key(|&g| (self.word_dist[g], g));
        ball
    }

    /// Ball sizes N_k for k = 0..=diameter.
    pub fn ball_sizes(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.diameter() + 1];
        for &d in &self.word_dist {
            hist[d] += 1;
        }
        hist.iter()
            .scan(0, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }

    /// The cyclic group Z/nZ with generators {1, n-1}.
    pub fn cyclic(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidOrder(0));
        }
        let table: Vec<ElemId> = (0..n * n).map(|i| (i / n + i % n) % n).collect();
        let gens: Vec<ElemId> = if n > 1 { vec![1, n - 1] } else { vec![] };
        Self::from_table(n, &table, &gens, Some((0..n).map(|i| i.to_string()).collect()))
    }

    /// The dihedral group of order 2n, built as C_n ⋊ C_2 with the inversion
    /// automorphism. Element `(k, f)` has id `2k + f`; generators are the
    /// rotation, its inverse and the reflection.
    pub fn dihedral(n: usize) -> Result<Self> {
        let rot = Self::cyclic(n)?;
        let flip = Self::cyclic(2)?;
        let action = vec![(0..n).collect(), (0..n).map(|k| rot.inv(k)).collect()];
        let mut g = Self::semidirect_product(&rot, &flip, &action)?;
        g.labels = Some(
            (0..2 * n)
                .map(|id| {
                    let (k, f) = (id / 2, id % 2);
                    match (k, f) {
                        (0, 0) => "e".to_string(),
                        (0, 1) => "r".to_string(),
                        (1, 0) => "s".to_string(),
                        (1, 1) => "sr".to_string(),
                        (k, 0) => format!("s{k}"),
                        (k, _) => format!("s{k}r"),
                    }
                })
                .collect(),
        );
        Ok(g)
    }

    /// The symmetric group on `n ≤ 7` points, elements in lexicographic
    /// order of their one-line notation, `(ab)(i) = a(b(i))`.
    ///
    /// Generators: the transposition (0 1) and the n-cycle i ↦ i+1.
    pub fn symmetric(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidOrder(0));
        }
        if n > 7 {
            return Err(Error::Capacity {
                requested: (1..=n).product(),
                max: 5040,
            });
        }
        let perms = permutations(n);
        let order = perms.len();
        let index = |p: &[u8]| -> usize {
            // Lehmer code gives the lexicographic rank.
            let mut rank = 0;
            for i in 0..n {
                let smaller = p[i + 1..].iter().filter(|&&x| x < p[i]).count();
                rank = rank * (n - i) + smaller;
            }
            rank
        };
        let mut table = vec![0; order * order];
        let mut buf = vec![0u8; n];
        for (a, pa) in perms.iter().enumerate() {
            for (b, pb) in perms.iter().enumerate() {
                for i in 0..n {
                    buf[i] = pa[pb[i] as usize];
                }
                table[a * order + b] = index(&buf);
            }
        }
        let mut gens = Vec::new();
        if n > 1 {
            let mut t: Vec<u8> = (0..n as u8).collect();
            t.swap(0, 1);
            gens.push(index(&t));
            let c: Vec<u8> = (0..n).map(|i| ((i + 1) % n) as u8).collect();
            gens.push(index(&c));
        }
        let labels = perms
            .iter()
            .map(|p| p.iter().map(|d| d.to_string()).collect::<String>())
            .collect();
        Self::from_table(order, &table, &gens, Some(labels))
    }

    /// Sign (0 even, 1 odd) of each element of [`FiniteGroup::symmetric`].
    pub fn symmetric_parity(n: usize) -> Vec<u8> {
        permutations(n)
            .iter()
            .map(|p| {
                let mut inv = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if p[i] > p[j] {
                            inv += 1;
                        }
                    }
                }
                (inv % 2) as u8
            })
            .collect()
    }

    /// Direct product with the default order cap.
    pub fn direct_product(g: &FiniteGroup, h: &FiniteGroup) -> Result<Self> {
        Self::direct_product_capped(g, h, MAX_ORDER)
    }

    /// G × H with `(g, h)` at id `g·|H| + h`.
    ///
    /// The generating set is every `(s, t)` with `s ∈ S_G ∪ {e}` and
    /// `t ∈ S_H ∪ {e}` except `(e, e)`, so the radius-k ball of the product
    /// is the product of the component balls (3×3 for C_n × C_n at k = 1).
    pub fn direct_product_capped(g: &FiniteGroup, h: &FiniteGroup, max_order: usize) -> Result<Self> {
        let (ng, nh) = (g.order, h.order);
        let order = ng.saturating_mul(nh);
        if order > max_order.min(MAX_ORDER) {
            return Err(Error::Capacity {
                requested: order,
                max: max_order.min(MAX_ORDER),
            });
        }
        let mut table = vec![0; order * order];
        for a in 0..order {
            let (ag, ah) = (a / nh, a % nh);
            for b in 0..order {
                let (bg, bh) = (b / nh, b % nh);
                table[a * order + b] = g.mul(ag, bg) * nh + h.mul(ah, bh);
            }
        }
        let gs: Vec<ElemId> = std::iter::once(g.identity).chain(g.generators.iter().copied()).collect();
        let hs: Vec<ElemId> = std::iter::once(h.identity).chain(h.generators.iter().copied()).collect();
        let gens: Vec<ElemId> = gs
            .iter()
            .flat_map(|&s| hs.iter().map(move |&t| s * nh + t))
            .collect();
        Self::from_table(order, &table, &gens, Some(pair_labels(g, h)))
    }

    /// G ⋊_φ H with `(g, h)(g', h') = (g φ_h(g'), h h')`.
    ///
    /// `action[h]` lists `φ_h(g)` for every `g`. Both the automorphism and
    /// homomorphism conditions are verified exhaustively. Generators are the
    /// embedded component generators `(s, e)` and `(e, t)`.
    pub fn semidirect_product(g: &FiniteGroup, h: &FiniteGroup, action: &[Vec<ElemId>]) -> Result<Self> {
        let (ng, nh) = (g.order, h.order);
        if action.len() != nh {
            return Err(Error::InvalidAction(format!(
                "expected {nh} maps, found {}",
                action.len()
            )));
        }
        for (hi, map) in action.iter().enumerate() {
            if map.len() != ng {
                return Err(Error::InvalidAction(format!("map {hi} has length {}", map.len())));
            }
            let mut hit = vec![false; ng];
            for &x in map {
                if x >= ng || std::mem::replace(&mut hit[x], true) {
                    return Err(Error::InvalidAction(format!("map {hi} is not a permutation")));
                }
            }
            for a in 0..ng {
                for b in 0..ng {
                    if map[g.mul(a, b)] != g.mul(map[a], map[b]) {
                        return Err(Error::InvalidAction(format!(
                            "map {hi} is not an automorphism ({a}·{b})"
                        )));
                    }
                }
            }
        }
        for h1 in 0..nh {
            for h2 in 0..nh {
                let composed = &action[h.mul(h1, h2)];
                if (0..ng).any(|x| composed[x] != action[h1][action[h2][x]]) {
                    return Err(Error::InvalidAction(format!(
                        "φ({h1}·{h2}) ≠ φ({h1})∘φ({h2})"
                    )));
                }
            }
        }
        let order = ng * nh;
        if order > MAX_ORDER {
            return Err(Error::Capacity {
                requested: order,
                max: MAX_ORDER,
            });
        }
        let mut table = vec![0; order * order];
        for a in 0..order {
            let (ag, ah) = (a / nh, a % nh);
            for b in 0..order {
                let (bg, bh) = (b / nh, b % nh);
                table[a * order + b] = g.mul(ag, action[ah][bg]) * nh + h.mul(ah, bh);
            }
        }
        let gens: Vec<ElemId> = g
            .generators
            .iter()
            .map(|&s| s * nh + h.identity)
            .chain(h.generators.iter().map(|&t| g.identity * nh + t))
            .collect();
        Self::from_table(order, &table, &gens, Some(pair_labels(g, h)))
    }
}

fn pair_labels(g: &FiniteGroup, h: &FiniteGroup) -> Vec<String> {
    (0..g.order)
        .flat_map(|a| (0..h.order).map(move |b| format!("({},{})", g.label(a), h.label(b))))
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur: Vec<u8> = (0..n as u8).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).unwrap();
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
    out
}

/// A subgroup H ≤ G with its own local id space.
#[derive(Debug, Clone)]
pub struct Subgroup {
    parent: Arc<FiniteGroup>,
    members: Vec<ElemId>,
    local: Vec<Option<usize>>,
    generators: Vec<ElemId>,
    group: Arc<FiniteGroup>,
}

impl Subgroup {
    /// Verifies that `members` is a subgroup of `parent`.
    pub fn from_members(parent: Arc<FiniteGroup>, members: &[ElemId]) -> Result<Self> {
        let mut members = members.to_vec();
        for &m in &members {
            parent.check_id(m)?;
        }
        members.sort_unstable();
        members.dedup();
        let mut inside = vec![false; parent.order()];
        for &m in &members {
            inside[m] = true;
        }
        if !inside[parent.identity()] {
            return Err(Error::InvalidSubgroup("identity missing".into()));
        }
        for &a in &members {
            if !inside[parent.inv(a)] {
                return Err(Error::InvalidSubgroup(format!("inverse of {a} missing")));
            }
            for &b in &members {
                let c = parent.mul(a, b);
                if !inside[c] {
                    return Err(Error::InvalidSubgroup(format!(
                        "{}·{} = {} leaves the subset",
                        parent.label(a),
                        parent.label(b),
                        parent.label(c)
                    )));
                }
            }
        }
        // Greedy generating set: add the smallest element not yet reached.
        let mut gens = Vec::new();
        let mut reached = closure(&parent, &[]);
        for &m in &members {
            if !reached.contains(&m) {
                gens.push(m);
                reached = closure(&parent, &gens);
            }
        }
        Self::assemble(parent, members, gens)
    }

    /// The smallest subgroup containing `gens`.
    pub fn from_generators(parent: Arc<FiniteGroup>, gens: &[ElemId]) -> Result<Self> {
        for &g in gens {
            parent.check_id(g)?;
        }
        let members = closure(&parent, gens);
        Self::assemble(parent, members, gens.to_vec())
    }

    pub fn trivial(parent: Arc<FiniteGroup>) -> Self {
        let e = parent.identity();
        Self::assemble(parent, vec![e], vec![]).expect("trivial subgroup")
    }

    pub fn whole(parent: Arc<FiniteGroup>) -> Self {
        let gens = parent.generators().to_vec();
        let members = (0..parent.order()).collect();
        Self::assemble(parent, members, gens).expect("whole group")
    }

    fn assemble(parent: Arc<FiniteGroup>, members: Vec<ElemId>, gens: Vec<ElemId>) -> Result<Self> {
        let mut local = vec![None; parent.order()];
        for (i, &m) in members.iter().enumerate() {
            local[m] = Some(i);
        }
        let n = members.len();
        let mut table = vec![0; n * n];
        for (i, &a) in members.iter().enumerate() {
            for (j, &b) in members.iter().enumerate() {
                table[i * n + j] = local[parent.mul(a, b)]
                    .ok_or_else(|| Error::InvalidSubgroup("not closed".into()))?;
            }
        }
        let local_gens: Vec<usize> = gens.iter().filter_map(|&g| local[g]).collect();
        let labels = members.iter().map(|&m| parent.label(m)).collect();
        let group = FiniteGroup::from_table(n, &table, &local_gens, Some(labels))?;
        Ok(Subgroup {
            parent,
            members,
            local,
            generators: gens,
            group: Arc::new(group),
        })
    }

    pub fn parent(&self) -> &Arc<FiniteGroup> {
        &self.parent
    }

    /// Parent ids of the members, sorted.
    pub fn members(&self) -> &[ElemId] {
        &self.members
    }

    pub fn order(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, g: ElemId) -> bool {
        self.local.get(g).is_some_and(|l| l.is_some())
    }

    /// Parent id → local id.
    pub fn local_id(&self, g: ElemId) -> Option<usize> {
        self.local.get(g).copied().flatten()
    }

    pub fn parent_id(&self, local: usize) -> ElemId {
        self.members[local]
    }

    /// Generators in parent ids.
    pub fn generators(&self) -> &[ElemId] {
        &self.generators
    }

    /// H as a standalone group over local ids.
    pub fn as_group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn index(&self) -> usize {
        self.parent.order() / self.order()
    }
}

fn closure(g: &FiniteGroup, gens: &[ElemId]) -> Vec<ElemId> {
    let mut inside = vec![false; g.order()];
    inside[g.identity()] = true;
    let mut queue = VecDeque::from([g.identity()]);
    while let Some(x) = queue.pop_front() {
        for &s in gens {
            let y = g.mul(x, s);
            if !inside[y] {
                inside[y] = true;
                queue.push_back(y);
            }
        }
    }
    (0..g.order()).filter(|&i| inside[i]).collect()
}

/// Representative rule shared by cosets and homogeneous spaces: smallest word
/// distance, ties to the smallest id.
fn closest_to_identity(g: &FiniteGroup, set: &[ElemId]) -> ElemId {
    *set.iter()
        .min_by_key(|&&x| (g.word_dist(x), x))
        .expect("non-empty coset")
}

/// Right cosets Hg with representatives and the pooling blocks P_h.
#[derive(Debug, Clone)]
pub struct CosetPartition {
    subgroup: Subgroup,
    cosets: Vec<Vec<ElemId>>,
    representatives: Vec<ElemId>,
    partitions: Vec<Vec<ElemId>>,
}

impl CosetPartition {
    pub fn right_cosets(subgroup: &Subgroup) -> Self {
        let g = subgroup.parent().clone();
        let mut assigned = vec![false; g.order()];
        let mut cosets = Vec::new();
        for x in 0..g.order() {
            if assigned[x] {
                continue;
            }
            let mut coset: Vec<ElemId> = subgroup.members().iter().map(|&h| g.mul(h, x)).collect();
            coset.sort_unstable();
            for &c in &coset {
                assigned[c] = true;
            }
            cosets.push(coset);
        }
        let representatives: Vec<ElemId> = cosets.iter().map(|c| closest_to_identity(&g, c)).collect();
        let partitions = subgroup
            .members()
            .iter()
            .map(|&h| representatives.iter().map(|&r| g.mul(h, r)).collect())
            .collect();
        CosetPartition {
            subgroup: subgroup.clone(),
            cosets,
            representatives,
            partitions,
        }
    }

    pub fn subgroup(&self) -> &Subgroup {
        &self.subgroup
    }

    pub fn cosets(&self) -> &[Vec<ElemId>] {
        &self.cosets
    }

    pub fn representatives(&self) -> &[ElemId] {
        &self.representatives
    }

    /// `partitions()[i]` is the block P_h for the subgroup element with local id `i`.
    pub fn partitions(&self) -> &[Vec<ElemId>] {
        &self.partitions
    }
}

/// X = G/H represented by one element per left coset gH.
#[derive(Debug, Clone)]
pub struct HomogeneousSpace {
    group: Arc<FiniteGroup>,
    stabilizer: Subgroup,
    representatives: Vec<ElemId>,
    coset_of: Vec<usize>,
}

impl HomogeneousSpace {
    /// Representatives chosen closest to the identity (ties to smallest id).
    pub fn new(stabilizer: &Subgroup) -> Self {
        let g = stabilizer.parent().clone();
        let mut coset_of = vec![usize::MAX; g.order()];
        let mut representatives = Vec::new();
        for x in 0..g.order() {
            if coset_of[x] != usize::MAX {
                continue;
            }
            let coset: Vec<ElemId> = stabilizer.members().iter().map(|&h| g.mul(x, h)).collect();
            for &c in &coset {
                coset_of[c] = representatives.len();
            }
            representatives.push(closest_to_identity(&g, &coset));
        }
        HomogeneousSpace {
            group: g,
            stabilizer: stabilizer.clone(),
            representatives,
            coset_of,
        }
    }

    /// Uses caller-chosen representatives; exactly one per left coset.
    pub fn with_representatives(stabilizer: &Subgroup, reps: &[ElemId]) -> Result<Self> {
        let base = Self::new(stabilizer);
        let g = &base.group;
        for &r in reps {
            g.check_id(r)?;
        }
        if reps.len() != base.representatives.len() {
            return Err(Error::InvalidRepresentatives(format!(
                "{} representatives for {} cosets",
                reps.len(),
                base.representatives.len()
            )));
        }
        let mut reordered = vec![usize::MAX; reps.len()];
        for &r in reps {
            let c = base.coset_of[r];
            if reordered[c] != usize::MAX {
                return Err(Error::InvalidRepresentatives(format!(
                    "two representatives in the coset of {}",
                    g.label(r)
                )));
            }
            reordered[c] = r;
        }
        Ok(HomogeneousSpace {
            representatives: reordered,
            ..base
        })
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn stabilizer(&self) -> &Subgroup {
        &self.stabilizer
    }

    pub fn representatives(&self) -> &[ElemId] {
        &self.representatives
    }

    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Index of the representative x with gH = xH.
    pub fn coset_of(&self, g: ElemId) -> usize {
        self.coset_of[g]
    }
}
