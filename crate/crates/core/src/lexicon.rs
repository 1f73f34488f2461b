//! Subgraph lexicon over a template universe and multi-hot structural
//! fingerprints of graphs against it.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::{GradientLabel, StateLabel, TemplateLabel};
use crate::error::{Error, Result};
use crate::qig::Qig;

pub const DEFAULT_K_MAX: usize = 4;
pub const DEFAULT_LEXICON_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconOptions {
    pub k_max: usize,
    /// Largest number of entries that may be materialised.
    pub cap: usize,
}

impl Default for LexiconOptions {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            cap: DEFAULT_LEXICON_CAP,
        }
    }
}

/// A view of one lexicon entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexiconEntry<'a> {
    pub index: usize,
    ids: &'a [u32],
    universe: &'a [TemplateLabel],
}

impl<'a> LexiconEntry<'a> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Universe ids of the labels, ascending.
    pub fn ids(&self) -> &'a [u32] {
        self.ids
    }

    pub fn labels(&self) -> impl Iterator<Item = &'a TemplateLabel> + 'a {
        let u = self.universe;
        self.ids.iter().map(move |&i| &u[i as usize])
    }

    pub fn to_labels(&self) -> Vec<TemplateLabel> {
        self.labels().cloned().collect()
    }
}

/// Ordered set of label sets of size 1..=K_max. Multi-label entries span at
/// least two variables. Ordering is lexicographic on the sorted label
/// sequence, so a set precedes its extensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphLexicon {
    k_max: usize,
    universe: Vec<TemplateLabel>,
    label_ids: HashMap<TemplateLabel, u32>,
    /// Variable index of each universe label.
    variable_of: Vec<u32>,
    entries: Vec<Box<[u32]>>,
    lookup: HashMap<Box<[u32]>, u32>,
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// All nine (state, gradient) labels of each variable.
pub fn full_universe<'a>(variables: impl IntoIterator<Item = &'a str>) -> BTreeSet<TemplateLabel> {
    let mut out = BTreeSet::new();
    for v in variables {
        for s in StateLabel::ALL {
            for g in GradientLabel::ALL {
                out.insert(TemplateLabel::new(v, s, g));
            }
        }
    }
    out
}

/// Labels appearing as nodes in any of the graphs.
pub fn observed_universe<'a>(graphs: impl IntoIterator<Item = &'a Qig>) -> BTreeSet<TemplateLabel> {
    graphs.into_iter().flat_map(|g| g.labels().cloned()).collect()
}

/// Builds the lexicon over `variables`. With `restrict_to`, the universe is
/// the restricted labels of those variables; otherwise all nine labels per
/// variable.
pub fn build_lexicon<'a>(
    variables: impl IntoIterator<Item = &'a str>,
    options: LexiconOptions,
    restrict_to: Option<&BTreeSet<TemplateLabel>>,
) -> Result<SubgraphLexicon> {
    if options.k_max == 0 {
        return Err(Error::InvalidSpec("K_max must be at least 1".into()));
    }
    let variables: BTreeSet<&str> = variables.into_iter().collect();
    let universe: Vec<TemplateLabel> = match restrict_to {
        Some(set) => set.iter().filter(|l| variables.contains(l.variable())).cloned().collect(),
        None => full_universe(variables.iter().copied()).into_iter().collect(),
    };
    SubgraphLexicon::from_universe(universe, options)
}

impl SubgraphLexicon {
    /// Enumerates every admissible entry over an explicit label universe.
    pub fn from_universe(universe: impl IntoIterator<Item = TemplateLabel>, options: LexiconOptions) -> Result<Self> {
        let universe: Vec<TemplateLabel> = universe.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let count = Self::count_entries(&universe, options.k_max);
        if count > options.cap as u128 {
            return Err(Error::LexiconTooLarge { cap: options.cap });
        }

        let mut var_index: HashMap<&str, u32> = HashMap::new();
        let variable_of: Vec<u32> = universe
            .iter()
            .map(|l| {
                let next = var_index.len() as u32;
                *var_index.entry(l.variable()).or_insert(next)
            })
            .collect();

        let mut entries: Vec<Box<[u32]>> = Vec::with_capacity(count as usize);
        let mut stack: Vec<u32> = Vec::with_capacity(options.k_max);
        fn rec(
            start: u32,
            m: u32,
            k_max: usize,
            variable_of: &[u32],
            stack: &mut Vec<u32>,
            out: &mut Vec<Box<[u32]>>,
        ) {
            for i in start..m {
                stack.push(i);
                let multi_var = stack.len() == 1 || stack.iter().any(|&j| variable_of[j as usize] != variable_of[stack[0] as usize]);
                if multi_var {
                    out.push(stack.clone().into_boxed_slice());
                }
                if stack.len() < k_max {
                    rec(i + 1, m, k_max, variable_of, stack, out);
                }
                stack.pop();
            }
        }
        rec(0, universe.len() as u32, options.k_max, &variable_of, &mut stack, &mut entries);
        debug_assert_eq!(entries.len() as u128, count);

        let lookup = entries.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();
        let label_ids = universe.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect();
        Ok(Self {
            k_max: options.k_max,
            universe,
            label_ids,
            variable_of,
            entries,
            lookup,
        })
    }

    /// Number of admissible entries without materialising them.
    pub fn count_entries(universe: &[TemplateLabel], k_max: usize) -> u128 {
        let mut per_var: HashMap<&str, u128> = HashMap::new();
        for l in universe {
            *per_var.entry(l.variable()).or_insert(0) += 1;
        }
        let m = universe.len() as u128;
        let mut total = if k_max >= 1 { m } else { 0 };
        for s in 2..=k_max as u128 {
            let all = binomial(m, s);
            let single: u128 = per_var.values().map(|&c| binomial(c, s)).sum();
            total = total.saturating_add(all - single);
        }
        total
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn universe(&self) -> &[TemplateLabel] {
        &self.universe
    }

    pub fn label_id(&self, label: &TemplateLabel) -> Option<u32> {
        self.label_ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &TemplateLabel {
        &self.universe[id as usize]
    }

    pub fn entry(&self, index: usize) -> LexiconEntry<'_> {
        LexiconEntry {
            index,
            ids: &self.entries[index],
            universe: &self.universe,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = LexiconEntry<'_>> + '_ {
        (0..self.entries.len()).map(|i| self.entry(i))
    }

    /// Index of the entry with exactly these universe ids (ascending).
    pub fn find_ids(&self, ids: &[u32]) -> Option<usize> {
        self.lookup.get(ids).map(|&i| i as usize)
    }

    pub fn find(&self, labels: &[TemplateLabel]) -> Option<usize> {
        let mut ids = labels.iter().map(|l| self.label_id(l)).collect::<Option<Vec<u32>>>()?;
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != labels.len() {
            return None;
        }
        self.find_ids(&ids)
    }

    /// Whether a sorted id set spans enough variables to be an entry.
    pub fn admissible(&self, ids: &[u32]) -> bool {
        ids.len() == 1 || ids.iter().any(|&i| self.variable_of[i as usize] != self.variable_of[ids[0] as usize])
    }

    /// Universe ids of `g`'s nodes, in node order.
    pub fn node_ids(&self, g: &Qig) -> Result<Vec<u32>> {
        g.labels()
            .map(|l| {
                self.label_id(l)
                    .ok_or_else(|| Error::UniverseMismatch(format!("{} (object {})", l, g.object_id())))
            })
            .collect()
    }

    /// Multi-hot fingerprint: bit k is set iff `g` contains entry k.
    pub fn encode(&self, g: &Qig) -> Result<MultiHotVector> {
        let ids = self.node_ids(g)?;
        let mut ones = Vec::new();
        for_each_connected_set(g, self.k_max, |local| {
            let mut key: Vec<u32> = local.iter().map(|&i| ids[i]).collect();
            key.sort_unstable();
            if let Some(k) = self.find_ids(&key) {
                ones.push(k as u32);
            }
        });
        ones.sort_unstable();
        Ok(MultiHotVector { n: self.len(), ones })
    }

    pub fn manifest(&self) -> LexiconManifest {
        LexiconManifest {
            k_max: self.k_max,
            n: self.len(),
            universe: self.universe.clone(),
            entries: self.entries.iter().map(|e| e.iter().map(|&i| self.universe[i as usize].clone()).collect()).collect(),
        }
    }

    pub fn from_manifest(m: &LexiconManifest) -> Result<Self> {
        let lex = Self::from_universe(m.universe.iter().cloned(), LexiconOptions {
            k_max: m.k_max,
            cap: usize::MAX,
        })?;
        let same = lex.len() == m.n
            && m.entries.len() == m.n
            && m.entries.iter().enumerate().all(|(i, e)| lex.find(e) == Some(i));
        if !same {
            return Err(Error::InvalidSpec("lexicon manifest entries do not match its universe".into()));
        }
        Ok(lex)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), &self.manifest())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let m: LexiconManifest = serde_json::from_reader(std::io::BufReader::new(f))?;
        Self::from_manifest(&m)
    }
}

/// Persisted lexicon: universe plus the ordered entry list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconManifest {
    pub k_max: usize,
    pub n: usize,
    pub universe: Vec<TemplateLabel>,
    pub entries: Vec<Vec<TemplateLabel>>,
}

/// Calls `f` once for every connected node set of `g` with at most `k`
/// nodes, given as node indices (connectivity ignores direction).
pub fn for_each_connected_set(g: &Qig, k: usize, mut f: impl FnMut(&[usize])) {
    let n = g.node_count();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in 0..g.edge_count() {
        let (s, d) = g.edge_endpoints(e);
        adj[s].push(d);
        adj[d].push(s);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    // ESU enumeration: each connected set is emitted exactly once, rooted at
    // its smallest vertex.
    fn extend(
        adj: &[Vec<usize>],
        k: usize,
        root: usize,
        sub: &mut Vec<usize>,
        in_sub_or_nbr: &mut Vec<u32>,
        ext: Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        f(sub);
        if sub.len() == k {
            return;
        }
        let mut ext = ext;
        while let Some(w) = ext.pop() {
            let mut next = ext.clone();
            let mut added = Vec::new();
            for &u in &adj[w] {
                if u > root && in_sub_or_nbr[u] == 0 {
                    next.push(u);
                    added.push(u);
                }
            }
            for &u in &added {
                in_sub_or_nbr[u] += 1;
            }
            in_sub_or_nbr[w] += 1;
            sub.push(w);
            extend(adj, k, root, sub, in_sub_or_nbr, next, f);
            sub.pop();
            in_sub_or_nbr[w] -= 1;
            for &u in &added {
                in_sub_or_nbr[u] -= 1;
            }
        }
    }
    let mut mark = vec![0u32; n];
    for v in 0..n {
        let mut sub = vec![v];
        mark[v] += 1;
        let ext: Vec<usize> = adj[v].iter().copied().filter(|&u| u > v).collect();
        for &u in &ext {
            mark[u] += 1;
        }
        extend(&adj, k, v, &mut sub, &mut mark, ext.clone(), &mut f);
        for &u in &ext {
            mark[u] -= 1;
        }
        mark[v] -= 1;
    }
}

/// Sparse multi-hot vector of length `n`: the sorted positions of set bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiHotVector {
    n: usize,
    ones: Vec<u32>,
}

impl MultiHotVector {
    pub fn from_ones(n: usize, mut ones: Vec<u32>) -> Self {
        ones.sort_unstable();
        ones.dedup();
        assert!(ones.last().is_none_or(|&k| (k as usize) < n), "bit index out of range");
        Self { n, ones }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, k: usize) -> bool {
        self.ones.binary_search(&(k as u32)).is_ok()
    }

    pub fn popcount(&self) -> usize {
        self.ones.len()
    }

    pub fn ones(&self) -> &[u32] {
        &self.ones
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = vec![false; self.n];
        for &k in &self.ones {
            bits[k as usize] = true;
        }
        bits
    }

    /// Positions set in both vectors, ascending.
    pub fn intersection<'a>(&'a self, other: &'a MultiHotVector) -> impl Iterator<Item = u32> + 'a {
        let (a, b) = (&self.ones, &other.ones);
        let (mut i, mut j) = (0, 0);
        std::iter::from_fn(move || {
            while i < a.len() && j < b.len() {
                match a[i].cmp(&b[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        let k = a[i];
                        i += 1;
                        j += 1;
                        return Some(k);
                    }
                }
            }
            None
        })
    }

    pub fn intersection_count(&self, other: &MultiHotVector) -> usize {
        self.intersection(other).count()
    }
}
