//! Resonant-block taxonomy and percolation-style connectivity estimators.
//!
//! Resonant transitions found by the flow have site supports; supports are
//! merged into components by adjacency, nearby components are linked by
//! proximity connections on clamped separation scales, and each component
//! is classified per step as a *small* block (contracted diameter below the
//! step's length scale) or as part of the deferred *large* region. Small
//! blocks carry a scale label, a clamped core volume, and collared extents
//! used for rotation regions and for the contracted metric.
//!
//! The asymptotic separation distances `d_m = exp(sqrt(L_{m+m0}))` exceed
//! any desk-scale chain almost immediately, so they are clamped to the
//! chain length; the taxonomy then merges more aggressively than the
//! asymptotic rules would, which is the documented desk-scale behavior.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("block-set invariant breach: {0}")]
    InvariantBreach(String),
    #[error("need at least {need} realizations, got {got}")]
    TooFewRealizations { need: usize, got: usize },
    #[error("no step-{0} components recorded in the ensemble")]
    UnknownStep(usize),
}

/// Length-scale schedule `L_k = (15/8)^k`.
pub fn length_scale(k: usize) -> f64 {
    (15.0f64 / 8.0).powi(k as i32)
}

/// Separation distance for volume class `m`, clamped to the chain length.
pub fn clamped_separation(m: usize, m0: usize, n: usize) -> f64 {
    let raw = length_scale(m + m0).sqrt().exp();
    raw.min(n as f64)
}

/// Volume class: the `m >= 1` with `volume` in `[L_{m-1}, L_m)`.
pub fn volume_class(volume: f64) -> usize {
    let mut m = 1;
    while volume >= length_scale(m) {
        m += 1;
    }
    m
}

/// A small resonant block: core sites, the scale at which it was formed,
/// the clamped core volume, and the contracted diameter measured at
/// formation time.
#[derive(Clone, Debug, Serialize)]
pub struct Block {
    pub sites: BTreeSet<usize>,
    pub scale: usize,
    pub volume: f64,
    pub diameter: usize,
}

impl Block {
    /// Collar width of the first collar, `ceil(L_i - 1)`.
    pub fn collar_width(&self) -> usize {
        (length_scale(self.scale) - 1.0).ceil() as usize
    }

    /// Additional width of the second collar, `ceil((15/14) L_{i-1})`.
    pub fn second_collar_width(&self) -> usize {
        (15.0 / 14.0 * length_scale(self.scale - 1)).ceil() as usize
    }
}

/// The full taxonomy after some number of steps: small blocks per scale,
/// the deferred large region, and the raw per-step resonant components
/// (the connectivity events are defined on the latter).
#[derive(Clone, Debug, Serialize)]
pub struct BlockSet {
    pub n: usize,
    pub small: Vec<Block>,
    pub large: BTreeSet<usize>,
    pub step_components: BTreeMap<usize, Vec<BTreeSet<usize>>>,
}

fn set_distance(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> usize {
    let mut best = usize::MAX;
    for &x in a {
        for &y in b {
            best = best.min(x.abs_diff(y));
        }
    }
    best
}

fn site_distance_to(set: &BTreeSet<usize>, s: usize) -> usize {
    set.iter().map(|&t| t.abs_diff(s)).min().unwrap_or(usize::MAX)
}

impl BlockSet {
    pub fn empty(n: usize) -> Self {
        BlockSet {
            n,
            small: Vec::new(),
            large: BTreeSet::new(),
            step_components: BTreeMap::new(),
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.small.is_empty() && self.large.is_empty()
    }

    /// Collared extents of the small blocks (core plus a collar of width
    /// `ceil(L_i - 1)`), clamped to the chain, with contested sites assigned
    /// to the nearer core (ties to the left) and large-region core sites
    /// excluded. The result is pairwise disjoint.
    pub fn collared_extents(&self) -> Vec<BTreeSet<usize>> {
        self.extents_with(|b| b.collar_width())
    }

    /// Double-collared extents (second collar of width
    /// `ceil((15/14) L_{i-1})` beyond the first), same trimming rules.
    pub fn double_collared_extents(&self) -> Vec<BTreeSet<usize>> {
        self.extents_with(|b| b.collar_width() + b.second_collar_width())
    }

    fn extents_with(&self, width: impl Fn(&Block) -> usize) -> Vec<BTreeSet<usize>> {
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; self.n]; // (block idx, dist)
        for (bi, b) in self.small.iter().enumerate() {
            let w = width(b);
            for (s, slot) in owner.iter_mut().enumerate() {
                let dist = site_distance_to(&b.sites, s);
                if dist > w || self.large.contains(&s) {
                    continue;
                }
                match slot {
                    None => *slot = Some((bi, dist)),
                    Some((prev_bi, prev_dist)) => {
                        // nearer core wins; ties go to the block further left
                        let prev_key = (*prev_dist, self.small[*prev_bi].sites.first().copied());
                        let key = (dist, b.sites.first().copied());
                        if key < prev_key {
                            *slot = Some((bi, dist));
                        }
                    }
                }
            }
        }
        let mut extents = vec![BTreeSet::new(); self.small.len()];
        for (s, o) in owner.iter().enumerate() {
            if let Some((bi, _)) = o {
                extents[*bi].insert(s);
            }
        }
        extents
    }

    /// Site sets handed to the small-block rotation: the collared extents.
    pub fn rotation_regions(&self) -> Vec<BTreeSet<usize>> {
        self.collared_extents()
    }

    /// Raw resonant components recorded at step `k`.
    pub fn components_at(&self, k: usize) -> Option<&[BTreeSet<usize>]> {
        self.step_components.get(&k).map(|v| v.as_slice())
    }

    pub fn validate(&self, m0: usize) -> Result<(), GeometryError> {
        let mut seen = BTreeSet::new();
        for b in &self.small {
            if b.sites.is_empty() {
                return Err(GeometryError::InvariantBreach("empty block".into()));
            }
            if b.sites.iter().any(|&s| s >= self.n) {
                return Err(GeometryError::InvariantBreach("site out of range".into()));
            }
            for &s in &b.sites {
                if !seen.insert(s) || self.large.contains(&s) {
                    return Err(GeometryError::InvariantBreach(format!(
                        "site {s} belongs to more than one block"
                    )));
                }
            }
            if (b.diameter as f64) >= length_scale(b.scale) {
                return Err(GeometryError::InvariantBreach(format!(
                    "block at scale {} has diameter {}",
                    b.scale, b.diameter
                )));
            }
        }
        for (i, a) in self.small.iter().enumerate() {
            let class_a = volume_class(a.volume);
            for b in self.small.iter().skip(i + 1) {
                let m = class_a.min(volume_class(b.volume));
                let need = clamped_separation(m, m0, self.n);
                let dist = set_distance(&a.sites, &b.sites) as f64;
                if dist <= need {
                    return Err(GeometryError::InvariantBreach(format!(
                        "blocks separated by {dist} need more than {need}"
                    )));
                }
            }
            if !self.large.is_empty() {
                let need = clamped_separation(class_a, m0, self.n);
                let dist = set_distance(&a.sites, &self.large) as f64;
                if dist <= need {
                    return Err(GeometryError::InvariantBreach(format!(
                        "block too close to the large region: {dist} <= {need}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Path length from `x` to `y` with every double-collared extent of a
/// small block on scale `<= j` contracted to a point (BFS on the quotient
/// graph of sites and block super-nodes).
pub fn contracted_distance(x: usize, y: usize, bs: &BlockSet, j: usize) -> usize {
    assert!(x < bs.n && y < bs.n, "site out of range");
    if x == y {
        return 0;
    }
    // node id per site: either a shared block node or the site itself
    let extents = bs.double_collared_extents();
    let mut node_of: Vec<usize> = (0..bs.n).collect();
    let mut next_node = bs.n;
    for (bi, ext) in extents.iter().enumerate() {
        if bs.small[bi].scale > j || ext.is_empty() {
            continue;
        }
        for &s in ext {
            node_of[s] = next_node;
        }
        next_node += 1;
    }
    let start = node_of[x];
    let goal = node_of[y];
    if start == goal {
        return 0;
    }
    // BFS over nodes; site s neighbors s-1 and s+1, block nodes inherit
    // the neighbors of all their sites
    let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
    dist.insert(start, 0);
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &node in &frontier {
            let d = dist[&node];
            let sites: Vec<usize> = (0..bs.n).filter(|&s| node_of[s] == node).collect();
            for s in sites {
                for nb in [s.wrapping_sub(1), s + 1] {
                    if nb >= bs.n {
                        continue;
                    }
                    let nn = node_of[nb];
                    if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(nn) {
                        e.insert(d + 1);
                        next.push(nn);
                    }
                }
            }
        }
        if let Some(&d) = dist.get(&goal) {
            return d;
        }
        frontier = next;
    }
    unreachable!("chain graph is connected");
}

fn contracted_diameter(sites: &BTreeSet<usize>, prev: &BlockSet, j: usize) -> usize {
    let mut best = 0;
    for &x in sites {
        for &y in sites {
            if x < y {
                best = best.max(contracted_distance(x, y, prev, j));
            }
        }
    }
    best
}

#[derive(Clone)]
struct Unit {
    sites: BTreeSet<usize>,
    old_block: Option<(usize, f64)>, // (scale, volume) for surviving small blocks
    has_new: bool,
}

/// Step-1 taxonomy: maximal runs of adjacent resonant sites become the raw
/// components `B^(1)`, then the usual diameter/separation classification
/// runs at scale 1.
pub fn build_blocks_step1(
    resonant_sites: &BTreeSet<usize>,
    n: usize,
    m0: usize,
) -> BlockSet {
    let supports: Vec<BTreeSet<usize>> = resonant_sites
        .iter()
        .map(|&s| BTreeSet::from([s]))
        .collect();
    update_blocks(&BlockSet::empty(n), &supports, 1, m0)
        .expect("step-1 construction cannot breach invariants")
}

/// Reorganize the taxonomy for step `k`: supports of the step's resonant
/// transitions form new components, proximity connections on the clamped
/// scales merge nearby blocks (absorbing earlier small blocks and large
/// chunks where required), and each resulting component is classified as a
/// scale-`k` small block or joins the large region. Untouched earlier small
/// blocks are retained as-is.
pub fn update_blocks(
    prev: &BlockSet,
    new_supports: &[BTreeSet<usize>],
    k: usize,
    m0: usize,
) -> Result<BlockSet, GeometryError> {
    let n = prev.n;
    let mut units: Vec<Unit> = Vec::new();
    for b in &prev.small {
        units.push(Unit {
            sites: b.sites.clone(),
            old_block: Some((b.scale, b.volume)),
            has_new: false,
        });
    }
    for chunk in adjacency_components(&prev.large) {
        units.push(Unit {
            sites: chunk,
            old_block: None,
            has_new: false,
        });
    }
    for s in new_supports {
        if s.is_empty() {
            continue;
        }
        assert!(s.iter().all(|&x| x < n), "support site out of range");
        units.push(Unit {
            sites: s.clone(),
            old_block: None,
            has_new: true,
        });
    }

    // union-find over units
    let mut parent: Vec<usize> = (0..units.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }

    // adjacency (distance <= 1 connects, overlap included)
    for i in 0..units.len() {
        for j in (i + 1)..units.len() {
            if set_distance(&units[i].sites, &units[j].sites) <= 1 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }

    // proximity connections on the clamped scales, to a fixed point
    loop {
        let comps = gather(&units, &mut parent);
        let mut merged = false;
        for i in 0..comps.len() {
            for j in (i + 1)..comps.len() {
                let (ci, cj) = (&comps[i], &comps[j]);
                let m = volume_class(comp_volume(&units, ci, k))
                    .min(volume_class(comp_volume(&units, cj, k)));
                let need = clamped_separation(m, m0, n);
                let dist = set_distance(&comp_sites(&units, ci), &comp_sites(&units, cj));
                if (dist as f64) <= need {
                    let (a, b) = (find(&mut parent, ci[0]), find(&mut parent, cj[0]));
                    if a != b {
                        parent[a] = b;
                        merged = true;
                    }
                }
            }
        }
        if !merged {
            break;
        }
    }

    // classification
    let comps = gather(&units, &mut parent);
    let l_k = length_scale(k);
    let mut small = Vec::new();
    let mut large = BTreeSet::new();
    for comp in &comps {
        let sites = comp_sites(&units, comp);
        if comp.len() == 1 {
            if let Some((scale, volume)) = units[comp[0]].old_block {
                // an earlier small block untouched by this step
                let diameter = prev
                    .small
                    .iter()
                    .find(|b| b.sites == sites)
                    .map(|b| b.diameter)
                    .unwrap_or(0);
                small.push(Block {
                    sites,
                    scale,
                    volume,
                    diameter,
                });
                continue;
            }
        }
        let volume = comp_volume(&units, comp, k);
        let diameter = contracted_diameter(&sites, prev, k.saturating_sub(1));
        if (diameter as f64) < l_k {
            small.push(Block {
                sites,
                scale: k,
                volume,
                diameter,
            });
        } else {
            large.extend(sites);
        }
    }
    small.sort_by_key(|b| b.sites.first().copied());

    let mut step_components = prev.step_components.clone();
    let mut raw: BTreeSet<usize> = BTreeSet::new();
    for s in new_supports {
        raw.extend(s.iter().copied());
    }
    step_components.insert(k, adjacency_components(&raw));

    let bs = BlockSet {
        n,
        small,
        large,
        step_components,
    };
    bs.validate(m0)?;
    Ok(bs)
}

fn gather(units: &[Unit], parent: &mut Vec<usize>) -> Vec<Vec<usize>> {
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..units.len() {
        let r = find(parent, i);
        by_root.entry(r).or_default().push(i);
    }
    by_root.into_values().collect()
}

fn comp_sites(units: &[Unit], comp: &[usize]) -> BTreeSet<usize> {
    let mut s = BTreeSet::new();
    for &u in comp {
        s.extend(units[u].sites.iter().copied());
    }
    s
}

/// Core volume of a component: surviving old blocks count with their
/// recorded (already clamped) volumes, every other site counts 1, and a
/// component carrying new step-`k` resonances is floored at `L_{k-1}`
/// (the minimum-volume convention).
fn comp_volume(units: &[Unit], comp: &[usize], k: usize) -> f64 {
    let mut vol = 0.0;
    let mut counted: BTreeSet<usize> = BTreeSet::new();
    let mut has_new = false;
    for &u in comp {
        if let Some((_, v)) = units[u].old_block {
            vol += v;
            counted.extend(units[u].sites.iter().copied());
        }
        has_new |= units[u].has_new;
    }
    for &u in comp {
        if units[u].old_block.is_none() {
            vol += units[u].sites.difference(&counted).count() as f64;
            counted.extend(units[u].sites.iter().copied());
        }
    }
    if has_new {
        vol = vol.max(length_scale(k.saturating_sub(1)));
    }
    vol
}

fn adjacency_components(sites: &BTreeSet<usize>) -> Vec<BTreeSet<usize>> {
    let mut out: Vec<BTreeSet<usize>> = Vec::new();
    let mut current: BTreeSet<usize> = BTreeSet::new();
    let mut prev: Option<usize> = None;
    for &s in sites {
        if let Some(p) = prev {
            if s > p + 1 {
                out.push(std::mem::take(&mut current));
            }
        }
        current.insert(s);
        prev = Some(s);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Which connectivity function to estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConnectivityKind {
    /// `P^(k)`: same raw resonant component at step `k`.
    SameComponent,
    /// `Q^(k)`: same collared small block formed at scale `k`.
    SameSmallBlock,
    /// `R^(k)`: same collared small block on any scale `<= k`.
    SameSmallBlockAnyScale,
}

impl ConnectivityKind {
    pub fn label(&self) -> &'static str {
        match self {
            ConnectivityKind::SameComponent => "P",
            ConnectivityKind::SameSmallBlock => "Q",
            ConnectivityKind::SameSmallBlockAnyScale => "R",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectivityPoint {
    pub x: usize,
    pub y: usize,
    pub hits: u64,
    pub prob: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectivityEstimate {
    pub kind: ConnectivityKind,
    pub k: usize,
    pub n: usize,
    pub points: Vec<ConnectivityPoint>,
    pub n_realizations: usize,
}

impl ConnectivityEstimate {
    pub fn probability(&self, x: usize, y: usize) -> Option<f64> {
        let (a, b) = (x.min(y), x.max(y));
        self.points
            .iter()
            .find(|p| p.x == a && p.y == b)
            .map(|p| p.prob)
    }

    /// Translation-pooled estimate per separation: all site pairs at each
    /// distance are pooled across the ensemble. Pairs within one
    /// realization are correlated, so the Wilson interval is approximate.
    pub fn distance_profile(&self) -> Vec<(usize, f64, f64, f64)> {
        let mut hits: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
        let trials = self.n_realizations as u64;
        for p in &self.points {
            let e = hits.entry(p.y - p.x).or_insert((0, 0));
            e.0 += p.hits;
            e.1 += trials;
        }
        hits.into_iter()
            .map(|(d, (h, t))| {
                let (lo, hi) = stats::wilson_interval(h, t);
                (d, h as f64 / t as f64, lo, hi)
            })
            .collect()
    }
}

/// Empirical frequency of the defining event per site pair over an ensemble
/// of final block sets.
pub fn estimate_connectivity(
    sets: &[BlockSet],
    kind: ConnectivityKind,
    k: usize,
) -> Result<ConnectivityEstimate, GeometryError> {
    if sets.len() < 100 {
        return Err(GeometryError::TooFewRealizations {
            need: 100,
            got: sets.len(),
        });
    }
    let n = sets[0].n;
    if kind == ConnectivityKind::SameComponent
        && !sets.iter().any(|bs| bs.step_components.contains_key(&k))
    {
        return Err(GeometryError::UnknownStep(k));
    }
    let mut hits = vec![0u64; n * n];
    for bs in sets {
        let regions: Vec<BTreeSet<usize>> = match kind {
            ConnectivityKind::SameComponent => {
                bs.components_at(k).map(|c| c.to_vec()).unwrap_or_default()
            }
            ConnectivityKind::SameSmallBlock => bs
                .collared_extents()
                .into_iter()
                .zip(&bs.small)
                .filter(|(_, b)| b.scale == k)
                .map(|(e, _)| e)
                .collect(),
            ConnectivityKind::SameSmallBlockAnyScale => bs
                .collared_extents()
                .into_iter()
                .zip(&bs.small)
                .filter(|(_, b)| b.scale <= k)
                .map(|(e, _)| e)
                .collect(),
        };
        for region in &regions {
            for &x in region {
                for &y in region {
                    if x <= y {
                        hits[x * n + y] += 1;
                    }
                }
            }
        }
    }
    let trials = sets.len() as u64;
    let mut points = Vec::new();
    for x in 0..n {
        for y in x..n {
            let h = hits[x * n + y];
            let (ci_lo, ci_hi) = stats::wilson_interval(h, trials);
            points.push(ConnectivityPoint {
                x,
                y,
                hits: h,
                prob: h as f64 / trials as f64,
                ci_lo,
                ci_hi,
            });
        }
    }
    Ok(ConnectivityEstimate {
        kind,
        k,
        n,
        points,
        n_realizations: sets.len(),
    })
}

/// Monte Carlo frequency of the interior-site resonance event
/// `|2(h + J_+ s_+ + J_- s_-)| < eps` for at least one sign pair, with
/// fresh uniform couplings per sample. Returns `(freq, ci_lo, ci_hi)`.
pub fn site_resonance_frequency(eps: f64, samples: usize, seed: u64) -> (f64, f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..samples {
        let h: f64 = rng.gen_range(-1.0..=1.0);
        let jl: f64 = rng.gen_range(-1.0..=1.0);
        let jr: f64 = rng.gen_range(-1.0..=1.0);
        let resonant = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .any(|&(sl, sr): &(f64, f64)| (2.0 * (h + jr * sr + jl * sl)).abs() < eps);
        if resonant {
            hits += 1;
        }
    }
    let (lo, hi) = stats::wilson_interval(hits, samples as u64);
    (hits as f64 / samples as f64, lo, hi)
}

/// Monte Carlo profile of the step-1 same-block probability per separation,
/// pooled over site pairs: realizations of the resonant-site set at cutoff
/// `eps` on an `n`-site chain.
pub fn step1_distance_profile(
    eps: f64,
    n: usize,
    realizations: usize,
    seed: u64,
) -> Vec<(usize, f64, f64, f64)> {
    use rayon::prelude::*;
    let per_distance: Vec<(u64, u64)> = (0..realizations as u64)
        .into_par_iter()
        .map(|r| {
            let p = crate::model::ModelParams {
                n,
                gamma: 0.0,
                epsilon: Some(eps),
                law: crate::model::CouplingLaw::Uniform,
            };
            let d = crate::model::sample_disorder(
                crate::harness::derive_seed(seed, r),
                &p,
            );
            let resonant = crate::flow::detect_resonant_sites(&d, eps);
            let comps = adjacency_components(&resonant);
            let mut counts = vec![(0u64, 0u64); n];
            for x in 0..n {
                for (dist, c) in counts.iter_mut().enumerate().take(n - x) {
                    let y = x + dist;
                    c.1 += 1;
                    if comps.iter().any(|comp| comp.contains(&x) && comp.contains(&y)) {
                        c.0 += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![(0u64, 0u64); n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
                a
            },
        );
    per_distance
        .into_iter()
        .enumerate()
        .filter(|(_, (_, t))| *t > 0)
        .map(|(d, (h, t))| {
            let (lo, hi) = stats::wilson_interval(h, t);
            (d, h as f64 / t as f64, lo, hi)
        })
        .collect()
}
