//! Permutohedral lattice for high-dimensional Gaussian filtering.
//!
//! Each feature vector is embedded in the hyperplane `Σx = 0` of `R^{d+1}`
//! and splatted onto the `d+1` vertices of its enclosing simplex with
//! barycentric weights. Lattice values are blurred with a stencil and sliced
//! back out with the same weights. Only vertices that received a splat are
//! stored, so memory and time are linear in the number of points.
//!
//! The stencil covers every displacement reachable by one `[-1, 0, 1]` step
//! along each of the `d+1` lattice directions, applied in one pass so that
//! no mass is routed through vertices the sparse lattice does not store. Its
//! weights depend only on the symmetry class of the displacement and are
//! fitted once per dimension, by non-negative least squares, so that the
//! lattice kernel between two points tracks `exp(−‖Δ‖²/2)`.
//!
//! Mean-field messages must exclude a pixel's own contribution. The weight
//! with which a point's value returns to itself is known exactly from its
//! barycentric weights and the stencil, and is subtracted after slicing.

use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

const EMPTY: u32 = u32::MAX;

/// Hash that is linear in the key, so `h(a + b) = h(a) + h(b)` and a
/// neighbour's hash is one addition away.
fn linear_hash(key: &[i32]) -> u64 {
    key.iter().enumerate().fold(0u64, |h, (i, &k)| {
        // Unrelated odd multipliers per coordinate; multiples of one constant
        // collide on short integer difference vectors.
        let m = mix((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)) | 1;
        h.wrapping_add((k as i64 as u64).wrapping_mul(m))
    })
}

fn mix(h: u64) -> u64 {
    let h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    let h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Open-addressing table from integer keys to dense vertex indices.
#[derive(Debug, Clone)]
struct KeyTable {
    d: usize,
    slots: Vec<u32>,
    keys: Vec<i32>,
    hashes: Vec<u64>,
}

impl KeyTable {
    fn new(d: usize, expected: usize) -> Self {
        let cap = (expected.max(8) * 2).next_power_of_two();
        Self {
            d,
            slots: vec![EMPTY; cap],
            keys: Vec::with_capacity(expected * d),
            hashes: Vec::with_capacity(expected),
        }
    }

    fn len(&self) -> usize {
        self.hashes.len()
    }

    fn key(&self, v: u32) -> &[i32] {
        &self.keys[v as usize * self.d..(v as usize + 1) * self.d]
    }

    /// Finds the vertex with hash `h` whose key satisfies `eq`.
    fn find_by(&self, h: u64, eq: impl Fn(&[i32]) -> bool) -> Option<u32> {
        let mask = self.slots.len() - 1;
        let mut i = mix(h) as usize & mask;
        loop {
            let v = self.slots[i];
            if v == EMPTY {
                return None;
            }
            if self.hashes[v as usize] == h && eq(self.key(v)) {
                return Some(v);
            }
            i = (i + 1) & mask;
        }
    }

    fn insert(&mut self, key: &[i32]) -> u32 {
        let h = linear_hash(key);
        if let Some(v) = self.find_by(h, |k| k == key) {
            return v;
        }
        if (self.len() + 1) * 2 > self.slots.len() {
            self.slots = vec![EMPTY; self.slots.len() * 2];
            for v in 0..self.len() as u32 {
                self.place(v);
            }
        }
        let v = self.len() as u32;
        self.keys.extend_from_slice(key);
        self.hashes.push(h);
        self.place(v);
        v
    }

    fn place(&mut self, v: u32) {
        let mask = self.slots.len() - 1;
        let mut i = mix(self.hashes[v as usize]) as usize & mask;
        while self.slots[i] != EMPTY {
            i = (i + 1) & mask;
        }
        self.slots[i] = v;
    }
}

/// Simplex embedding of one feature vector.
struct Embedding {
    rem0: Vec<i32>,
    rank: Vec<i32>,
    bary: Vec<f64>,
}

/// Per-coordinate embedding factors for a lattice `scale` times finer than
/// the input units.
fn coordinate_scale(d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|i| scale / (((i + 1) * (i + 2)) as f64).sqrt())
        .collect()
}

fn embed(row: &[f64], scale: &[f64], elevated: &mut [f64]) -> Embedding {
    let d = row.len();
    let dp1 = d as i32 + 1;

    let mut sm = 0.0;
    for j in (1..=d).rev() {
        let cf = row[j - 1] * scale[j - 1];
        elevated[j] = sm - j as f64 * cf;
        sm += cf;
    }
    elevated[0] = sm;

    let down = 1.0 / (d as f64 + 1.0);
    let mut rem0 = vec![0i32; d + 1];
    let mut sum = 0i32;
    for i in 0..=d {
        let v = down * elevated[i];
        let up_pt = v.ceil() as i32 * dp1;
        let down_pt = v.floor() as i32 * dp1;
        rem0[i] = if up_pt as f64 - elevated[i] < elevated[i] - down_pt as f64 {
            up_pt
        } else {
            down_pt
        };
        sum += rem0[i];
    }
    let sum = sum / dp1;

    let mut rank = vec![0i32; d + 1];
    for i in 0..d {
        for j in i + 1..=d {
            if elevated[i] - (rem0[i] as f64) < elevated[j] - (rem0[j] as f64) {
                rank[i] += 1;
            } else {
                rank[j] += 1;
            }
        }
    }
    for i in 0..=d {
        rank[i] += sum;
        if rank[i] < 0 {
            rank[i] += dp1;
            rem0[i] += dp1;
        } else if rank[i] > d as i32 {
            rank[i] -= dp1;
            rem0[i] -= dp1;
        }
    }

    let mut bary = vec![0.0; d + 2];
    for i in 0..=d {
        let v = (elevated[i] - rem0[i] as f64) * down;
        let r = (d as i32 - rank[i]) as usize;
        bary[r] += v;
        bary[r + 1] -= v;
    }
    bary[0] += 1.0 + bary[d + 1];
    bary.truncate(d + 1);
    Embedding { rem0, rank, bary }
}

/// Appends the first `d` coordinates of simplex corner `r` to `out`.
fn push_corner_key(e: &Embedding, r: usize, d: usize, out: &mut Vec<i32>) {
    let dp1 = d as i32 + 1;
    for i in 0..d {
        let c = if e.rank[i] <= (d - r) as i32 {
            r as i32
        } else {
            r as i32 - dp1
        };
        out.push(e.rem0[i] + c);
    }
}

/// Blur displacements with their fitted weights.
#[derive(Debug)]
struct Stencil {
    d: usize,
    /// Input-to-lattice scale the weights were fitted for.
    scale: f64,
    /// `len × d` displacements in key coordinates, zero-weight ones dropped.
    offsets: Vec<i32>,
    hashes: Vec<u64>,
    /// Symmetry class of each displacement.
    classes: Vec<u16>,
    class_weights: Vec<f64>,
    index: FxHashMap<Vec<i32>, f64>,
}

impl Stencil {
    fn len(&self) -> usize {
        self.classes.len()
    }

    fn offset(&self, s: usize) -> &[i32] {
        &self.offsets[s * self.d..(s + 1) * self.d]
    }

    fn weight_of(&self, offset: &[i32]) -> f64 {
        self.index.get(offset).copied().unwrap_or(0.0)
    }
}

/// Every net displacement of one `[-1, 0, 1]` step per lattice direction,
/// with the symmetry class of each.
fn stencil_support(d: usize) -> (Vec<Vec<i32>>, Vec<usize>) {
    let dp1 = d + 1;
    let mut seen: FxHashMap<Vec<i32>, ()> = FxHashMap::default();
    let mut offsets = Vec::new();
    let mut steps = vec![-1i32; dp1];
    loop {
        let mut offset = vec![0i32; d];
        for (j, &t) in steps.iter().enumerate() {
            for (i, o) in offset.iter_mut().enumerate() {
                *o += if i == j { -t * d as i32 } else { t };
            }
        }
        if seen.insert(offset.clone(), ()).is_none() {
            offsets.push(offset);
        }
        let mut j = 0;
        while j < dp1 && steps[j] == 1 {
            steps[j] = -1;
            j += 1;
        }
        if j == dp1 {
            break;
        }
        steps[j] += 1;
    }
    offsets.sort();

    // Lattice symmetries permute the d+1 full coordinates and flip the sign.
    let mut classes: FxHashMap<Vec<i32>, usize> = FxHashMap::default();
    let class = offsets
        .iter()
        .map(|o| {
            let mut pos = o.clone();
            pos.push(-o.iter().sum::<i32>());
            let mut neg: Vec<i32> = pos.iter().map(|v| -v).collect();
            pos.sort();
            neg.sort();
            let next = classes.len();
            *classes.entry(pos.min(neg)).or_insert(next)
        })
        .collect();
    (offsets, class)
}

const FIT_PAIRS: usize = 6000;
const FIT_RADIUS: f64 = 4.5;
const FIT_EXTENT: f64 = 50.0;
const MASS_EMPHASIS: f64 = 10.0;
const FIT_SEED: u64 = 0x1a77_1ce5;
/// Candidate lattice scales, relative to `sqrt(2/3)·(d+1)`.
const FIT_SCALES: [f64; 6] = [0.8, 0.9, 1.0, 1.1, 1.2, 1.3];

/// Fits non-negative class weights at one scale. Returns the weights and
/// the mean squared kernel error over the fitting pairs.
fn fit_weights(d: usize, scale: f64, offsets: &[Vec<i32>], class: &[usize]) -> (Vec<f64>, f64) {
    let dp1 = d + 1;
    let num_classes = class.iter().max().map_or(0, |m| m + 1);
    let lookup: FxHashMap<&[i32], usize> = offsets
        .iter()
        .zip(class)
        .map(|(o, &c)| (o.as_slice(), c))
        .collect();
    let factors = coordinate_scale(d, scale);
    let mut rng = ChaCha8Rng::seed_from_u64(FIT_SEED ^ d as u64);
    let mut elevated = vec![0.0; dp1];
    let (mut ka, mut kb) = (Vec::with_capacity(dp1 * d), Vec::with_capacity(dp1 * d));
    let mut off = vec![0i32; d];
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(FIT_PAIRS);
    for p in 0..FIT_PAIRS {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..FIT_EXTENT)).collect();
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        // Alternate uniform-in-volume and uniform-in-radius distances so both
        // the body and the peak of the kernel carry weight.
        let u: f64 = rng.random();
        let r = if p % 2 == 0 {
            FIT_RADIUS * u.powf(1.0 / d as f64)
        } else {
            FIT_RADIUS * u
        };
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + r * b / norm).collect();
        let ea = embed(&x, &factors, &mut elevated);
        let eb = embed(&y, &factors, &mut elevated);
        ka.clear();
        kb.clear();
        for c in 0..dp1 {
            push_corner_key(&ea, c, d, &mut ka);
            push_corner_key(&eb, c, d, &mut kb);
        }
        let mut features = vec![0.0; num_classes];
        for a in 0..dp1 {
            for b in 0..dp1 {
                for i in 0..d {
                    off[i] = kb[b * d + i] - ka[a * d + i];
                }
                if let Some(&c) = lookup.get(off.as_slice()) {
                    features[c] += ea.bary[a] * eb.bary[b];
                }
            }
        }
        rows.push((features, (-0.5 * r * r).exp()));
    }
    // Uniform-in-volume pairs average to the kernel's mass over the ball;
    // a heavily weighted row keeps that mass, which dominates sums over
    // many neighbours.
    let volume: Vec<&(Vec<f64>, f64)> = rows.iter().step_by(2).collect();
    let mut mass = vec![0.0; num_classes];
    let mut mass_target = 0.0;
    for (f, t) in &volume {
        for (m, v) in mass.iter_mut().zip(f) {
            *m += v / volume.len() as f64;
        }
        mass_target += t / volume.len() as f64;
    }
    let emphasis = MASS_EMPHASIS * (rows.len() as f64).sqrt();
    let mut system = rows.clone();
    system.push((mass.iter().map(|m| m * emphasis).collect(), mass_target * emphasis));
    let weights = nonnegative_least_squares(&system, num_classes);
    let mse = rows
        .iter()
        .map(|(f, t)| {
            let fit: f64 = f.iter().zip(&weights).map(|(a, b)| a * b).sum();
            (fit - t) * (fit - t)
        })
        .sum::<f64>()
        / rows.len() as f64;
    (weights, mse)
}

/// Minimizes `Σ (fᵀw − t)²` subject to `w ≥ 0` by projected coordinate
/// descent on the normal equations.
fn nonnegative_least_squares(rows: &[(Vec<f64>, f64)], n: usize) -> Vec<f64> {
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    for (f, t) in rows {
        for i in 0..n {
            if f[i] == 0.0 {
                continue;
            }
            atb[i] += f[i] * t;
            for j in 0..n {
                ata[i * n + j] += f[i] * f[j];
            }
        }
    }
    let mut w = vec![0.0; n];
    for _ in 0..20_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let diag = ata[i * n + i];
            if diag <= 0.0 {
                continue;
            }
            let grad: f64 = (0..n).map(|j| ata[i * n + j] * w[j]).sum::<f64>() - atb[i];
            let next = (w[i] - grad / diag).max(0.0);
            change = change.max((next - w[i]).abs());
            w[i] = next;
        }
        if change < 1e-12 {
            break;
        }
    }
    w
}

fn build_stencil(d: usize) -> Stencil {
    let (support, class) = stencil_support(d);
    let base = (2.0f64 / 3.0).sqrt() * (d as f64 + 1.0);
    let (scale, class_weights) = FIT_SCALES
        .par_iter()
        .map(|m| {
            let (w, mse) = fit_weights(d, base * m, &support, &class);
            (base * m, w, mse)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .map(|(s, w, _)| (s, w))
        .expect("at least one candidate scale");
    let mut offsets = Vec::new();
    let mut hashes = Vec::new();
    let mut classes = Vec::new();
    let mut index = FxHashMap::default();
    for (o, &c) in support.iter().zip(&class) {
        let w = class_weights[c];
        if w > 0.0 {
            offsets.extend_from_slice(o);
            hashes.push(linear_hash(o));
            classes.push(u16::try_from(c).expect("fewer than 65536 stencil classes"));
            index.insert(o.clone(), w);
        }
    }
    Stencil {
        d,
        scale,
        offsets,
        hashes,
        classes,
        class_weights,
        index,
    }
}

/// The fitted stencil for dimension `d`, computed once per process.
fn stencil(d: usize) -> &'static Stencil {
    static CACHE: OnceLock<Mutex<FxHashMap<usize, &'static Stencil>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().expect("stencil cache").get(&d) {
        return s;
    }
    // Fit outside the lock; a concurrent duplicate fit is identical.
    let fitted: &'static Stencil = Box::leak(Box::new(build_stencil(d)));
    cache.lock().expect("stencil cache").entry(d).or_insert(fitted)
}

/// One lattice over features translated by a fixed shift.
#[derive(Debug, Clone)]
struct ShiftedLattice {
    d: usize,
    num_vertices: usize,
    /// `n × (d+1)` enclosing-simplex vertex indices.
    vertex: Vec<u32>,
    /// `n × (d+1)` barycentric weights.
    bary: Vec<f64>,
    /// CSR over vertices listing the `(point, corner)` slots splatted onto each.
    splat_start: Vec<u32>,
    splat_slots: Vec<u32>,
    /// CSR over vertices listing blur neighbours and their stencil classes.
    blur_start: Vec<usize>,
    blur_nb: Vec<u32>,
    blur_class: Vec<u16>,
    class_weights: Vec<f64>,
    /// Response of each point to itself.
    self_weight: Vec<f64>,
}

impl ShiftedLattice {
    fn new(features: &FeatureMatrix, shift: &[f64], stencil: &Stencil) -> Self {
        let n = features.n();
        let d = features.dim();
        let dp1 = d + 1;
        let factors = coordinate_scale(d, stencil.scale);
        let mut row = vec![0.0; d];

        let mut table = KeyTable::new(d, n);
        let mut vertex = Vec::with_capacity(n * dp1);
        let mut bary = Vec::with_capacity(n * dp1);
        let mut elevated = vec![0.0; dp1];
        let mut key = Vec::with_capacity(d);
        for i in 0..n {
            for ((r, x), t) in row.iter_mut().zip(features.row(i)).zip(shift) {
                *r = x + t;
            }
            let e = embed(&row, &factors, &mut elevated);
            for r in 0..dp1 {
                key.clear();
                push_corner_key(&e, r, d, &mut key);
                vertex.push(table.insert(&key));
                bary.push(e.bary[r]);
            }
        }
        let num_vertices = table.len();

        let mut counts = vec![0u32; num_vertices + 1];
        for &v in &vertex {
            counts[v as usize + 1] += 1;
        }
        for v in 0..num_vertices {
            counts[v + 1] += counts[v];
        }
        let splat_start = counts.clone();
        let mut fill = counts;
        let mut splat_slots = vec![0u32; vertex.len()];
        for (slot, &v) in vertex.iter().enumerate() {
            splat_slots[fill[v as usize] as usize] = slot as u32;
            fill[v as usize] += 1;
        }

        // Built in blocks of vertices to bound the transient copy.
        let mut blur_start = Vec::with_capacity(num_vertices + 1);
        blur_start.push(0);
        let mut blur_nb = Vec::new();
        let mut blur_class = Vec::new();
        let block = 4096u32;
        let blocks: Vec<u32> = (0..num_vertices as u32).step_by(block as usize).collect();
        for chunk in blocks.chunks(64) {
            let found: Vec<(Vec<usize>, Vec<u32>, Vec<u16>)> = chunk
                .par_iter()
                .map(|&lo| {
                    let hi = (lo + block).min(num_vertices as u32);
                    let (mut ends, mut nbs, mut cls) = (Vec::new(), Vec::new(), Vec::new());
                    for v in lo..hi {
                        let own = table.key(v);
                        let h = table.hashes[v as usize];
                        for s in 0..stencil.len() {
                            let off = stencil.offset(s);
                            let hit = table.find_by(h.wrapping_add(stencil.hashes[s]), |k| {
                                k.iter().zip(own).zip(off).all(|((k, a), b)| *k == a + b)
                            });
                            if let Some(nb) = hit {
                                nbs.push(nb);
                                cls.push(stencil.classes[s]);
                            }
                        }
                        ends.push(nbs.len());
                    }
                    (ends, nbs, cls)
                })
                .collect();
            for (ends, nbs, cls) in found {
                let base = blur_nb.len();
                blur_start.extend(ends.iter().map(|e| base + e));
                blur_nb.extend(nbs);
                blur_class.extend(cls);
            }
        }
        blur_nb.shrink_to_fit();
        blur_class.shrink_to_fit();

        let self_weight = (0..n)
            .into_par_iter()
            .map(|i| {
                let verts = &vertex[i * dp1..(i + 1) * dp1];
                let w = &bary[i * dp1..(i + 1) * dp1];
                let mut off = vec![0i32; d];
                let mut total = 0.0;
                for a in 0..dp1 {
                    for b in 0..dp1 {
                        let (ka, kb) = (table.key(verts[a]), table.key(verts[b]));
                        for (o, (x, y)) in off.iter_mut().zip(kb.iter().zip(ka)) {
                            *o = x - y;
                        }
                        total += w[a] * w[b] * stencil.weight_of(&off);
                    }
                }
                total
            })
            .collect();

        Self {
            d,
            num_vertices,
            vertex,
            bary,
            splat_start,
            splat_slots,
            blur_start,
            blur_nb,
            blur_class,
            class_weights: stencil.class_weights.clone(),
            self_weight,
        }
    }

    /// Adds the transform, including each point's own value, to `out`.
    fn accumulate(&self, values: &[f64], k: usize, out: &mut [f64]) {
        let dp1 = self.d + 1;

        let mut splatted = vec![0.0; self.num_vertices * k];
        splatted.par_chunks_mut(k).enumerate().for_each(|(v, dst)| {
            let slots = &self.splat_slots[self.splat_start[v] as usize..self.splat_start[v + 1] as usize];
            for &slot in slots {
                let slot = slot as usize;
                let w = self.bary[slot];
                let src = &values[(slot / dp1) * k..(slot / dp1 + 1) * k];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += w * b;
                }
            }
        });

        let mut blurred = vec![0.0; self.num_vertices * k];
        blurred.par_chunks_mut(k).enumerate().for_each(|(v, dst)| {
            let range = self.blur_start[v]..self.blur_start[v + 1];
            for (&nb, &c) in self.blur_nb[range.clone()].iter().zip(&self.blur_class[range]) {
                let w = self.class_weights[c as usize];
                let src = &splatted[nb as usize * k..(nb as usize + 1) * k];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += w * b;
                }
            }
        });

        out.par_chunks_mut(k).enumerate().for_each(|(i, dst)| {
            for slot in i * dp1..(i + 1) * dp1 {
                let w = self.bary[slot];
                let v = self.vertex[slot] as usize;
                for (a, b) in dst.iter_mut().zip(&blurred[v * k..(v + 1) * k]) {
                    *a += w * b;
                }
            }
        });
    }

}

/// Number of shifted lattices averaged per transform. Each lattice's error
/// depends on where points fall inside its cells; averaging copies at
/// different offsets cancels much of it.
const COPIES: usize = 4;

/// Splat-blur-slice structure over a fixed set of feature vectors.
#[derive(Debug, Clone)]
pub struct PermutohedralLattice {
    n: usize,
    d: usize,
    copies: Vec<ShiftedLattice>,
    /// Averaged response of each point to itself.
    self_weight: Vec<f64>,
}

/// Offsets spread over one lattice period by a Kronecker sequence.
fn copy_shifts(d: usize, scale: f64) -> Vec<Vec<f64>> {
    // Generalized golden ratio: the root of x^{d+1} = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let period = 2.0 * (d as f64 + 1.0) / scale;
    (0..COPIES)
        .map(|c| {
            (1..=d)
                .map(|j| (c as f64 * phi.powi(-(j as i32))).fract() * period)
                .collect()
        })
        .collect()
}

impl PermutohedralLattice {
    pub fn new(features: &FeatureMatrix) -> Result<Self> {
        let n = features.n();
        let d = features.dim();
        if n == 0 {
            return Err(Error::Dimension("lattice needs at least one point".into()));
        }
        if n as u64 * (d as u64 + 1) >= EMPTY as u64 {
            return Err(Error::Dimension("too many points for the lattice".into()));
        }
        let stencil = stencil(d);
        let copies: Vec<ShiftedLattice> = copy_shifts(d, stencil.scale)
            .iter()
            .map(|shift| ShiftedLattice::new(features, shift, stencil))
            .collect();
        let mut self_weight = vec![0.0; n];
        for copy in &copies {
            for (a, b) in self_weight.iter_mut().zip(&copy.self_weight) {
                *a += b / COPIES as f64;
            }
        }
        Ok(Self {
            n,
            d,
            copies,
            self_weight,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Total stored vertices over all shifted copies.
    pub fn num_vertices(&self) -> usize {
        self.copies.iter().map(|c| c.num_vertices).sum()
    }

    /// Approximate Gaussian transform including each point's own value.
    pub fn filter_with_self(&self, values: &[f64], k: usize) -> Result<Vec<f64>> {
        if values.len() != self.n * k {
            return Err(Error::Dimension(format!(
                "lattice built over {} points, values hold {} entries for {k} channels",
                self.n,
                values.len()
            )));
        }
        let mut out = vec![0.0; self.n * k];
        if k == 0 {
            return Ok(out);
        }
        for copy in &self.copies {
            copy.accumulate(values, k, &mut out);
        }
        let inv = 1.0 / COPIES as f64;
        out.par_iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }

    /// Approximate `Σ_{j≠i} exp(−‖u_i − u_j‖²/2) · v_j`.
    pub fn filter(&self, values: &[f64], k: usize) -> Result<Vec<f64>> {
        let mut out = self.filter_with_self(values, k)?;
        if k == 0 {
            return Ok(out);
        }
        for ((o, v), w) in out
            .chunks_exact_mut(k)
            .zip(values.chunks_exact(k))
            .zip(&self.self_weight)
        {
            for (o, v) in o.iter_mut().zip(v) {
                *o -= w * v;
            }
        }
        Ok(out)
    }

    /// The subtracted self weight of each point.
    pub fn self_weights(&self) -> &[f64] {
        &self.self_weight
    }
}

pub fn build_lattice(features: &FeatureMatrix) -> Result<PermutohedralLattice> {
    PermutohedralLattice::new(features)
}

pub fn gaussian_filter_lattice(
    lattice: &PermutohedralLattice,
    values: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    lattice.filter(values, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::gaussian_filter_bruteforce;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_features(n: usize, d: usize, extent: f64, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(0.0..extent)).collect();
        FeatureMatrix::new(n, d, data).unwrap()
    }

    fn random_values(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    /// Pixel grid of `side × side` with positions over `spacing` and two
    /// smooth colour-like channels.
    fn image_features(side: usize, spacing: f64) -> FeatureMatrix {
        let mut data = Vec::new();
        for i in 0..side * side {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            data.extend([x / spacing, y / spacing]);
            data.extend([(x * 0.3).sin() * 2.0, (y * 0.2).cos() * 2.0]);
            data.extend([if x < side as f64 / 2.0 { 0.0 } else { 4.0 }, (x + y) / 20.0]);
        }
        FeatureMatrix::new(side * side, 6, data).unwrap()
    }

    #[test]
    fn stencil_support_sizes() {
        assert_eq!(stencil_support(1).0.len(), 5);
        assert_eq!(stencil_support(2).0.len(), 19);
        assert_eq!(stencil_support(6).0.len(), 2059);
    }

    #[test]
    fn stencil_is_symmetric_under_negation() {
        let s = stencil(3);
        for i in 0..s.len() {
            let neg: Vec<i32> = s.offset(i).iter().map(|v| -v).collect();
            let w = s.class_weights[s.classes[i] as usize];
            assert_eq!(s.weight_of(&neg), w);
            assert!(w > 0.0);
        }
    }

    #[test]
    fn key_table_grows_and_finds() {
        let mut table = KeyTable::new(3, 1);
        for i in 0..1000 {
            assert_eq!(table.insert(&[i, -i, 2 * i]), i as u32);
        }
        for i in 0..1000 {
            assert_eq!(table.insert(&[i, -i, 2 * i]), i as u32);
            let key = [i, -i, 2 * i];
            assert_eq!(table.find_by(linear_hash(&key), |k| k == key), Some(i as u32));
        }
        assert_eq!(table.len(), 1000);
        assert_eq!(table.find_by(linear_hash(&[5, 5, 5]), |k| k == [5, 5, 5]), None);
    }

    #[test]
    fn linear_hash_is_additive() {
        let (a, b) = ([3, -7, 11, 0], [-2, 5, 1, 9]);
        let sum: Vec<i32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(linear_hash(&sum), linear_hash(&a).wrapping_add(linear_hash(&b)));
    }

    #[test]
    fn embedding_weights_are_barycentric() {
        let factors = coordinate_scale(4, 2.0);
        let mut elevated = vec![0.0; 5];
        let e = embed(&[0.3, -1.2, 4.5, 2.2], &factors, &mut elevated);
        assert!((e.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(e.bary.iter().all(|&b| (-1e-12..=1.0 + 1e-12).contains(&b)));
    }

    #[test]
    fn single_point_has_no_neighbours() {
        let f = FeatureMatrix::new(1, 3, vec![0.5, 1.5, -2.0]).unwrap();
        let out = build_lattice(&f).unwrap().filter(&[2.0, 3.0], 2).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_mismatched_values() {
        let lattice = build_lattice(&random_features(10, 2, 3.0, 1)).unwrap();
        assert!(lattice.filter(&[1.0; 9], 1).is_err());
        assert!(gaussian_filter_lattice(&lattice, &[1.0; 20], 2).is_ok());
    }

    #[test]
    fn empty_input_is_rejected() {
        let f = FeatureMatrix::new(0, 2, vec![]).unwrap();
        assert!(build_lattice(&f).is_err());
    }

    #[test]
    fn reusable_across_channel_counts() {
        let f = image_features(32, 3.0);
        let lattice = build_lattice(&f).unwrap();
        let n = f.n();
        let v1 = random_values(n, 2);
        let v3 = random_values(3 * n, 3);
        let single = lattice.filter(&v1, 1).unwrap();
        let triple = lattice.filter(&v3, 3).unwrap();
        for c in 0..3 {
            let channel: Vec<f64> = (0..n).map(|i| v3[3 * i + c]).collect();
            let alone = lattice.filter(&channel, 1).unwrap();
            for i in 0..n {
                assert!((alone[i] - triple[3 * i + c]).abs() < 1e-9);
            }
        }
        assert_eq!(lattice.filter(&v1, 1).unwrap(), single);
    }

    #[test]
    fn all_ones_give_positive_output() {
        let f = image_features(32, 3.0);
        let out = build_lattice(&f).unwrap().filter(&vec![1.0; f.n()], 1).unwrap();
        assert!(out.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn transform_is_self_adjoint() {
        let f = random_features(200, 6, 3.0, 4);
        let lattice = build_lattice(&f).unwrap();
        let (v, w) = (random_values(200, 5), random_values(200, 6));
        let fv = lattice.filter(&v, 1).unwrap();
        let fw = lattice.filter(&w, 1).unwrap();
        let a: f64 = fv.iter().zip(&w).map(|(x, y)| x * y).sum();
        let b: f64 = v.iter().zip(&fw).map(|(x, y)| x * y).sum();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn matches_brute_force_on_image_features() {
        let f = image_features(16, 3.0);
        let v = random_values(f.n() * 4, 7);
        let exact = gaussian_filter_bruteforce(&f, &v, 4).unwrap();
        let approx = build_lattice(&f).unwrap().filter(&v, 4).unwrap();
        assert!(relative_error(&approx, &exact) <= 0.05);
    }

    #[test]
    fn matches_brute_force_on_random_features() {
        for seed in 0..5 {
            let f = random_features(256, 6, 3.0, 100 + seed);
            let v = random_values(256 * 4, 200 + seed);
            let exact = gaussian_filter_bruteforce(&f, &v, 4).unwrap();
            let approx = build_lattice(&f).unwrap().filter(&v, 4).unwrap();
            let err = relative_error(&approx, &exact);
            assert!(err <= 0.05, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn low_dimensional_filters_are_accurate() {
        let f = random_features(300, 2, 8.0, 9);
        let v = random_values(300, 10);
        let exact = gaussian_filter_bruteforce(&f, &v, 1).unwrap();
        let approx = build_lattice(&f).unwrap().filter(&v, 1).unwrap();
        assert!(relative_error(&approx, &exact) <= 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn filter_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let f = random_features(60, 4, 3.0, seed);
            let lattice = build_lattice(&f).unwrap();
            let (v, w) = (random_values(120, seed + 1), random_values(120, seed + 2));
            let mixed: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            let lhs = lattice.filter(&mixed, 2).unwrap();
            let (fv, fw) = (lattice.filter(&v, 2).unwrap(), lattice.filter(&w, 2).unwrap());
            for ((l, x), y) in lhs.iter().zip(&fv).zip(&fw) {
                prop_assert!((l - (a * x + b * y)).abs() < 1e-9);
            }
        }

        #[test]
        fn mirrored_inputs_give_mirrored_outputs(seed in 0u64..1000) {
            let n = 40;
            let f = random_features(n, 3, 3.0, seed);
            let v = random_values(n, seed + 1);
            let rows: Vec<f64> = (0..n).rev().flat_map(|i| f.row(i).to_vec()).collect();
            let mirrored = FeatureMatrix::new(n, 3, rows).unwrap();
            let mv: Vec<f64> = v.iter().rev().copied().collect();
            let out = build_lattice(&f).unwrap().filter(&v, 1).unwrap();
            let mout = build_lattice(&mirrored).unwrap().filter(&mv, 1).unwrap();
            for (a, b) in out.iter().zip(mout.iter().rev()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
