//! Brute-force n-gram statistics and the recursive fallback formulation,
//! computed straight from the sentences without the count store.

use std::collections::{HashMap, HashSet};

pub type Gram = Vec<u32>;

pub struct BruteCounts {
    pub order: usize,
    pub bos: u32,
    pub vocab_size: usize,
    /// `raw[n - 1]`: every order-n gram of the padded sentences.
    pub raw: Vec<HashMap<Gram, u64>>,
    /// `kn[n - 1]` for `n < order`: continuation counts, raw for start grams.
    pub kn: Vec<HashMap<Gram, u64>>,
}

impl BruteCounts {
    pub fn new(sentences: &[Vec<u32>], vocab_size: usize, order: usize) -> Self {
        let bos = vocab_size as u32;
        let mut raw = vec![HashMap::new(); order];
        for s in sentences {
            let mut p = vec![bos; order - 1];
            p.extend_from_slice(s);
            for end in order - 1..p.len() {
                for n in 1..=order {
                    *raw[n - 1].entry(p[end + 1 - n..=end].to_vec()).or_insert(0) += 1;
                }
            }
        }
        let mut kn = Vec::new();
        for n in 1..order {
            let mut left: HashMap<Gram, HashSet<u32>> = HashMap::new();
            for g in raw[n].keys() {
                left.entry(g[1..].to_vec()).or_default().insert(g[0]);
            }
            let table = raw[n - 1]
                .iter()
                .map(|(g, &c)| {
                    let v = if g[0] == bos { c } else { left[g].len() as u64 };
                    (g.clone(), v)
                })
                .collect();
            kn.push(table);
        }
        BruteCounts {
            order,
            bos,
            vocab_size,
            raw,
            kn,
        }
    }

    pub fn table(&self, n: usize, kn: bool) -> &HashMap<Gram, u64> {
        if kn && n < self.order {
            &self.kn[n - 1]
        } else {
            &self.raw[n - 1]
        }
    }

    /// Successor counts of `ctx` in the order-`(ctx.len() + 1)` table.
    pub fn successors(&self, ctx: &[u32], kn: bool) -> Vec<(u32, u64)> {
        let n = ctx.len() + 1;
        let mut v: Vec<(u32, u64)> = self
            .table(n, kn)
            .iter()
            .filter(|(g, _)| &g[..n - 1] == ctx)
            .map(|(g, &c)| (g[n - 1], c))
            .collect();
        v.sort();
        v
    }

    /// `[total, unique, n1, n2, n3+]` of a context.
    pub fn stats(&self, ctx: &[u32], kn: bool) -> [u64; 5] {
        let s = self.successors(ctx, kn);
        [
            s.iter().map(|x| x.1).sum(),
            s.len() as u64,
            s.iter().filter(|x| x.1 == 1).count() as u64,
            s.iter().filter(|x| x.1 == 2).count() as u64,
            s.iter().filter(|x| x.1 >= 3).count() as u64,
        ]
    }

    pub fn count_of_counts(&self, n: usize, kn: bool) -> [u64; 4] {
        let mut out = [0; 4];
        for &c in self.table(n, kn).values() {
            if (1..=4).contains(&c) {
                out[c as usize - 1] += 1;
            }
        }
        out
    }
}

/// Modified KN discounts from count-of-counts, written out directly.
pub fn modified_discounts(n: [u64; 4]) -> [f64; 3] {
    let (n1, n2, n3, n4) = (n[0] as f64, n[1] as f64, n[2] as f64, n[3] as f64);
    if n1 == 0.0 {
        return [0.0; 3];
    }
    let y = n1 / (n1 + 2.0 * n2);
    if n2 == 0.0 || n3 == 0.0 {
        let d = y.min(1.0);
        return [d, d, d];
    }
    [
        (1.0 - 2.0 * y * n2 / n1).clamp(0.0, 1.0),
        (2.0 - 3.0 * y * n3 / n2).clamp(0.0, 2.0),
        (3.0 - 4.0 * y * n4 / n3).clamp(0.0, 3.0),
    ]
}

pub enum OracleSmoothing {
    WittenBell,
    /// Discounts per order (index 0 = unigram) for counts 1, 2, 3+.
    Kn(Vec<[f64; 3]>),
}

fn disc(d: &[f64; 3], c: u64) -> f64 {
    match c {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

/// Interpolated estimate of `w` after `ctx` by the fallback recursion:
/// `P(w | ctx) = a(ctx) P(w | shorter ctx) + (1 - a(ctx)) P_n(w | ctx)`.
pub fn recursive_prob(b: &BruteCounts, sm: &OracleSmoothing, ctx: &[u32], w: u32) -> f64 {
    let n = ctx.len() + 1;
    match sm {
        OracleSmoothing::WittenBell => {
            let succ = b.successors(ctx, false);
            let total: u64 = succ.iter().map(|x| x.1).sum();
            let c = succ.iter().find(|x| x.0 == w).map_or(0, |x| x.1);
            if n == 1 {
                return c as f64 / total as f64;
            }
            let lower = recursive_prob(b, sm, &ctx[1..], w);
            if total == 0 {
                return lower;
            }
            let u = succ.len() as f64;
            let a = u / (total as f64 + u);
            a * lower + (1.0 - a) * c as f64 / total as f64
        }
        OracleSmoothing::Kn(ds) => {
            let succ = b.successors(ctx, true);
            let total: u64 = succ.iter().map(|x| x.1).sum();
            let d = &ds[n - 1];
            let c = succ.iter().find(|x| x.0 == w).map_or(0, |x| x.1);
            let removed: f64 = succ.iter().map(|x| disc(d, x.1).min(x.1 as f64)).sum();
            let lower = if n == 1 {
                1.0 / b.vocab_size as f64
            } else {
                recursive_prob(b, sm, &ctx[1..], w)
            };
            if total == 0 {
                return lower;
            }
            let t = total as f64;
            (c as f64 - disc(d, c)).max(0.0) / t + removed / t * lower
        }
    }
}
