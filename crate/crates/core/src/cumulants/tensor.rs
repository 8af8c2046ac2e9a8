use rayon::prelude::*;

fn binom(n: usize, k: usize) -> usize {
    match k {
        1 => n,
        2 => n * n.saturating_sub(1) / 2,
        3 => n * n.saturating_sub(1) * n.saturating_sub(2) / 6,
        4 => n * n.saturating_sub(1) * n.saturating_sub(2) * n.saturating_sub(3) / 24,
        _ => unreachable!(),
    }
}

fn sort4(mut q: [usize; 4]) -> [usize; 4] {
    q.sort_unstable();
    q
}

/// Number of distinct orderings of a sorted quadruple.
pub fn multiplicity4(q: &[usize; 4]) -> usize {
    let mut denom = 1;
    let mut run = 1;
    for i in 1..4 {
        if q[i] == q[i - 1] {
            run += 1;
            denom *= run;
        } else {
            run = 1;
        }
    }
    24 / denom
}

/// Number of distinct orderings of a sorted triple.
pub fn multiplicity3(q: &[usize; 3]) -> usize {
    match (q[0] == q[1], q[1] == q[2]) {
        (true, true) => 1,
        (false, false) => 6,
        _ => 3,
    }
}

/// Totally symmetric rank-4 tensor storing one value per sorted index
/// quadruple `i ≤ j ≤ k ≤ l`, in colexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor4 {
    n: usize,
    values: Vec<f64>,
}

impl SymTensor4 {
    pub fn len_for(n: usize) -> usize {
        binom(n + 3, 4)
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; Self::len_for(n)] }
    }

    /// Fill every sorted quadruple from `f`, in parallel over the last index.
    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn([usize; 4]) -> f64 + Sync,
    {
        let mut values = vec![0.0; Self::len_for(n)];
        let mut slabs = Vec::with_capacity(n);
        let mut rest = values.as_mut_slice();
        for l in 0..n {
            let (slab, tail) = rest.split_at_mut(binom(l + 4, 4) - binom(l + 3, 4));
            slabs.push((l, slab));
            rest = tail;
        }
        slabs.into_par_iter().for_each(|(l, slab)| {
            let mut idx = 0;
            for k in 0..=l {
                for j in 0..=k {
                    for i in 0..=j {
                        slab[idx] = f([i, j, k, l]);
                        idx += 1;
                    }
                }
            }
        });
        Self { n, values }
    }

    /// Wrap packed colex values.
    pub fn from_values(n: usize, values: Vec<f64>) -> crate::Result<Self> {
        if values.len() != Self::len_for(n) {
            return Err(crate::Error::DimensionMismatch(format!(
                "{} packed values for n = {n}, expected {}",
                values.len(),
                Self::len_for(n)
            )));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted_index(q: &[usize; 4]) -> usize {
        binom(q[3] + 3, 4) + binom(q[2] + 2, 3) + binom(q[1] + 1, 2) + q[0]
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.values[Self::sorted_index(&sort4([a, b, c, d]))]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        self.values[Self::sorted_index(&sort4([a, b, c, d]))] = v;
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// Visit every stored entry with its sorted quadruple, in parallel over
    /// the last index, folding into per-thread accumulators.
    pub fn par_fold<A, I, F, R>(&self, init: I, fold: F, reduce: R) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, [usize; 4], f64) + Sync + Send,
        R: Fn(A, A) -> A + Sync + Send,
    {
        (0..self.n)
            .into_par_iter()
            .fold(&init, |mut acc, l| {
                let mut idx = binom(l + 3, 4);
                for k in 0..=l {
                    for j in 0..=k {
                        for i in 0..=j {
                            fold(&mut acc, [i, j, k, l], self.values[idx]);
                            idx += 1;
                        }
                    }
                }
                acc
            })
            .reduce(&init, reduce)
    }
}

/// Totally symmetric rank-3 tensor over sorted triples.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    n: usize,
    values: Vec<f64>,
}

impl SymTensor3 {
    pub fn len_for(n: usize) -> usize {
        binom(n + 2, 3)
    }

    pub fn from_fn<F: FnMut([usize; 3]) -> f64>(n: usize, mut f: F) -> Self {
        let mut values = Vec::with_capacity(Self::len_for(n));
        for k in 0..n {
            for j in 0..=k {
                for i in 0..=j {
                    values.push(f([i, j, k]));
                }
            }
        }
        Self { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sorted_index(q: &[usize; 3]) -> usize {
        binom(q[2] + 2, 3) + binom(q[1] + 1, 2) + q[0]
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        let mut q = [a, b, c];
        q.sort_unstable();
        self.values[Self::sorted_index(&q)]
    }

    /// Sorted triples with values in storage order.
    pub fn iter(&self) -> impl Iterator<Item = ([usize; 3], f64)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |k| (0..=k).flat_map(move |j| (0..=j).map(move |i| [i, j, k])))
            .zip(self.values.iter().copied())
    }
}
