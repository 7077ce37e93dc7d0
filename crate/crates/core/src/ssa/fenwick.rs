/// Growable binary indexed tree over nonnegative `f64` weights.
///
/// Supports O(log n) point updates and O(log n) inverse-CDF selection. The
/// raw weights are kept alongside the tree so it can be rebuilt from scratch
/// to shed accumulated round-off.
#[derive(Debug, Clone, Default)]
pub struct Fenwick {
    /// 1-indexed; `tree[cap]` holds the total.
    tree: Vec<f64>,
    values: Vec<f64>,
}

impl Fenwick {
    pub fn with_capacity(n: usize) -> Self {
        let cap = n.max(1).next_power_of_two();
        Self { tree: vec![0.0; cap + 1], values: vec![0.0; cap] }
    }

    pub fn capacity(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.values.get(i).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(value >= 0.0);
        if i >= self.capacity() {
            self.grow(i + 1);
        }
        let delta = value - self.values[i];
        self.values[i] = value;
        if delta == 0.0 {
            return;
        }
        let cap = self.capacity();
        let mut k = i + 1;
        while k <= cap {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    /// Sum of all weights as maintained by the tree.
    #[inline]
    pub fn total(&self) -> f64 {
        self.tree[self.capacity()]
    }

    /// Sum of weights with index `< i`.
    pub fn prefix(&self, i: usize) -> f64 {
        let mut k = i.min(self.capacity());
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Index `i` with `prefix(i) <= target < prefix(i + 1)` and a positive
    /// weight. Falls back to the last positive weight when round-off pushes
    /// the target past the end.
    pub fn find(&self, target: f64) -> Option<usize> {
        let cap = self.capacity();
        let mut pos = 0usize;
        let mut rem = target;
        let mut step = cap;
        while step > 0 {
            let next = pos + step;
            if next <= cap && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        if pos < cap && self.values[pos] > 0.0 {
            return Some(pos);
        }
        // Round-off: nearest positive weight, searching downward first.
        self.values[..pos.min(cap)].iter().rposition(|&v| v > 0.0).or_else(|| self.values.iter().position(|&v| v > 0.0))
    }

    /// Rebuilds the tree from the stored weights in O(n).
    pub fn rebuild(&mut self) {
        let cap = self.capacity();
        self.tree.iter_mut().for_each(|t| *t = 0.0);
        self.tree[1..].copy_from_slice(&self.values);
        for k in 1..=cap {
            let parent = k + (k & k.wrapping_neg());
            if parent <= cap {
                self.tree[parent] += self.tree[k];
            }
        }
    }

    /// Compensated (Neumaier) sum of the stored weights.
    pub fn exact_total(&self) -> f64 {
        neumaier_sum(self.values.iter().copied())
    }

    fn grow(&mut self, needed: usize) {
        let cap = needed.next_power_of_two();
        self.values.resize(cap, 0.0);
        self.tree = vec![0.0; cap + 1];
        self.rebuild();
    }
}

pub fn neumaier_sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Distance between two finite doubles in units in the last place.
pub fn ulps_apart(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}
