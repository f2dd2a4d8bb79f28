use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// An item with its score and traversal position.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored<T> {
    pub score: f64,
    pub order: u64,
    pub item: T,
}

impl<T> Scored<T> {
    /// Better items sort first: higher score, then earlier traversal.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.order.cmp(&other.order))
    }
}

struct Entry<T>(Scored<T>);

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T> Eq for Entry<T> {}
impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Entry<T> {
    // the heap's max is the worst retained entry
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank(&other.0)
    }
}

/// Bounded selection of the `k` best-scoring items in O(k) memory.
pub struct TopK<T> {
    k: usize,
    heap: BinaryHeap<Entry<T>>,
}

impl<T> TopK<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 20)),
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, score: f64, order: u64, item: T) {
        self.push_scored(Scored { score, order, item });
    }

    pub fn push_scored(&mut self, s: Scored<T>) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Entry(s));
            return;
        }
        let worst = self.heap.peek().expect("non-empty");
        if s.rank(&worst.0) == Ordering::Less {
            self.heap.pop();
            self.heap.push(Entry(s));
        }
    }

    /// Folds another shard in. The result does not depend on how the stream
    /// was sharded because ties are broken by the global traversal order.
    pub fn merge(&mut self, other: TopK<T>) {
        for e in other.heap {
            self.push_scored(e.0);
        }
    }

    /// Best first: score descending, then traversal order ascending.
    pub fn into_sorted(self) -> Vec<Scored<T>> {
        let mut v: Vec<Scored<T>> = self.heap.into_iter().map(|e| e.0).collect();
        v.sort_by(|a, b| a.rank(b));
        v
    }
}

/// One-pass selection over a scored stream; items are numbered by position.
pub fn select_top_k<T>(stream: impl IntoIterator<Item = (f64, T)>, k: usize) -> Vec<Scored<T>> {
    let mut top = TopK::new(k);
    for (i, (score, item)) in stream.into_iter().enumerate() {
        top.push(score, i as u64, item);
    }
    top.into_sorted()
}
