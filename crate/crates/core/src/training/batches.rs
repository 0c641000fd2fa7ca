use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Video indices of one balanced batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub normal: Vec<usize>,
    pub abnormal: Vec<usize>,
}

impl Batch {
    /// Normal videos first, then abnormal.
    pub fn videos(&self) -> impl Iterator<Item = usize> + '_ {
        self.normal.iter().chain(&self.abnormal).copied()
    }

    pub fn len(&self) -> usize {
        self.normal.len() + self.abnormal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Endless reshuffled stream over one class.
struct ClassStream<'a> {
    items: &'a [usize],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> ClassStream<'a> {
    fn new(items: &'a [usize]) -> Self {
        Self {
            items,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.order.len() {
            self.order = self.items.to_vec();
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Balanced batches of `batch_size/2` normal and `batch_size/2` abnormal videos.
///
/// An epoch has `⌈max(#normal, #abnormal) / (batch_size/2)⌉` batches, so every
/// video is visited at least once; the smaller class is resampled.
pub fn make_batches(dataset: &Dataset, batch_size: usize, rng: &mut Rng) -> Result<Vec<Batch>> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "batch size must be even and at least 2, got {batch_size}"
        )));
    }
    let normal = dataset.indices_with_label(0);
    let abnormal = dataset.indices_with_label(1);
    if normal.is_empty() || abnormal.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training needs both classes, found {} normal and {} abnormal videos",
            normal.len(),
            abnormal.len()
        )));
    }
    let half = batch_size / 2;
    let count = normal.len().max(abnormal.len()).div_ceil(half);
    let mut ns = ClassStream::new(&normal);
    let mut an = ClassStream::new(&abnormal);
    Ok((0..count)
        .map(|_| Batch {
            normal: (0..half).map(|_| ns.next(rng)).collect(),
            abnormal: (0..half).map(|_| an.next(rng)).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VideoSample;
    use crate::numcore::Matrix;

    fn dataset(normal: usize, abnormal: usize) -> Dataset {
        let v = |i: usize, label: u8| VideoSample {
            id: format!("v{i}"),
            features: Matrix::zeros(2, 2),
            label,
            frame_count: 32,
            anomaly_intervals: vec![],
        };
        let mut videos: Vec<_> = (0..normal).map(|i| v(i, 0)).collect();
        videos.extend((0..abnormal).map(|i| v(normal + i, 1)));
        Dataset { videos }
    }

    #[test]
    fn balanced_halves() {
        let ds = dataset(100, 70);
        let b = make_batches(&ds, 64, &mut Rng::new(0)).unwrap();
        assert_eq!(b.len(), 4);
        for batch in &b {
            assert_eq!(batch.normal.len(), 32);
            assert_eq!(batch.abnormal.len(), 32);
            assert!(batch.normal.iter().all(|&i| ds.videos[i].label == 0));
            assert!(batch.abnormal.iter().all(|&i| ds.videos[i].label == 1));
        }
        let mut seen: Vec<usize> = b.iter().flat_map(|x| x.videos()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 170);
    }

    #[test]
    fn tiny_dataset_repeats() {
        let ds = dataset(1, 1);
        let b = make_batches(&ds, 2, &mut Rng::new(0)).unwrap();
        assert_eq!(b, vec![Batch { normal: vec![0], abnormal: vec![1] }]);
    }

    #[test]
    fn deterministic_and_validated() {
        let ds = dataset(10, 9);
        let a = make_batches(&ds, 4, &mut Rng::new(3)).unwrap();
        let b = make_batches(&ds, 4, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(make_batches(&ds, 3, &mut Rng::new(0)).is_err());
        assert!(make_batches(&dataset(3, 0), 2, &mut Rng::new(0)).is_err());
    }
}
