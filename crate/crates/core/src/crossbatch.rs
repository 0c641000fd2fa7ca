//! Cross-batch memory of cluster centers.
//!
//! Every batch pushes the two centers found for each class. The memory turns
//! what it has seen into K-means initializations (or extra samples) for later
//! batches, according to one of four strategies:
//!
//! | strategy | source                               | use                                            |
//! |----------|--------------------------------------|------------------------------------------------|
//! | `Way1`   | previous epoch's centers             | 2-means over them, once per epoch → init       |
//! | `Way2`   | last pushed pair                     | init                                           |
//! | `Way3`   | every pair pushed so far in the run  | 2-means over them, every batch → init          |
//! | `Way4`   | previous epoch's centers             | random init, centers join as extra samples     |
//!
//! Any strategy without data (e.g. during the first epoch) falls back to a
//! random pair with no extras; `None` always does.

use std::fmt;
use std::str::FromStr;

use crate::clustering::{kmeans2_restarts, InitStrategy, KMeansParams};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Strategy {
    None,
    #[default]
    Way1,
    Way2,
    Way3,
    Way4,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::None,
        Strategy::Way1,
        Strategy::Way2,
        Strategy::Way3,
        Strategy::Way4,
    ];

    pub(crate) fn code(self) -> u8 {
        match self {
            Strategy::None => 0,
            Strategy::Way1 => 1,
            Strategy::Way2 => 2,
            Strategy::Way3 => 3,
            Strategy::Way4 => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Strategy::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::None => "none",
            Strategy::Way1 => "way1",
            Strategy::Way2 => "way2",
            Strategy::Way3 => "way3",
            Strategy::Way4 => "way4",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown strategy {s:?} (expected none, way1, way2, way3 or way4)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoClass {
    Normal,
    Abnormal,
}

pub type CenterPair = (Vec<f64>, Vec<f64>);

/// Center lists for one class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassMemory {
    pub current: Vec<CenterPair>,
    pub previous: Vec<CenterPair>,
    pub history: Vec<CenterPair>,
}

/// Restarts used when clustering stored centers.
pub const MEMORY_RESTARTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CenterMemory {
    strategy: Strategy,
    dim: Option<usize>,
    normal: ClassMemory,
    abnormal: ClassMemory,
    // way1 initializations, computed once per epoch
    cache_normal: Option<InitStrategy>,
    cache_abnormal: Option<InitStrategy>,
}

impl CenterMemory {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            dim: None,
            normal: ClassMemory::default(),
            abnormal: ClassMemory::default(),
            cache_normal: None,
            cache_abnormal: None,
        }
    }

    /// Restores a memory from its lists (used when loading checkpoints).
    pub fn from_parts(strategy: Strategy, normal: ClassMemory, abnormal: ClassMemory) -> Result<Self> {
        let mut mem = Self::new(strategy);
        for (c1, c2) in [&normal, &abnormal]
            .iter()
            .flat_map(|m| m.current.iter().chain(&m.previous).chain(&m.history))
        {
            mem.check_dim(c1.len())?;
            mem.check_dim(c2.len())?;
        }
        mem.normal = normal;
        mem.abnormal = abnormal;
        Ok(mem)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn class(&self, class: VideoClass) -> &ClassMemory {
        match class {
            VideoClass::Normal => &self.normal,
            VideoClass::Abnormal => &self.abnormal,
        }
    }

    fn class_mut(&mut self, class: VideoClass) -> &mut ClassMemory {
        match class {
            VideoClass::Normal => &mut self.normal,
            VideoClass::Abnormal => &mut self.abnormal,
        }
    }

    fn cache_mut(&mut self, class: VideoClass) -> &mut Option<InitStrategy> {
        match class {
            VideoClass::Normal => &mut self.cache_normal,
            VideoClass::Abnormal => &mut self.cache_abnormal,
        }
    }

    fn check_dim(&mut self, len: usize) -> Result<()> {
        match self.dim {
            Some(d) if d != len => Err(Error::shape(
                "CenterMemory",
                format!("center of length {len}, memory holds length {d}"),
            )),
            _ => {
                self.dim = Some(len);
                Ok(())
            }
        }
    }

    pub fn push_centers(&mut self, class: VideoClass, c1: Vec<f64>, c2: Vec<f64>) -> Result<()> {
        if c1.len() != c2.len() {
            return Err(Error::shape("push_centers", "centers differ in length"));
        }
        self.check_dim(c1.len())?;
        let mem = self.class_mut(class);
        mem.current.push((c1.clone(), c2.clone()));
        mem.history.push((c1, c2));
        Ok(())
    }

    /// Moves the current epoch's lists into the previous slot.
    pub fn rollover_epoch(&mut self) {
        for mem in [&mut self.normal, &mut self.abnormal] {
            mem.previous = std::mem::take(&mut mem.current);
        }
        self.cache_normal = None;
        self.cache_abnormal = None;
    }

    /// K-means initialization (and extra samples) for the next batch of `class`.
    ///
    /// `rng` is only consumed when stored centers are clustered.
    pub fn derive_init(
        &mut self,
        class: VideoClass,
        rng: &mut Rng,
    ) -> Result<(InitStrategy, Option<Matrix>)> {
        let fallback = (InitStrategy::RandomPair, None);
        let params = KMeansParams::default();
        match self.strategy {
            Strategy::None => Ok(fallback),
            Strategy::Way1 => {
                if let Some(init) = self.cache_mut(class).clone() {
                    return Ok((init, None));
                }
                let Some(points) = pairs_matrix(&self.class(class).previous)? else {
                    return Ok(fallback);
                };
                let r = kmeans2_restarts(&points, None, params, MEMORY_RESTARTS, rng)?;
                let [c1, c2] = r.centers;
                let init = InitStrategy::GivenCenters(c1, c2);
                *self.cache_mut(class) = Some(init.clone());
                Ok((init, None))
            }
            Strategy::Way2 => Ok(match self.class(class).history.last() {
                Some((c1, c2)) => (InitStrategy::GivenCenters(c1.clone(), c2.clone()), None),
                None => fallback,
            }),
            Strategy::Way3 => {
                let Some(points) = pairs_matrix(&self.class(class).history)? else {
                    return Ok(fallback);
                };
                let r = kmeans2_restarts(&points, None, params, MEMORY_RESTARTS, rng)?;
                let [c1, c2] = r.centers;
                Ok((InitStrategy::GivenCenters(c1, c2), None))
            }
            Strategy::Way4 => Ok(match pairs_matrix(&self.class(class).previous)? {
                Some(extra) => (InitStrategy::RandomPair, Some(extra)),
                None => fallback,
            }),
        }
    }
}

/// Stacks every center of the pairs as rows; `None` when empty.
fn pairs_matrix(pairs: &[CenterPair]) -> Result<Option<Matrix>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let rows: Vec<&[f64]> = pairs
        .iter()
        .flat_map(|(a, b)| [a.as_slice(), b.as_slice()])
        .collect();
    Ok(Some(Matrix::from_rows(&rows)?))
}
