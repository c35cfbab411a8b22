//! Artificial domains carved out of a single dataset.
//!
//! Domain labels are zero-based (`0..n_domains`) throughout the crate.

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Redraws allowed when a split leaves some (domain, group) cell empty.
pub const MAX_SPLIT_REDRAWS: usize = 100;

/// Domain label for every row of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainAssignment {
    labels: Vec<usize>,
    n_domains: usize,
}

impl DomainAssignment {
    pub fn new(labels: Vec<usize>, n_domains: usize) -> Result<Self> {
        if n_domains == 0 {
            return Err(Error::InvalidArgument("need at least one domain".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&e| e >= n_domains) {
            return Err(Error::InvalidArgument(format!(
                "domain label {bad} out of range for {n_domains} domains"
            )));
        }
        Ok(Self { labels, n_domains })
    }

    /// Every row in domain 0.
    pub fn single(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            n_domains: 1,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_domains(&self) -> usize {
        self.n_domains
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_domains];
        for &e in &self.labels {
            sizes[e] += 1;
        }
        sizes
    }
}

/// Strategy for assigning rows to domains.
pub trait DomainSplitter {
    fn split(&self, rng: &mut Rng, n: usize, n_domains: usize) -> Result<DomainAssignment>;
}

/// Each row lands in any domain with equal probability, independently.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformSplitter;

impl DomainSplitter for UniformSplitter {
    fn split(&self, rng: &mut Rng, n: usize, n_domains: usize) -> Result<DomainAssignment> {
        split_random(rng, n, n_domains)
    }
}

pub fn split_random(rng: &mut Rng, n: usize, n_domains: usize) -> Result<DomainAssignment> {
    if n_domains == 0 || n < n_domains {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} rows into {n_domains} domains"
        )));
    }
    let labels = (0..n).map(|_| rng.next_below(n_domains)).collect();
    DomainAssignment::new(labels, n_domains)
}

/// Which treatment arm a partition keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Control,
    Treatment,
    Both,
}

impl Group {
    fn keeps(self, t: u8) -> bool {
        match self {
            Group::Control => t == 0,
            Group::Treatment => t == 1,
            Group::Both => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Treatment => "treatment",
            Group::Both => "any",
        }
    }
}

/// One dataset per domain holding the rows of `group`, in their original
/// order. Fails if any domain ends up empty.
pub fn partition(ds: &Dataset, assign: &DomainAssignment, group: Group) -> Result<Vec<Dataset>> {
    if assign.len() != ds.len() {
        return Err(Error::LengthMismatch {
            left: ds.len(),
            right: assign.len(),
        });
    }
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); assign.n_domains()];
    for (i, (&e, &t)) in assign.labels().iter().zip(&ds.t).enumerate() {
        if group.keeps(t) {
            cells[e].push(i);
        }
    }
    cells
        .iter()
        .enumerate()
        .map(|(domain, rows)| {
            if rows.is_empty() {
                Err(Error::EmptyDomainGroup {
                    domain,
                    group: group.name(),
                })
            } else {
                Ok(ds.select(rows))
            }
        })
        .collect()
}

/// Splits `ds` with `splitter`, redrawing from fresh child streams until every
/// domain holds at least one control and one treated row.
pub fn split_populated(
    splitter: &dyn DomainSplitter,
    rng: &Rng,
    ds: &Dataset,
    n_domains: usize,
) -> Result<DomainAssignment> {
    let mut last_err = None;
    for attempt in 0..=MAX_SPLIT_REDRAWS {
        let assign = splitter.split(
            &mut rng.split_indexed("split", attempt),
            ds.len(),
            n_domains,
        )?;
        let populated = partition(ds, &assign, Group::Control)
            .and_then(|_| partition(ds, &assign, Group::Treatment));
        match populated {
            Ok(_) => return Ok(assign),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}
