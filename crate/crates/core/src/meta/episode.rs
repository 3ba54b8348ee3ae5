use rand::seq::SliceRandom;
use rand::Rng;

use crate::chem::PropertyDataset;
use crate::error::{Error, Result};

/// One 2-way K-shot task: `K` negatives then `K` positives in the support
/// set, and a disjoint query set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub property: usize,
    pub support: Vec<usize>,
    pub support_labels: Vec<bool>,
    pub query: Vec<usize>,
    pub query_labels: Vec<bool>,
}

impl Episode {
    pub fn k(&self) -> usize {
        self.support.len() / 2
    }
}

/// Samples `k` support molecules per class without replacement, then up to
/// `n_query` queries from the remainder, balanced between classes when the
/// remainder allows it.
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &PropertyDataset,
    property: usize,
    k: usize,
    n_query: usize,
    rng: &mut R,
) -> Result<Episode> {
    let (mut neg, mut pos) = dataset.class_members(property);
    let name = &dataset.property_names[property];
    if k == 0 || neg.len() < k || pos.len() < k {
        return Err(Error::TaskUnusable(format!(
            "{name}: {} inactive and {} active molecules cannot supply {k} per class",
            neg.len(),
            pos.len()
        )));
    }
    neg.shuffle(rng);
    pos.shuffle(rng);
    let (rest_neg, rest_pos) = (&neg[k..], &pos[k..]);
    let half = n_query / 2;
    let take_pos = rest_pos.len().min(half.max(n_query.saturating_sub(rest_neg.len())));
    let take_neg = rest_neg.len().min(n_query - take_pos);

    let mut support = neg[..k].to_vec();
    support.extend_from_slice(&pos[..k]);
    let mut support_labels = vec![false; k];
    support_labels.extend(std::iter::repeat(true).take(k));
    let mut query = rest_neg[..take_neg].to_vec();
    query.extend_from_slice(&rest_pos[..take_pos]);
    let mut query_labels = vec![false; take_neg];
    query_labels.extend(std::iter::repeat(true).take(take_pos));
    Ok(Episode {
        property,
        support,
        support_labels,
        query,
        query_labels,
    })
}

/// Whether a property can supply a training episode: `k` per class and at
/// least one molecule left over for the query set.
pub fn trainable(dataset: &PropertyDataset, property: usize, k: usize) -> bool {
    let (neg, pos) = dataset.class_members(property);
    neg.len() >= k && pos.len() >= k && neg.len() + pos.len() > 2 * k
}
