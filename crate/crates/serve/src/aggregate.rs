use serde::{Deserialize, Serialize};

use cellbloom_core::manifest::{CellClass, ClassPairMap, FlowerClass, NUM_CLASSES};

use crate::error::{ServeError, ServeResult};

/// Majority label of one task, mapped back to the cell domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub task_id: u64,
    pub source_id: String,
    pub flower_class: FlowerClass,
    pub cell_class: CellClass,
    /// Votes per flower class in canonical order.
    pub histogram: [u32; NUM_CLASSES],
    pub agreement: f64,
}

/// Majority vote with ties going to the lowest flower class index.
pub fn aggregate_votes(
    task_id: u64,
    source_id: &str,
    votes: impl IntoIterator<Item = FlowerClass>,
    pm: &ClassPairMap,
) -> ServeResult<AggregatedLabel> {
    let mut histogram = [0u32; NUM_CLASSES];
    for v in votes {
        histogram[v.index()] += 1;
    }
    let total: u32 = histogram.iter().sum();
    if total == 0 {
        return Err(ServeError::NoVotes(task_id));
    }
    let mut winner = 0;
    for (i, &n) in histogram.iter().enumerate() {
        if n > histogram[winner] {
            winner = i;
        }
    }
    let flower_class = FlowerClass::ALL[winner];
    Ok(AggregatedLabel {
        task_id,
        source_id: source_id.to_string(),
        flower_class,
        cell_class: pm.unmap_class(flower_class),
        histogram,
        agreement: histogram[winner] as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use FlowerClass::*;

    fn agg(votes: &[FlowerClass]) -> AggregatedLabel {
        aggregate_votes(1, "x", votes.iter().copied(), &ClassPairMap::default()).unwrap()
    }

    #[test]
    fn majority_maps_back_to_cell() {
        let a = agg(&[Daisy, Crocus, Daisy]);
        assert_eq!(a.flower_class, Daisy);
        assert_eq!(a.cell_class, CellClass::MastCell);
        assert!((a.agreement - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let a = agg(&[Sunflower, Coltsfoot]);
        assert_eq!(a.flower_class, Coltsfoot);
        assert_eq!(a.cell_class, CellClass::Neutrophil);
        assert_eq!(a.agreement, 0.5);
    }

    #[test]
    fn single_vote_is_unanimous() {
        let a = agg(&[Crocus]);
        assert_eq!(a.flower_class, Crocus);
        assert_eq!(a.agreement, 1.0);
        assert_eq!(a.histogram.iter().sum::<u32>(), 1);
    }

    #[test]
    fn no_votes_is_an_error() {
        assert!(matches!(
            aggregate_votes(9, "x", [], &ClassPairMap::default()),
            Err(ServeError::NoVotes(9))
        ));
    }
}
