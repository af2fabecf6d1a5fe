use rand::seq::index;
use rand::Rng;

use super::state::RoundPlan;
use crate::error::{Error, Result};

/// Draws `k` distinct clients from every group, uniformly and independently,
/// consuming `rng` in group order. Each selection is returned in ascending id order.
pub fn sample_clients<R: Rng + ?Sized>(
    rng: &mut R,
    groups: &[Vec<usize>],
    k: usize,
) -> Result<RoundPlan> {
    let mut per_task = Vec::with_capacity(groups.len());
    for (t, members) in groups.iter().enumerate() {
        if k == 0 || k > members.len() {
            return Err(Error::Config(format!(
                "cannot select {k} clients from task group {t} of size {}",
                members.len()
            )));
        }
        let mut chosen: Vec<usize> = index::sample(rng, members.len(), k)
            .into_iter()
            .map(|i| members[i])
            .collect();
        chosen.sort_unstable();
        per_task.push(chosen);
    }
    Ok(RoundPlan { per_task })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn full_group_in_canonical_order() {
        let mut rng = rng_from_seed(1);
        let plan = sample_clients(&mut rng, &[vec![9, 3, 5], vec![4, 1]], 3);
        assert!(plan.is_err());
        let plan = sample_clients(&mut rng, &[vec![9, 3, 5]], 3).unwrap();
        assert_eq!(plan.per_task, vec![vec![3, 5, 9]]);
    }

    #[test]
    fn singleton_group() {
        let mut rng = rng_from_seed(2);
        let plan = sample_clients(&mut rng, &[vec![7]], 1).unwrap();
        assert_eq!(plan.per_task, vec![vec![7]]);
    }

    #[test]
    fn deterministic_given_rng_state() {
        let groups = vec![(0..10).collect::<Vec<_>>(), (10..20).collect()];
        let a = sample_clients(&mut rng_from_seed(5), &groups, 4).unwrap();
        let b = sample_clients(&mut rng_from_seed(5), &groups, 4).unwrap();
        assert_eq!(a, b);
        for sel in &a.per_task {
            let mut d = sel.clone();
            d.dedup();
            assert_eq!(d.len(), 4);
        }
    }
}
