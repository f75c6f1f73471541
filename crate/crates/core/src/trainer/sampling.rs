//! Domain-structured batch sampling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::TrainConfig;
use crate::datagen::{make_task, DomainSpec, SamplePair, SceneBank, Task};
use crate::error::{Error, Result};

/// Random crop, horizontal flip and quarter-turn rotation applied
/// identically to both images of a pair.
pub fn augment_pair<R: Rng>(pair: &SamplePair, crop: usize, rng: &mut R) -> Result<SamplePair> {
    let (h, w) = pair.hazy.dims();
    if crop > h || crop > w {
        return Err(Error::Shape(format!("crop {crop} exceeds {h}x{w} pair")));
    }
    let top = rng.gen_range(0..=h - crop);
    let left = rng.gen_range(0..=w - crop);
    let flip = rng.gen_bool(0.5);
    let turns = rng.gen_range(0..4);
    let apply = |im: &crate::Image| -> Result<crate::Image> {
        let mut out = im.crop(top, left, crop, crop)?;
        if flip {
            out = out.flip_horizontal();
        }
        Ok(out.rotate90(turns))
    };
    SamplePair::new(apply(&pair.hazy)?, apply(&pair.clear)?, pair.domain_id)
}

/// Domain of each task in a batch.
///
/// With three or more tasks, one domain contributes exactly two tasks and
/// the others come from the remaining domains, cycling through them when
/// there are more slots than domains. With two tasks the draw is
/// unconstrained. The order is shuffled.
pub fn plan_domains<R: Rng>(num_domains: usize, num_tasks: usize, rng: &mut R) -> Result<Vec<usize>> {
    if num_domains == 0 {
        return Err(Error::config("data.train_domains", "no training domains"));
    }
    if num_tasks < 3 {
        return Ok((0..num_tasks).map(|_| rng.gen_range(0..num_domains)).collect());
    }
    if num_domains < 2 {
        return Ok(vec![0; num_tasks]);
    }
    let paired = rng.gen_range(0..num_domains);
    let mut others: Vec<usize> = (0..num_domains).filter(|&d| d != paired).collect();
    others.shuffle(rng);
    let mut plan = vec![paired, paired];
    plan.extend(others.iter().cycle().take(num_tasks - 2));
    plan.shuffle(rng);
    Ok(plan)
}

/// `N` augmented tasks of `K` pairs each; task domains follow [`plan_domains`].
pub fn sample_batch<R: Rng>(
    domains: &[DomainSpec],
    cfg: &TrainConfig,
    scenes: &SceneBank,
    rng: &mut R,
) -> Result<Vec<Task>> {
    if cfg.dcr_enabled && domains.len() < 2 {
        return Err(Error::config(
            "data.train_domains",
            "the contrastive term needs at least 2 training domains",
        ));
    }
    let plan = plan_domains(domains.len(), cfg.num_tasks, rng)?;
    plan.into_iter()
        .map(|d| {
            let task = make_task(&domains[d], scenes, cfg.samples_per_task, rng)?;
            let pairs = task
                .pairs
                .iter()
                .map(|p| augment_pair(p, cfg.crop_size, rng))
                .collect::<Result<Vec<_>>>()?;
            Task::new(pairs, task.domain_id)
        })
        .collect()
}

/// Whether a batch has exactly one repeated domain appearing twice and at
/// least one task from another domain.
pub fn satisfies_pairing(domain_ids: &[usize]) -> bool {
    let mut counts = std::collections::BTreeMap::new();
    for d in domain_ids {
        *counts.entry(d).or_insert(0usize) += 1;
    }
    let pairs = counts.values().filter(|&&c| c == 2).count();
    let over = counts.values().any(|&c| c > 2);
    pairs == 1 && !over && counts.len() >= 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_domains_three_tasks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let plan = plan_domains(2, 3, &mut rng).unwrap();
            assert!(satisfies_pairing(&plan), "{plan:?}");
        }
    }

    #[test]
    fn pairing_predicate() {
        assert!(satisfies_pairing(&[0, 0, 1]));
        assert!(satisfies_pairing(&[2, 0, 1, 2]));
        assert!(!satisfies_pairing(&[0, 1, 2]));
        assert!(!satisfies_pairing(&[0, 0, 0]));
        assert!(!satisfies_pairing(&[0, 0]));
    }
}
