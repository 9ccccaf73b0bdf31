use rand::Rng;

use crate::data::{subset_balanced, Dataset};
use crate::error::Result;

/// Small random sample of an old task kept for rehearsal.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    pub samples: Dataset,
    pub per_class: usize,
    pub source_task: String,
}

/// Keeps `per_class` images of each of the `classes` classes of `task`,
/// drawn uniformly without replacement.
pub fn build_episodic_memory<R: Rng + ?Sized>(
    task: &Dataset,
    per_class: usize,
    classes: u8,
    rng: &mut R,
) -> Result<MemoryBuffer> {
    let mut samples = subset_balanced(task, per_class, classes, rng)?;
    samples.name = format!("{}-memory", task.name);
    Ok(MemoryBuffer {
        samples,
        per_class,
        source_task: task.name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PIXELS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task(per_class: usize) -> Dataset {
        let mut ds = Dataset::empty("digits");
        for i in 0..per_class * 10 {
            ds.push(&[(i / 10) as u8; PIXELS], (i % 10) as u8);
        }
        ds
    }

    #[test]
    fn six_per_class() {
        let m = build_episodic_memory(&task(24), 6, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.samples.len(), 60);
        assert!(m.samples.class_histogram().values().all(|&c| c == 6));
        assert_eq!(m.source_task, "digits");
    }

    #[test]
    fn whole_class_is_whole_dataset() {
        let t = task(3);
        let m = build_episodic_memory(&t, 3, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut a: Vec<(u8, u8)> = (0..t.len()).map(|i| (t.image_bytes(i)[0], t.label(i))).collect();
        let mut b: Vec<(u8, u8)> = (0..m.samples.len())
            .map(|i| (m.samples.image_bytes(i)[0], m.samples.label(i)))
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn starved_class_rejected() {
        assert!(build_episodic_memory(&task(3), 4, 10, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
