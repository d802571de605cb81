use std::collections::HashMap;

use crate::domain::SceneSample;
use crate::error::Result;
use crate::teacher::Teacher;
use crate::tensor::ProbabilityMap;

/// Teacher outputs keyed by `(config hash, sample id)`.
///
/// The teacher is fixed and is always queried on clean features, so one
/// query per sample is enough for a whole run.
#[derive(Default)]
pub struct TeacherCache {
    entries: HashMap<(String, u64), ProbabilityMap>,
    enabled: bool,
    hits: u64,
    misses: u64,
}

impl TeacherCache {
    pub fn new() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    /// A cache that stores nothing: every lookup queries the teacher.
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, config_hash: &str, sample_id: u64) -> Option<&ProbabilityMap> {
        self.entries.get(&(config_hash.to_string(), sample_id))
    }

    /// Returns the cached map, querying the teacher on a miss.
    pub fn fetch(&mut self, config_hash: &str, sample: &SceneSample, teacher: &mut dyn Teacher) -> Result<ProbabilityMap> {
        let key = (config_hash.to_string(), sample.sample_id);
        if let Some(q) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(q.clone());
        }
        self.misses += 1;
        let q = teacher.predict(&sample.features)?;
        if self.enabled {
            self.entries.insert(key, q.clone());
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::TeacherError;
    use crate::tensor::{FeatureMap, LabelGrid};

    struct Counting(u64);

    impl Teacher for Counting {
        fn predict(&mut self, f: &FeatureMap) -> Result<ProbabilityMap, TeacherError> {
            self.0 += 1;
            Ok(ProbabilityMap::uniform(2, f.height(), f.width()))
        }
    }

    fn sample(id: u64) -> SceneSample {
        SceneSample {
            sample_id: id,
            features: FeatureMap::zeros(2, 2, 1),
            labels: LabelGrid::filled(2, 2, 0),
        }
    }

    #[test]
    fn one_query_per_sample() {
        let mut t = Counting(0);
        let mut cache = TeacherCache::new();
        for _epoch in 0..3 {
            for id in 0..5 {
                cache.fetch("h", &sample(id), &mut t).unwrap();
            }
        }
        assert_eq!(t.0, 5);
        assert_eq!(cache.misses(), 5);
        assert_eq!(cache.hits(), 10);
    }

    #[test]
    fn new_hash_misses() {
        let mut t = Counting(0);
        let mut cache = TeacherCache::new();
        cache.fetch("a", &sample(0), &mut t).unwrap();
        cache.fetch("b", &sample(0), &mut t).unwrap();
        assert_eq!(t.0, 2);
        assert!(cache.get("a", 0).is_some() && cache.get("c", 0).is_none());
    }

    #[test]
    fn disabled_cache_always_queries() {
        let mut t = Counting(0);
        let mut cache = TeacherCache::disabled();
        for _ in 0..3 {
            cache.fetch("a", &sample(0), &mut t).unwrap();
        }
        assert_eq!(t.0, 3);
        assert!(cache.is_empty());
    }
}
