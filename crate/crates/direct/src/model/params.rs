//! Named parameter storage and task grouping for the lazy optimizer.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::Task;
use indexmap::IndexMap;

/// Which update group a parameter belongs to. The lazy optimizer touches the
/// shared encoder plus the current task's head only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    SubjectHead,
    ObjectHead,
    /// Single entity-extraction head used by both span tasks when the
    /// shared-heads ablation is on.
    EntityHead,
    RelationHead,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("head.s.") {
        ParamGroup::SubjectHead
    } else if name.starts_with("head.o.") {
        ParamGroup::ObjectHead
    } else if name.starts_with("head.e.") {
        ParamGroup::EntityHead
    } else if name.starts_with("head.r.") {
        ParamGroup::RelationHead
    } else {
        ParamGroup::Encoder
    }
}

/// True when the group is updated while training task `task`.
pub fn group_active(group: ParamGroup, task: Task) -> bool {
    match group {
        ParamGroup::Encoder => true,
        ParamGroup::EntityHead => matches!(task, Task::Subject | Task::Object),
        ParamGroup::SubjectHead => task == Task::Subject,
        ParamGroup::ObjectHead => task == Task::Object,
        ParamGroup::RelationHead => task == Task::Relation,
    }
}

/// Ordered name → value map. Insertion order is fixed at construction, which
/// keeps checkpoints and gradient reductions deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.params.iter()
    }

    pub fn normal(&mut self, name: &str, shape: (usize, usize), std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std).expect("valid normal");
        let data: Vec<f64> = (0..shape.0 * shape.1).map(|_| dist.sample(rng)).collect();
        self.insert(name, Array2::from_shape_vec(shape, data).expect("shape"));
    }

    pub fn zeros(&mut self, name: &str, shape: (usize, usize)) {
        self.insert(name, Array2::zeros(shape));
    }

    pub fn ones(&mut self, name: &str, shape: (usize, usize)) {
        self.insert(name, Array2::ones(shape));
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}
